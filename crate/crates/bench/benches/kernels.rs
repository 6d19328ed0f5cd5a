use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nvs_core::camera::{rot_z, CameraModel, RelativePose};
use nvs_core::model::{ViewNet, ViewNetConfig};
use nvs_core::ops;
use nvs_core::params::{Ctx, ParamStore};
use nvs_core::tape::Tape;
use nvs_core::tensor::Tensor;

fn randvec(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let a = Tensor::from_vec(randvec(256 * 256, 0), vec![256, 256]);
    let b = Tensor::from_vec(randvec(256 * 256, 1), vec![256, 256]);
    c.bench_function("matmul_256", |bch| bch.iter(|| ops::matmul(&a, &b)));
}

fn bench_conv(c: &mut Criterion) {
    let x = Tensor::from_vec(randvec(16 * 64 * 64, 2), vec![1, 16, 64, 64]);
    let w = Tensor::from_vec(randvec(16 * 16 * 9, 3), vec![16, 16, 3, 3]);
    c.bench_function("conv3x3_16c_64px", |bch| {
        bch.iter(|| ops::conv2d(&x, &w, None, 1, 1))
    });
}

fn bench_splat(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = Tensor::from_vec(randvec(16 * 64 * 64, 5), vec![16, 64, 64]);
    let flow: Vec<f32> = (0..2 * 64 * 64).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let imp = Tensor::from_vec(randvec(64 * 64, 6), vec![64, 64]);
    let valid = vec![true; 64 * 64];
    c.bench_function("splat_16c_64px", |bch| {
        bch.iter(|| ops::splat(&f, &flow, &imp, &valid, 10.0, 1e-4).unwrap())
    });
}

fn bench_viewnet_forward(c: &mut Criterion) {
    let cfg = ViewNetConfig { n: 1, m_blocks: 1, c: 16, r: 3, m_inducing: 4, image_size: 64 };
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = ViewNet::init(&mut store, &mut rng, &cfg);
    let cam = CameraModel::default_for(64);
    let img = Tensor::from_vec(randvec(3 * 64 * 64, 8), vec![3, 64, 64]);
    let depth: Vec<f64> = {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        (0..64 * 64).map(|_| r.gen_range(2.0..8.0)).collect()
    };
    let pose = RelativePose::new(rot_z(4.0), [0.1, 0.0, 0.0]).unwrap();
    c.bench_function("viewnet_forward_64px", |bch| {
        bch.iter(|| {
            let ctx = Ctx::frozen(Tape::new(), &store);
            net.forward(&ctx, &img, &depth, &cam, &pose).unwrap()
        })
    });
}

criterion_group!(benches, bench_matmul, bench_conv, bench_splat, bench_viewnet_forward);
criterion_main!(benches);
