use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use nvs_core::camera::{CameraModel, RelativePose};
use nvs_core::model::{DepthNet, DepthNetConfig};
use nvs_core::params::{Ctx, ParamStore};
use nvs_core::scenes::{generate_scene, rasterize};
use nvs_core::tape::Tape;
use nvs_core::tensor::Tensor;

#[test]
fn probe() {
    let ck = std::env::var("CK").unwrap();
    let loaded = nvs_core::checkpoint::load_checkpoint(std::path::Path::new(&ck)).unwrap();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = DepthNet::init(&mut store, &mut rng, &DepthNetConfig { base: std::env::var("B").map(|v| v.parse().unwrap()).unwrap_or(8), ..Default::default() });
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        store.set_data(&name, loaded.get(&name).unwrap().1.to_vec());
    }
    let cam = CameraModel::default_for(32);
    let mut total = 0.0;
    for i in 0..20u64 {
        let scene = generate_scene(9000 + i);
        let (image, gt) = rasterize(&scene, &cam, &RelativePose::identity());
        let ctx = Ctx::frozen(Tape::new(), &store);
        let t = Tensor::from_vec(image.iter().map(|&v| (2.0 * v - 1.0) as f32).collect(), vec![3, 32, 32]);
        let pred = net.forward(&ctx, &t);
        let ar = pred.data().iter().zip(&gt).map(|(&p, &g)| (p as f64 - g).abs() / g).sum::<f64>() / gt.len() as f64;
        total += ar;
    }
    println!("mean abs_rel = {:.4}", total / 20.0);
}

#[test]
fn split_err() {
    let ck = std::env::var("CK").unwrap();
    let loaded = nvs_core::checkpoint::load_checkpoint(std::path::Path::new(&ck)).unwrap();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = DepthNet::init(&mut store, &mut rng, &DepthNetConfig { base: 8, ..Default::default() });
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        store.set_data(&name, loaded.get(&name).unwrap().1.to_vec());
    }
    let cam = CameraModel::default_for(32);
    let (mut near, mut nn, mut far, mut nf) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..20u64 {
        let scene = generate_scene(9000 + i);
        let (image, gt) = rasterize(&scene, &cam, &RelativePose::identity());
        let ctx = Ctx::frozen(Tape::new(), &store);
        let t = Tensor::from_vec(image.iter().map(|&v| (2.0 * v - 1.0) as f32).collect(), vec![3, 32, 32]);
        let pred = net.forward(&ctx, &t);
        for (p, g) in pred.data().iter().zip(&gt) {
            let e = (*p as f64 - g).abs() / g;
            if *g < 7.0 { near += e; nn += 1; } else { far += e; nf += 1; }
        }
    }
    println!("near(gt<7): {:.4} over {nn}px, far(gt>=7): {:.4} over {nf}px", near / nn as f64, far / nf as f64);
}
