//! Central finite-difference gradient checking (64-bit).
//!
//! Used by the test suites; lives in the library so every crate's tests
//! can share it. The finite-difference side is independent of the
//! backward pass it checks: it reruns the forward closure at perturbed
//! inputs only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Ctx, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const FD_RTOL: f64 = 1e-3;
pub const FD_ATOL: f64 = 1e-6;

/// Random inputs in [-1, 1], reproducible by seed.
pub fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| (0..s.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Check autodiff gradients of a scalar-valued function against central
/// finite differences for every input. `f` receives leaf tensors
/// recorded on the given tape and must return a scalar loss.
///
/// Panics with a descriptive message on the first mismatch.
pub fn check<F>(shapes: &[&[usize]], seed: u64, f: F)
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Tensor<f64>,
{
    let inputs = random_inputs(shapes, seed);
    check_at(shapes, &inputs, f);
}

pub fn check_at<F>(shapes: &[&[usize]], inputs: &[Vec<f64>], f: F)
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Tensor<f64>,
{
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor<f64>> =
            vals.iter().zip(shapes).map(|(v, s)| tape.leaf(v.clone(), s.to_vec())).collect();
        f(&tape, &leaves).item()
    };

    // autodiff gradients
    let tape = Tape::new();
    let leaves: Vec<Tensor<f64>> =
        inputs.iter().zip(shapes).map(|(v, s)| tape.leaf(v.clone(), s.to_vec())).collect();
    let loss = f(&tape, &leaves);
    tape.backward(&loss).expect("backward failed");
    let grads: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| tape.grad(l).unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    // finite differences
    let mut vals = inputs.to_vec();
    for (ti, shape) in shapes.iter().enumerate() {
        for i in 0..vals[ti].len() {
            let orig = vals[ti][i];
            vals[ti][i] = orig + FD_STEP;
            let hi = eval(&vals);
            vals[ti][i] = orig - FD_STEP;
            let lo = eval(&vals);
            vals[ti][i] = orig;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let ad = grads[ti][i];
            let tol = FD_ATOL + FD_RTOL * fd.abs().max(ad.abs());
            assert!(
                (fd - ad).abs() <= tol,
                "gradient mismatch: input {ti} shape {shape:?} element {i}: fd={fd:.8e} ad={ad:.8e}"
            );
        }
    }
}

/// Convenience: run `check` over several seeds.
pub fn check_seeds<F>(shapes: &[&[usize]], seeds: std::ops::Range<u64>, f: F)
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Tensor<f64> + Copy,
{
    for seed in seeds {
        check(shapes, seed, f);
    }
}

/// Finite-difference check of parameter gradients. `loss_fn` rebuilds
/// the forward pass from a Ctx over the store and returns a scalar;
/// every element of every parameter is perturbed, so call this only on
/// small configurations.
pub fn check_params<F>(store: &mut ParamStore<f64>, loss_fn: F)
where
    F: Fn(&Ctx<f64>) -> Tensor<f64>,
{
    let eval = |store: &ParamStore<f64>| -> f64 {
        let ctx = Ctx::new(Tape::new(), store);
        loss_fn(&ctx).item()
    };

    let tape = Tape::new();
    let ctx = Ctx::new(tape.clone(), store);
    let loss = loss_fn(&ctx);
    tape.backward(&loss).expect("backward failed");
    let grads = ctx.grads();
    drop(ctx);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let n = store.get(name).unwrap().1.len();
        let g = grads.get(name).cloned().flatten().unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = store.get(name).unwrap().1[i];
            poke(store, name, i, orig + FD_STEP);
            let hi = eval(store);
            poke(store, name, i, orig - FD_STEP);
            let lo = eval(store);
            poke(store, name, i, orig);
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let ad = g[i];
            let tol = FD_ATOL + FD_RTOL * fd.abs().max(ad.abs());
            assert!(
                (fd - ad).abs() <= tol,
                "parameter gradient mismatch: {name}[{i}]: fd={fd:.8e} ad={ad:.8e}"
            );
        }
    }
}

/// Like `check_params`, but probing at most `per_tensor` random
/// elements of each parameter. Composite networks are too large for the
/// exhaustive sweep; sampled elements still cover every tensor.
pub fn check_params_sampled<F>(
    store: &mut ParamStore<f64>,
    per_tensor: usize,
    seed: u64,
    loss_fn: F,
) where
    F: Fn(&Ctx<f64>) -> Tensor<f64>,
{
    check_params_sampled_tol(store, per_tensor, seed, FD_STEP, FD_RTOL, FD_ATOL, loss_fn)
}

/// Sampled parameter check with caller-chosen step and tolerances.
/// Deep composites have enough curvature that the default step carries
/// visible truncation error even when the analytic gradient is right.
pub fn check_params_sampled_tol<F>(
    store: &mut ParamStore<f64>,
    per_tensor: usize,
    seed: u64,
    step: f64,
    rtol: f64,
    atol: f64,
    loss_fn: F,
) where
    F: Fn(&Ctx<f64>) -> Tensor<f64>,
{
    use rand::Rng;
    let eval = |store: &ParamStore<f64>| -> f64 {
        let ctx = Ctx::new(Tape::new(), store);
        loss_fn(&ctx).item()
    };

    let tape = Tape::new();
    let ctx = Ctx::new(tape.clone(), store);
    let loss = loss_fn(&ctx);
    tape.backward(&loss).expect("backward failed");
    let grads = ctx.grads();
    drop(ctx);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let n = store.get(name).unwrap().1.len();
        let g = grads.get(name).cloned().flatten().unwrap_or_else(|| vec![0.0; n]);
        for _ in 0..per_tensor.min(n) {
            let i = rng.gen_range(0..n);
            let orig = store.get(name).unwrap().1[i];
            poke(store, name, i, orig + step);
            let hi = eval(store);
            poke(store, name, i, orig - step);
            let lo = eval(store);
            poke(store, name, i, orig);
            let fd = (hi - lo) / (2.0 * step);
            let ad = g[i];
            let tol = atol + rtol * fd.abs().max(ad.abs());
            assert!(
                (fd - ad).abs() <= tol,
                "parameter gradient mismatch: {name}[{i}]: fd={fd:.8e} ad={ad:.8e}"
            );
        }
    }
}

fn poke(store: &mut ParamStore<f64>, name: &str, i: usize, v: f64) {
    for (n, d) in store.iter_mut() {
        if n == name {
            d[i] = v;
            return;
        }
    }
    panic!("unknown parameter {name}");
}

/// Deterministic positive random inputs (e.g. depths).
pub fn random_positive(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(lo..hi)).collect()
}
