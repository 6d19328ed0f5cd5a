//! Training loops: DepthNet first, then ViewNet with the depth source
//! frozen (checkpoint or ground truth).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nvs_core::checkpoint::{load_checkpoint, save_checkpoint};
use nvs_core::config::RunConfig;
use nvs_core::io::write_atomic;
use nvs_core::losses::{depth_loss, total_view_loss, Discriminators};
use nvs_core::model::{DepthNet, Perceptual, ViewNet};
use nvs_core::optim::AdamW;
use nvs_core::params::{Ctx, ParamStore};
use nvs_core::tape::Tape;
use nvs_core::tensor::Tensor;

use crate::data::{load_dataset, to_net_range, Dataset, LoadedSample};
use crate::CliError;

fn image_tensor(img: &[f64], size: usize) -> Tensor<f32> {
    Tensor::from_vec(to_net_range(img), vec![3, size, size])
}

/// Deterministic batch indices for one step. The per-step seed is what
/// the NaN diagnostic reports.
fn batch_indices(step_seed: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

fn nan_abort(kind: &str, step: usize, step_seed: u64) -> CliError {
    CliError::Runtime(format!("nan-abort {kind} step={step} batch_seed={step_seed}"))
}

fn finish_log(out: &Path, name: &str, log: &str) -> Result<(), CliError> {
    write_atomic(&out.join(name), log.as_bytes())?;
    Ok(())
}

pub fn cmd_train_depth(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    check_extent(&ds, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = DepthNet::init(&mut store, &mut rng, &cfg.depth);
    let mut opt = AdamW::new(cfg.lr, cfg.steps);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut log = String::from("step,lr,total,reprojection,smoothness\n");

    for step in 1..=cfg.steps {
        let step_seed: u64 = seed_rng.gen();
        let idx = batch_indices(step_seed, ds.samples.len(), cfg.batch_size);
        let tape = Tape::new();
        let ctx = Ctx::new(tape.clone(), &store);
        let mut total: Option<Tensor<f32>> = None;
        let (mut rep_sum, mut sm_sum) = (0.0, 0.0);
        for &i in &idx {
            let s = &ds.samples[i];
            let i_ref = image_tensor(&s.i_ref, ds.camera.width);
            let i_gt = image_tensor(&s.i_gt, ds.camera.width);
            let depth = net.forward(&ctx, &i_ref);
            let rep = depth_loss(&i_ref, &[(i_gt, s.pose)], &ds.camera, &depth, &cfg.weights)?;
            rep_sum += rep.reprojection;
            sm_sum += rep.smoothness;
            total = Some(match total {
                None => rep.total,
                Some(t) => nvs_core::ops::add(&t, &rep.total),
            });
        }
        let total = nvs_core::ops::scale(&total.unwrap(), 1.0 / cfg.batch_size as f32);
        let loss = total.item();
        if !loss.is_finite() {
            finish_log(out, "train_log.csv", &log)?;
            return Err(nan_abort("depth", step, step_seed));
        }
        tape.backward(&total).map_err(|e| CliError::Runtime(e.to_string()))?;
        let grads = ctx.grads();
        drop(ctx);
        opt.step(&mut store, &grads);
        let _ = writeln!(
            log,
            "{step},{:.6e},{:.6e},{:.6e},{:.6e}",
            opt.lr_at(step),
            loss,
            rep_sum / cfg.batch_size as f64,
            sm_sum / cfg.batch_size as f64
        );
        if step % cfg.checkpoint_every == 0 {
            save_checkpoint(&out.join(format!("depth_{step:06}.nvsc")), &store)?;
        }
    }
    save_checkpoint(&out.join("depth_final.nvsc"), &store)?;
    finish_log(out, "train_log.csv", &log)
}

/// Depth source for ViewNet training and rendering: ground truth or a
/// frozen DepthNet checkpoint.
pub enum DepthSource {
    GroundTruth,
    Net { net: DepthNet, store: ParamStore<f32> },
}

impl DepthSource {
    pub fn load(cfg: &RunConfig, ckpt: Option<&Path>, use_gt: bool) -> Result<DepthSource, CliError> {
        if use_gt {
            return Ok(DepthSource::GroundTruth);
        }
        let path = ckpt.expect("checked by caller");
        let store = load_checkpoint(path)?;
        let mut scratch = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DepthNet::init(&mut scratch, &mut rng, &cfg.depth);
        for name in scratch.names() {
            if store.get(name).is_none() {
                return Err(CliError::Runtime(format!(
                    "depth checkpoint {} is missing tensor {name}",
                    path.display()
                )));
            }
        }
        Ok(DepthSource::Net { net, store })
    }

    /// Full-resolution depth for one sample; never part of the graph.
    pub fn depth_for(&self, sample: &LoadedSample, size: usize) -> Vec<f64> {
        match self {
            DepthSource::GroundTruth => sample.d_ref.clone(),
            DepthSource::Net { net, store } => {
                let ctx = Ctx::frozen(Tape::new(), store);
                let d = net.forward(&ctx, &image_tensor(&sample.i_ref, size));
                d.data().iter().map(|&v| v as f64).collect()
            }
        }
    }

    fn store_bytes(&self) -> Option<Vec<u32>> {
        match self {
            DepthSource::GroundTruth => None,
            DepthSource::Net { store, .. } => Some(
                store.iter().flat_map(|(_, _, d)| d.iter().map(|v| v.to_bits())).collect(),
            ),
        }
    }
}

pub fn cmd_train_view(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    depth_ckpt: Option<&Path>,
    use_gt_depth: bool,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    check_extent(&ds, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let depth_src = DepthSource::load(cfg, depth_ckpt, use_gt_depth)?;
    let depth_bytes_before = depth_src.store_bytes();

    let mut gen_store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = ViewNet::init(&mut gen_store, &mut rng, &cfg.view);
    let mut disc_store = ParamStore::<f32>::new();
    let discs = Discriminators::init(&mut disc_store, &mut rng, 16);
    if let Some(path) = resume {
        let loaded = load_checkpoint(path)?;
        restore_into(&mut gen_store, &loaded, path)?;
        restore_into(&mut disc_store, &loaded, path)?;
    }
    let perceptual = Perceptual::<f32>::new(cfg.seed ^ 0x9e3779b97f4a7c15);

    let mut opt_g = AdamW::new(cfg.lr, cfg.steps);
    let mut opt_d = AdamW::new(cfg.lr, cfg.steps);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut crop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ffee);
    let mut log =
        String::from("step,lr,total,l1,perceptual,adversarial,ts_in,ts_out,d_total\n");
    let size = ds.camera.width;
    let adversarial = cfg.weights.lambda_adv != 0.0;

    for step in 1..=cfg.steps {
        let step_seed: u64 = seed_rng.gen();
        let idx = batch_indices(step_seed, ds.samples.len(), cfg.batch_size);

        // generator step: discriminators participate as constants
        let tape = Tape::new();
        let ctx = Ctx::new(tape.clone(), &gen_store);
        let disc_frozen = Ctx::frozen(tape.clone(), &disc_store);
        let mut total: Option<Tensor<f32>> = None;
        let mut fakes: Vec<(Vec<f32>, usize)> = Vec::new();
        let (mut l1, mut perc, mut adv, mut ts_in, mut ts_out) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in &idx {
            let s = &ds.samples[i];
            let depth = depth_src.depth_for(s, size);
            let i_ref = image_tensor(&s.i_ref, size);
            let i_gt = image_tensor(&s.i_gt, size);
            let fwd = net.forward(&ctx, &i_ref, &depth, &ds.camera, &s.pose)?;
            let g = if adversarial {
                Some(discs.g_loss(&disc_frozen, &fwd.i_tgt, &mut crop_rng))
            } else {
                None
            };
            let report = total_view_loss(
                &fwd.i_tgt,
                &i_gt,
                &fwd.h_e,
                &fwd.h_i,
                &fwd.mask.as_tensor(),
                &perceptual,
                g.as_ref(),
                &tape,
                &cfg.weights,
                cfg.detach,
            );
            l1 += report.l1;
            perc += report.perceptual;
            adv += report.adversarial;
            ts_in += report.ts_in;
            ts_out += report.ts_out;
            fakes.push((fwd.i_tgt.data().to_vec(), i));
            total = Some(match total {
                None => report.total,
                Some(t) => nvs_core::ops::add(&t, &report.total),
            });
        }
        let total = nvs_core::ops::scale(&total.unwrap(), 1.0 / cfg.batch_size as f32);
        let loss = total.item();
        if !loss.is_finite() {
            finish_log(out, "train_log.csv", &log)?;
            return Err(nan_abort("view", step, step_seed));
        }
        tape.backward(&total).map_err(|e| CliError::Runtime(e.to_string()))?;
        let grads = ctx.grads();
        drop(ctx);
        drop(disc_frozen);
        opt_g.step(&mut gen_store, &grads);

        // discriminator step on the detached fakes
        let mut d_total = 0.0;
        if adversarial {
            let tape_d = Tape::new();
            let ctx_d = Ctx::new(tape_d.clone(), &disc_store);
            let mut dsum: Option<Tensor<f32>> = None;
            for (fake, i) in &fakes {
                let s = &ds.samples[*i];
                let real = image_tensor(&s.i_gt, size);
                let fake = Tensor::from_vec(fake.clone(), vec![3, size, size]);
                let d = discs.d_loss(&ctx_d, &real, &fake, &mut crop_rng);
                dsum = Some(match dsum {
                    None => d,
                    Some(t) => nvs_core::ops::add(&t, &d),
                });
            }
            let dsum = nvs_core::ops::scale(&dsum.unwrap(), 1.0 / cfg.batch_size as f32);
            d_total = dsum.item() as f64;
            if !d_total.is_finite() {
                finish_log(out, "train_log.csv", &log)?;
                return Err(nan_abort("disc", step, step_seed));
            }
            tape_d.backward(&dsum).map_err(|e| CliError::Runtime(e.to_string()))?;
            let grads_d = ctx_d.grads();
            drop(ctx_d);
            opt_d.step(&mut disc_store, &grads_d);
        }

        let b = cfg.batch_size as f64;
        let _ = writeln!(
            log,
            "{step},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            opt_g.lr_at(step),
            loss,
            l1 / b,
            perc / b,
            adv / b,
            ts_in / b,
            ts_out / b,
            d_total
        );
        if step % cfg.checkpoint_every == 0 {
            save_view_checkpoint(&out.join(format!("view_{step:06}.nvsc")), &gen_store, &disc_store)?;
        }
    }

    if let Some(before) = depth_bytes_before {
        assert_eq!(
            before,
            depth_src.store_bytes().unwrap(),
            "frozen depth parameters changed during view training"
        );
    }
    save_view_checkpoint(&out.join("view_final.nvsc"), &gen_store, &disc_store)?;
    finish_log(out, "train_log.csv", &log)
}

fn check_extent(ds: &Dataset, cfg: &RunConfig) -> Result<(), CliError> {
    if ds.camera.width != cfg.view.image_size {
        return Err(CliError::validation(format!(
            "dataset extent {} does not match configured image_size {}",
            ds.camera.width, cfg.view.image_size
        )));
    }
    Ok(())
}

fn save_view_checkpoint(
    path: &Path,
    gen: &ParamStore<f32>,
    disc: &ParamStore<f32>,
) -> Result<(), CliError> {
    let mut merged = gen.clone();
    for (name, shape, data) in disc.iter() {
        merged.insert(name, shape.to_vec(), data.to_vec());
    }
    save_checkpoint(path, &merged)?;
    Ok(())
}

/// Copy every tensor of `target`'s name set from a loaded checkpoint,
/// checking shapes.
pub fn restore_into(
    target: &mut ParamStore<f32>,
    loaded: &ParamStore<f32>,
    path: &Path,
) -> Result<(), CliError> {
    let names: Vec<String> = target.names().map(str::to_string).collect();
    for name in names {
        let Some((shape, data)) = loaded.get(&name) else {
            return Err(CliError::Runtime(format!(
                "checkpoint {} is missing tensor {name}",
                path.display()
            )));
        };
        let expected = target.get(&name).unwrap().0.to_vec();
        if shape != expected {
            return Err(CliError::Runtime(format!(
                "checkpoint {}: tensor {name} has shape {shape:?}, expected {expected:?}",
                path.display()
            )));
        }
        let data = data.to_vec();
        target.set_data(&name, data);
    }
    Ok(())
}
