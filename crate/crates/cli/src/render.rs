//! Single-view rendering: one forward pass, timed.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nvs_core::camera::{unproject, reproject, CameraModel, RelativePose};
use nvs_core::checkpoint::load_checkpoint;
use nvs_core::config::RunConfig;
use nvs_core::io::{read_pfm, read_ppm, write_pgm, write_ppm};
use nvs_core::model::ViewNet;
use nvs_core::params::{Ctx, ParamStore};
use nvs_core::tape::Tape;
use nvs_core::tensor::Tensor;
use nvs_core::warp::splat_by_reprojection;

use crate::data::{from_net_range, to_net_range, LoadedSample};
use crate::train::{restore_into, DepthSource};
use crate::CliError;

pub fn parse_pose(spec: &str) -> Result<RelativePose, CliError> {
    let vals: Vec<f64> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::validation(format!("--pose: invalid float {:?}", s.trim())))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != 12 {
        return Err(CliError::validation(format!(
            "--pose: expected 12 floats (rotation row-major, then translation), got {}",
            vals.len()
        )));
    }
    let r = [
        [vals[0], vals[1], vals[2]],
        [vals[3], vals[4], vals[5]],
        [vals[6], vals[7], vals[8]],
    ];
    RelativePose::new(r, [vals[9], vals[10], vals[11]])
        .map_err(|e| CliError::validation(format!("--pose: {e}")))
}

/// Build the network and load its parameters from a checkpoint.
pub fn load_view_net(
    cfg: &RunConfig,
    ckpt: &Path,
) -> Result<(ViewNet, ParamStore<f32>), CliError> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ViewNet::init(&mut store, &mut rng, &cfg.view);
    let loaded = load_checkpoint(ckpt)?;
    restore_into(&mut store, &loaded, ckpt)?;
    Ok((net, store))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_render(
    cfg: &RunConfig,
    ckpt: &Path,
    image: &Path,
    depth: Option<&Path>,
    depth_ckpt: Option<&Path>,
    pose: &str,
    out: &Path,
) -> Result<(), CliError> {
    let pose = parse_pose(pose)?;
    let (i_ref, w, h) = read_ppm(image)?;
    if w != h || w != cfg.view.image_size {
        return Err(CliError::validation(format!(
            "--image: expected {0}x{0} per the configuration, got {w}x{h}",
            cfg.view.image_size
        )));
    }
    let camera = CameraModel::default_for(w);
    let d_ref = match depth {
        Some(path) => {
            let (d, dw, dh) = read_pfm(path)?;
            if (dw, dh) != (w, h) {
                return Err(CliError::validation(format!(
                    "--depth: extents {dw}x{dh} do not match the image"
                )));
            }
            d
        }
        None => {
            let src = DepthSource::load(cfg, depth_ckpt, false)?;
            let sample = LoadedSample {
                id: "input".into(),
                i_ref: i_ref.clone(),
                i_gt: Vec::new(),
                d_ref: Vec::new(),
                pose,
                bin: nvs_core::scenes::OovBin::Small,

            };
            src.depth_for(&sample, w)
        }
    };

    let (net, store) = load_view_net(cfg, ckpt)?;
    let ctx = Ctx::frozen(Tape::new(), &store);
    let i_ref_t = Tensor::from_vec(to_net_range(&i_ref), vec![3, h, w]);

    let started = Instant::now();
    let fwd = net.forward(&ctx, &i_ref_t, &d_ref, &camera, &pose)?;
    let elapsed = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_ppm(&out.join("i_tgt.ppm"), &from_net_range(fwd.i_tgt.data()), w, h)?;

    // full-resolution warped-only view of the raw pixels, for inspection
    let maps = unproject(&camera, &d_ref)?;
    let rep = reproject(&camera, &maps, &pose);
    let rgb = Tensor::from_vec(i_ref.clone(), vec![3, h, w]);
    let splat = splat_by_reprojection(&rgb, &rep).map_err(|e| CliError::Runtime(e.to_string()))?;
    let warped: Vec<f64> = splat.warped.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    write_ppm(&out.join("warped.ppm"), &warped, w, h)?;

    let mask_px: Vec<u8> =
        fwd.mask.o.iter().map(|&o| if o { 255 } else { 0 }).collect();
    write_pgm(&out.join("mask.pgm"), &mask_px, fwd.mask.width, fwd.mask.height)?;

    println!("forward_seconds={elapsed:.4} passes=1 oov_ratio={:.4}", fwd.mask.ratio());
    Ok(())
}
