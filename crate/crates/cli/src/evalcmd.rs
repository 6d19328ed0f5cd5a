//! Evaluation and feature-norm analysis over labeled datasets.

use std::path::Path;

use nvs_core::config::RunConfig;
use nvs_core::io::write_atomic;
use nvs_core::metrics::{
    default_ratio_edges, norm_ratio_histogram, psnr_rgb, EvalReport, SampleRow,
};
use nvs_core::model::norm_ratio_map;
use nvs_core::params::Ctx;
use nvs_core::scenes::OovBin;
use nvs_core::tape::Tape;
use nvs_core::tensor::Tensor;

use crate::data::{from_net_range, load_dataset, to_net_range};
use crate::render::load_view_net;
use crate::CliError;

pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    let size = ds.camera.width;
    if size != cfg.view.image_size {
        return Err(CliError::validation(format!(
            "dataset extent {size} does not match configured image_size {}",
            cfg.view.image_size
        )));
    }
    let (net, store) = load_view_net(cfg, ckpt)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut report = EvalReport::default();
    for s in &ds.samples {
        let ctx = Ctx::frozen(Tape::new(), &store);
        let i_ref = Tensor::from_vec(to_net_range(&s.i_ref), vec![3, size, size]);
        let fwd = net.forward(&ctx, &i_ref, &s.d_ref, &ds.camera, &s.pose)?;
        let pred = from_net_range(fwd.i_tgt.data());
        let psnr_all = psnr_rgb(&pred, &s.i_gt, size * size, None)
            .expect("unmasked PSNR is always defined");
        let vis: Vec<f64> = fwd
            .mask
            .upsample(4)
            .o
            .iter()
            .map(|&o| if o { 0.0 } else { 1.0 })
            .collect();
        let psnr_vis = psnr_rgb(&pred, &s.i_gt, size * size, Some(&vis));
        report.push(SampleRow { id: s.id.clone(), bin: s.bin, psnr_all, psnr_vis });
    }
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    println!("wrote {} rows to {}", ds.samples.len(), out.join("report.csv").display());
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    let size = ds.camera.width;
    if size != cfg.view.image_size {
        return Err(CliError::validation(format!(
            "dataset extent {size} does not match configured image_size {}",
            cfg.view.image_size
        )));
    }
    let (net, store) = load_view_net(cfg, ckpt)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut by_bin: Vec<(OovBin, Vec<Vec<f64>>)> = Vec::new();
    for s in &ds.samples {
        let ctx = Ctx::frozen(Tape::new(), &store);
        let i_ref = Tensor::from_vec(to_net_range(&s.i_ref), vec![3, size, size]);
        let fwd = net.forward(&ctx, &i_ref, &s.d_ref, &ds.camera, &s.pose)?;
        let map = norm_ratio_map(&fwd.h_e, &fwd.h_i);
        match by_bin.iter_mut().find(|(b, _)| *b == s.bin) {
            Some((_, maps)) => maps.push(map),
            None => by_bin.push((s.bin, vec![map])),
        }
    }
    let edges = default_ratio_edges(24);
    for (bin, maps) in &by_bin {
        let hist = norm_ratio_histogram(maps, &edges);
        write_atomic(&out.join(format!("hist_{bin}.csv")), hist.to_csv().as_bytes())?;
    }
    println!("wrote {} histograms to {}", by_bin.len(), out.display());
    Ok(())
}
