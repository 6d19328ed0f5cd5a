//! Dataset generation and loading.

use std::path::Path;

use nvs_core::camera::{CameraModel, RelativePose};
use nvs_core::io;
use nvs_core::scenes::{build_dataset, load_manifest, OovBin};

use crate::CliError;

pub fn parse_bins(spec: &str) -> Result<Vec<OovBin>, CliError> {
    let bins: Vec<OovBin> = spec
        .split(',')
        .map(|name| {
            OovBin::parse(name.trim()).ok_or_else(|| {
                CliError::validation(format!("--bins: unknown bin name {:?}", name.trim()))
            })
        })
        .collect::<Result<_, _>>()?;
    if bins.is_empty() {
        return Err(CliError::validation("--bins: at least one bin required"));
    }
    Ok(bins)
}

pub fn cmd_gen_data(
    out: &Path,
    count: usize,
    bins: &str,
    seed: u64,
    image_size: usize,
) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::validation("--count must be at least 1"));
    }
    if image_size % 4 != 0 || image_size == 0 {
        return Err(CliError::validation("--image-size must be a positive multiple of 4"));
    }
    let bins = parse_bins(bins)?;
    let camera = CameraModel::default_for(image_size);
    build_dataset(out, &camera, count, &bins, seed)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

/// One loaded training sample. Images are planar [3,H,W] in [0,1].
pub struct LoadedSample {
    pub id: String,
    pub i_ref: Vec<f64>,
    pub i_gt: Vec<f64>,
    /// auxiliary neighbor view; only the depth objective reads it
    pub i_gt2: Vec<f64>,
    pub d_ref: Vec<f64>,
    pub pose: RelativePose,
    pub pose2: RelativePose,
    pub bin: OovBin,
}

pub struct Dataset {
    pub camera: CameraModel,
    pub samples: Vec<LoadedSample>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let entries = load_manifest(dir).map_err(|e| {
        CliError::Validation(format!("--data {}: {e}", dir.display()))
    })?;
    if entries.is_empty() {
        return Err(CliError::validation(format!("--data {}: empty manifest", dir.display())));
    }
    let mut samples = Vec::with_capacity(entries.len());
    let mut size = None;
    for (i, entry) in entries.iter().enumerate() {
        let id = format!("sample_{i:04}");
        let sdir = dir.join(&id);
        let (i_ref, w, h) = io::read_ppm(&sdir.join("ref.ppm"))?;
        let (i_gt, w2, h2) = io::read_ppm(&sdir.join("gt.ppm"))?;
        let (i_gt2, w4, h4) = io::read_ppm(&sdir.join("gt2.ppm"))?;
        let (d_ref, w3, h3) = io::read_pfm(&sdir.join("depth.pfm"))?;
        if (w, h) != (w2, h2) || (w, h) != (w3, h3) || (w, h) != (w4, h4) || w != h {
            return Err(CliError::Runtime(format!("{id}: inconsistent image extents")));
        }
        match size {
            None => size = Some(w),
            Some(s) if s != w => {
                return Err(CliError::Runtime(format!("{id}: extent {w} differs from {s}")))
            }
            _ => {}
        }
        samples.push(LoadedSample {
            id,
            i_ref,
            i_gt,
            i_gt2,
            d_ref,
            pose: entry.pose,
            pose2: entry.pose2,
            bin: entry.bin,
        });
    }
    Ok(Dataset { camera: CameraModel::default_for(size.unwrap()), samples })
}

/// [0,1] planar image -> [-1,1] f32 tensor data (network convention).
pub fn to_net_range(image: &[f64]) -> Vec<f32> {
    image.iter().map(|&v| (2.0 * v - 1.0) as f32).collect()
}

/// [-1,1] network output -> [0,1] clamped planar image.
pub fn from_net_range(data: &[f32]) -> Vec<f64> {
    data.iter().map(|&v| ((v as f64 + 1.0) / 2.0).clamp(0.0, 1.0)).collect()
}
