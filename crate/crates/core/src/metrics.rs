//! Evaluation metrics: PSNR over full images or visibility masks, view
//! split categorization and norm-ratio histograms.

use std::fmt::Write as _;

use crate::scenes::OovBin;

/// Zero MSE reports this sentinel instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// PSNR in dB for [0,1]-range images. `mask` (1.0 = evaluate) must match
/// the image length when present; an empty effective mask yields None.
pub fn psnr(pred: &[f64], gt: &[f64], mask: Option<&[f64]>) -> Option<f64> {
    assert_eq!(pred.len(), gt.len(), "psnr shape mismatch");
    let mut se = 0.0;
    let mut count = 0usize;
    match mask {
        None => {
            for (p, g) in pred.iter().zip(gt) {
                se += (p - g) * (p - g);
            }
            count = pred.len();
        }
        Some(m) => {
            assert_eq!(m.len(), pred.len(), "psnr mask length mismatch");
            for ((p, g), w) in pred.iter().zip(gt).zip(m) {
                if *w > 0.5 {
                    se += (p - g) * (p - g);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return None;
    }
    let mse = se / count as f64;
    if mse == 0.0 {
        return Some(PSNR_CAP_DB);
    }
    Some((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR for a [3,H,W] image pair with a per-pixel mask of length H*W.
/// The mask is broadcast over the channel axis.
pub fn psnr_rgb(pred: &[f64], gt: &[f64], hw: usize, mask: Option<&[f64]>) -> Option<f64> {
    let expanded;
    let m3 = match mask {
        None => None,
        Some(m) => {
            assert_eq!(m.len(), hw);
            assert_eq!(pred.len() % hw, 0);
            let c = pred.len() / hw;
            expanded = m.iter().cycle().take(c * hw).copied().collect::<Vec<f64>>();
            Some(expanded.as_slice())
        }
    };
    psnr(pred, gt, m3)
}

/// Nearest-neighbor x4 upsample of a quarter-resolution map. Used to
/// lift the out-of-view mask to full image resolution.
pub fn upsample_x4_nearest(map: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(map.len(), h * w);
    let (oh, ow) = (4 * h, 4 * w);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = map[(y / 4) * w + x / 4];
        }
    }
    out
}

/// Visibility mask (1 = reprojected content) from a quarter-resolution
/// out-of-view map, at full resolution.
pub fn visibility_mask(o_mask: &[f64], h4: usize, w4: usize) -> Vec<f64> {
    upsample_x4_nearest(o_mask, h4, w4).iter().map(|o| 1.0 - o).collect()
}

/// Evaluation split for an out-of-view ratio: Small [0.2,0.4),
/// Medium [0.4,0.6), Large [0.6,0.8]. Ratios outside those bins are
/// out of range and return None.
pub fn categorize_split(ratio: f64) -> Option<OovBin> {
    assert!((0.0..=1.0).contains(&ratio), "ratio out of [0,1]: {ratio}");
    if (0.2..0.4).contains(&ratio) {
        Some(OovBin::Small)
    } else if (0.4..0.6).contains(&ratio) {
        Some(OovBin::Medium)
    } else if (0.6..=0.8).contains(&ratio) {
        Some(OovBin::Large)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Histogram {
    /// len = bins + 1, strictly increasing
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Log-spaced edges over [1/8, 8].
pub fn default_ratio_edges(bins: usize) -> Vec<f64> {
    let (lo, hi) = ((1.0f64 / 8.0).ln(), 8.0f64.ln());
    (0..=bins).map(|i| (lo + (hi - lo) * i as f64 / bins as f64).exp()).collect()
}

/// Pool every pixel of every map into one histogram. Values outside the
/// edge range are clamped into the end bins so counts always sum to the
/// number of pooled pixels.
pub fn norm_ratio_histogram(maps: &[Vec<f64>], edges: &[f64]) -> Histogram {
    assert!(!maps.is_empty(), "histogram needs at least one map");
    assert!(edges.len() >= 2);
    assert!(edges.windows(2).all(|e| e[1] > e[0]), "edges must increase");
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for map in maps {
        for &v in map {
            // first bin whose upper edge exceeds v; clamp at the ends
            let mut b = match edges[1..bins].iter().position(|&e| v < e) {
                Some(i) => i,
                None => bins - 1,
            };
            if v < edges[0] {
                b = 0;
            }
            counts[b] += 1;
        }
    }
    Histogram { edges: edges.to_vec(), counts }
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:.6e},{:.6e},{c}", self.edges[i], self.edges[i + 1]);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SampleRow {
    pub id: String,
    pub bin: OovBin,
    pub psnr_all: f64,
    pub psnr_vis: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<SampleRow>,
}

impl EvalReport {
    pub fn push(&mut self, row: SampleRow) {
        self.rows.push(row);
    }

    fn split_means(&self, bin: OovBin) -> Option<(f64, Option<f64>)> {
        let rows: Vec<&SampleRow> = self.rows.iter().filter(|r| r.bin == bin).collect();
        if rows.is_empty() {
            return None;
        }
        let all = rows.iter().map(|r| r.psnr_all).sum::<f64>() / rows.len() as f64;
        let vis_rows: Vec<f64> = rows.iter().filter_map(|r| r.psnr_vis).collect();
        let vis = if vis_rows.is_empty() {
            None
        } else {
            Some(vis_rows.iter().sum::<f64>() / vis_rows.len() as f64)
        };
        Some((all, vis))
    }

    /// Per-sample rows, then a summary block of per-split means. Splits
    /// without samples are omitted; absent PSNR-vis prints as empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,bin,psnr_all,psnr_vis\n");
        for r in &self.rows {
            let vis = r.psnr_vis.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.4},{vis}", r.id, r.bin, r.psnr_all);
        }
        s.push_str("summary,,,\n");
        for bin in [OovBin::Tiny, OovBin::Small, OovBin::Medium, OovBin::Large] {
            if let Some((all, vis)) = self.split_means(bin) {
                let vis = vis.map(|v| format!("{v:.4}")).unwrap_or_default();
                let _ = writeln!(s, "mean_{bin},{bin},{all:.4},{vis}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_identical_is_capped() {
        let a = vec![0.3; 48];
        assert_eq!(psnr(&a, &a, None), Some(PSNR_CAP_DB));
    }

    #[test]
    fn psnr_uniform_difference_matches_formula() {
        // independent oracle: 20 log10(255/16) for a constant 16/255 gap
        let a = vec![0.5; 100];
        let b: Vec<f64> = a.iter().map(|v| v + 16.0 / 255.0).collect();
        let expect = 20.0 * (255.0f64 / 16.0).log10();
        let got = psnr(&a, &b, None).unwrap();
        assert!((got - expect).abs() < 1e-9, "got {got}, expected {expect}");
        assert!((got - 24.04).abs() < 0.02);
    }

    #[test]
    fn psnr_mask_selectivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut pred = gt.clone();
        let mask: Vec<f64> = (0..64).map(|i| if i < 32 { 1.0 } else { 0.0 }).collect();
        // corrupt only masked-out pixels
        for v in pred.iter_mut().skip(32) {
            *v = (*v + 0.5) % 1.0;
        }
        assert_eq!(psnr(&pred, &gt, Some(&mask)), Some(PSNR_CAP_DB));
        assert!(psnr(&pred, &gt, None).unwrap() < PSNR_CAP_DB);
    }

    #[test]
    fn psnr_full_mask_equals_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let full = vec![1.0; 100];
        assert_eq!(psnr(&a, &b, None), psnr(&a, &b, Some(&full)));
    }

    #[test]
    fn psnr_empty_mask_is_absent() {
        let a = vec![0.1; 16];
        assert_eq!(psnr(&a, &a, Some(&vec![0.0; 16])), None);
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let gt = vec![0.5; 64];
        let mut last = f64::INFINITY;
        for step in 1..8 {
            let pred: Vec<f64> = gt.iter().map(|v| v + step as f64 * 0.01).collect();
            let p = psnr(&pred, &gt, None).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn split_boundaries() {
        assert_eq!(categorize_split(0.30), Some(OovBin::Small));
        assert_eq!(categorize_split(0.40), Some(OovBin::Medium));
        assert_eq!(categorize_split(0.60), Some(OovBin::Large));
        assert_eq!(categorize_split(0.80), Some(OovBin::Large));
        assert_eq!(categorize_split(0.95), None);
        assert_eq!(categorize_split(0.05), None);
        // total on [0,1]
        for i in 0..=100 {
            let _ = categorize_split(i as f64 / 100.0);
        }
    }

    #[test]
    fn histogram_constant_ratio_single_bin() {
        let h = norm_ratio_histogram(&[vec![2.0; 10]], &default_ratio_edges(24));
        assert_eq!(h.total(), 10);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let hot = h.counts.iter().position(|&c| c > 0).unwrap();
        assert!(h.edges[hot] <= 2.0 && 2.0 < h.edges[hot + 1]);
    }

    #[test]
    fn histogram_counts_conserved_with_outliers() {
        let h = norm_ratio_histogram(
            &[vec![0.001, 0.5, 100.0, 3.0], vec![8.5, 0.2]],
            &default_ratio_edges(16),
        );
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn histogram_matches_sort_and_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.05..10.0)).collect();
        let edges = default_ratio_edges(20);
        let h = norm_ratio_histogram(&[vals.clone()], &edges);
        // brute force: test each value against every bin interval
        let mut expect = vec![0u64; 20];
        for &v in &vals {
            let mut placed = false;
            for b in 0..20 {
                let lo_ok = b == 0 || v >= edges[b];
                let hi_ok = b == 19 || v < edges[b + 1];
                if lo_ok && hi_ok {
                    expect[b] += 1;
                    placed = true;
                    break;
                }
            }
            assert!(placed);
        }
        assert_eq!(h.counts, expect);
    }

    #[test]
    fn report_csv_layout() {
        let mut rep = EvalReport::default();
        rep.push(SampleRow {
            id: "sample_0000".into(),
            bin: OovBin::Small,
            psnr_all: 21.5,
            psnr_vis: Some(24.0),
        });
        rep.push(SampleRow {
            id: "sample_0001".into(),
            bin: OovBin::Large,
            psnr_all: 15.0,
            psnr_vis: None,
        });
        let csv = rep.to_csv();
        assert!(csv.starts_with("id,bin,psnr_all,psnr_vis\n"));
        assert!(csv.contains("sample_0000,small,21.5000,24.0000"));
        assert!(csv.contains("sample_0001,large,15.0000,\n"));
        assert!(csv.contains("mean_small,small,21.5000,24.0000"));
        assert!(!csv.contains("mean_medium"));
    }

    #[test]
    fn upsample_nearest_blocks() {
        let m = vec![0.0, 1.0, 1.0, 0.0];
        let up = upsample_x4_nearest(&m, 2, 2);
        assert_eq!(up.len(), 64);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[7], 1.0); // row 0, col 7 -> source (0,1)
        assert_eq!(up[4 * 8], 1.0); // row 4 -> source row 1
    }
}
