//! Forward feature splatting and the out-of-view mask.

use crate::camera::Reprojection;
use crate::error::TensorError;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax-splatting sharpness.
pub const SPLAT_ALPHA: f64 = 10.0;
/// Accumulated-mass threshold separating covered from untouched pixels.
pub const COVERAGE_TAU: f64 = 1e-4;

pub struct SplatResult<T: Scalar> {
    pub warped: Tensor<T>,
    /// accumulated splat mass per target pixel, [H, W]
    pub weight: Vec<T>,
}

/// Forward-splat `features` [C,H,W] along `flow` [2,H,W]. Invalid
/// pixels (behind the camera) contribute nothing.
pub fn splat_forward<T: Scalar>(
    features: &Tensor<T>,
    flow: &[T],
    importance: &Tensor<T>,
    valid: &[bool],
) -> Result<SplatResult<T>, TensorError> {
    let (warped, weight) = ops::splat(features, flow, importance, valid, SPLAT_ALPHA, COVERAGE_TAU)?;
    Ok(SplatResult { warped, weight })
}

/// Splat along a reprojection, weighting nearer surfaces more via
/// importance = negative target-view depth.
pub fn splat_by_reprojection<T: Scalar>(
    features: &Tensor<T>,
    rep: &Reprojection,
) -> Result<SplatResult<T>, TensorError> {
    let imp: Vec<T> = rep
        .target_depth
        .iter()
        .zip(&rep.valid)
        .map(|(&d, &v)| if v { T::from_f64(-d) } else { T::zero() })
        .collect();
    let [_, h, w] = *features.shape() else {
        return Err(TensorError::ShapeMismatch {
            expected: vec![0, 0, 0],
            got: features.shape().to_vec(),
        });
    };
    let flow: Vec<T> = rep.flow.iter().map(|&f| T::from_f64(f)).collect();
    let importance = Tensor::from_vec(imp, vec![h, w]);
    splat_forward(features, &flow, &importance, &rep.valid)
}

/// Binary map of target pixels no reprojected source pixel reaches.
/// Not part of the gradient graph.
#[derive(Debug, Clone)]
pub struct OutOfViewMask {
    pub width: usize,
    pub height: usize,
    /// true = out of view (must be hallucinated)
    pub o: Vec<bool>,
}

impl OutOfViewMask {
    pub fn ratio(&self) -> f64 {
        self.o.iter().filter(|&&v| v).count() as f64 / self.o.len() as f64
    }

    /// O as a [H, W] tensor with 1 at out-of-view pixels.
    pub fn as_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.o.iter().map(|&v| if v { T::one() } else { T::zero() }).collect(),
            vec![self.height, self.width],
        )
    }

    /// Nearest-neighbor upsample by an integer factor (for full-image
    /// PSNR-vis masking).
    pub fn upsample(&self, factor: usize) -> OutOfViewMask {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut o = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                o[y * w + x] = self.o[(y / factor) * self.width + (x / factor)];
            }
        }
        OutOfViewMask { width: w, height: h, o }
    }
}

/// O(p) = 1 iff splat weight(p) < tau.
pub fn derive_out_of_view_mask<T: Scalar>(weight: &[T], width: usize, height: usize) -> OutOfViewMask {
    assert_eq!(weight.len(), width * height);
    OutOfViewMask {
        width,
        height,
        o: weight.iter().map(|&w| w.to_f64() < COVERAGE_TAU).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{reproject, unproject, CameraModel, RelativePose};

    #[test]
    fn identity_pose_full_coverage() {
        let cam = CameraModel::default_for(8);
        let maps = unproject(&cam, &vec![3.0; 64]).unwrap();
        let rep = reproject(&cam, &maps, &RelativePose::identity());
        let f = Tensor::full(&[2, 8, 8], 1.0f64);
        let res = splat_by_reprojection(&f, &rep).unwrap();
        let mask = derive_out_of_view_mask(&res.weight, 8, 8);
        assert_eq!(mask.ratio(), 0.0);
        assert_eq!(res.warped.data(), f.data());
    }

    #[test]
    fn all_flows_outside_frame() {
        let f = Tensor::full(&[1, 4, 4], 1.0f64);
        let n = 16;
        let mut flow = vec![0.0f64; 2 * n];
        for v in flow.iter_mut().take(n) {
            *v = 100.0;
        }
        let imp = Tensor::zeros(&[4, 4]);
        let res = splat_forward(&f, &flow, &imp, &[true; 16]).unwrap();
        let mask = derive_out_of_view_mask(&res.weight, 4, 4);
        assert_eq!(mask.ratio(), 1.0);
    }

    #[test]
    fn constant_field_splats_constant() {
        let cam = CameraModel::default_for(8);
        let maps = unproject(&cam, &vec![4.0; 64]).unwrap();
        let pose = RelativePose::new(crate::camera::rot_y(10.0), [0.3, 0.0, 0.0]).unwrap();
        let rep = reproject(&cam, &maps, &pose);
        let f = Tensor::full(&[3, 8, 8], 7.5f64);
        let res = splat_by_reprojection(&f, &rep).unwrap();
        let mask = derive_out_of_view_mask(&res.weight, 8, 8);
        for (i, &covered) in mask.o.iter().enumerate() {
            if !covered {
                // covered pixel: weighted average of a constant is the constant
                for c in 0..3 {
                    assert!((res.warped.data()[c * 64 + i] - 7.5).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mask_invariant_to_features() {
        let cam = CameraModel::default_for(8);
        let maps = unproject(&cam, &vec![2.0; 64]).unwrap();
        let pose = RelativePose::new(crate::camera::rot_z(30.0), [0.5, 0.2, 0.0]).unwrap();
        let rep = reproject(&cam, &maps, &pose);
        let f1 = Tensor::full(&[2, 8, 8], 1.0f64);
        let f2 = Tensor::from_vec((0..128).map(|v| v as f64).collect(), vec![2, 8, 8]);
        let m1 = derive_out_of_view_mask(&splat_by_reprojection(&f1, &rep).unwrap().weight, 8, 8);
        let m2 = derive_out_of_view_mask(&splat_by_reprojection(&f2, &rep).unwrap().weight, 8, 8);
        assert_eq!(m1.o, m2.o);
    }
}
