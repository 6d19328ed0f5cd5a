//! Training objectives: photometric depth self-supervision, image
//! reconstruction terms, hinge adversarial losses and the masked
//! transformation-similarity loss with one-way gradient stopping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::COSINE_EPS;
use crate::camera::{CameraModel, RelativePose};
use crate::error::GeometryError;
use crate::model::{PatchDiscriminator, Perceptual};
use crate::ops;
use crate::params::Ctx;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_sm: f64,
    pub lambda_c: f64,
    pub lambda_adv: f64,
    pub lambda_in: f64,
    pub lambda_out: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.85,
            lambda_sm: 1e-3,
            lambda_c: 1.0,
            lambda_adv: 0.1,
            lambda_in: 1.0,
            lambda_out: 1.0,
        }
    }
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// 3x3 mean pooling per channel, stride 1, zero padding.
fn mean_pool3<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [c, h, w] = *x.shape() else { panic!("mean pool expects [C,H,W]") };
    let kernel = Tensor::from_vec(vec![T::from_f64(1.0 / 9.0); 9], vec![1, 1, 3, 3]);
    let batched = ops::reshape(x, &[c, 1, h, w]);
    let pooled = ops::conv2d(&batched, &kernel, None, 1, 1);
    ops::reshape(&pooled, &[c, h, w])
}

/// Per-pixel SSIM map averaged over channels, [H, W]. Inputs are in
/// [-1, 1] and shifted to [0, 1] internally.
pub fn ssim_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "SSIM operands must agree in shape");
    let half = T::from_f64(0.5);
    let x = ops::scale(&ops::add_scalar(a, T::one()), half);
    let y = ops::scale(&ops::add_scalar(b, T::one()), half);
    let mu_x = mean_pool3(&x);
    let mu_y = mean_pool3(&y);
    let sigma_x = ops::sub(&mean_pool3(&ops::mul(&x, &x)), &ops::mul(&mu_x, &mu_x));
    let sigma_y = ops::sub(&mean_pool3(&ops::mul(&y, &y)), &ops::mul(&mu_y, &mu_y));
    let sigma_xy = ops::sub(&mean_pool3(&ops::mul(&x, &y)), &ops::mul(&mu_x, &mu_y));
    let c1 = T::from_f64(SSIM_C1);
    let c2 = T::from_f64(SSIM_C2);
    let num = ops::mul(
        &ops::add_scalar(&ops::scale(&ops::mul(&mu_x, &mu_y), T::from_f64(2.0)), c1),
        &ops::add_scalar(&ops::scale(&sigma_xy, T::from_f64(2.0)), c2),
    );
    let den = ops::mul(
        &ops::add_scalar(&ops::add(&ops::mul(&mu_x, &mu_x), &ops::mul(&mu_y, &mu_y)), c1),
        &ops::add_scalar(&ops::add(&sigma_x, &sigma_y), c2),
    );
    ops::mean_axis(&ops::div(&num, &den), 0, false)
}

/// Mean SSIM of two images in [-1, 1].
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    ops::mean_all(&ssim_map(a, b))
}

/// Photometric error map: alpha/2 (1 - SSIM) + (1 - alpha) |a - b|.
fn photometric_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, alpha: f64) -> Tensor<T> {
    let ssim_term = ops::scale(
        &ops::add_scalar(&ops::neg(&ssim_map(a, b)), T::one()),
        T::from_f64(alpha / 2.0),
    );
    let l1_term = ops::scale(
        &ops::mean_axis(&ops::abs(&ops::sub(a, b)), 0, false),
        T::from_f64(1.0 - alpha),
    );
    ops::add(&ssim_term, &l1_term)
}

/// Backward-warp `neighbor` into the reference view through the depth
/// map; the sampling coordinates carry gradients back into `depth`.
pub fn backward_warp<T: Scalar>(
    neighbor: &Tensor<T>,
    depth: &Tensor<T>,
    camera: &CameraModel,
    pose: &RelativePose,
) -> Tensor<T> {
    let [h, w] = *depth.shape() else { panic!("depth must be [H,W]") };
    assert_eq!(h, camera.height);
    assert_eq!(w, camera.width);
    let n = h * w;
    let mut x_img = vec![T::zero(); 3 * n];
    for y in 0..h {
        for x in 0..w {
            let xi = camera.unproject_pixel(x as f64, y as f64);
            for k in 0..3 {
                x_img[k * n + y * w + x] = T::from_f64(xi[k]);
            }
        }
    }
    let x_img = Tensor::from_vec(x_img, vec![3, h, w]);
    let x_w = ops::mul(&x_img, depth); // [3,H,W] * [H,W] broadcast
    // q = R x_w + t, channel by channel
    let row = |k: usize| {
        let mut q = Tensor::full(&[1, h, w], T::from_f64(pose.translation[k]));
        for j in 0..3 {
            let xj = ops::slice(&x_w, 0, j, j + 1);
            q = ops::add(&q, &ops::scale(&xj, T::from_f64(pose.rotation[k][j])));
        }
        q
    };
    let (q0, q1, q2) = (row(0), row(1), row(2));
    let qz = ops::maximum(&q2, &Tensor::full(&[1, h, w], T::from_f64(1e-6)));
    let px = ops::add_scalar(
        &ops::scale(&ops::div(&q0, &qz), T::from_f64(camera.fx)),
        T::from_f64(camera.cx),
    );
    let py = ops::add_scalar(
        &ops::scale(&ops::div(&q1, &qz), T::from_f64(camera.fy)),
        T::from_f64(camera.cy),
    );
    ops::grid_sample(neighbor, &ops::concat(&[&px, &py], 0))
}

pub struct DepthLossReport<T: Scalar> {
    pub total: Tensor<T>,
    pub reprojection: f64,
    pub smoothness: f64,
}

/// Self-supervised depth objective: minimum-over-neighbors photometric
/// reprojection with auto-masking, plus edge-aware smoothness on the
/// mean-normalized inverse depth.
pub fn depth_loss<T: Scalar>(
    i_ref: &Tensor<T>,
    neighbors: &[(Tensor<T>, RelativePose)],
    camera: &CameraModel,
    depth: &Tensor<T>,
    weights: &LossWeights,
) -> Result<DepthLossReport<T>, GeometryError> {
    if neighbors.is_empty() {
        return Err(GeometryError::Input("depth loss needs at least one neighbor frame".into()));
    }
    let mut pe_warp: Option<Tensor<T>> = None;
    let mut pe_ident: Option<Tensor<T>> = None;
    for (frame, pose) in neighbors {
        let warped = backward_warp(frame, depth, camera, pose);
        let pw = photometric_error(&warped, i_ref, weights.alpha);
        let pi = photometric_error(frame, i_ref, weights.alpha);
        pe_warp = Some(match pe_warp {
            None => pw,
            Some(prev) => ops::minimum(&prev, &pw),
        });
        pe_ident = Some(match pe_ident {
            None => pi,
            Some(prev) => ops::minimum(&prev, &pi),
        });
    }
    let pe_warp = pe_warp.unwrap();
    let pe_ident = pe_ident.unwrap();
    // auto-mask: keep pixels the warp explains better than not moving
    let mask: Vec<T> = pe_warp
        .data()
        .iter()
        .zip(pe_ident.data().iter())
        .map(|(&w, &i)| if w < i { T::one() } else { T::zero() })
        .collect();
    let kept: f64 = mask.iter().map(|&m| m.to_f64()).sum();
    let mask = Tensor::from_vec(mask, pe_warp.shape().to_vec());
    let l_rep = if kept > 0.0 {
        ops::scale(&ops::sum_all(&ops::mul(&mask, &pe_warp)), T::from_f64(1.0 / kept))
    } else {
        Tensor::scalar(T::zero())
    };

    let disp = ops::div(&Tensor::scalar(T::one()), depth);
    let mean_disp = ops::mean_all(&disp);
    let d_star = ops::div(&disp, &ops::add_scalar(&mean_disp, T::from_f64(1e-12)));
    let [h, w] = *depth.shape() else { unreachable!() };
    let grad_x = |t: &Tensor<T>, axis: usize| {
        let extent = t.shape()[axis];
        ops::abs(&ops::sub(
            &ops::slice(t, axis, 1, extent),
            &ops::slice(t, axis, 0, extent - 1),
        ))
    };
    let img_gx = ops::mean_axis(&grad_x(i_ref, 2), 0, false);
    let img_gy = ops::mean_axis(&grad_x(i_ref, 1), 0, false);
    let d2 = ops::reshape(&d_star, &[1, h, w]);
    let sm_x = ops::mul(
        &ops::reshape(&grad_x(&d2, 2), &[h, w - 1]),
        &ops::exp(&ops::neg(&img_gx)),
    );
    let sm_y = ops::mul(
        &ops::reshape(&grad_x(&d2, 1), &[h - 1, w]),
        &ops::exp(&ops::neg(&img_gy)),
    );
    let l_sm = ops::add(&ops::mean_all(&sm_x), &ops::mean_all(&sm_y));

    let total = ops::add(&l_rep, &ops::scale(&l_sm, T::from_f64(weights.lambda_sm)));
    Ok(DepthLossReport {
        total,
        reprojection: l_rep.item().to_f64(),
        smoothness: l_sm.item().to_f64(),
    })
}

/// Per-pixel cosine similarity between channel vectors of two [C,H,W]
/// maps, producing [H,W].
fn cosine_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let dot = ops::sum_axis(&ops::mul(a, b), 0, false);
    let eps2 = T::from_f64(1e-16);
    let na = ops::sqrt(&ops::add_scalar(&ops::sum_axis(&ops::mul(a, a), 0, false), eps2));
    let nb = ops::sqrt(&ops::add_scalar(&ops::sum_axis(&ops::mul(b, b), 0, false), eps2));
    ops::div(&dot, &ops::add_scalar(&ops::mul(&na, &nb), T::from_f64(COSINE_EPS)))
}

pub struct TsLossReport<T: Scalar> {
    pub total: Tensor<T>,
    pub ts_in: f64,
    pub ts_out: f64,
}

/// Masked negative-cosine consistency between the two renderer outputs.
/// Each term sees gradients only through the branch it supervises; the
/// `detach` flag disables the gating for the ablation.
pub fn ts_loss<T: Scalar>(
    h_e: &Tensor<T>,
    h_i: &Tensor<T>,
    o_mask: &Tensor<T>,
    weights: &LossWeights,
    detach: bool,
) -> TsLossReport<T> {
    assert_eq!(h_e.shape(), h_i.shape());
    let ones = Tensor::full(o_mask.shape(), T::one());
    let in_mask = ops::sub(&ones, o_mask);
    let in_count: f64 = in_mask.data().iter().map(|&v| v.to_f64()).sum();
    let out_count: f64 = o_mask.data().iter().map(|&v| v.to_f64()).sum();

    let he_in = if detach { h_e.detach() } else { h_e.clone() };
    let hi_out = if detach { h_i.detach() } else { h_i.clone() };
    // zero-weighted terms are dropped from the graph entirely, so the
    // ablation configurations differ in gradient flow, not just value
    let l_in = if in_count > 0.0 && weights.lambda_in != 0.0 {
        ops::scale(
            &ops::sum_all(&ops::mul(&in_mask, &cosine_map(h_i, &he_in))),
            T::from_f64(-1.0 / in_count),
        )
    } else {
        Tensor::scalar(T::zero())
    };
    let l_out = if out_count > 0.0 && weights.lambda_out != 0.0 {
        ops::scale(
            &ops::sum_all(&ops::mul(o_mask, &cosine_map(h_e, &hi_out))),
            T::from_f64(-1.0 / out_count),
        )
    } else {
        Tensor::scalar(T::zero())
    };
    let total = ops::add(
        &ops::scale(&l_in, T::from_f64(weights.lambda_in)),
        &ops::scale(&l_out, T::from_f64(weights.lambda_out)),
    );
    TsLossReport { total, ts_in: l_in.item().to_f64(), ts_out: l_out.item().to_f64() }
}

pub struct ReconReport<T: Scalar> {
    pub total: Tensor<T>,
    pub l1: f64,
    pub perceptual: f64,
}

/// L1 plus the frozen-pyramid perceptual term, weighted by lambda_c.
pub fn l1_and_perceptual<T: Scalar>(
    i_tgt: &Tensor<T>,
    i_gt: &Tensor<T>,
    extractor: &Perceptual<T>,
    tape: &Tape<T>,
    weights: &LossWeights,
) -> ReconReport<T> {
    assert_eq!(i_tgt.shape(), i_gt.shape());
    let l1 = ops::mean_all(&ops::abs(&ops::sub(i_tgt, i_gt)));
    let fa = extractor.features(tape, i_tgt);
    let fb = extractor.features(tape, i_gt);
    let mut perc = Tensor::scalar(T::zero());
    for (a, b) in fa.iter().zip(fb.iter()) {
        perc = ops::add(&perc, &ops::mean_all(&ops::abs(&ops::sub(a, b))));
    }
    let total = ops::add(&l1, &ops::scale(&perc, T::from_f64(weights.lambda_c)));
    ReconReport { total, l1: l1.item().to_f64(), perceptual: perc.item().to_f64() }
}

/// Both discriminators of the adversarial objective; the local one
/// scores a random half-extent crop.
pub struct Discriminators {
    pub global: PatchDiscriminator,
    pub local: PatchDiscriminator,
}

impl Discriminators {
    pub fn init<T: Scalar>(
        store: &mut crate::params::ParamStore<T>,
        rng: &mut ChaCha8Rng,
        base: usize,
    ) -> Discriminators {
        Discriminators {
            global: PatchDiscriminator::init(store, rng, "disc.global", base),
            local: PatchDiscriminator::init(store, rng, "disc.local", base),
        }
    }

    fn crop<T: Scalar>(image: &Tensor<T>, oy: usize, ox: usize) -> Tensor<T> {
        let [_, h, w] = *image.shape() else { panic!("crop expects [C,H,W]") };
        ops::slice(&ops::slice(image, 1, oy, oy + h / 2), 2, ox, ox + w / 2)
    }

    fn sample_crop_origin<T: Scalar>(image: &Tensor<T>, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let [_, h, w] = *image.shape() else { panic!("crop expects [C,H,W]") };
        (rng.gen_range(0..=h / 2), rng.gen_range(0..=w / 2))
    }

    /// Hinge discriminator loss; the fake image is detached so no
    /// gradient reaches the generator.
    pub fn d_loss<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        real: &Tensor<T>,
        fake: &Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<T> {
        let fake = fake.detach();
        let (oy, ox) = Self::sample_crop_origin(real, rng);
        let hinge = |d: &PatchDiscriminator, r: &Tensor<T>, f: &Tensor<T>| {
            let real_term = ops::mean_all(&ops::relu(&ops::add_scalar(
                &ops::neg(&d.score_map(ctx, r)),
                T::one(),
            )));
            let fake_term =
                ops::mean_all(&ops::relu(&ops::add_scalar(&d.score_map(ctx, f), T::one())));
            ops::add(&real_term, &fake_term)
        };
        ops::add(
            &hinge(&self.global, real, &fake),
            &hinge(&self.local, &Self::crop(real, oy, ox), &Self::crop(&fake, oy, ox)),
        )
    }

    /// Generator hinge term: -E[D(fake)] summed over both critics.
    pub fn g_loss<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        fake: &Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<T> {
        let (oy, ox) = Self::sample_crop_origin(fake, rng);
        ops::neg(&ops::add(
            &ops::mean_all(&self.global.score_map(ctx, fake)),
            &ops::mean_all(&self.local.score_map(ctx, &Self::crop(fake, oy, ox))),
        ))
    }
}

pub struct ViewLossReport<T: Scalar> {
    pub total: Tensor<T>,
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub ts_in: f64,
    pub ts_out: f64,
}

/// L = L_l1 + lambda_c L_c + lambda_adv L_adv + L_ts.
#[allow(clippy::too_many_arguments)]
pub fn total_view_loss<T: Scalar>(
    i_tgt: &Tensor<T>,
    i_gt: &Tensor<T>,
    h_e: &Tensor<T>,
    h_i: &Tensor<T>,
    o_mask: &Tensor<T>,
    extractor: &Perceptual<T>,
    g_loss: Option<&Tensor<T>>,
    tape: &Tape<T>,
    weights: &LossWeights,
    detach: bool,
) -> ViewLossReport<T> {
    let recon = l1_and_perceptual(i_tgt, i_gt, extractor, tape, weights);
    let ts = ts_loss(h_e, h_i, o_mask, weights, detach);
    let adv = match g_loss {
        Some(g) => g.clone(),
        None => Tensor::scalar(T::zero()),
    };
    let total = ops::add(
        &ops::add(&recon.total, &ops::scale(&adv, T::from_f64(weights.lambda_adv))),
        &ts.total,
    );
    ViewLossReport {
        total,
        l1: recon.l1,
        perceptual: recon.perceptual,
        adversarial: adv.item().to_f64(),
        ts_in: ts.ts_in,
        ts_out: ts.ts_out,
    }
}
