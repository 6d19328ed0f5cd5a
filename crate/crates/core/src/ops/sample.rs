//! Image-space sampling kernels: bilinear gather, forward softmax
//! splatting, and the windowed gather used by local set attention.

use std::rc::Rc;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::{tape_of, Tensor};

/// Bilinear sample of `image` [C,H,W] at `coords` [2,Ho,Wo] (x then y,
/// pixel units). Coordinates are clamped to the border; clamped samples
/// get zero coordinate gradient. Differentiable wrt both inputs.
pub fn grid_sample<T: Scalar>(image: &Tensor<T>, coords: &Tensor<T>) -> Tensor<T> {
    let [c, h, w] = *image.shape() else { panic!("grid_sample image must be [C,H,W]") };
    let [two, oh, ow] = *coords.shape() else { panic!("grid_sample coords must be [2,Ho,Wo]") };
    assert_eq!(two, 2);
    let img = image.data();
    let cd = coords.data();
    let n = oh * ow;
    let mut out = vec![T::zero(); c * n];
    // cached taps for backward
    let mut taps = vec![(0usize, 0usize, 0usize, 0usize, 0.0f64, 0.0f64, false, false); n];
    for p in 0..n {
        let x = cd[p].to_f64();
        let y = cd[n + p].to_f64();
        let xin = x >= 0.0 && x <= (w - 1) as f64;
        let yin = y >= 0.0 && y <= (h - 1) as f64;
        let xc = x.max(0.0).min((w - 1) as f64);
        let yc = y.max(0.0).min((h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        taps[p] = (x0, x1, y0, y1, fx, fy, xin, yin);
        for ci in 0..c {
            let base = ci * h * w;
            let v = img[base + y0 * w + x0].to_f64() * (1.0 - fy) * (1.0 - fx)
                + img[base + y0 * w + x1].to_f64() * (1.0 - fy) * fx
                + img[base + y1 * w + x0].to_f64() * fy * (1.0 - fx)
                + img[base + y1 * w + x1].to_f64() * fy * fx;
            out[ci * n + p] = T::from_f64(v);
        }
    }
    let out_shape = vec![c, oh, ow];
    let Some(tape) = tape_of(&[image, coords]) else {
        return Tensor::from_vec(out, out_shape);
    };
    let img_id = image.node_id_on(&tape);
    let coord_id = coords.node_id_on(&tape);
    let img = Rc::new(img.to_vec());
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            if let Some(id) = img_id {
                let mut di = vec![T::zero(); c * h * w];
                for p in 0..n {
                    let (x0, x1, y0, y1, fx, fy, _, _) = taps[p];
                    for ci in 0..c {
                        let gv = g[ci * n + p].to_f64();
                        let base = ci * h * w;
                        let mut acc = |iy: usize, ix: usize, wgt: f64| {
                            let s = &mut di[base + iy * w + ix];
                            *s = *s + T::from_f64(gv * wgt);
                        };
                        acc(y0, x0, (1.0 - fy) * (1.0 - fx));
                        acc(y0, x1, (1.0 - fy) * fx);
                        acc(y1, x0, fy * (1.0 - fx));
                        acc(y1, x1, fy * fx);
                    }
                }
                sink.add_slice(id, &di);
            }
            if let Some(id) = coord_id {
                let mut dc = vec![T::zero(); 2 * n];
                for p in 0..n {
                    let (x0, x1, y0, y1, fx, fy, xin, yin) = taps[p];
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for ci in 0..c {
                        let gv = g[ci * n + p].to_f64();
                        let base = ci * h * w;
                        let v00 = img[base + y0 * w + x0].to_f64();
                        let v01 = img[base + y0 * w + x1].to_f64();
                        let v10 = img[base + y1 * w + x0].to_f64();
                        let v11 = img[base + y1 * w + x1].to_f64();
                        gx += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                        gy += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                    }
                    if xin {
                        dc[p] = T::from_f64(gx);
                    }
                    if yin {
                        dc[n + p] = T::from_f64(gy);
                    }
                }
                sink.add_slice(id, &dc);
            }
        }),
    )
}

/// Softmax-weighted forward splat of `features` [C,H,W] along `flow`
/// [2,H,W] (x then y displacement, data only). Each valid source pixel
/// distributes exp(alpha * importance) * bilinear mass to its four
/// neighboring target pixels; covered targets hold the mass-weighted
/// feature mean, uncovered ones (accumulated mass < tau) hold zero.
/// Differentiable wrt features and importance. Accumulation is
/// row-major over source pixels.
#[allow(clippy::too_many_arguments)]
pub fn splat<T: Scalar>(
    features: &Tensor<T>,
    flow: &[T],
    importance: &Tensor<T>,
    valid: &[bool],
    alpha: f64,
    tau: f64,
) -> Result<(Tensor<T>, Vec<T>), TensorError> {
    let [c, h, w] = *features.shape() else {
        return Err(TensorError::ShapeMismatch {
            expected: vec![0, 0, 0],
            got: features.shape().to_vec(),
        });
    };
    let n = h * w;
    assert_eq!(flow.len(), 2 * n, "flow must be [2,H,W]");
    assert_eq!(importance.numel(), n, "importance must be [H,W]");
    assert_eq!(valid.len(), n);
    for p in 0..n {
        if valid[p] && (!flow[p].is_finite() || !flow[n + p].is_finite()) {
            return Err(TensorError::Input(format!(
                "NaN/inf flow at valid pixel ({}, {})",
                p / w,
                p % w
            )));
        }
    }
    let fd = features.data();
    let imp = importance.data();
    // taps: (source pixel, target pixel, bilinear kernel weight)
    let mut taps: Vec<(usize, usize, f64)> = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            let p = sy * w + sx;
            if !valid[p] {
                continue;
            }
            let tx = sx as f64 + flow[p].to_f64();
            let ty = sy as f64 + flow[n + p].to_f64();
            let x0 = tx.floor() as isize;
            let y0 = ty.floor() as isize;
            let fx = tx - x0 as f64;
            let fy = ty - y0 as f64;
            for (dy, dx, kw) in [
                (0isize, 0isize, (1.0 - fy) * (1.0 - fx)),
                (0, 1, (1.0 - fy) * fx),
                (1, 0, fy * (1.0 - fx)),
                (1, 1, fy * fx),
            ] {
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize || kw == 0.0 {
                    continue;
                }
                taps.push((p, yy as usize * w + xx as usize, kw));
            }
        }
    }
    // per-target softmax shift: the weighted average at a pixel is
    // invariant to an offset of the importances reaching it, and
    // shifting by the per-pixel max keeps masses at kernel scale so the
    // coverage threshold separates "untouched" from "reached"
    let mut shift = vec![f64::NEG_INFINITY; n];
    for &(p, t, _) in &taps {
        shift[t] = shift[t].max(imp[p].to_f64());
    }
    let shift = Rc::new(shift);
    let mut num = vec![0.0f64; c * n];
    let mut den = vec![0.0f64; n];
    for &(p, t, kw) in &taps {
        let m = (alpha * (imp[p].to_f64() - shift[t])).exp() * kw;
        for ci in 0..c {
            num[ci * n + t] += m * fd[ci * n + p].to_f64();
        }
        den[t] += m;
    }
    let mut out = vec![T::zero(); c * n];
    let covered: Vec<bool> = den.iter().map(|&d| d >= tau).collect();
    for t in 0..n {
        if covered[t] {
            for ci in 0..c {
                out[ci * n + t] = T::from_f64(num[ci * n + t] / den[t]);
            }
        }
    }
    let weight: Vec<T> = den.iter().map(|&d| T::from_f64(d)).collect();

    let Some(tape) = tape_of(&[features, importance]) else {
        return Ok((Tensor::from_vec(out, vec![c, h, w]), weight));
    };
    let f_id = features.node_id_on(&tape);
    let i_id = importance.node_id_on(&tape);
    let fd = Rc::new(fd.to_vec());
    let imp = Rc::new(imp.to_vec());
    let out_vals = Rc::new(out.clone());
    let warped = tape.record(
        out,
        vec![c, h, w],
        Box::new(move |g, sink| {
            if let Some(id) = f_id {
                let mut df = vec![T::zero(); c * n];
                for &(p, t, kw) in &taps {
                    if !covered[t] {
                        continue;
                    }
                    let m = (alpha * (imp[p].to_f64() - shift[t])).exp() * kw / den[t];
                    for ci in 0..c {
                        let s = &mut df[ci * n + p];
                        *s = *s + T::from_f64(m * g[ci * n + t].to_f64());
                    }
                }
                sink.add_slice(id, &df);
            }
            if let Some(id) = i_id {
                let mut di = vec![T::zero(); n];
                for &(p, t, kw) in &taps {
                    if !covered[t] {
                        continue;
                    }
                    let wexp = (alpha * (imp[p].to_f64() - shift[t])).exp();
                    let mut dot = 0.0;
                    for ci in 0..c {
                        dot += (fd[ci * n + p].to_f64() - out_vals[ci * n + t].to_f64())
                            * g[ci * n + t].to_f64();
                    }
                    let s = &mut di[p];
                    *s = *s + T::from_f64(alpha * wexp * kw / den[t] * dot);
                }
                sink.add_slice(id, &di);
            }
        }),
    );
    Ok((warped, weight))
}

/// Windowed correlation gather: out[c, p] = sum_k corr[k, p] * phi[c, p + offset_k],
/// skipping offsets that fall off the image. Differentiable wrt both.
pub fn lsa_gather<T: Scalar>(
    corr: &Tensor<T>,
    phi: &Tensor<T>,
    offsets: &[(isize, isize)],
) -> Tensor<T> {
    let [k, h, w] = *corr.shape() else { panic!("corr must be [K,H,W]") };
    let [c, h2, w2] = *phi.shape() else { panic!("phi must be [C,H,W]") };
    assert_eq!((h, w), (h2, w2), "corr/phi spatial mismatch");
    assert_eq!(k, offsets.len());
    let n = h * w;
    let cd = corr.data();
    let pd = phi.data();
    let mut out = vec![T::zero(); c * n];
    for (ki, &(dy, dx)) in offsets.iter().enumerate() {
        for y in 0..h as isize {
            let qy = y + dy;
            if qy < 0 || qy >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let qx = x + dx;
                if qx < 0 || qx >= w as isize {
                    continue;
                }
                let p = y as usize * w + x as usize;
                let q = qy as usize * w + qx as usize;
                let cv = cd[ki * n + p];
                for ci in 0..c {
                    out[ci * n + p] = out[ci * n + p] + cv * pd[ci * n + q];
                }
            }
        }
    }
    let Some(tape) = tape_of(&[corr, phi]) else {
        return Tensor::from_vec(out, vec![c, h, w]);
    };
    let corr_id = corr.node_id_on(&tape);
    let phi_id = phi.node_id_on(&tape);
    let cd = Rc::new(cd.to_vec());
    let pd = Rc::new(pd.to_vec());
    let offsets = offsets.to_vec();
    tape.record(
        out,
        vec![c, h, w],
        Box::new(move |g, sink| {
            if let Some(id) = corr_id {
                let mut dc = vec![T::zero(); k * n];
                for (ki, &(dy, dx)) in offsets.iter().enumerate() {
                    for y in 0..h as isize {
                        let qy = y + dy;
                        if qy < 0 || qy >= h as isize {
                            continue;
                        }
                        for x in 0..w as isize {
                            let qx = x + dx;
                            if qx < 0 || qx >= w as isize {
                                continue;
                            }
                            let p = y as usize * w + x as usize;
                            let q = qy as usize * w + qx as usize;
                            let mut acc = T::zero();
                            for ci in 0..c {
                                acc = acc + g[ci * n + p] * pd[ci * n + q];
                            }
                            dc[ki * n + p] = acc;
                        }
                    }
                }
                sink.add_slice(id, &dc);
            }
            if let Some(id) = phi_id {
                let mut dp = vec![T::zero(); c * n];
                for (ki, &(dy, dx)) in offsets.iter().enumerate() {
                    for y in 0..h as isize {
                        let qy = y + dy;
                        if qy < 0 || qy >= h as isize {
                            continue;
                        }
                        for x in 0..w as isize {
                            let qx = x + dx;
                            if qx < 0 || qx >= w as isize {
                                continue;
                            }
                            let p = y as usize * w + x as usize;
                            let q = qy as usize * w + qx as usize;
                            let cv = cd[ki * n + p];
                            for ci in 0..c {
                                dp[ci * n + q] = dp[ci * n + q] + cv * g[ci * n + p];
                            }
                        }
                    }
                }
                sink.add_slice(id, &dp);
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splat_identity_flow() {
        let f = Tensor::from_vec((0..12).map(|v| v as f64).collect(), vec![3, 2, 2]);
        let flow = vec![0.0f64; 8];
        let imp = Tensor::zeros(&[2, 2]);
        let valid = vec![true; 4];
        let (warped, weight) = splat(&f, &flow, &imp, &valid, 10.0, 1e-4).unwrap();
        assert_eq!(warped.data(), f.data());
        for wv in weight {
            assert!((wv - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn splat_shift_right() {
        let f = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], vec![1, 2, 2]);
        let mut flow = vec![0.0f64; 8];
        flow[0..4].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        let imp = Tensor::zeros(&[2, 2]);
        let (warped, weight) = splat(&f, &flow, &imp, &[true; 4], 10.0, 1e-4).unwrap();
        // leftmost column uncovered, right column receives left features
        assert_eq!(warped.data(), &[0.0, 1.0, 0.0, 3.0]);
        assert_eq!(weight[0], 0.0);
        assert_eq!(weight[2], 0.0);
    }

    #[test]
    fn splat_softmax_dominance() {
        // two sources land on one target; the high-importance source wins
        let f = Tensor::from_vec(vec![10.0f64, 20.0], vec![1, 1, 2]);
        let flow = vec![1.0f64, 0.0, 0.0, 0.0]; // pixel 0 lands on pixel 1
        let imp = Tensor::from_vec(vec![5.0, 0.0], vec![1, 2]);
        let (warped, _) = splat(&f, &flow, &imp, &[true; 2], 10.0, 1e-4).unwrap();
        // closed-form two-pixel softmax: (e^50*10 + e^0*20) / (e^50 + e^0)
        let expect = ((50f64).exp() * 10.0 + 20.0) / ((50f64).exp() + 1.0);
        assert!((warped.data()[1] - expect).abs() < 1e-9);
        assert!((warped.data()[1] - 10.0).abs() < 1e-12); // dominance in the limit
    }

    #[test]
    fn splat_rejects_nan_flow() {
        let f = Tensor::<f64>::zeros(&[1, 1, 2]);
        let flow = vec![f64::NAN, 0.0, 0.0, 0.0];
        let imp = Tensor::zeros(&[1, 2]);
        assert!(splat(&f, &flow, &imp, &[true; 2], 10.0, 1e-4).is_err());
        // NaN at an invalid pixel is fine
        assert!(splat(&f, &flow, &imp, &[false, true], 10.0, 1e-4).is_ok());
    }
}
