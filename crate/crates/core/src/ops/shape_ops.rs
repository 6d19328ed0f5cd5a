//! Shape manipulation, upsampling and scatter-add.

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::shape::{numel, strides};
use crate::tensor::Tensor;

pub fn reshape<T: Scalar>(x: &Tensor<T>, new_shape: &[usize]) -> Tensor<T> {
    assert_eq!(
        x.numel(),
        numel(new_shape),
        "reshape {:?} -> {:?} changes element count",
        x.shape(),
        new_shape
    );
    let out = x.data().to_vec();
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, new_shape.to_vec());
    };
    let id = x.node_id_on(&tape).unwrap();
    tape.record(out, new_shape.to_vec(), Box::new(move |g, sink| sink.add_slice(id, g)))
}

/// General axis permutation.
pub fn permute<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let rank = x.shape().len();
    assert_eq!(axes.len(), rank, "permute axes rank mismatch");
    let in_shape = x.shape().to_vec();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(&in_shape);
    let out_strides = strides(&out_shape);
    let xd = x.data();
    let n = xd.len();
    let mut out = vec![T::zero(); n];
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut off = 0;
        for i in 0..rank {
            let idx = rem / out_strides[i];
            rem %= out_strides[i];
            off += idx * perm_strides[i];
        }
        *o = xd[off];
    }
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, out_shape);
    };
    let id = x.node_id_on(&tape).unwrap();
    let os = out_shape.clone();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let out_strides = strides(&os);
            let slot = sink.slot(id);
            for (flat, &gv) in g.iter().enumerate() {
                let mut rem = flat;
                let mut off = 0;
                for i in 0..os.len() {
                    let idx = rem / out_strides[i];
                    rem %= out_strides[i];
                    off += idx * perm_strides[i];
                }
                slot[off] = slot[off] + gv;
            }
        }),
    )
}

pub fn try_concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    assert!(!parts.is_empty());
    let rank = parts[0].shape().len();
    if axis >= rank {
        return Err(TensorError::InvalidAxis { axis, rank });
    }
    for p in parts.iter().skip(1) {
        let mut a = parts[0].shape().to_vec();
        let mut b = p.shape().to_vec();
        if a.len() != b.len() {
            return Err(TensorError::ConcatMismatch(a, b));
        }
        a[axis] = 0;
        b[axis] = 0;
        if a != b {
            return Err(TensorError::ConcatMismatch(parts[0].shape().to_vec(), p.shape().to_vec()));
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let ka = p.shape()[axis];
            let pd = p.data();
            out.extend_from_slice(&pd[o * ka * inner..(o + 1) * ka * inner]);
        }
    }
    let tape = crate::tensor::tape_of(&parts.to_vec());
    let Some(tape) = tape else {
        return Ok(Tensor::from_vec(out, out_shape));
    };
    let ids: Vec<Option<usize>> = parts.iter().map(|p| p.node_id_on(&tape)).collect();
    let ks: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total_k = out_shape[axis];
    Ok(tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            for (pi, id) in ids.iter().enumerate() {
                let Some(id) = id else { continue };
                let ka = ks[pi];
                let before: usize = ks[..pi].iter().sum();
                let mut contrib = vec![T::zero(); outer * ka * inner];
                for o in 0..outer {
                    let src = (o * total_k + before) * inner;
                    let dst = o * ka * inner;
                    contrib[dst..dst + ka * inner].copy_from_slice(&g[src..src + ka * inner]);
                }
                sink.add_slice(*id, &contrib);
            }
        }),
    ))
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    try_concat(parts, axis).unwrap_or_else(|e| panic!("{e}"))
}

pub fn try_slice<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    lo: usize,
    hi: usize,
) -> Result<Tensor<T>, TensorError> {
    let rank = x.shape().len();
    if axis >= rank {
        return Err(TensorError::InvalidAxis { axis, rank });
    }
    let extent = x.shape()[axis];
    if lo > hi || hi > extent {
        return Err(TensorError::SliceBounds { axis, lo, hi, extent });
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let k = hi - lo;
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * k * inner);
    for o in 0..outer {
        let src = (o * extent + lo) * inner;
        out.extend_from_slice(&xd[src..src + k * inner]);
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = k;
    let Some(tape) = x.tape().cloned() else {
        return Ok(Tensor::from_vec(out, out_shape));
    };
    let id = x.node_id_on(&tape).unwrap();
    Ok(tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let slot = sink.slot(id);
            for o in 0..outer {
                let dst = (o * extent + lo) * inner;
                let src = o * k * inner;
                for i in 0..k * inner {
                    slot[dst + i] = slot[dst + i] + g[src + i];
                }
            }
        }),
    ))
}

pub fn slice<T: Scalar>(x: &Tensor<T>, axis: usize, lo: usize, hi: usize) -> Tensor<T> {
    try_slice(x, axis, lo, hi).unwrap_or_else(|e| panic!("{e}"))
}

/// x2 bilinear upsampling over the last two axes (half-pixel centers,
/// edge clamped).
pub fn bilinear_upsample_x2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let rank = x.shape().len();
    assert!(rank >= 2, "upsample needs at least 2 dims");
    let h = x.shape()[rank - 2];
    let w = x.shape()[rank - 1];
    let batch: usize = x.shape()[..rank - 2].iter().product();
    let (oh, ow) = (h * 2, w * 2);
    // precompute the 1-D interpolation taps; the 2-D kernel is separable
    let taps = |n: usize, on: usize| -> Vec<(usize, usize, f64)> {
        (0..on)
            .map(|i| {
                let src = (i as f64 + 0.5) / 2.0 - 0.5;
                let i0 = src.floor();
                let frac = src - i0;
                let a = (i0.max(0.0) as usize).min(n - 1);
                let b = ((i0 + 1.0).max(0.0) as usize).min(n - 1);
                (a, b, frac)
            })
            .collect()
    };
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let xd = x.data();
    let mut out = vec![T::zero(); batch * oh * ow];
    for bi in 0..batch {
        let src = &xd[bi * h * w..(bi + 1) * h * w];
        let dst = &mut out[bi * oh * ow..(bi + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = ty[oy];
            for ox in 0..ow {
                let (x0, x1, fx) = tx[ox];
                let v00 = src[y0 * w + x0].to_f64();
                let v01 = src[y0 * w + x1].to_f64();
                let v10 = src[y1 * w + x0].to_f64();
                let v11 = src[y1 * w + x1].to_f64();
                let v = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
                dst[oy * ow + ox] = T::from_f64(v);
            }
        }
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[rank - 2] = oh;
    out_shape[rank - 1] = ow;
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, out_shape);
    };
    let id = x.node_id_on(&tape).unwrap();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let slot = sink.slot(id);
            for bi in 0..batch {
                let gsrc = &g[bi * oh * ow..(bi + 1) * oh * ow];
                for oy in 0..oh {
                    let (y0, y1, fy) = ty[oy];
                    for ox in 0..ow {
                        let (x0, x1, fx) = tx[ox];
                        let gv = gsrc[oy * ow + ox].to_f64();
                        let base = bi * h * w;
                        let mut acc = |iy: usize, ix: usize, wgt: f64| {
                            let s = &mut slot[base + iy * w + ix];
                            *s = *s + T::from_f64(gv * wgt);
                        };
                        acc(y0, x0, (1.0 - fy) * (1.0 - fx));
                        acc(y0, x1, (1.0 - fy) * fx);
                        acc(y1, x0, fy * (1.0 - fx));
                        acc(y1, x1, fy * fx);
                    }
                }
            }
        }),
    )
}

/// out[targets[i], ...] += values[i, ...]; duplicates accumulate.
/// Indices are data (not differentiated); values are.
pub fn scatter_add<T: Scalar>(values: &Tensor<T>, targets: &[usize], out_rows: usize) -> Tensor<T> {
    let n = values.shape()[0];
    assert_eq!(targets.len(), n, "one target index per leading row");
    let inner: usize = values.shape()[1..].iter().product();
    for &t in targets {
        assert!(t < out_rows, "scatter target {t} out of range {out_rows}");
    }
    let vd = values.data();
    let mut out = vec![T::zero(); out_rows * inner];
    for (i, &t) in targets.iter().enumerate() {
        for j in 0..inner {
            out[t * inner + j] = out[t * inner + j] + vd[i * inner + j];
        }
    }
    let mut out_shape = vec![out_rows];
    out_shape.extend(&values.shape()[1..]);
    let Some(tape) = values.tape().cloned() else {
        return Tensor::from_vec(out, out_shape);
    };
    let id = values.node_id_on(&tape).unwrap();
    let targets = targets.to_vec();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let mut contrib = vec![T::zero(); targets.len() * inner];
            for (i, &t) in targets.iter().enumerate() {
                contrib[i * inner..(i + 1) * inner].copy_from_slice(&g[t * inner..(t + 1) * inner]);
            }
            sink.add_slice(id, &contrib);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_add_accumulates() {
        let v = Tensor::from_vec(vec![2.0f64, 3.0], vec![2]);
        let y = scatter_add(&v, &[0, 0], 2);
        assert_eq!(y.data(), &[5.0, 0.0]);
    }

    #[test]
    fn slice_out_of_bounds() {
        let x = Tensor::<f64>::zeros(&[3, 4]);
        assert!(try_slice(&x, 1, 2, 5).is_err());
        assert!(try_slice(&x, 2, 0, 1).is_err());
    }

    #[test]
    fn upsample_matches_naive_interpolation() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], vec![1, 2, 2]);
        let y = bilinear_upsample_x2(&x);
        assert_eq!(y.shape(), &[1, 4, 4]);
        // independent per-pixel oracle
        let src = [[1.0, 2.0], [3.0, 4.0]];
        let sample = |fy: f64, fx: f64| -> f64 {
            let gy = (fy + 0.5) / 2.0 - 0.5;
            let gx = (fx + 0.5) / 2.0 - 0.5;
            let y0 = gy.floor();
            let x0 = gx.floor();
            let (dy, dx) = (gy - y0, gx - x0);
            let cl = |v: f64| (v.max(0.0) as usize).min(1);
            let (a, b) = (cl(y0), cl(y0 + 1.0));
            let (c, d) = (cl(x0), cl(x0 + 1.0));
            src[a][c] * (1.0 - dy) * (1.0 - dx)
                + src[a][d] * (1.0 - dy) * dx
                + src[b][c] * dy * (1.0 - dx)
                + src[b][d] * dy * dx
        };
        for oy in 0..4 {
            for ox in 0..4 {
                let expect = sample(oy as f64, ox as f64);
                assert!((y.data()[oy * 4 + ox] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_vec((0..24).map(|v| v as f64).collect(), vec![2, 3, 4]);
        let y = permute(&permute(&x, &[2, 0, 1]), &[1, 2, 0]);
        assert_eq!(y.data(), x.data());
    }
}
