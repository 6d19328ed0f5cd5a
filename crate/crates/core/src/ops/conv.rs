//! Direct 2-D convolution.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::{tape_of, Tensor};

/// conv2d(x[B,C,H,W], w[O,C,kh,kw]) with symmetric zero padding.
/// Bias, when present, is one value per output channel.
pub fn try_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let [b, c, h, wd] = *x.shape() else {
        return Err(TensorError::ShapeMismatch {
            expected: vec![0, 0, 0, 0],
            got: x.shape().to_vec(),
        });
    };
    let [o, cw, kh, kw] = *w.shape() else {
        return Err(TensorError::ShapeMismatch {
            expected: vec![0, 0, 0, 0],
            got: w.shape().to_vec(),
        });
    };
    if cw != c {
        return Err(TensorError::ShapeMismatch { expected: vec![o, c, kh, kw], got: w.shape().to_vec() });
    }
    if kh > h + 2 * padding || kw > wd + 2 * padding {
        return Err(TensorError::KernelTooLarge(kh, kw, h + 2 * padding, wd + 2 * padding));
    }
    assert!(stride >= 1);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;

    let xd = x.data();
    let wdat = w.data();
    let bd: Option<Vec<T>> = bias.map(|t| t.data().to_vec());
    let mut out = vec![T::zero(); b * o * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(chunk_i, chunk)| {
        let bi = chunk_i / o;
        let oi = chunk_i % o;
        let bias_v = bd.as_ref().map(|v| v[oi]).unwrap_or_else(T::zero);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias_v;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc = acc
                                + xd[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((oi * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                chunk[oy * ow + ox] = acc;
            }
        }
    });

    let out_shape = vec![b, o, oh, ow];
    let mut operands = vec![x, w];
    if let Some(bt) = bias {
        operands.push(bt);
    }
    let Some(tape) = tape_of(&operands) else {
        return Ok(Tensor::from_vec(out, out_shape));
    };
    let x_id = x.node_id_on(&tape);
    let w_id = w.node_id_on(&tape);
    let b_id = bias.and_then(|t| t.node_id_on(&tape));
    let xd = Arc::new(xd.to_vec());
    let wdat = Arc::new(wdat.to_vec());
    Ok(tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            if let Some(id) = x_id {
                // gather form, parallel over (batch, input channel)
                let mut dx = vec![T::zero(); b * c * h * wd];
                dx.par_chunks_mut(h * wd).enumerate().for_each(|(chunk_i, chunk)| {
                    let bi = chunk_i / c;
                    let ci = chunk_i % c;
                    for iy in 0..h {
                        for ix in 0..wd {
                            let mut acc = T::zero();
                            for oi in 0..o {
                                for ky in 0..kh {
                                    let num_y = iy + padding;
                                    if num_y < ky || (num_y - ky) % stride != 0 {
                                        continue;
                                    }
                                    let oy = (num_y - ky) / stride;
                                    if oy >= oh {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let num_x = ix + padding;
                                        if num_x < kx || (num_x - kx) % stride != 0 {
                                            continue;
                                        }
                                        let ox = (num_x - kx) / stride;
                                        if ox >= ow {
                                            continue;
                                        }
                                        acc = acc
                                            + g[((bi * o + oi) * oh + oy) * ow + ox]
                                                * wdat[((oi * c + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                            chunk[iy * wd + ix] = acc;
                        }
                    }
                });
                sink.add_slice(id, &dx);
            }
            if let Some(id) = w_id {
                let mut dw = vec![T::zero(); o * c * kh * kw];
                dw.par_chunks_mut(c * kh * kw).enumerate().for_each(|(oi, chunk)| {
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let mut acc = T::zero();
                                for bi in 0..b {
                                    for oy in 0..oh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for ox in 0..ow {
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            acc = acc
                                                + g[((bi * o + oi) * oh + oy) * ow + ox]
                                                    * xd[((bi * c + ci) * h + iy as usize) * wd
                                                        + ix as usize];
                                        }
                                    }
                                }
                                chunk[(ci * kh + ky) * kw + kx] = acc;
                            }
                        }
                    }
                });
                sink.add_slice(id, &dw);
            }
            if let Some(id) = b_id {
                let mut db = vec![T::zero(); o];
                for bi in 0..b {
                    for (oi, dbo) in db.iter_mut().enumerate() {
                        let base = (bi * o + oi) * oh * ow;
                        for v in &g[base..base + oh * ow] {
                            *dbo = *dbo + *v;
                        }
                    }
                }
                sink.add_slice(id, &db);
            }
        }),
    ))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    try_conv2d(x, w, bias, stride, padding).unwrap_or_else(|e| panic!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), vec![1, 1, 4, 4]);
        let w = Tensor::from_vec(vec![1.0], vec![1, 1, 1, 1]);
        let y = conv2d(&x, &w, None, 1, 0);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn box_sum_interior() {
        let x = Tensor::full(&[1, 1, 5, 5], 2.0f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let y = conv2d(&x, &w, None, 1, 1);
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        assert_eq!(y.data()[2 * 5 + 2], 18.0); // 9 * c
    }

    #[test]
    fn kernel_too_large() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(try_conv2d(&x, &w, None, 1, 0).is_err());
    }
}
