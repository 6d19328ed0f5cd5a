//! Layer normalization over the last axis.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::{tape_of, Tensor};

pub fn layernorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let rank = x.shape().len();
    assert!(rank >= 1);
    let c = x.shape()[rank - 1];
    assert_eq!(gamma.shape(), &[c], "gamma shape");
    assert_eq!(beta.shape(), &[c], "beta shape");
    let rows = x.numel() / c;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); xd.len()];
    let mut xhat = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); rows];
    let cn = T::from_f64(c as f64);
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mu: T = row.iter().copied().sum::<T>() / cn;
        let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cn;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for i in 0..c {
            let xh = (row[i] - mu) * istd;
            xhat[r * c + i] = xh;
            out[r * c + i] = xh * gd[i] + bd[i];
        }
    }
    let Some(tape) = tape_of(&[x, gamma, beta]) else {
        return Tensor::from_vec(out, x.shape().to_vec());
    };
    let x_id = x.node_id_on(&tape);
    let g_id = gamma.node_id_on(&tape);
    let b_id = beta.node_id_on(&tape);
    let gd = Rc::new(gd.to_vec());
    let xhat = Rc::new(xhat);
    tape.record(
        out,
        x.shape().to_vec(),
        Box::new(move |g, sink| {
            if let Some(id) = x_id {
                let mut dx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    // dx = istd * (dy*gamma - mean(dy*gamma) - xhat * mean(dy*gamma*xhat))
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for i in 0..c {
                        let dyg = g[r * c + i] * gd[i];
                        m1 = m1 + dyg;
                        m2 = m2 + dyg * xhat[r * c + i];
                    }
                    m1 = m1 / cn;
                    m2 = m2 / cn;
                    for i in 0..c {
                        let dyg = g[r * c + i] * gd[i];
                        dx[r * c + i] = inv_std[r] * (dyg - m1 - xhat[r * c + i] * m2);
                    }
                }
                sink.add_slice(id, &dx);
            }
            if let Some(id) = g_id {
                let mut dg = vec![T::zero(); c];
                for r in 0..rows {
                    for i in 0..c {
                        dg[i] = dg[i] + g[r * c + i] * xhat[r * c + i];
                    }
                }
                sink.add_slice(id, &dg);
            }
            if let Some(id) = b_id {
                let mut db = vec![T::zero(); c];
                for r in 0..rows {
                    for i in 0..c {
                        db[i] = db[i] + g[r * c + i];
                    }
                }
                sink.add_slice(id, &db);
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_is_zero_pre_affine() {
        let x = Tensor::full(&[2, 4], 3.0f64);
        let gamma = Tensor::full(&[4], 1.0f64);
        let beta = Tensor::zeros(&[4]);
        let y = layernorm(&x, &gamma, &beta, 1e-5);
        for v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn two_point_standardization() {
        let x = Tensor::from_vec(vec![1.0f64, 3.0], vec![1, 2]);
        let gamma = Tensor::full(&[2], 1.0f64);
        let beta = Tensor::zeros(&[2]);
        let y = layernorm(&x, &gamma, &beta, 1e-12);
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }
}
