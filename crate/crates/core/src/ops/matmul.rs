//! Batched matrix multiplication with broadcastable batch dimensions.

use std::rc::Rc;

use rayon::prelude::*;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::shape::{broadcast, numel, strides};
use crate::tensor::{tape_of, Tensor};

fn split_batch(shape: &[usize]) -> (&[usize], usize, usize) {
    let r = shape.len();
    (&shape[..r - 2], shape[r - 2], shape[r - 1])
}

/// Map a flat batch index in the broadcast batch shape to a flat batch
/// offset into an operand with batch shape `own`.
fn batch_offset(flat: usize, out_batch: &[usize], own: &[usize]) -> usize {
    if own.is_empty() {
        return 0;
    }
    let os = strides(out_batch);
    let own_s = strides(own);
    let pad = out_batch.len() - own.len();
    let mut rem = flat;
    let mut off = 0;
    for i in 0..out_batch.len() {
        let idx = rem / os[i];
        rem %= os[i];
        if i >= pad && own[i - pad] != 1 {
            off += idx * own_s[i - pad];
        }
    }
    off
}

fn raw_matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    out_batch: &[usize],
    a_batch: &[usize],
    b_batch: &[usize],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    let nb = numel(out_batch).max(1);
    let mut out = vec![T::zero(); nb * m * n];
    out.par_chunks_mut(m * n).enumerate().for_each(|(bi, chunk)| {
        let ao = batch_offset(bi, out_batch, a_batch) * m * k;
        let bo = batch_offset(bi, out_batch, b_batch) * k * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for l in 0..k {
                    acc = acc + a[ao + i * k + l] * b[bo + l * n + j];
                }
                chunk[i * n + j] = acc;
            }
        }
    });
    out
}

pub fn try_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.shape().len() < 2 || b.shape().len() < 2 {
        return Err(TensorError::MatmulDims(a.shape().to_vec(), b.shape().to_vec()));
    }
    let (a_batch, m, k) = split_batch(a.shape());
    let (b_batch, k2, n) = split_batch(b.shape());
    if k != k2 {
        return Err(TensorError::MatmulDims(a.shape().to_vec(), b.shape().to_vec()));
    }
    let out_batch = broadcast(a_batch, b_batch)?;
    let out = raw_matmul(a.data(), b.data(), &out_batch, a_batch, b_batch, m, k, n);
    let mut out_shape = out_batch.clone();
    out_shape.extend([m, n]);

    let Some(tape) = tape_of(&[a, b]) else {
        return Ok(Tensor::from_vec(out, out_shape));
    };
    let a_id = a.node_id_on(&tape);
    let b_id = b.node_id_on(&tape);
    let ad = Rc::new(a.data().to_vec());
    let bd = Rc::new(b.data().to_vec());
    let (ab, bb) = (a_batch.to_vec(), b_batch.to_vec());
    Ok(tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let nb = numel(&out_batch).max(1);
            // dA[bi] = G[bi] * B[bi]^T ; dB[bi] = A[bi]^T * G[bi]
            if let Some(id) = a_id {
                let mut da = vec![T::zero(); ad.len()];
                for bi in 0..nb {
                    let go = bi * m * n;
                    let ao = batch_offset(bi, &out_batch, &ab) * m * k;
                    let bo = batch_offset(bi, &out_batch, &bb) * k * n;
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc = acc + g[go + i * n + j] * bd[bo + l * n + j];
                            }
                            da[ao + i * k + l] = da[ao + i * k + l] + acc;
                        }
                    }
                }
                sink.add_slice(id, &da);
            }
            if let Some(id) = b_id {
                let mut db = vec![T::zero(); bd.len()];
                for bi in 0..nb {
                    let go = bi * m * n;
                    let ao = batch_offset(bi, &out_batch, &ab) * m * k;
                    let bo = batch_offset(bi, &out_batch, &bb) * k * n;
                    for l in 0..k {
                        for j in 0..n {
                            let mut acc = T::zero();
                            for i in 0..m {
                                acc = acc + ad[ao + i * k + l] * g[go + i * n + j];
                            }
                            db[bo + l * n + j] = db[bo + l * n + j] + acc;
                        }
                    }
                }
                sink.add_slice(id, &db);
            }
        }),
    ))
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    try_matmul(a, b).unwrap_or_else(|e| panic!("{e}"))
}
