//! Shape arithmetic: row-major strides and trailing-dimension broadcasting.

use crate::error::TensorError;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Broadcast two shapes under trailing-dimension alignment.
pub fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::Broadcast(a.to_vec(), b.to_vec()));
        };
    }
    Ok(out)
}

/// Strides for reading an input of `shape` as if it had `out_shape`,
/// with 0-stride on broadcast axes.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out_shape.len() - shape.len();
    let mut s = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        s[pad + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

/// Walk a flat output index back to a flat input index given broadcast strides.
pub fn offset_for(flat: usize, out_shape: &[usize], bstrides: &[usize]) -> usize {
    let mut rem = flat;
    let mut off = 0;
    let os = strides(out_shape);
    for i in 0..out_shape.len() {
        let idx = rem / os[i];
        rem %= os[i];
        off += idx * bstrides[i];
    }
    off
}

/// Sum `grad` (shaped `from`) down to `to`, undoing broadcasting.
pub fn reduce_grad<T: crate::scalar::Scalar>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); numel(to)];
    let bs = broadcast_strides(to, from);
    let os = strides(from);
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        let mut off = 0;
        for i in 0..from.len() {
            let idx = rem / os[i];
            rem %= os[i];
            off += idx * bs[i];
        }
        out[off] = out[off] + g;
    }
    out
}
