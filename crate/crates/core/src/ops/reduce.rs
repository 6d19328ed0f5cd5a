//! Reductions and softmax.

use std::rc::Rc;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    let Some(tape) = x.tape().cloned() else {
        return Tensor::scalar(s);
    };
    let id = x.node_id_on(&tape).unwrap();
    let n = x.numel();
    tape.record(
        vec![s],
        vec![],
        Box::new(move |g, sink| {
            let contrib = vec![g[0]; n];
            sink.add_slice(id, &contrib);
        }),
    )
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = T::from_f64(x.numel() as f64);
    super::scale(&sum_all(x), T::one() / n)
}

fn check_axis(axis: usize, rank: usize) -> Result<(), TensorError> {
    if axis >= rank {
        return Err(TensorError::InvalidAxis { axis, rank });
    }
    Ok(())
}

/// Iterate (outer, axis, inner) decomposition for a reduction axis.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, k, inner)
}

pub fn sum_axis<T: Scalar>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Tensor<T> {
    check_axis(axis, x.shape().len()).unwrap_or_else(|e| panic!("{e}"));
    let (outer, k, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..k {
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + xd[(o * k + j) * inner + i];
            }
        }
    }
    let mut out_shape: Vec<usize> = x.shape().to_vec();
    if keepdim {
        out_shape[axis] = 1;
    } else {
        out_shape.remove(axis);
    }
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, out_shape);
    };
    let id = x.node_id_on(&tape).unwrap();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let slot = sink.slot(id);
            for o in 0..outer {
                for j in 0..k {
                    for i in 0..inner {
                        let s = &mut slot[(o * k + j) * inner + i];
                        *s = *s + g[o * inner + i];
                    }
                }
            }
        }),
    )
}

pub fn mean_axis<T: Scalar>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Tensor<T> {
    let k = T::from_f64(x.shape()[axis] as f64);
    super::scale(&sum_axis(x, axis, keepdim), T::one() / k)
}

/// Max along an axis; ties take the subgradient at the first maximal index.
pub fn max_axis<T: Scalar>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Tensor<T> {
    check_axis(axis, x.shape().len()).unwrap_or_else(|e| panic!("{e}"));
    let (outer, k, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); outer * inner];
    let mut argmax = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = xd[o * k * inner + i];
            let mut bj = 0;
            for j in 1..k {
                let v = xd[(o * k + j) * inner + i];
                if v > best {
                    best = v;
                    bj = j;
                }
            }
            out[o * inner + i] = best;
            argmax[o * inner + i] = bj;
        }
    }
    let mut out_shape: Vec<usize> = x.shape().to_vec();
    if keepdim {
        out_shape[axis] = 1;
    } else {
        out_shape.remove(axis);
    }
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, out_shape);
    };
    let id = x.node_id_on(&tape).unwrap();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let slot = sink.slot(id);
            for o in 0..outer {
                for i in 0..inner {
                    let j = argmax[o * inner + i];
                    let s = &mut slot[(o * k + j) * inner + i];
                    *s = *s + g[o * inner + i];
                }
            }
        }),
    )
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    check_axis(axis, x.shape().len()).unwrap_or_else(|e| panic!("{e}"));
    let (outer, k, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut mx = xd[o * k * inner + i];
            for j in 1..k {
                let v = xd[(o * k + j) * inner + i];
                if v > mx {
                    mx = v;
                }
            }
            let mut z = T::zero();
            for j in 0..k {
                let e = (xd[(o * k + j) * inner + i] - mx).exp();
                out[(o * k + j) * inner + i] = e;
                z = z + e;
            }
            for j in 0..k {
                let idx = (o * k + j) * inner + i;
                out[idx] = out[idx] / z;
            }
        }
    }
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, x.shape().to_vec());
    };
    let id = x.node_id_on(&tape).unwrap();
    let y = Rc::new(out.clone());
    tape.record(
        out,
        x.shape().to_vec(),
        Box::new(move |g, sink| {
            let mut contrib = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut dot = T::zero();
                    for j in 0..k {
                        let idx = (o * k + j) * inner + i;
                        dot = dot + g[idx] * y[idx];
                    }
                    for j in 0..k {
                        let idx = (o * k + j) * inner + i;
                        contrib[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            sink.add_slice(id, &contrib);
        }),
    )
}
