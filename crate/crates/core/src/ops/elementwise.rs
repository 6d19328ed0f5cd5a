//! Pointwise ops with trailing-dimension broadcasting.

use std::rc::Rc;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::shape::{broadcast, broadcast_strides, numel, offset_for, reduce_grad};
use crate::tensor::{tape_of, Tensor};

/// Validate that two shapes broadcast; the public entry for error checks.
pub fn try_binary_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    broadcast(a, b)
}

fn binary<T, F, G>(a: &Tensor<T>, b: &Tensor<T>, fwd: F, grad: G) -> Tensor<T>
where
    T: Scalar,
    F: Fn(T, T) -> T,
    G: Fn(T, T, T) -> (T, T) + 'static,
{
    let out_shape = broadcast(a.shape(), b.shape()).unwrap_or_else(|e| panic!("{e}"));
    let n = numel(&out_shape);
    let same = a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    if same {
        for i in 0..n {
            out.push(fwd(ad[i], bd[i]));
        }
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        for i in 0..n {
            let ia = offset_for(i, &out_shape, &sa);
            let ib = offset_for(i, &out_shape, &sb);
            out.push(fwd(ad[ia], bd[ib]));
        }
    }
    let Some(tape) = tape_of(&[a, b]) else {
        return Tensor::from_vec(out, out_shape);
    };
    let a_id = a.node_id_on(&tape);
    let b_id = b.node_id_on(&tape);
    let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
    let (ad, bd) = (Rc::new(ad.to_vec()), Rc::new(bd.to_vec()));
    let os = out_shape.clone();
    tape.record(
        out,
        out_shape,
        Box::new(move |g, sink| {
            let sa = broadcast_strides(&a_shape, &os);
            let sb = broadcast_strides(&b_shape, &os);
            let mut ga = vec![T::zero(); g.len()];
            let mut gb = vec![T::zero(); g.len()];
            for i in 0..g.len() {
                let ia = offset_for(i, &os, &sa);
                let ib = offset_for(i, &os, &sb);
                let (da, db) = grad(ad[ia], bd[ib], g[i]);
                ga[i] = da;
                gb[i] = db;
            }
            if let Some(id) = a_id {
                sink.add_slice(id, &reduce_grad(&ga, &os, &a_shape));
            }
            if let Some(id) = b_id {
                sink.add_slice(id, &reduce_grad(&gb, &os, &b_shape));
            }
        }),
    )
}

fn unary<T, F, G>(x: &Tensor<T>, fwd: F, grad: G) -> Tensor<T>
where
    T: Scalar,
    F: Fn(T) -> T,
    G: Fn(T) -> T + 'static,
{
    let out: Vec<T> = x.data().iter().map(|&v| fwd(v)).collect();
    let Some(tape) = x.tape().cloned() else {
        return Tensor::from_vec(out, x.shape().to_vec());
    };
    let id = x.node_id_on(&tape).unwrap();
    let xd = Rc::new(x.data().to_vec());
    tape.record(
        out,
        x.shape().to_vec(),
        Box::new(move |g, sink| {
            let contrib: Vec<T> = g.iter().zip(xd.iter()).map(|(&gi, &xi)| gi * grad(xi)).collect();
            sink.add_slice(id, &contrib);
        }),
    )
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x + y, |_, _, g| (g, g))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x - y, |_, _, g| (g, -g))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x / y, |x, y, g| (g / y, -g * x / (y * y)))
}

/// Elementwise minimum; ties route the gradient to the first operand.
pub fn minimum<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(
        a,
        b,
        |x, y| if x <= y { x } else { y },
        |x, y, g| if x <= y { (g, T::zero()) } else { (T::zero(), g) },
    )
}

/// Elementwise maximum; ties route the gradient to the first operand.
pub fn maximum<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(
        a,
        b,
        |x, y| if x >= y { x } else { y },
        |x, y, g| if x >= y { (g, T::zero()) } else { (T::zero(), g) },
    )
}

pub fn neg<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| -v, |_| -T::one())
}

pub fn exp<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.exp(), |v| v.exp())
}

pub fn log<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.ln(), |v| T::one() / v)
}

pub fn abs<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.abs(), |v| if v >= T::zero() { T::one() } else { -T::one() })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |v| if v > T::zero() { T::one() } else { T::zero() },
    )
}

/// Exact-erf GELU: 0.5 x (1 + erf(x / sqrt(2))).
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    unary(
        x,
        move |v| half * v * (T::one() + (v * inv_sqrt2).erf()),
        move |v| {
            half * (T::one() + (v * inv_sqrt2).erf())
                + v * inv_sqrt_2pi * (-(v * v) * half).exp()
        },
    )
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| T::one() / (T::one() + (-v).exp()),
        |v| {
            let s = T::one() / (T::one() + (-v).exp());
            s * (T::one() - s)
        },
    )
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.tanh(), |v| {
        let t = v.tanh();
        T::one() - t * t
    })
}

pub fn sqrt<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.sqrt(), |v| {
        T::from_f64(0.5) / v.sqrt()
    })
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    unary(x, move |v| v * c, move |_| c)
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    unary(x, move |v| v + c, |_| T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn add_values() {
        let y = add(&Tensor::from_vec(vec![1.0f64, 2.0], vec![2]), &Tensor::from_vec(vec![3.0, 4.0], vec![2]));
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zero_grad_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(vec![2.0, -3.0], vec![2]);
        let z = Tensor::zeros(&[2]);
        let loss = sum_all_helper(&mul(&x, &z));
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), vec![0.0, 0.0]);
    }

    fn sum_all_helper(t: &Tensor<f64>) -> Tensor<f64> {
        crate::ops::sum_all(t)
    }

    #[test]
    fn gelu_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(vec![0.0], vec![1]);
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        tape.backward(&crate::ops::sum_all(&y)).unwrap();
        assert!((tape.grad(&x).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn broadcast_error_names_shapes() {
        let e = try_binary_shapes(&[2, 3], &[4]).unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn detach_cuts_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(vec![1.0, 2.0], vec![2]);
        let y = x.detach();
        let loss = crate::ops::sum_all(&y);
        tape.backward(&loss).unwrap();
        assert!(tape.grad(&x).is_none());

        // x * detach(x): grad is x, not 2x
        let loss = crate::ops::sum_all(&mul(&x, &x.detach()));
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), vec![1.0, 2.0]);
    }
}
