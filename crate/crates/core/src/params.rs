//! Named parameter storage shared by model init, training and
//! checkpointing.

use std::cell::RefCell;
use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    map: IndexMap<String, (Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { map: IndexMap::new() }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        let prev = self.map.insert(name.to_string(), (shape, data));
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[T])> {
        self.map.get(name).map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn set_data(&mut self, name: &str, data: Vec<T>) {
        let entry = self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(entry.1.len(), data.len());
        entry.1 = data;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.map.iter().map(|(k, (s, d))| (k.as_str(), s.as_slice(), d.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<T>)> {
        self.map.iter_mut().map(|(k, (_, d))| (k.as_str(), d))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(|(_, d)| d.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, shape, data) in self.iter() {
            out.insert(name, shape.to_vec(), data.iter().map(|&v| U::from_f64(v.to_f64())).collect());
        }
        out
    }
}

/// One forward pass: leafs parameters onto a tape on first use so each
/// parameter has exactly one tape node regardless of fan-out.
pub struct Ctx<'a, T: Scalar> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    cache: RefCell<HashMap<String, Tensor<T>>>,
    /// when false, parameters enter the graph as constants (frozen nets)
    trainable: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: Tape<T>, store: &'a ParamStore<T>) -> Self {
        Ctx { tape, store, cache: RefCell::new(HashMap::new()), trainable: true }
    }

    pub fn frozen(tape: Tape<T>, store: &'a ParamStore<T>) -> Self {
        Ctx { tape, store, cache: RefCell::new(HashMap::new()), trainable: false }
    }

    pub fn p(&self, name: &str) -> Tensor<T> {
        if let Some(t) = self.cache.borrow().get(name) {
            return t.clone();
        }
        let (shape, data) = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let t = if self.trainable {
            self.tape.leaf(data.to_vec(), shape.to_vec())
        } else {
            Tensor::from_vec(data.to_vec(), shape.to_vec())
        };
        self.cache.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Gradients of every parameter touched by this pass, after
    /// backward. Untouched or unreached parameters map to None.
    pub fn grads(&self) -> HashMap<String, Option<Vec<T>>> {
        self.cache
            .borrow()
            .iter()
            .map(|(name, t)| (name.clone(), self.tape.grad(t)))
            .collect()
    }
}

/// Truncated normal (resample outside 2 sigma), the default projection
/// initializer.
pub fn trunc_normal<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<T> {
    (0..n)
        .map(|_| {
            loop {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                if z.abs() <= 2.0 {
                    return T::from_f64(z * sigma);
                }
            }
        })
        .collect()
}

pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<T> {
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            T::from_f64(z * sigma)
        })
        .collect()
}
