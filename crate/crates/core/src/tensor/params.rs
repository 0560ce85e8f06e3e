use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named trainable tensors, ordered by name so iteration (and therefore
/// optimisation and serialisation) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    /// Registers a trainable tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        value.set_requires_grad(true);
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Sets each trainable parameter's gradient from `grads`. Parameters the
    /// loss never touched receive an explicit zero gradient.
    pub fn absorb(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            if !p.requires_grad() {
                continue;
            }
            let g = match grads.param(name) {
                Some(g) => g.data().to_vec(),
                None => vec![T::zero(); p.numel()],
            };
            p.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self
            .params
            .values()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                if let Some(g) = p.grad() {
                    let scaled = g.iter().map(|&x| x * s).collect();
                    p.set_grad(scaled).expect("same length");
                }
            }
        }
        norm
    }

    /// Exposes the parameters to `tape`. With `track` false the parameters
    /// are recorded as constants and no gradient is computed for them.
    pub fn bind<'t, 's>(&'s self, tape: &'t Tape<T>, track: bool) -> Bound<'t, 's, T> {
        Bound {
            tape,
            store: self,
            track,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

/// Parameters of a [`ParamStore`] bound to one tape; each is recorded at most once.
pub struct Bound<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    track: bool,
    cache: RefCell<HashMap<String, Var<'t, T>>>,
}

impl<'t, 's, T: Scalar> Bound<'t, 's, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn tracking(&self) -> bool {
        self.track
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        if let Some(v) = self.cache.borrow().get(name) {
            return Ok(*v);
        }
        let value = self.store.get(name)?;
        let var = if self.track {
            self.tape.param(name, value)?
        } else {
            self.tape.constant(value.detached())?
        };
        self.cache.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0)).unwrap();
        let tape = Tape::new();
        let grads = {
            let p = store.bind(&tape, true);
            let w = p.get("w").unwrap();
            let w2 = p.get("w").unwrap();
            tape.backward(w.mul(&w2).unwrap()).unwrap()
        };
        store.absorb(&grads).unwrap();
        assert_eq!(store.get("w").unwrap().grad(), Some(&[6.0][..]));
    }

    #[test]
    fn untouched_parameter_receives_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(1.0)).unwrap();
        store.insert("b", Tensor::scalar(1.0)).unwrap();
        let tape = Tape::new();
        let grads = {
            let p = store.bind(&tape, true);
            tape.backward(p.get("a").unwrap().square().unwrap()).unwrap()
        };
        store.absorb(&grads).unwrap();
        assert_eq!(store.get("b").unwrap().grad(), Some(&[0.0][..]));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(store.insert("w", Tensor::scalar(2.0)), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::row(vec![0.0, 0.0])).unwrap();
        store.get_mut("w").unwrap().set_grad(vec![3.0, 4.0]).unwrap();
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        let g = store.get("w").unwrap().grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
