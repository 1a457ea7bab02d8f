//! Named parameter storage and per-forward binding into a [`Graph`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Prefix of every alignment-network parameter.
pub const ALIGN_PREFIX: &str = "align.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Main,
    Alignment,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with(ALIGN_PREFIX) {
            ParamGroup::Alignment
        } else {
            ParamGroup::Main
        }
    }
}

/// Ordered map of trainable tensors. Iteration order is the name order,
/// which keeps serialisation and optimiser updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Element = f32> {
    params: BTreeMap<String, Tensor<S>>,
}

/// Deterministic RNG for one named parameter.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl<S: Element> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.params.insert(name.into(), t.with_requires_grad(true));
    }

    /// Conv weight `[cout, cin, k, k]` drawn from `U(-b, b)` with
    /// `b = sqrt(6 / fan_in)`, plus a zero bias when requested.
    pub fn init_conv(&mut self, seed: u64, name: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        self.init_conv_scaled(seed, name, cin, cout, k, bias, 1.0);
    }

    /// As [`ParamStore::init_conv`] with the bound multiplied by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn init_conv_scaled(&mut self, seed: u64, name: &str, cin: usize, cout: usize, k: usize, bias: bool, gain: f64) {
        let wname = format!("{name}.w");
        let fan_in = (cin * k * k) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let mut rng = param_rng(seed, &wname);
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| S::of(rng.gen_range(-bound..bound)));
        self.insert(wname, w);
        if bias {
            self.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<T: Element>(&self) -> ParamStore<T> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Parameters of one store recorded as graph leaves on first use.
pub struct Binder<'a, S: Element> {
    pub store: &'a ParamStore<S>,
    bound: BTreeMap<String, Var>,
}

impl<'a, S: Element> Binder<'a, S> {
    pub fn new(store: &'a ParamStore<S>) -> Self {
        Binder {
            store,
            bound: BTreeMap::new(),
        }
    }

    pub fn var(&mut self, g: &mut Graph<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = g.leaf(self.store.get(name)?);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `v` for `name` instead of a fresh leaf from the store.
    pub fn bind(&mut self, name: impl Into<String>, v: Var) {
        self.bound.insert(name.into(), v);
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Adds the graph's gradients for every bound parameter into `target`.
    pub fn accumulate_into(&self, g: &Graph<S>, target: &mut ParamStore<S>) -> Result<()> {
        for (name, &v) in &self.bound {
            let t = target.get_mut(name)?;
            if let Some(grad) = g.grad(v) {
                if grad.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGrad(name.clone()));
                }
                t.accumulate_grad(grad);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_per_name_and_bounded() {
        let mut a = ParamStore::<f32>::new();
        a.init_conv(7, "x.conv", 4, 8, 3, true);
        a.init_conv(7, "y.conv", 2, 2, 1, false);
        let mut b = ParamStore::<f32>::new();
        b.init_conv(7, "x.conv", 4, 8, 3, true);
        assert_eq!(a.get("x.conv.w").unwrap(), b.get("x.conv.w").unwrap());
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(a.get("x.conv.w").unwrap().data().iter().all(|v| v.abs() < bound));
        assert!(a.get("x.conv.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(!a.contains("y.conv.b"));
        let mut c = ParamStore::<f32>::new();
        c.init_conv(8, "x.conv", 4, 8, 3, true);
        assert_ne!(a.get("x.conv.w").unwrap(), c.get("x.conv.w").unwrap());
    }

    #[test]
    fn groups_follow_prefix() {
        assert_eq!(ParamGroup::of("align.block1.dino.conv1.w"), ParamGroup::Alignment);
        assert_eq!(ParamGroup::of("cnet.stem.w"), ParamGroup::Main);
    }

    #[test]
    fn binder_binds_once_and_routes_grads() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let w1 = b.var(&mut g, "w").unwrap();
        let w2 = b.var(&mut g, "w").unwrap();
        assert_eq!(w1, w2);
        let sq = g.mul(w1, w2).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        let mut target = store.clone();
        b.accumulate_into(&g, &mut target).unwrap();
        assert_eq!(target.get("w").unwrap().grad().unwrap(), &[2.0, 4.0]);
        assert!(b.var(&mut g, "missing").is_err());
    }
}
