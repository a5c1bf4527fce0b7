use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initialization scheme for a freshly registered parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` using the last two extents.
    Xavier,
    Zeros,
    Ones,
    /// Uniform in `±bound`.
    Uniform(f64),
    /// Xavier noise added to the identity; the last two extents must agree.
    XavierIdentity,
}

/// Named trainable tensors, kept in lexicographic name order.
#[derive(Clone, Debug)]
pub struct ParameterStore<S> {
    params: BTreeMap<String, Tensor<S>>,
    seed: u64,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new(seed: u64) -> Self {
        ParameterStore { params: BTreeMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a new parameter. Each name gets its own random stream
    /// derived from the store seed, so adding or removing other parameters
    /// never changes its initial value.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        super::check_shape(shape)?;
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let (fan_in, fan_out) = match shape {
            [a] => (*a, *a),
            [.., a, b] => (*a, *b),
            [] => (1, 1),
        };
        let xavier = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
            Init::Xavier => (0..n).map(|_| S::of(rng.gen_range(-xavier..=xavier))).collect(),
            Init::XavierIdentity => {
                if fan_in != fan_out || shape.len() < 2 {
                    return Err(Error::contract(format!("identity init of `{name}` needs square matrices, got {shape:?}")));
                }
                (0..n)
                    .map(|i| {
                        let diag = (i % (fan_in * fan_in)) / fan_in == i % fan_in;
                        S::of(rng.gen_range(-xavier..=xavier) + if diag { 1.0 } else { 0.0 })
                    })
                    .collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| S::of(rng.gen_range(-bound..=bound))).collect(),
        };
        let mut t = Tensor::new(shape.to_vec(), data)?;
        t.set_requires_grad(true);
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Insert or replace a parameter with an explicit value.
    pub fn set(&mut self, name: &str, mut value: Tensor<S>) {
        value.set_requires_grad(true);
        self.params.insert(name.to_string(), value);
    }

    /// Overwrite the data of an existing parameter, keeping its shape.
    pub fn assign(&mut self, name: &str, data: &[S]) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if t.numel() != data.len() {
            return Err(Error::dim("assign", format!("`{name}` has shape {:?}, got {} values", t.shape(), data.len())));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Add the gradients of every parameter bound on `graph` (after its
    /// backward pass). Bound parameters the loss does not depend on get an
    /// explicit zero gradient.
    pub fn accumulate_grads(&mut self, graph: &Graph<S>) -> Result<()> {
        for (name, var) in graph.bound_params() {
            let t = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("graph bound unknown parameter `{name}`")))?;
            match graph.grad(*var) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    let zeros = vec![S::zero(); t.numel()];
                    t.accumulate_grad(&zeros)?;
                }
            }
        }
        Ok(())
    }

    /// Add another store's gradients into this one, parameter by parameter.
    pub fn merge_grads(&mut self, other: &ParameterStore<S>) -> Result<()> {
        for (name, t) in &other.params {
            if let Some(g) = t.grad() {
                let mine = self
                    .params
                    .get_mut(name)
                    .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
                mine.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm of all populated gradients taken together.
    pub fn grad_norm(&self) -> S {
        let mut sq = S::zero();
        for g in self.params.values().filter_map(Tensor::grad) {
            sq += g.iter().fold(S::zero(), |a, &x| a + x * x);
        }
        sq.sqrt()
    }

    /// Multiply every populated gradient by `c`.
    pub fn scale_grads(&mut self, c: S) {
        for t in self.params.values_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= c);
            }
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
