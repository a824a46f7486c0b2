use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use super::container::{Container, Payload};
use super::tensor::{Real, Tensor};
use crate::error::{invalid, Error, Result};

/// Half-width of the uniform weight initialization interval.
pub const INIT_SCALE: f64 = 0.08;

/// Named trainable tensors plus the optimizer step counter.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F = f32> {
    entries: BTreeMap<String, Tensor<F>>,
    step_count: u64,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return invalid(format!("parameter {name} already exists"));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Registers a weight drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::lit(rng.gen_range(-INIT_SCALE..INIT_SCALE)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn entry(&self, name: &str) -> Option<(&str, &Tensor<F>)> {
        self.entries
            .get_key_value(name)
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.get_mut(name)
    }

    /// Overwrites the values of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if slot.shape() != tensor.shape() {
            return invalid(format!(
                "shape of {name} is immutable: {:?} vs {:?}",
                slot.shape(),
                tensor.shape()
            ));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step_count += 1;
        self.step_count
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            step_count: self.step_count,
        }
    }

    /// Adds every entry of `other`; names must not collide.
    pub fn merge(&mut self, other: ParamStore<F>) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Moves the entries whose name starts with `prefix` into a new store.
    pub fn split_prefix(&mut self, prefix: &str) -> ParamStore<F> {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let mut out = ParamStore::new();
        for k in keys {
            let v = self.entries.remove(&k).expect("key listed above");
            out.entries.insert(k, v);
        }
        out
    }
}

impl ParamStore<f32> {
    pub(crate) fn to_payloads(&self) -> Vec<(String, Payload)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), Payload::F32(v.clone())))
            .collect()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::json!({ "kind": "params", "step_count": self.step_count });
        Container::new(meta, self.to_payloads()).write_to(w)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let c = Container::read_from(r)?;
        let step_count = c
            .meta
            .get("step_count")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("missing step_count".into()))?;
        let mut store = ParamStore::from_payloads(c.entries)?;
        store.step_count = step_count;
        Ok(store)
    }

    pub(crate) fn from_payloads(entries: Vec<(String, Payload)>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, p) in entries {
            match p {
                Payload::F32(t) => store.insert(name, t)?,
                Payload::I32 { .. } => {
                    return Err(Error::Format(format!("{name}: expected f32 tensor")))
                }
            }
        }
        Ok(store)
    }

    pub(crate) fn set_step_count(&mut self, n: u64) {
        self.step_count = n;
    }
}

/// Per-parameter gradients, keyed like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Gradients<F = f32> {
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(params: &ParamStore<F>) -> Self {
        Gradients {
            entries: params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub(crate) fn from_map(entries: BTreeMap<String, Tensor<F>>) -> Self {
        Gradients { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.entries.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<F>> {
        self.entries.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn global_norm(&self) -> F {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&g| g * g)
            .sum::<F>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.entries.values_mut() {
            for g in t.data_mut() {
                *g = *g * factor;
            }
        }
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: F) -> F {
        let norm = self.global_norm();
        if norm > max_norm && norm > F::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Elementwise accumulation; keys of `other` must already exist here.
    pub fn accumulate(&mut self, other: &Gradients<F>) -> Result<()> {
        for (k, g) in &other.entries {
            let slot = self
                .entries
                .get_mut(k)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown gradient {k}")))?;
            if slot.shape() != g.shape() {
                return invalid(format!("gradient shape mismatch for {k}"));
            }
            for (a, &b) in slot.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
        Ok(())
    }
}
