use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Named parameter collection. BTreeMap keeps every traversal in
/// lexicographic name order, which is what makes flatten/unflatten and
/// checkpoint layout reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

/// Derive a sub-seed from a master seed and a text tag. Stable across
/// platforms (sha256, not the stdlib hasher) and independent of the
/// order in which tags are drawn.
pub fn seed_for(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    /// Insert a tensor with entries drawn from U(-bound, bound), seeded
    /// by the name alone so unrelated insertions don't shift the draw.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], bound: f64, master_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(master_seed, &format!("init:{name}")));
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), values).expect("shape/product agree"));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries.get_mut(name).ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Concatenate all tensors in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.numel());
        for tensor in self.entries.values() {
            flat.extend_from_slice(tensor.values());
        }
        flat
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the shape
    /// template. Bit-exact round trip.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.numel() {
            return Err(Error::ParamMismatch(format!(
                "flat vector has {} values, parameters hold {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut out = ParamSet::new();
        let mut offset = 0;
        for (name, tensor) in &self.entries {
            let n = tensor.numel();
            out.insert(
                name.clone(),
                Tensor::new(tensor.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(out)
    }

    /// Overwrite values in place from a flat vector (shapes unchanged).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::ParamMismatch(format!(
                "flat vector has {} values, parameters hold {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        for tensor in self.entries.values_mut() {
            let n = tensor.numel();
            tensor.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_same_layout(&self, other: &ParamSet, op: &str) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ParamMismatch(format!(
                "{op}: {} vs {} parameters",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{op}: {na}{:?} vs {nb}{:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// self += factor * other.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) -> Result<()> {
        self.check_same_layout(other, "add_scaled")?;
        for (tensor, src) in self.entries.values_mut().zip(other.entries.values()) {
            for (a, b) in tensor.values_mut().iter_mut().zip(src.values()) {
                *a += factor * b;
            }
        }
        Ok(())
    }

    /// self - other, elementwise.
    pub fn minus(&self, other: &ParamSet) -> Result<ParamSet> {
        self.check_same_layout(other, "minus")?;
        let mut out = self.clone();
        out.add_scaled(other, -1.0)?;
        Ok(out)
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_same_layout(other, "dot")?;
        let mut sum = 0.0;
        for (a, b) in self.entries.values().zip(other.entries.values()) {
            sum += a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>();
        }
        Ok(sum)
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|t| t.values().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, tensor) in &self.entries {
            out.insert(name.clone(), Tensor::zeros(tensor.shape()));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }
}

/// Parameters bound into a graph as leaves, addressable by name.
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    /// Bind every parameter as a tracked leaf (gradients flow).
    pub fn bind(graph: &mut Graph, params: &ParamSet) -> Self {
        Self::bind_with(graph, params, true)
    }

    /// Bind every parameter as a constant (treated as data, no gradients).
    pub fn bind_frozen(graph: &mut Graph, params: &ParamSet) -> Self {
        Self::bind_with(graph, params, false)
    }

    fn bind_with(graph: &mut Graph, params: &ParamSet, tracked: bool) -> Self {
        let mut nodes = BTreeMap::new();
        for (name, tensor) in params.iter() {
            let id = if tracked { graph.leaf(tensor.clone()) } else { graph.constant(tensor.clone()) };
            nodes.insert(name.clone(), id);
        }
        BoundParams { nodes }
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("no bound parameter {name}")))
    }

    /// Collect accumulated gradients back into a ParamSet with the same
    /// names and shapes.
    pub fn grads(&self, graph: &Graph) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &id) in &self.nodes {
            out.insert(name.clone(), graph.grad(id));
        }
        out
    }
}
