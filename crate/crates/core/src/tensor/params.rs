//! Named trainable parameters with a stable, insertion-defined order.

use crate::error::{Error, Result};
use crate::tensor::{NdArray, NodeId, Tape};
use crate::util::checksum_f64;

/// An ordered collection of named parameter arrays.
///
/// Order is fixed at insertion time, which gives every model a canonical
/// flat-vector layout for gradient steps, checkpoints and checksums.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, NdArray)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray) {
        let name = name.into();
        debug_assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name, value));
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&NdArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NdArray> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn require(&self, name: &str) -> Result<&NdArray> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Concatenation of all parameter data in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for (_, v) in &self.entries {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Overwrite all parameters from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::invalid(format!(
                "flat vector length {} != parameter count {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for (_, v) in &mut self.entries {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// In-place SGD step: `p -= lr * g` over the canonical flat layout.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.total_len() {
            return Err(Error::invalid(format!(
                "gradient length {} != parameter count {}",
                grad.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for (_, v) in &mut self.entries {
            for e in v.data_mut() {
                *e -= lr * grad[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.all_finite())
    }

    /// Stable checksum over names and values; used for freeze contracts.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0;
        for (name, v) in &self.entries {
            h = h
                .rotate_left(7)
                .wrapping_add(checksum_f64(&[name.len() as f64]))
                .wrapping_add(checksum_f64(v.data()));
        }
        h
    }

    /// Checksum restricted to names accepted by `pred`.
    pub fn checksum_filtered(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0;
        for (name, v) in &self.entries {
            if pred(name) {
                h = h.rotate_left(7).wrapping_add(checksum_f64(v.data()));
            }
        }
        h
    }
}

/// Parameter nodes bound onto a tape for one forward/backward pass.
pub struct BoundParams {
    pub nodes: Vec<(String, NodeId)>,
}

impl ParamStore {
    /// Bind every parameter as a tape leaf, returning name -> node bindings.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            nodes: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

impl BoundParams {
    pub fn node(&self, name: &str) -> NodeId {
        self.nodes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    /// Flat gradient vector in the store's canonical order.
    pub fn flat_gradient(&self, grads: &crate::tensor::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, id) in &self.nodes {
            out.extend_from_slice(grads.wrt(*id).data());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_roundtrip_preserves_order() {
        let mut p = ParamStore::new();
        p.insert("w", NdArray::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        p.insert("b", NdArray::from_vec(vec![2], vec![5.0, 6.0]).unwrap());
        let flat = p.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut q = p.clone();
        q.assign_flat(&flat).unwrap();
        assert_eq!(q.checksum(), p.checksum());
    }

    #[test]
    fn step_applies_in_canonical_order() {
        let mut p = ParamStore::new();
        p.insert("a", NdArray::from_vec(vec![2], vec![1.0, 1.0]).unwrap());
        p.step(&[0.5, -0.5], 2.0).unwrap();
        assert_eq!(p.get("a").unwrap().data(), &[0.0, 2.0]);
    }
}
