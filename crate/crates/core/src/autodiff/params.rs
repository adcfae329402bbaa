use std::collections::HashMap;

use super::tensor::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Named parameters, each paired with a gradient accumulator of the same
/// shape. Iteration order is registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
    grads_ready: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            grads_ready: false,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        let dst = self.entries[id.0].grad.data_mut();
        debug_assert_eq!(dst.len(), g.len());
        for (d, &s) in dst.iter_mut().zip(g) {
            *d += s;
        }
        self.grads_ready = true;
    }

    /// Adds another store's gradients (same layout) into this one.
    pub fn add_grads_from(&mut self, other: &ParamStore<T>) -> Result<(), TensorError> {
        if other.entries.len() != self.entries.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_grads_from",
                left: vec![self.entries.len()],
                right: vec![other.entries.len()],
            });
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            for (d, &s) in dst.grad.data_mut().iter_mut().zip(src.grad.data()) {
                *d += s;
            }
        }
        self.grads_ready |= other.grads_ready;
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: T) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// FNV-1a over the bit patterns of every value whose name passes `keep`.
    pub fn checksum_where(&self, keep: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in self.entries.iter().filter(|e| keep(&e.name)) {
            for b in e.name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            for v in e.value.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    /// Same names, shapes and bit-identical values.
    pub fn same_values(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }

    /// Fresh store with identical values and zeroed gradients.
    pub fn detached_copy(&self) -> Self {
        let mut copy = self.clone();
        copy.zero_grads();
        copy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_and_lookup() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(s.id("a").unwrap(), a);
        assert!(matches!(
            s.insert("a", Tensor::zeros(&[1, 1])),
            Err(TensorError::DuplicateParam(_))
        ));
        assert!(matches!(s.id("b"), Err(TensorError::UnknownParam(_))));
        assert_eq!(s.grad(a).shape(), &[2, 2]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Tensor::scalar(1.0)).unwrap();
        let before = s.checksum();
        s.value_mut(a).data_mut()[0] = 2.0;
        assert_ne!(before, s.checksum());
    }
}
