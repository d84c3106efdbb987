//! Named parameter store with per-parameter trainability flags.
//!
//! Parameters are registered once under a dotted name (`"cmt.level0.down_v.w"`)
//! and addressed by a stable [`ParamId`] afterwards. Freezing is a property
//! of the store, not of the graph: a graph leaf created from a frozen
//! parameter never receives a gradient, so an optimizer step cannot move it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Stable handle to a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    by_name: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore { names: Vec::new(), values: Vec::new(), trainable: Vec::new(), by_name: BTreeMap::new() }
    }

    /// Registers a parameter; names must be unique and values finite.
    pub fn register(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::Parameter { detail: format!("duplicate name {name:?}") });
        }
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op: "ParamStore::register" });
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.trainable.push(trainable);
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| CoreError::Parameter { detail: format!("unknown name {name:?}") })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    /// Overwrites a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(CoreError::ShapeMismatch {
                op: "ParamStore::set_value",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    self.values[id.0].shape(),
                    value.shape()
                ),
            });
        }
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op: "ParamStore::set_value" });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Iterates `(id, name, value, trainable)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor, bool)> {
        (0..self.names.len()).map(|i| (ParamId(i), self.names[i].as_str(), &self.values[i], self.trainable[i]))
    }

    /// Sets trainability from a name predicate; returns how many
    /// parameters ended up trainable.
    pub fn set_trainable_where<F: Fn(&str) -> bool>(&mut self, pred: F) -> usize {
        let mut n = 0;
        for i in 0..self.names.len() {
            self.trainable[i] = pred(&self.names[i]);
            if self.trainable[i] {
                n += 1;
            }
        }
        n
    }

    pub fn freeze_all(&mut self) {
        for t in self.trainable.iter_mut() {
            *t = false;
        }
    }

    /// Scalar counts: (trainable elements, total elements).
    pub fn element_counts(&self) -> (usize, usize) {
        let mut trainable = 0;
        let mut total = 0;
        for i in 0..self.values.len() {
            let n = self.values[i].len();
            total += n;
            if self.trainable[i] {
                trainable += n;
            }
        }
        (trainable, total)
    }

    /// Element count over parameters whose name satisfies `pred`.
    pub fn element_count_where<F: Fn(&str) -> bool>(&self, pred: F) -> usize {
        (0..self.names.len()).filter(|&i| pred(&self.names[i])).map(|i| self.values[i].len()).sum()
    }

    /// Order-independent fingerprint of all values under a name prefix;
    /// used to verify that frozen namespaces do not move during training.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        // FNV-1a over the little-endian bytes of name lengths and values,
        // walking names in sorted order.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, &i) in self.by_name.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            mix(name.as_bytes());
            for v in self.values[i].data() {
                mix(&v.to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn register_and_lookup() {
        let mut s = ParamStore::new();
        let id = s.register("a.w", Tensor::zeros(&[2, 2]), true).unwrap();
        assert_eq!(s.id("a.w").unwrap(), id);
        assert!(s.is_trainable(id));
        assert!(s.id("missing").is_err());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.register("x", Tensor::zeros(&[1]), true).unwrap();
        assert!(matches!(s.register("x", Tensor::zeros(&[1]), true), Err(CoreError::Parameter { .. })));
    }

    #[test]
    fn set_value_keeps_shape() {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.set_value(id, Tensor::zeros(&[3])).is_err());
        s.set_value(id, Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn trainability_by_namespace() {
        let mut s = ParamStore::new();
        s.register("enc.w", Tensor::zeros(&[4]), true).unwrap();
        s.register("adapter.w", Tensor::zeros(&[2]), true).unwrap();
        let n = s.set_trainable_where(|name| name.starts_with("adapter."));
        assert_eq!(n, 1);
        assert!(!s.is_trainable(s.id("enc.w").unwrap()));
        assert!(s.is_trainable(s.id("adapter.w").unwrap()));
        let (tr, total) = s.element_counts();
        assert_eq!((tr, total), (2, 6));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut s = ParamStore::new();
        let id = s.register("ns.w", Tensor::zeros(&[2]), true).unwrap();
        s.register("other.w", Tensor::zeros(&[2]), true).unwrap();
        let before = s.fingerprint("ns.");
        s.set_value(id, Tensor::new(&[2], vec![0.5, 0.0]).unwrap()).unwrap();
        assert_ne!(before, s.fingerprint("ns."));
        // untouched namespace unchanged
        let other = s.fingerprint("other.");
        s.set_value(id, Tensor::zeros(&[2])).unwrap();
        assert_eq!(other, s.fingerprint("other."));
    }

    #[test]
    fn non_finite_rejected() {
        let mut s = ParamStore::new();
        assert!(matches!(
            s.register("bad", Tensor::new(&[1], vec![f64::NAN]).unwrap(), true),
            Err(CoreError::NonFinite { .. })
        ));
    }
}
