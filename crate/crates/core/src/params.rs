//! Named parameter storage shared by the networks and the optimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::autograd::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Trainable,
    /// State such as running statistics; saved but never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

/// Flat, ordered parameter list. Insertion order is stable and defines the
/// checkpoint layout.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
    frozen: bool,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            id: fresh_store_id(),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            id: fresh_store_id(),
            params: Vec::new(),
            frozen: false,
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            kind,
        });
        ParamId(self.params.len() - 1)
    }

    /// Zero-mean normal weights with `std = sqrt(2 / fan_in)`.
    pub fn add_he_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::randn(shape, std, rng), ParamKind::Trainable)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Two distinct buffers borrowed mutably at once.
    pub(crate) fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a, b, "pair_mut needs distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.params.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.params.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    /// A frozen store hands out leaves that never require gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every leaf this store handed to `tape`.
    pub fn collect_grads(&mut self, tape: &Tape, grads: &Gradients) {
        for b in tape.bindings().iter().filter(|b| b.store == self.id) {
            if let Some(g) = grads.get(b.var) {
                self.params[b.param]
                    .grad
                    .add_assign(g)
                    .expect("parameter gradient matches its value");
            }
        }
    }

    /// Replaces every value with the one from `other`, matched by position
    /// and checked by name and shape.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter {} {} does not match {} {}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// True if every value is bitwise identical to `other`'s.
    pub fn values_identical(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
