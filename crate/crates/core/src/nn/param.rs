use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a parameter tensor.
///
/// Ids are only used to route gradients back to their owner; they never feed
/// into numerics, so allocation order does not affect determinism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named tensor that may be optimized.
///
/// Frozen parameters (`trainable == false`) enter graphs as constants, so no
/// gradient is ever produced for them.
#[derive(Debug)]
pub struct Param {
    id: ParamId,
    pub name: String,
    pub value: Tensor,
    trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            value,
            trainable,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}

impl Clone for Param {
    /// Copies get a fresh id so gradients of the copy never alias the original.
    fn clone(&self) -> Self {
        Self {
            id: ParamId::fresh(),
            name: self.name.clone(),
            value: self.value.clone(),
            trainable: self.trainable,
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    pub(crate) params: HashMap<ParamId, Tensor>,
    pub(crate) leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn param(&self, p: &Param) -> Option<&Tensor> {
        self.params.get(&p.id)
    }

    pub fn by_id(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient of a tracked non-parameter leaf created with `Graph::variable`.
    pub fn var(&self, v: super::Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn take_param(&mut self, id: ParamId) -> Option<Tensor> {
        self.params.remove(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }
}

/// Stable content hash of a parameter list, used to verify that frozen
/// components and untouched networks really stay unchanged.
pub fn params_fingerprint<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in p.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
