use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::Rng;

use super::SacError;
use crate::encoder::FusedState;

/// One step of experience from one actor.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: FusedState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: FusedState,
    /// Last step of an episode.
    pub terminal: bool,
    /// Token ids of the prompt behind `state`, for recomputing the text half.
    pub prompt_ids: Vec<u32>,
    /// The text half came from an external embedding table.
    pub external_hit: bool,
    /// Index of the actor that produced the step.
    pub actor: usize,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Arc<Transition>>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transitions pushed since construction, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Arc::new(t));
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i).map(Arc::as_ref)
    }

    /// Indices drawn uniformly without replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>, SacError> {
        if n > self.items.len() {
            return Err(SacError::NotEnoughSamples {
                have: self.items.len(),
                need: n,
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Arc<Transition>>, SacError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| Arc::clone(&self.items[i]))
            .collect())
    }
}

/// Buffer shared by concurrently collecting actors; appends are serialized by
/// a mutex and a sample is a snapshot of shared handles.
#[derive(Debug)]
pub struct SharedReplay {
    inner: Mutex<ReplayBuffer>,
}

impl SharedReplay {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(ReplayBuffer::new(capacity)),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ReplayBuffer> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, t: Transition) {
        self.lock().push(t);
    }

    pub fn extend(&self, ts: impl IntoIterator<Item = Transition>) {
        let mut b = self.lock();
        for t in ts {
            b.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.lock().pushed()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Arc<Transition>>, SacError> {
        self.lock().sample(n, rng)
    }
}
