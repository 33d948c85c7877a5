//! Epoch-wise traversal of the active prompt pool.
//!
//! At each epoch boundary the active pool is shuffled with a stream keyed by
//! the experiment seed and then sliced sequentially. A tail shorter than the
//! requested batch is dropped and a new epoch begins. Prompts evicted
//! mid-epoch are skipped.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Population, PromptId, TRAVERSAL_STREAM};

/// The active pool holds fewer prompts than one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolExhausted {
    pub active: usize,
    pub requested: usize,
}

#[derive(Debug, Clone)]
pub struct EpochTraversal {
    rng: ChaCha8Rng,
    order: Vec<PromptId>,
    cursor: usize,
    epoch: u64,
    started: bool,
}

impl EpochTraversal {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRAVERSAL_STREAM);
        Self {
            rng,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            started: false,
        }
    }

    /// Epochs begun so far (the first batch starts epoch 1).
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn start_epoch(&mut self, pop: &Population) {
        self.order = pop.active_ids().collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
        self.epoch += 1;
        self.started = true;
    }

    /// Next `size` active prompts in traversal order.
    pub fn next_batch(
        &mut self,
        pop: &Population,
        size: usize,
    ) -> Result<Vec<PromptId>, PoolExhausted> {
        let active = pop.active_count();
        if active < size || size == 0 {
            return Err(PoolExhausted {
                active,
                requested: size,
            });
        }
        if !self.started {
            self.start_epoch(pop);
        }
        loop {
            let mut batch = Vec::with_capacity(size);
            let mut pos = self.cursor;
            while batch.len() < size && pos < self.order.len() {
                let id = self.order[pos];
                pos += 1;
                if pop.prompts()[id.index()].is_active() {
                    batch.push(id);
                }
            }
            if batch.len() == size {
                self.cursor = pos;
                return Ok(batch);
            }
            self.start_epoch(pop);
        }
    }
}
