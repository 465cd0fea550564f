use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Bounded pool of past generated images fed to the discriminator.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            storage: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Stores `fresh` while filling up; afterwards returns it or, with
    /// probability one half, swaps it for a uniformly drawn stored image.
    pub fn query(&mut self, fresh: &Tensor) -> Tensor {
        let fresh = fresh.detach();
        if self.capacity == 0 {
            return fresh;
        }
        if self.storage.len() < self.capacity {
            self.storage.push(fresh.clone());
            return fresh;
        }
        if self.rng.random_bool(0.5) {
            return fresh;
        }
        let i = self.rng.random_range(0..self.storage.len());
        std::mem::replace(&mut self.storage[i], fresh)
    }

    /// Applies [`ReplayBuffer::query`] to every image of a batch.
    pub fn query_batch(&mut self, fresh: &Tensor) -> Result<Tensor> {
        let n = fresh.dim(0)?;
        let picked = (0..n)
            .map(|i| Ok(self.query(&fresh.narrow(0, i, 1)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&picked, 0)?)
    }
}
