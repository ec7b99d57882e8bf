//! Reservoir replay memory.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::rng::{stream, Rng as StreamRng, Stream};

/// Fixed-capacity memory holding a uniform random sample of every item
/// offered so far.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<I> {
    capacity: usize,
    items: Vec<I>,
    seen: u64,
    rng: StreamRng,
}

impl<I: Clone> ReplayBuffer<I> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
            rng: stream(seed, Stream::Buffer),
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

    /// Total items offered.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[I] {
        &self.items
    }

    /// Reservoir update: stores the item while there is room, afterwards
    /// replaces a uniformly chosen slot with probability capacity/(seen+1).
    pub fn insert(&mut self, item: I) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if self.capacity > 0 {
            let j = self.rng.random_range(0..=self.seen);
            if j < self.capacity as u64 {
                self.items[j as usize] = item;
            }
        }
        self.seen += 1;
    }

    /// Draws `k` items: without replacement when the memory holds at least
    /// `k`, with replacement otherwise. `None` when the memory is empty.
    pub fn sample(&mut self, k: usize) -> Option<Vec<I>> {
        let n = self.items.len();
        if n == 0 || k == 0 {
            return None;
        }
        let picks: Vec<usize> = if n >= k {
            index::sample(&mut self.rng, n, k).into_vec()
        } else {
            (0..k).map(|_| self.rng.random_range(0..n)).collect()
        };
        Some(picks.into_iter().map(|i| self.items[i].clone()).collect())
    }
}
