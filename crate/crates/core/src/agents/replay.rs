//! Fixed-capacity ring buffer of transitions with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::state::StateVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 14)),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(r: f64) -> Experience {
        Experience {
            state: StateVector::zeros(),
            action: 0,
            reward: r,
            next_state: StateVector::zeros(),
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for r in 0..5 {
            b.push(exp(r as f64));
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = (0..3).map(|i| b.get(i).reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }
}
