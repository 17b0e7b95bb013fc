use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::env::{Action, StateImage};

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateImage,
    pub action: Action,
    pub reward: f64,
    /// Ignored for bootstrapping when `terminal` is set.
    pub next_state: StateImage,
    pub terminal: bool,
}

/// Bounded FIFO of transitions; the oldest entry is evicted when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, storage: VecDeque::with_capacity(capacity.min(1 << 16)) }
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

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(transition);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `n` distinct indices drawn uniformly; `None` when fewer than `n` are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        (n <= self.len()).then(|| index::sample(rng, self.len(), n).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        self.sample_indices(n, rng).map(|idx| idx.into_iter().map(|i| &self.storage[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(reward: f64) -> Transition {
        Transition {
            state: StateImage::empty(2),
            action: Action::Drop,
            reward,
            next_state: StateImage::empty(2),
            terminal: false,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(tagged(f64::from(i)));
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(tagged(f64::from(i)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = b.sample_indices(10, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(b.sample(11, &mut rng).is_none());
    }
}
