use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::{Transition, STATE_DIM};
use crate::error::{HedgeError, Result};

/// A transition with the network inputs already computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stored {
    pub state: [f64; STATE_DIM],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; STATE_DIM],
    pub done: bool,
}

impl Stored {
    /// `reward` replaces the transition's own reward (already shaped).
    pub fn from_transition(t: &Transition, reward: f64) -> Self {
        Stored {
            state: t.state.features(),
            action: t.action,
            reward,
            next_state: t.next_state.features(),
            done: t.done,
        }
    }
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array1<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_stored(items: &[Stored]) -> Self {
        let n = items.len();
        Batch {
            states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| items[i].state[j]),
            actions: items.iter().map(|s| s.action).collect(),
            rewards: items.iter().map(|s| s.reward).collect(),
            next_states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| items[i].next_state[j]),
            dones: items.iter().map(|s| s.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dones.is_empty()
    }
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Stored>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(HedgeError::Argument("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
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

    /// Append, overwriting the oldest entry once full.
    pub fn push(&mut self, item: Stored) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `size` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if size == 0 || size > self.items.len() {
            return Err(HedgeError::Argument(format!(
                "cannot draw {size} distinct transitions from {}",
                self.items.len()
            )));
        }
        let picked: Vec<Stored> = rand::seq::index::sample(rng, self.items.len(), size)
            .into_iter()
            .map(|i| self.items[i])
            .collect();
        Ok(Batch::from_stored(&picked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn item(r: f64) -> Stored {
        Stored {
            state: [r; STATE_DIM],
            action: 0.5,
            reward: r,
            next_state: [0.0; STATE_DIM],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            buf.push(item(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f64> = buf.items.iter().map(|s| s.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sample_errors_when_too_small() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        buf.push(item(1.0));
        assert!(buf.sample(2, &mut seed::rng(0)).is_err());
        assert!(buf.sample(0, &mut seed::rng(0)).is_err());
    }

    proptest! {
        #[test]
        fn samples_are_distinct_reproducible_and_bounded(cap in 1usize..200, pushes in 1usize..400, seed in any::<u64>()) {
            let mut buf = ReplayBuffer::new(cap).unwrap();
            for i in 0..pushes {
                buf.push(item(i as f64));
            }
            prop_assert!(buf.len() <= cap);
            let size = buf.len().min(17);
            let a = buf.sample(size, &mut seed::rng(seed)).unwrap();
            let b = buf.sample(size, &mut seed::rng(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            let mut r = a.rewards.to_vec();
            r.sort_by(f64::total_cmp);
            r.dedup();
            prop_assert_eq!(r.len(), size);
        }
    }
}
