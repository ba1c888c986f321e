use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{StateFeatures, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: StateFeatures,
    pub a: Strategy,
    pub r: f64,
    pub s_next: StateFeatures,
    /// Terminal transitions bootstrap with `V(s') = 0`.
    pub done: bool,
    pub delta: f64,
    pub inserted_at: u64,
    pub old_logprob: f64,
}

/// `exp(-lambda * age) * |delta| + epsilon`.
pub fn priority(delta: f64, age_steps: f64, lambda: f64, epsilon: f64) -> f64 {
    (-lambda * age_steps).exp() * delta.abs() + epsilon
}

/// Bounded pool; the oldest entry is evicted when full. Each insertion
/// advances the global step, so ages count transitions seen since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPool {
    entries: VecDeque<Transition>,
    capacity: usize,
    pub lambda: f64,
    pub epsilon: f64,
    global_step: u64,
}

impl ReplayPool {
    pub fn new(capacity: usize, lambda: f64, epsilon: f64) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            lambda,
            epsilon,
            global_step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn push(&mut self, mut t: Transition) {
        t.inserted_at = self.global_step;
        self.global_step += 1;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn set_delta(&mut self, i: usize, delta: f64) {
        if let Some(t) = self.entries.get_mut(i) {
            t.delta = delta;
        }
    }

    pub fn priority_of(&self, i: usize) -> f64 {
        let t = &self.entries[i];
        let age = self.global_step.saturating_sub(t.inserted_at) as f64;
        priority(t.delta, age, self.lambda, self.epsilon)
    }

    pub fn priorities(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.priority_of(i)).collect()
    }
}

/// Draws `k` indices with replacement, proportional to `weights`.
pub fn sample_proportional(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for w in weights {
        total += w;
        cumulative.push(total);
    }
    (0..k)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cumulative
                .partition_point(|&c| c <= u)
                .min(weights.len() - 1)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// `(n p_i)^-beta`, divided by the batch maximum.
    pub weights: Vec<f64>,
}

pub fn sample_batch(pool: &ReplayPool, k: usize, beta: f64, rng: &mut impl Rng) -> Result<Batch> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let priorities = pool.priorities();
    let total: f64 = priorities.iter().sum();
    let n = pool.len() as f64;
    let indices = sample_proportional(&priorities, k.max(1), rng);
    let raw: Vec<f64> = indices
        .iter()
        .map(|&i| (n * priorities[i] / total).powf(-beta))
        .collect();
    let max = raw.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    Ok(Batch {
        transitions: indices.iter().map(|&i| pool.entries[i].clone()).collect(),
        weights: raw.iter().map(|w| w / max).collect(),
        indices,
    })
}
