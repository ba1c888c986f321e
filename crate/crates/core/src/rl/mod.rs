//! PPO over the three editing strategies, with forgetting-curve replay.

mod checkpoint;
mod ppo;
mod replay;

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_VERSION};
pub use ppo::{
    advantage, anneal_beta, policy_action, policy_gradient, policy_objective, ppo_objective,
    td_error, update_policy, update_value, value_gradient, value_loss, LinearPolicy, LinearValue,
    PolicySample,
};
pub use replay::{priority, sample_batch, sample_proportional, Batch, ReplayPool, Transition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The editing strategy chosen by the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    WordSwap,
    AddPhrase,
    Reweight,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::WordSwap, Strategy::AddPhrase, Strategy::Reweight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::WordSwap => "word_swap",
            Strategy::AddPhrase => "add_phrase",
            Strategy::Reweight => "reweight",
        }
    }
}

/// `[prompt embedding; image embedding; last reward; round / N_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures(pub Vec<f64>);

impl StateFeatures {
    pub fn new(
        prompt_embedding: &[f64],
        image_embedding: &[f64],
        last_reward: f64,
        round_fraction: f64,
    ) -> Result<Self> {
        if prompt_embedding.len() != image_embedding.len() {
            return Err(Error::DimError("embedding dimensions differ".into()));
        }
        if !(0.0..=1.0).contains(&round_fraction) {
            return Err(Error::OutOfRange {
                name: "round_fraction",
                value: round_fraction,
                min: 0.0,
                max: 1.0,
            });
        }
        let mut v = Vec::with_capacity(2 * prompt_embedding.len() + 2);
        v.extend_from_slice(prompt_embedding);
        v.extend_from_slice(image_embedding);
        v.push(last_reward);
        v.push(round_fraction);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericsError("non-finite state feature".into()));
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hyperparameters for PPO and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub eps_clip: f64,
    /// Policy learning rate.
    pub lr: f64,
    /// Value-head learning rate.
    pub value_lr: f64,
    pub batch: usize,
    pub ppo_epochs: usize,
    pub value_coef: f64,
    pub kl_coef: f64,
    /// Forgetting rate in the replay priority.
    pub lambda: f64,
    pub epsilon_priority: f64,
    pub beta0: f64,
    pub episodes: usize,
    /// Episodes collected between updates.
    pub update_every: usize,
    pub capacity: usize,
    /// Standard deviation of the initial head weights.
    pub init_std: f64,
    /// Standardize advantages within each batch.
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            eps_clip: 0.2,
            lr: 5e-5,
            value_lr: 5e-5,
            batch: 256,
            ppo_epochs: 4,
            value_coef: 2.2,
            kl_coef: 0.3,
            lambda: 0.01,
            epsilon_priority: 0.01,
            beta0: 0.4,
            episodes: 12_000,
            update_every: 8,
            capacity: 4096,
            init_std: 0.01,
            normalize_advantages: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings that learn within a few hundred episodes on the toy task.
    pub fn desk_scale() -> Self {
        Self {
            lr: 0.05,
            value_lr: 0.02,
            batch: 64,
            kl_coef: 0.0,
            episodes: 400,
            update_every: 4,
            capacity: 1024,
            normalize_advantages: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.eps_clip > 0.0) {
            return bad("eps_clip must be positive".into());
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return bad(format!("beta0 {} outside (0, 1]", self.beta0));
        }
        if !(self.epsilon_priority > 0.0) || self.lambda < 0.0 {
            return bad("epsilon_priority must be positive and lambda non-negative".into());
        }
        if self.batch == 0 || self.capacity == 0 || self.update_every == 0 {
            return bad("batch, capacity and update_every must be positive".into());
        }
        if !(self.lr >= 0.0 && self.value_lr >= 0.0 && self.init_std >= 0.0) {
            return bad("learning rates and init_std must be non-negative".into());
        }
        Ok(())
    }
}
