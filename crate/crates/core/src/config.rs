//! TOML configuration file.
//!
//! Every section and key is optional; missing values take their defaults.
//!
//! ```toml
//! [generator]   # height, width, channels, steps, dim, seed, temperature,
//!               # latent_factor, signature_amplitude
//! [vocab]       # seed, dim (must equal generator.dim)
//! [session]     # n_max, tau_stop, tau_inj, refine
//! [session.ascent]  # eta_map, eta_align, eta_c, steps, coords, seed
//! [train]       # gamma, eps_clip, lr, value_lr, batch, ppo_epochs, value_coef,
//!               # kl_coef, lambda, epsilon_priority, beta0, episodes,
//!               # update_every, capacity, init_std, normalize_advantages, seed
//! [sampler]     # seed, min_len, max_len, max_swaps, max_drops, words
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::prompt::Vocab;
use crate::rl::TrainConfig;
use crate::session::{Engine, SessionConfig, TaskSampler};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generator: GeneratorConfig,
    pub vocab: Vocab,
    pub session: SessionConfig,
    pub train: TrainConfig,
    #[serde(skip_serializing)]
    sampler: SamplerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SamplerSection {
    seed: u64,
    min_len: usize,
    max_len: usize,
    max_swaps: usize,
    max_drops: usize,
    words: Vec<String>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = TaskSampler::default();
        Self {
            seed: s.seed,
            min_len: s.min_len,
            max_len: s.max_len,
            max_swaps: s.max_swaps,
            max_drops: s.max_drops,
            words: s.words,
        }
    }
}

impl Config {
    /// Parses TOML text; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::Parse {
                path: origin.to_owned(),
                line,
                column,
                message: e.message().to_owned(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.session.validate(&self.generator)?;
        self.train.validate()?;
        if self.vocab.dim != self.generator.dim {
            return Err(Error::Config(format!(
                "vocab.dim {} differs from generator.dim {}",
                self.vocab.dim, self.generator.dim
            )));
        }
        let s = &self.sampler;
        if s.min_len == 0 || s.min_len > s.max_len || s.words.len() < s.max_len + 1 {
            return Err(Error::Config(
                "sampler needs 0 < min_len <= max_len < number of words".into(),
            ));
        }
        Ok(())
    }

    pub fn engine(&self) -> Result<Engine> {
        Engine::new(self.generator.clone(), self.vocab, self.session.clone())
    }

    pub fn sampler(&self) -> TaskSampler {
        let s = &self.sampler;
        TaskSampler {
            seed: s.seed,
            vocab: self.vocab,
            words: s.words.clone(),
            min_len: s.min_len,
            max_len: s.max_len,
            max_swaps: s.max_swaps,
            max_drops: s.max_drops,
        }
    }

    pub fn with_sampler_seed(mut self, seed: u64) -> Self {
        self.sampler.seed = seed;
        self
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let cfg = Config::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.sampler(), TaskSampler::default());
    }

    #[test]
    fn partial_sections_override() {
        let cfg = Config::from_toml(
            "[train]\nepisodes = 40\nlr = 0.01\n[session]\ntau_stop = 0.9\n[sampler]\nseed = 3\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.train.episodes, 40);
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
        assert_eq!(cfg.session.tau_stop, 0.9);
        assert_eq!(cfg.sampler().seed, 3);
    }

    #[test]
    fn errors_carry_position_and_key() {
        match Config::from_toml("[train]\n\nepisodez = 3\n", Path::new("bad.toml")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("episodez"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Config::from_toml("[vocab]\ndim = 8\n", Path::new("x.toml")),
            Err(Error::Config(_))
        ));
        assert!(Config::from_toml("[train]\ngamma = 1.5\n", Path::new("x.toml")).is_err());
    }
}
