//! Prompts as editable token sequences.
//!
//! A [`Vocab`] derives token ids and embeddings from a seeded hash of the
//! surface string, so any word is resolvable and equal surfaces always map
//! to equal tokens. Prompts are values: every edit returns a new prompt.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fnv1a, mix64, normalize, seeded_rng};

/// Re-weighting scales are restricted to this closed interval.
pub const SCALE_MIN: f64 = -2.0;
pub const SCALE_MAX: f64 = 2.0;

/// Embedding dimension used throughout unless configured otherwise.
pub const DEFAULT_DIM: usize = 16;

/// Seeded, stateless vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vocab {
    pub seed: u64,
    pub dim: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            dim: DEFAULT_DIM,
        }
    }
}

impl Vocab {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn id_of(&self, surface: &str) -> u64 {
        mix64(fnv1a(surface.as_bytes()) ^ mix64(self.seed))
    }

    pub fn token(&self, surface: &str) -> Token {
        let id = self.id_of(surface);
        let mut rng = seeded_rng(id, self.dim as u64);
        let mut embedding: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // A 16-dim Gaussian draw is never the zero vector in practice; a
        // basis vector keeps the unit-norm contract if it ever were.
        if !normalize(&mut embedding) {
            embedding = vec![0.0; self.dim];
            embedding[0] = 1.0;
        }
        Token {
            id,
            surface: surface.to_owned(),
            embedding: embedding.into(),
        }
    }

    pub fn tokens<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<Token> {
        surfaces.iter().map(|s| self.token(s.as_ref())).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub id: u64,
    pub surface: String,
    pub embedding: Arc<[f64]>,
}

impl PartialEq for Token {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.surface == other.surface
    }
}

impl Eq for Token {}

/// Ordered tokens with per-token weights in `[-2, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    tokens: Vec<Token>,
    weights: Vec<f64>,
}

/// Wire form of one prompt entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub surface: String,
    pub weight: f64,
}

impl Prompt {
    pub fn new(tokens: Vec<Token>, weights: Vec<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidPrompt("a prompt needs at least one token".into()));
        }
        if tokens.len() != weights.len() {
            return Err(Error::InvalidPrompt(format!(
                "{} tokens but {} weights",
                tokens.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights
            .iter()
            .find(|w| !w.is_finite() || !(SCALE_MIN..=SCALE_MAX).contains(*w))
        {
            return Err(Error::InvalidPrompt(format!("weight {w} outside [-2, 2]")));
        }
        Ok(Self { tokens, weights })
    }

    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let n = tokens.len();
        Self::new(tokens, vec![1.0; n])
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].embedding.len()
    }

    /// Space-joined surfaces (weights are not rendered).
    pub fn text(&self) -> String {
        self.surfaces().join(" ")
    }

    pub fn same_tokens(&self, other: &Prompt) -> bool {
        self.ids() == other.ids()
    }

    pub fn to_entries(&self) -> Vec<PromptEntry> {
        self.tokens
            .iter()
            .zip(&self.weights)
            .map(|(t, &weight)| PromptEntry {
                surface: t.surface.clone(),
                weight,
            })
            .collect()
    }

    pub fn from_entries(entries: &[PromptEntry], vocab: &Vocab) -> Result<Self> {
        let tokens = entries.iter().map(|e| vocab.token(&e.surface)).collect();
        Self::new(tokens, entries.iter().map(|e| e.weight).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_entries()).expect("prompt entries always serialize")
    }

    pub fn from_json(json: &str, vocab: &Vocab) -> Result<Self> {
        let entries: Vec<PromptEntry> =
            serde_json::from_str(json).map_err(|e| Error::InvalidPrompt(e.to_string()))?;
        Self::from_entries(&entries, vocab)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (t, w)) in self.tokens.iter().zip(&self.weights).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            if *w == 1.0 {
                f.write_str(&t.surface)?;
            } else {
                write!(f, "({}:{w:.2})", t.surface)?;
            }
        }
        Ok(())
    }
}

/// One token per whitespace-separated word, all weights 1.0.
pub fn tokenize(text: &str, vocab: &Vocab) -> Result<Prompt> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::InvalidPrompt("prompt text is empty".into()));
    }
    Prompt::from_tokens(vocab.tokens(&words))
}

/// The three prompt edits.
#[derive(Debug, Clone, PartialEq)]
pub enum EditOp {
    /// Replace `tokens.len()` tokens starting at `index`.
    WordSwap { index: usize, tokens: Vec<Token> },
    /// Insert `tokens` before `position` (`position == len` appends).
    AddPhrase { position: usize, tokens: Vec<Token> },
    /// Set `weights[index] = scale`.
    Reweight { index: usize, scale: f64 },
}

/// JSON form of an [`EditOp`], as stored in session logs and sent by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EditSpec {
    WordSwap { index: usize, tokens: Vec<String> },
    AddPhrase { position: usize, tokens: Vec<String> },
    Reweight { index: usize, scale: f64 },
}

impl EditSpec {
    pub fn resolve(&self, vocab: &Vocab) -> EditOp {
        match self {
            EditSpec::WordSwap { index, tokens } => EditOp::WordSwap {
                index: *index,
                tokens: vocab.tokens(tokens),
            },
            EditSpec::AddPhrase { position, tokens } => EditOp::AddPhrase {
                position: *position,
                tokens: vocab.tokens(tokens),
            },
            EditSpec::Reweight { index, scale } => EditOp::Reweight {
                index: *index,
                scale: *scale,
            },
        }
    }
}

impl EditOp {
    pub fn to_spec(&self) -> EditSpec {
        let surfaces = |ts: &[Token]| ts.iter().map(|t| t.surface.clone()).collect();
        match self {
            EditOp::WordSwap { index, tokens } => EditSpec::WordSwap {
                index: *index,
                tokens: surfaces(tokens),
            },
            EditOp::AddPhrase { position, tokens } => EditSpec::AddPhrase {
                position: *position,
                tokens: surfaces(tokens),
            },
            EditOp::Reweight { index, scale } => EditSpec::Reweight {
                index: *index,
                scale: *scale,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EditOp::WordSwap { .. } => "word_swap",
            EditOp::AddPhrase { .. } => "add_phrase",
            EditOp::Reweight { .. } => "reweight",
        }
    }

    /// Checks bounds against `p` without applying.
    pub fn validate(&self, p: &Prompt) -> Result<()> {
        match self {
            EditOp::WordSwap { index, tokens } => {
                if tokens.is_empty() {
                    return Err(Error::InvalidEdit("word swap needs a replacement".into()));
                }
                if index + tokens.len() > p.len() {
                    return Err(Error::InvalidEdit(format!(
                        "word swap of {} tokens at {index} exceeds prompt length {}",
                        tokens.len(),
                        p.len()
                    )));
                }
            }
            EditOp::AddPhrase { position, tokens } => {
                if tokens.is_empty() {
                    return Err(Error::InvalidEdit("added phrase is empty".into()));
                }
                if *position > p.len() {
                    return Err(Error::InvalidEdit(format!(
                        "insert position {position} beyond prompt length {}",
                        p.len()
                    )));
                }
            }
            EditOp::Reweight { index, scale } => {
                if *index >= p.len() {
                    return Err(Error::InvalidEdit(format!(
                        "re-weight index {index} beyond prompt length {}",
                        p.len()
                    )));
                }
                if !scale.is_finite() || !(SCALE_MIN..=SCALE_MAX).contains(scale) {
                    return Err(Error::InvalidEdit(format!("scale {scale} outside [-2, 2]")));
                }
            }
        }
        Ok(())
    }
}

pub fn apply_edit(p: &Prompt, e: &EditOp) -> Result<Prompt> {
    e.validate(p)?;
    let mut tokens = p.tokens.clone();
    let mut weights = p.weights.clone();
    match e {
        EditOp::WordSwap { index, tokens: repl } => {
            for (k, t) in repl.iter().enumerate() {
                tokens[index + k] = t.clone();
            }
        }
        EditOp::AddPhrase {
            position,
            tokens: ins,
        } => {
            tokens.splice(*position..*position, ins.iter().cloned());
            weights.splice(*position..*position, std::iter::repeat_n(1.0, ins.len()));
        }
        EditOp::Reweight { index, scale } => weights[*index] = *scale,
    }
    Prompt::new(tokens, weights)
}

/// For each new-prompt index, the old-prompt index it came from (or `None`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap(pub Vec<Option<usize>>);

impl AlignmentMap {
    pub fn identity(n: usize) -> Self {
        Self((0..n).map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<usize> {
        self.0[j]
    }

    /// Injective and order-preserving over mapped entries, and in range.
    pub fn is_valid_for(&self, old_len: usize) -> bool {
        let mapped: Vec<usize> = self.0.iter().flatten().copied().collect();
        mapped.iter().all(|&i| i < old_len) && mapped.windows(2).all(|w| w[0] < w[1])
    }
}

/// Longest common subsequence over token ids, matched left to right.
pub fn compute_alignment(old: &Prompt, new: &Prompt) -> AlignmentMap {
    lcs_alignment(&old.ids(), &new.ids())
}

pub(crate) fn lcs_alignment<T: PartialEq>(old: &[T], new: &[T]) -> AlignmentMap {
    let (n, m) = (old.len(), new.len());
    // suffix[i][j] = LCS length of old[i..] and new[j..]
    let mut suffix = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i][j] = if old[i] == new[j] {
                suffix[i + 1][j + 1] + 1
            } else {
                suffix[i + 1][j].max(suffix[i][j + 1])
            };
        }
    }
    let mut map = vec![None; m];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if old[i] == new[j] {
            map[j] = Some(i);
            i += 1;
            j += 1;
        } else if suffix[i + 1][j] >= suffix[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    AlignmentMap(map)
}

/// Normalized weighted mean of token embeddings; negative weights pool as 0.
pub fn prompt_embedding(p: &Prompt) -> Result<Vec<f64>> {
    let mut pooled = vec![0.0; p.dim()];
    for (t, w) in p.tokens.iter().zip(&p.weights) {
        let w = w.max(0.0);
        for (acc, e) in pooled.iter_mut().zip(t.embedding.iter()) {
            *acc += w * e;
        }
    }
    if !normalize(&mut pooled) {
        return Err(Error::DegenerateEmbedding("prompt weights pool to zero"));
    }
    Ok(pooled)
}
