use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SessionState;
use crate::error::Result;
use crate::generator::{AttentionStack, Generator, ToyImage};
use crate::linalg::seeded_rng;
use crate::prompt::{lcs_alignment, EditOp, Prompt, Vocab, SCALE_MAX, SCALE_MIN};

/// Deterministic stand-in for a human who knows what they want.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    pub target: Prompt,
    pub target_image: ToyImage,
    pub target_stack: AttentionStack,
}

impl SimulatedUser {
    pub fn new(target: Prompt, generator: &Generator) -> Result<Self> {
        let (target_image, target_stack) = generator.generate(&target)?;
        Ok(Self {
            target,
            target_image,
            target_stack,
        })
    }
}

/// Matched `(current index, target index)` pairs plus a closing sentinel.
fn matched_pairs(current: &Prompt, target: &Prompt) -> Vec<(usize, usize)> {
    let map = lcs_alignment(&current.ids(), &target.ids());
    let mut pairs: Vec<(usize, usize)> = map
        .0
        .iter()
        .enumerate()
        .filter_map(|(tj, ci)| ci.map(|ci| (ci, tj)))
        .collect();
    pairs.push((current.len(), target.len()));
    pairs
}

fn reweight_candidate(user: &SimulatedUser, state: &SessionState) -> Option<EditOp> {
    let pairs = matched_pairs(&state.prompt, &user.target);
    let shared = &pairs[..pairs.len() - 1];
    // A shared token whose weight differs from the target's comes first.
    for &(ci, tj) in shared {
        let (w, wt) = (state.prompt.weights()[ci], user.target.weights()[tj]);
        if w != wt {
            return Some(EditOp::Reweight { index: ci, scale: wt });
        }
    }
    let mass = state.stack.token_mass();
    let target_mass = user.target_stack.token_mass();
    let mut best: Option<(f64, usize, usize)> = None;
    for &(ci, tj) in shared {
        let gap = (target_mass[tj] - mass[ci]).abs();
        if best.is_none_or(|(g, _, _)| gap > g) {
            best = Some((gap, ci, tj));
        }
    }
    best.map(|(_, ci, tj)| {
        let w = state.prompt.weights()[ci];
        let scale = if mass[ci] > 0.0 {
            (w * target_mass[tj] / mass[ci]).clamp(SCALE_MIN, SCALE_MAX)
        } else {
            SCALE_MAX
        };
        EditOp::Reweight { index: ci, scale }
    })
}

/// One candidate per strategy, in the order word swap, phrase addition,
/// re-weight. Missing strategies are simply absent.
///
/// Walking the LCS gaps between the current and target prompts: the first
/// gap with tokens on both sides yields a single-token swap at its start;
/// the first gap where the target has more tokens yields an insertion of
/// the surplus. When the prompts agree only re-weighting remains.
pub fn propose_edits(user: &SimulatedUser, state: &SessionState) -> Vec<EditOp> {
    let current = &state.prompt;
    let target = &user.target;
    let mut swap = None;
    let mut add = None;
    let (mut pc, mut pt) = (0, 0);
    for (ci, tj) in matched_pairs(current, target) {
        let (gc, gt) = (ci - pc, tj - pt);
        if swap.is_none() && gc.min(gt) > 0 {
            swap = Some(EditOp::WordSwap {
                index: pc,
                tokens: vec![target.tokens()[pt].clone()],
            });
        }
        if add.is_none() && gt > gc {
            add = Some(EditOp::AddPhrase {
                position: pc + gc,
                tokens: target.tokens()[pt + gc..tj].to_vec(),
            });
        }
        pc = ci + 1;
        pt = tj + 1;
    }
    [swap, add, reweight_candidate(user, state)]
        .into_iter()
        .flatten()
        .collect()
}

/// Target-free suggestion: lift the token that receives the least attention
/// toward the average share.
pub fn heuristic_proposals(state: &SessionState) -> Vec<EditOp> {
    let mass = state.stack.token_mass();
    let n = mass.len();
    if n < 2 {
        return Vec::new();
    }
    let mut low = 0;
    for (j, m) in mass.iter().enumerate() {
        if *m < mass[low] {
            low = j;
        }
    }
    let mean = mass.iter().sum::<f64>() / n as f64;
    let w = state.prompt.weights()[low];
    let scale = if mass[low] > 0.0 {
        (w * mean / mass[low]).clamp(SCALE_MIN, SCALE_MAX)
    } else {
        SCALE_MAX
    };
    vec![EditOp::Reweight { index: low, scale }]
}

/// A simulated session: start from `initial`, the user wants `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub initial: Prompt,
    pub target: Prompt,
    pub seed: u64,
}

const SCENE_WORDS: &[&str] = &[
    "garden", "lake", "forest", "mountain", "river", "meadow", "castle", "village", "harbor",
    "desert", "canyon", "glacier", "island", "bridge", "tower", "cottage", "temple", "market",
    "street", "valley", "waterfall", "beach", "cliff", "orchard", "vineyard", "lighthouse",
    "windmill", "fox", "deer", "owl", "horse", "swan", "wolf", "heron", "butterfly", "cat",
    "tranquil", "serene", "vibrant", "misty", "golden", "frozen", "ancient", "quiet", "stormy",
    "sunlit", "moonlit", "foggy", "rustic", "lush", "blue", "green", "crimson", "silver",
    "amber", "violet", "pale", "dark", "bright", "autumn", "winter", "spring", "summer", "dawn",
    "dusk", "night", "flowers", "trees", "clouds", "stars", "snow", "rain", "lanterns",
    "sails", "reeds", "stones", "roses", "ivy", "smoke", "waves",
];

/// Draws start/target prompt pairs a few edits apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSampler {
    pub seed: u64,
    pub vocab: Vocab,
    pub words: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    pub max_swaps: usize,
    pub max_drops: usize,
}

impl Default for TaskSampler {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: Vocab::default(),
            words: SCENE_WORDS.iter().map(|w| w.to_string()).collect(),
            min_len: 5,
            max_len: 8,
            max_swaps: 5,
            max_drops: 3,
        }
    }
}

impl TaskSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Task `index` of this sampler's stream; independent of other indices.
    pub fn sample(&self, index: usize) -> Task {
        let mut rng = seeded_rng(self.seed, 0x7A5C_0000 + index as u64);
        let len = rng.random_range(self.min_len..=self.max_len).min(self.words.len());
        let mut pool: Vec<&String> = self.words.iter().collect();
        pool.shuffle(&mut rng);
        let target: Vec<&String> = pool[..len].to_vec();
        let others = &pool[len..];

        let mut current = target.clone();
        let swaps = rng.random_range(1..=self.max_swaps.max(1)).min(len);
        let mut positions: Vec<usize> = (0..len).collect();
        positions.shuffle(&mut rng);
        for &i in &positions[..swaps] {
            if let Some(w) = others.choose(&mut rng) {
                current[i] = w;
            }
        }
        let drops = rng.random_range(1..=self.max_drops.max(1));
        for _ in 0..drops {
            if current.len() <= 2 {
                break;
            }
            let at = rng.random_range(0..current.len());
            current.remove(at);
        }
        let prompt = |ws: &[&String]| {
            Prompt::from_tokens(self.vocab.tokens(ws)).expect("sampled prompts are non-empty")
        };
        Task {
            id: format!("task-{}-{index:05}", self.seed),
            initial: prompt(&current),
            target: prompt(&target),
            seed: self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9),
        }
    }

    pub fn tasks(&self, count: usize) -> Vec<Task> {
        (0..count).map(|i| self.sample(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::tokenize;
    use crate::session::{start_session, Engine};

    fn state_for(current: &str, target: &str) -> (SimulatedUser, SessionState) {
        let e = Engine::default();
        let t = tokenize(target, &e.vocab).unwrap();
        let user = SimulatedUser::new(t.clone(), &e.generator).unwrap();
        let s = start_session("x".into(), tokenize(current, &e.vocab).unwrap(), Some(t), 0, &e).unwrap();
        (user, s)
    }

    #[test]
    fn addition_example() {
        let (u, s) = state_for("a tranquil garden", "a tranquil garden with blooming flowers");
        let props = propose_edits(&u, &s);
        assert_eq!(props[0].kind(), "add_phrase");
        match &props[0] {
            EditOp::AddPhrase { position, tokens } => {
                assert_eq!(*position, 3);
                let words: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
                assert_eq!(words, ["with", "blooming", "flowers"]);
            }
            _ => unreachable!(),
        }
        assert!(props.iter().all(|p| p.kind() != "word_swap"));
    }

    #[test]
    fn swap_example() {
        let (u, s) = state_for("a serene blue lake", "a vibrant green forest");
        let props = propose_edits(&u, &s);
        match &props[0] {
            EditOp::WordSwap { index, tokens } => {
                assert_eq!(*index, 1);
                assert_eq!(tokens[0].surface, "vibrant");
            }
            other => panic!("expected a swap, got {other:?}"),
        }
    }

    #[test]
    fn equal_prompts_only_reweight() {
        let (u, s) = state_for("a tranquil garden", "a tranquil garden");
        let props = propose_edits(&u, &s);
        assert!(!props.is_empty());
        assert!(props.iter().all(|p| p.kind() == "reweight"));
    }

    #[test]
    fn sampler_is_deterministic_and_nontrivial() {
        let s = TaskSampler::new(9);
        for i in 0..50 {
            let t = s.sample(i);
            assert_eq!(t, s.sample(i));
            assert_ne!(t.initial.ids(), t.target.ids());
            assert!((5..=8).contains(&t.target.len()));
        }
        assert_ne!(s.sample(0), s.sample(1));
    }
}
