//! Multi-round co-adaptation sessions.
//!
//! A session starts from a prompt, and each round applies one edit,
//! regenerates (optionally injecting the previous round's attention), and
//! scores the result. It ends when the score reaches `tau_stop`, when
//! `n_max` rounds are used up, or when the user accepts.

mod log;
mod run;
mod user;

pub use log::{
    load_log, load_logs, mi_pairs, mi_report, save_log, save_session, Ratings, RoundLog, SessionLog,
    SessionRecord,
};
pub use run::{
    initial_heads, run_session, train_policy, Chooser, Episode, EpisodeStats, TrainingReport, UpdateStats,
};
pub use user::{heuristic_proposals, propose_edits, SimulatedUser, Task, TaskSampler};

use serde::{Deserialize, Serialize};

use crate::edit::{
    ascend_alignment, ascend_map, ascend_scale, AscentConfig, ControllerMode, EditController,
    SoftAlignment,
};
use crate::error::{Error, Result};
use crate::generator::{image_embedding, AttentionStack, Generator, GeneratorConfig, ToyImage};
use crate::linalg::{fnv1a, mix64, Matrix};
use crate::prompt::{apply_edit, compute_alignment, prompt_embedding, tokenize, EditOp, Prompt, Vocab};
use crate::reward::clip_score;
use crate::rl::StateFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Maximum number of edit rounds.
    pub n_max: usize,
    /// Score at which the current image is returned to the user.
    pub tau_stop: f64,
    /// Generation steps that receive injected attention.
    pub tau_inj: usize,
    /// Run the reward-driven ascent on edit parameters each round.
    pub refine: bool,
    pub ascent: AscentConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_max: 10,
            tau_stop: 0.92,
            tau_inj: 5,
            refine: true,
            ascent: AscentConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, gen: &GeneratorConfig) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if self.tau_inj > gen.steps {
            return Err(Error::Config(format!(
                "tau_inj {} exceeds {} generation steps",
                self.tau_inj, gen.steps
            )));
        }
        if !self.tau_stop.is_finite() {
            return Err(Error::Config("tau_stop must be finite".into()));
        }
        self.ascent.validate()
    }
}

/// Generator, vocabulary and session settings bundled for convenience.
#[derive(Debug, Clone)]
pub struct Engine {
    pub generator: Generator,
    pub vocab: Vocab,
    pub session: SessionConfig,
}

impl Engine {
    pub fn new(gen: GeneratorConfig, vocab: Vocab, session: SessionConfig) -> Result<Self> {
        if vocab.dim != gen.dim {
            return Err(Error::Config(format!(
                "vocabulary dim {} differs from generator dim {}",
                vocab.dim, gen.dim
            )));
        }
        session.validate(&gen)?;
        Ok(Self {
            generator: Generator::new(gen)?,
            vocab,
            session,
        })
    }

    pub fn with_session(&self, session: SessionConfig) -> Result<Self> {
        session.validate(self.generator.config())?;
        Ok(Self {
            session,
            ..self.clone()
        })
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(GeneratorConfig::default(), Vocab::default(), SessionConfig::default())
            .expect("default configuration is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    AcceptedByThreshold,
    ExhaustedRounds,
    AcceptedByUser,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::AcceptedByThreshold => "accepted_by_threshold",
            Status::ExhaustedRounds => "exhausted_rounds",
            Status::AcceptedByUser => "accepted_by_user",
        }
    }
}

/// What happened in one round, kept for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub edit: Option<EditOp>,
    pub controller: Option<EditController>,
    pub clip_score: f64,
    pub image: ToyImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub id: String,
    pub round: usize,
    pub initial: Prompt,
    pub prompt: Prompt,
    pub image: ToyImage,
    pub stack: AttentionStack,
    pub rewards: Vec<f64>,
    pub status: Status,
    pub seed: u64,
    /// Prompt the reward is measured against; the current prompt if unset.
    pub intent: Option<Prompt>,
    pub history: Vec<RoundRecord>,
}

impl SessionState {
    pub fn last_reward(&self) -> f64 {
        *self.rewards.last().expect("a session always has its round-0 reward")
    }

    pub fn intent(&self) -> &Prompt {
        self.intent.as_ref().unwrap_or(&self.prompt)
    }

    pub fn features(&self, n_max: usize) -> Result<StateFeatures> {
        let pe = prompt_embedding(&self.prompt)?;
        let ie = image_embedding(&self.image, pe.len())?;
        let frac = (self.round as f64 / n_max.max(1) as f64).min(1.0);
        StateFeatures::new(&pe, &ie, self.last_reward(), frac)
    }

    /// Marks the session accepted by the user.
    pub fn accept(&mut self) -> Result<()> {
        if self.status.is_terminal() {
            return Err(Error::SessionClosed(self.id.clone()));
        }
        self.status = Status::AcceptedByUser;
        Ok(())
    }
}

fn default_id(text: &str, seed: u64) -> String {
    format!("s{:016x}", mix64(seed ^ fnv1a(text.as_bytes())))
}

/// Creates a session and scores its round-0 generation.
pub fn new_session(text: &str, seed: u64, engine: &Engine) -> Result<SessionState> {
    let prompt = tokenize(text, &engine.vocab)?;
    start_session(default_id(text, seed), prompt, None, seed, engine)
}

/// Like [`new_session`] with an explicit id, prompt and reward intent.
pub fn start_session(
    id: String,
    prompt: Prompt,
    intent: Option<Prompt>,
    seed: u64,
    engine: &Engine,
) -> Result<SessionState> {
    let (image, stack) = engine.generator.generate(&prompt)?;
    let score = clip_score(&image, intent.as_ref().unwrap_or(&prompt))?;
    Ok(SessionState {
        id,
        round: 0,
        history: vec![RoundRecord {
            round: 0,
            edit: None,
            controller: None,
            clip_score: score,
            image: image.clone(),
        }],
        initial: prompt.clone(),
        prompt,
        image,
        stack,
        rewards: vec![score],
        status: Status::Active,
        seed,
        intent,
    })
}

/// Applies one edit and regenerates. Returns the next state; `state` is
/// left untouched.
pub fn step_round(state: &SessionState, edit: &EditOp, use_injection: bool, engine: &Engine) -> Result<SessionState> {
    if state.status.is_terminal() {
        return Err(Error::SessionClosed(state.id.clone()));
    }
    let cfg = &engine.session;
    let mut ascent = cfg.ascent.clone();
    ascent.seed = mix64(ascent.seed ^ state.seed ^ mix64(state.round as u64));
    let outcome = execute_edit(state, edit, use_injection, &ascent, engine)?;

    let intent = state.intent.as_ref().unwrap_or(&outcome.prompt);
    let score = clip_score(&outcome.image, intent)?;
    let round = state.round + 1;
    let status = if score >= cfg.tau_stop {
        Status::AcceptedByThreshold
    } else if round >= cfg.n_max {
        Status::ExhaustedRounds
    } else {
        Status::Active
    };
    let mut next = state.clone();
    next.history.push(RoundRecord {
        round,
        edit: Some(outcome.edit),
        controller: outcome.controller,
        clip_score: score,
        image: outcome.image.clone(),
    });
    next.round = round;
    next.prompt = outcome.prompt;
    next.image = outcome.image;
    next.stack = outcome.stack;
    next.rewards.push(score);
    next.status = status;
    Ok(next)
}

struct Outcome {
    prompt: Prompt,
    edit: EditOp,
    controller: Option<EditController>,
    image: ToyImage,
    stack: AttentionStack,
}

fn execute_edit(
    state: &SessionState,
    edit: &EditOp,
    use_injection: bool,
    ascent: &AscentConfig,
    engine: &Engine,
) -> Result<Outcome> {
    let gen = &engine.generator;
    let refine = engine.session.refine && ascent.steps > 0;
    let p_new = apply_edit(&state.prompt, edit)?;
    let intent = state.intent.clone().unwrap_or_else(|| p_new.clone());
    let score = |img: &ToyImage| clip_score(img, &intent).unwrap_or(f64::NEG_INFINITY);

    if let EditOp::Reweight { index, scale } = edit {
        let prior = state.prompt.weights()[*index];
        let base = EditController::reweight(*index, *scale, prior, ascent.clone())?;
        let sigs = gen.signatures(&p_new);
        let fresh = gen.fresh_stack(&p_new)?;
        let render_at = |c: f64| -> Result<(Prompt, AttentionStack, ToyImage)> {
            let p = apply_edit(&state.prompt, &EditOp::Reweight { index: *index, scale: c })?;
            let stack = if use_injection {
                let mut ctrl = base.clone();
                ctrl.mode = ControllerMode::Reweight {
                    column: *index,
                    scale: c,
                    prior_weight: prior,
                };
                gen.apply_controller(&p, &state.stack, &fresh, &ctrl)?
            } else {
                gen.fresh_stack(&p)?
            };
            let img = gen.render(&stack, &sigs)?;
            Ok((p, stack, img))
        };
        let mut best_c = *scale;
        let (mut p, mut stack, mut img) = render_at(best_c)?;
        if refine {
            let refined = ascend_scale(
                *scale,
                |c| render_at(c).map(|(_, _, img)| score(&img)).unwrap_or(f64::NAN),
                ascent.eta_c,
                ascent.steps,
            )?;
            let candidate = render_at(refined)?;
            if score(&candidate.2) > score(&img) {
                best_c = refined;
                (p, stack, img) = candidate;
            }
        }
        let mut ctrl = base;
        ctrl.mode = ControllerMode::Reweight {
            column: *index,
            scale: best_c,
            prior_weight: prior,
        };
        return Ok(Outcome {
            prompt: p,
            edit: EditOp::Reweight {
                index: *index,
                scale: best_c,
            },
            controller: use_injection.then_some(ctrl),
            image: img,
            stack,
        });
    }

    if !use_injection {
        let (image, stack) = gen.generate(&p_new)?;
        return Ok(Outcome {
            prompt: p_new,
            edit: edit.clone(),
            controller: None,
            image,
            stack,
        });
    }

    let tau = engine.session.tau_inj;
    let fresh = gen.fresh_stack(&p_new)?;
    let sigs = gen.signatures(&p_new);
    let render = |ctrl: &EditController| -> Result<(AttentionStack, ToyImage)> {
        let stack = gen.apply_controller(&p_new, &state.stack, &fresh, ctrl)?;
        let img = gen.render(&stack, &sigs)?;
        Ok((stack, img))
    };

    let mut ctrl = match edit {
        EditOp::WordSwap { .. } => EditController::word_swap(tau, ascent.clone()),
        EditOp::AddPhrase { .. } => {
            let hard = compute_alignment(&state.prompt, &p_new);
            let soft = SoftAlignment::from_hard(&hard, state.prompt.len())?;
            EditController::add_phrase(soft, tau, ascent.clone())
        }
        EditOp::Reweight { .. } => unreachable!("handled above"),
    };
    let (mut stack, mut image) = render(&ctrl)?;

    if refine && tau > 0 {
        let refined = match &ctrl.mode {
            ControllerMode::WordSwap => {
                let start = Matrix::vstack(&state.stack.maps[..tau])?;
                let cells = state.stack.cells();
                let mut probe = ctrl.clone();
                let m = ascend_map(
                    &start,
                    |m| {
                        probe.injected = Some(m.vsplit(cells));
                        render(&probe).map(|(_, img)| score(&img)).unwrap_or(f64::NAN)
                    },
                    ascent.eta_map,
                    ascent.steps,
                    ascent.map_sampling(),
                )?;
                let mut c = ctrl.clone();
                c.injected = Some(m.vsplit(cells));
                c
            }
            ControllerMode::AddPhrase { alignment } => {
                let mut probe = ctrl.clone();
                let a = ascend_alignment(
                    alignment,
                    |a| {
                        probe.mode = ControllerMode::AddPhrase { alignment: a.clone() };
                        render(&probe).map(|(_, img)| score(&img)).unwrap_or(f64::NAN)
                    },
                    ascent.eta_align,
                    ascent.steps,
                    ascent.alignment_sampling(),
                )?;
                let mut c = ctrl.clone();
                c.mode = ControllerMode::AddPhrase { alignment: a };
                c
            }
            ControllerMode::Reweight { .. } => unreachable!("handled above"),
        };
        let (s2, i2) = render(&refined)?;
        // Keep the refinement only when it actually helps.
        if score(&i2) > score(&image) {
            ctrl = refined;
            stack = s2;
            image = i2;
        }
    }
    Ok(Outcome {
        prompt: p_new,
        edit: edit.clone(),
        controller: Some(ctrl),
        image,
        stack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Vocab;

    fn engine(refine: bool) -> Engine {
        Engine::default()
            .with_session(SessionConfig {
                refine,
                ..SessionConfig::default()
            })
            .unwrap()
    }

    #[test]
    fn new_session_round_zero() {
        let e = engine(false);
        let s = new_session("a tranquil garden", 3, &e).unwrap();
        assert_eq!(s.round, 0);
        assert_eq!(s.rewards.len(), 1);
        assert_eq!(s.status, Status::Active);
        assert_eq!(s, new_session("a tranquil garden", 3, &e).unwrap());
        assert!(matches!(new_session("  ", 3, &e), Err(Error::InvalidPrompt(_))));
    }

    #[test]
    fn identity_reweight_with_injection() {
        let e = engine(false);
        let s = new_session("a tranquil garden", 1, &e).unwrap();
        let next = step_round(&s, &EditOp::Reweight { index: 2, scale: 1.0 }, true, &e).unwrap();
        assert_eq!(next.image, s.image);
        assert_eq!(next.rewards[1], s.rewards[0]);
        assert_eq!(next.round, 1);
    }

    #[test]
    fn threshold_and_exhaustion() {
        let e = engine(false);
        let low = e
            .with_session(SessionConfig {
                tau_stop: -1.0,
                refine: false,
                ..SessionConfig::default()
            })
            .unwrap();
        let s = new_session("a tranquil garden", 1, &low).unwrap();
        let next = step_round(&s, &EditOp::Reweight { index: 0, scale: 1.0 }, false, &low).unwrap();
        assert_eq!(next.status, Status::AcceptedByThreshold);
        assert!(matches!(
            step_round(&next, &EditOp::Reweight { index: 0, scale: 1.0 }, false, &low),
            Err(Error::SessionClosed(_))
        ));

        let short = e
            .with_session(SessionConfig {
                tau_stop: 2.0,
                n_max: 2,
                refine: false,
                ..SessionConfig::default()
            })
            .unwrap();
        let mut s = new_session("a tranquil garden", 1, &short).unwrap();
        for _ in 0..2 {
            s = step_round(&s, &EditOp::Reweight { index: 0, scale: 1.0 }, false, &short).unwrap();
        }
        assert_eq!(s.status, Status::ExhaustedRounds);
        assert_eq!(s.round, 2);
    }

    #[test]
    fn invalid_edit_is_reported() {
        let e = engine(false);
        let s = new_session("a tranquil garden", 1, &e).unwrap();
        let bad = EditOp::Reweight { index: 9, scale: 1.0 };
        assert!(matches!(step_round(&s, &bad, true, &e), Err(Error::InvalidEdit(_))));
    }

    #[test]
    fn refinement_never_lowers_the_round_score() {
        let e = engine(true);
        let plain = engine(false);
        let vocab = Vocab::default();
        let target = tokenize("a vibrant green forest", &vocab).unwrap();
        let start = tokenize("a serene blue lake", &vocab).unwrap();
        let s = start_session("t".into(), start, Some(target.clone()), 4, &e).unwrap();
        let swap = EditOp::WordSwap {
            index: 1,
            tokens: vec![vocab.token("vibrant")],
        };
        let refined = step_round(&s, &swap, true, &e).unwrap();
        let unrefined = step_round(&s, &swap, true, &plain).unwrap();
        assert!(refined.last_reward() >= unrefined.last_reward());
    }
}
