use rand::Rng;
use serde::{Deserialize, Serialize};

use super::user::{propose_edits, SimulatedUser, Task, TaskSampler};
use super::{start_session, step_round, Engine, SessionState, Status};
use crate::error::{Error, Result};
use crate::linalg::seeded_rng;
use crate::prompt::EditOp;
use crate::rl::{
    advantage, anneal_beta, policy_action, sample_batch, td_error, update_policy, update_value,
    Checkpoint, LinearPolicy, LinearValue, PolicySample, ReplayPool, Strategy, TrainConfig,
    Transition,
};

/// How each round's strategy is picked.
#[derive(Debug, Clone, Copy)]
pub enum Chooser<'a> {
    /// First available of word swap, phrase addition, re-weight.
    Greedy,
    /// Sample from (or take the argmax of) a policy.
    Policy { policy: &'a LinearPolicy, greedy: bool },
}

/// Strategy preference when the chosen one has no candidate.
fn fallback_order(s: Strategy) -> [Strategy; 3] {
    match s {
        Strategy::WordSwap => [Strategy::WordSwap, Strategy::AddPhrase, Strategy::Reweight],
        Strategy::AddPhrase => [Strategy::AddPhrase, Strategy::WordSwap, Strategy::Reweight],
        Strategy::Reweight => [Strategy::Reweight, Strategy::WordSwap, Strategy::AddPhrase],
    }
}

fn strategy_of(e: &EditOp) -> Strategy {
    match e {
        EditOp::WordSwap { .. } => Strategy::WordSwap,
        EditOp::AddPhrase { .. } => Strategy::AddPhrase,
        EditOp::Reweight { .. } => Strategy::Reweight,
    }
}

fn pick_edit(proposals: &[EditOp], wanted: Strategy) -> EditOp {
    for s in fallback_order(wanted) {
        if let Some(e) = proposals.iter().find(|e| strategy_of(e) == s) {
            return e.clone();
        }
    }
    // Nothing to propose: a no-op re-weight spends the round.
    EditOp::Reweight { index: 0, scale: 1.0 }
}

/// A finished simulated session with the transitions it generated.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: SessionState,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn rounds(&self) -> usize {
        self.state.round
    }

    pub fn final_score(&self) -> f64 {
        self.state.last_reward()
    }
}

/// Runs one session to a terminal status. Per-round RL reward is the
/// change in score, clamped to `[-1, 1]`.
pub fn run_session(
    task: &Task,
    user: &SimulatedUser,
    chooser: Chooser<'_>,
    engine: &Engine,
    use_injection: bool,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let n_max = engine.session.n_max;
    let mut state = start_session(
        task.id.clone(),
        task.initial.clone(),
        Some(task.target.clone()),
        task.seed,
        engine,
    )?;
    let mut transitions = Vec::new();
    while !state.status.is_terminal() {
        let s = state.features(n_max)?;
        let proposals = propose_edits(user, &state);
        let (action, logprob) = match chooser {
            Chooser::Greedy => {
                let first = proposals.first().map_or(Strategy::Reweight, strategy_of);
                (first, 0.0)
            }
            Chooser::Policy { policy, greedy } => policy_action(policy, &s, rng, greedy),
        };
        let edit = pick_edit(&proposals, action);
        let next = step_round(&state, &edit, use_injection, engine)?;
        let r = (next.last_reward() - state.last_reward()).clamp(-1.0, 1.0);
        transitions.push(Transition {
            s,
            a: action,
            r,
            s_next: next.features(n_max)?,
            done: next.status.is_terminal(),
            delta: 0.0,
            inserted_at: 0,
            old_logprob: logprob,
        });
        state = next;
        assert!(state.round <= n_max, "session ran past n_max");
    }
    Ok(Episode { state, transitions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub task_id: String,
    pub rounds: usize,
    pub final_score: f64,
    pub mean_reward: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub episode: usize,
    pub beta: f64,
    pub objective: f64,
    pub value_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config_hash: String,
    pub episodes: Vec<EpisodeStats>,
    pub updates: Vec<UpdateStats>,
}

impl TrainingReport {
    /// Mean rounds in each fifth of training (empty fifths are NaN).
    pub fn quintile_mean_rounds(&self) -> [f64; 5] {
        let n = self.episodes.len();
        let mut out = [f64::NAN; 5];
        for (q, slot) in out.iter_mut().enumerate() {
            let chunk = &self.episodes[q * n / 5..(q + 1) * n / 5];
            if !chunk.is_empty() {
                *slot = chunk.iter().map(|e| e.rounds as f64).sum::<f64>() / chunk.len() as f64;
            }
        }
        out
    }
}

fn abort(episode: usize, reason: String, cfg: &TrainConfig, policy: &LinearPolicy, value: &LinearValue) -> Error {
    Error::TrainingAborted {
        episode,
        reason,
        checkpoint: Box::new(Checkpoint::new(cfg, episode, policy.clone(), value.clone())),
    }
}

/// Initial heads for a feature length, as `train_policy` creates them.
pub fn initial_heads(cfg: &TrainConfig, features: usize) -> (LinearPolicy, LinearValue) {
    (
        LinearPolicy::init(features, cfg.init_std, cfg.seed),
        LinearValue::init(features, cfg.init_std, cfg.seed),
    )
}

/// Trains the strategy policy on simulated sessions drawn from `sampler`.
pub fn train_policy(
    cfg: &TrainConfig,
    engine: &Engine,
    sampler: &TaskSampler,
    use_injection: bool,
) -> Result<(LinearPolicy, LinearValue, TrainingReport)> {
    cfg.validate()?;
    let features = 2 * engine.generator.config().dim + 2;
    let (mut policy, mut value) = initial_heads(cfg, features);
    let reference = policy.clone();
    let mut pool = ReplayPool::new(cfg.capacity, cfg.lambda, cfg.epsilon_priority);
    let mut batch_rng = seeded_rng(cfg.seed, 0xBA7C);
    let mut report = TrainingReport {
        config_hash: crate::rl::config_hash(cfg),
        ..TrainingReport::default()
    };

    for ep in 0..cfg.episodes {
        let task = sampler.sample(ep);
        let user = SimulatedUser::new(task.target.clone(), &engine.generator)?;
        let mut rng = seeded_rng(cfg.seed ^ 0xE915, ep as u64);
        let episode = run_session(
            &task,
            &user,
            Chooser::Policy {
                policy: &policy,
                greedy: false,
            },
            engine,
            use_injection,
            &mut rng,
        )?;
        let rewards: Vec<f64> = episode.transitions.iter().map(|t| t.r).collect();
        report.episodes.push(EpisodeStats {
            episode: ep,
            task_id: task.id.clone(),
            rounds: episode.rounds(),
            final_score: episode.final_score(),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
            status: episode.state.status,
        });
        for mut t in episode.transitions {
            let next = if t.done { 0.0 } else { value.value(&t.s_next) };
            t.delta = td_error(t.r, cfg.gamma, value.value(&t.s), next);
            pool.push(t);
        }

        if (ep + 1) % cfg.update_every != 0 || pool.is_empty() {
            continue;
        }
        let beta = anneal_beta(ep + 1, cfg.episodes, cfg.beta0);
        let batch = sample_batch(&pool, cfg.batch, beta, &mut batch_rng)?;
        let mut advs: Vec<f64> = batch
            .transitions
            .iter()
            .map(|t| {
                let next = if t.done { 0.0 } else { value.value(&t.s_next) };
                advantage(t.r, cfg.gamma, value.value(&t.s), next)
            })
            .collect();
        if cfg.normalize_advantages && advs.len() > 1 {
            let mean = advs.iter().sum::<f64>() / advs.len() as f64;
            let sd = (advs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / advs.len() as f64).sqrt();
            for a in advs.iter_mut() {
                *a = (*a - mean) / (sd + 1e-8);
            }
        }
        let samples: Vec<PolicySample> = batch
            .transitions
            .iter()
            .zip(&advs)
            .zip(&batch.weights)
            .map(|((t, &adv), &w)| PolicySample {
                s: t.s.clone(),
                a: t.a,
                old_logprob: t.old_logprob,
                advantage: adv,
                weight: w,
            })
            .collect();
        let (new_policy, objective) = update_policy(&policy, &reference, &samples, cfg)
            .map_err(|e| abort(ep, e.to_string(), cfg, &policy, &value))?;
        let mut loss = 0.0;
        let mut new_value = value.clone();
        for _ in 0..cfg.ppo_epochs.max(1) {
            let (v, l) = update_value(&new_value, &batch.transitions, cfg)
                .map_err(|e| abort(ep, e.to_string(), cfg, &policy, &value))?;
            new_value = v;
            loss = l;
        }
        if !loss.is_finite() || !objective.is_finite() {
            return Err(abort(ep, "non-finite loss".into(), cfg, &policy, &value));
        }
        policy = new_policy;
        value = new_value;
        for (&i, t) in batch.indices.iter().zip(&batch.transitions) {
            let next = if t.done { 0.0 } else { value.value(&t.s_next) };
            pool.set_delta(i, td_error(t.r, cfg.gamma, value.value(&t.s), next));
        }
        report.updates.push(UpdateStats {
            episode: ep,
            beta,
            objective,
            value_loss: loss,
        });
    }
    Ok((policy, value, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::SessionConfig;

    fn engine(tau_stop: f64) -> Engine {
        Engine::default()
            .with_session(SessionConfig {
                tau_stop,
                refine: false,
                ..SessionConfig::default()
            })
            .unwrap()
    }

    fn run(task: &Task, e: &Engine) -> Episode {
        let user = SimulatedUser::new(task.target.clone(), &e.generator).unwrap();
        run_session(task, &user, Chooser::Greedy, e, false, &mut seeded_rng(0, 0)).unwrap()
    }

    #[test]
    fn degenerate_thresholds() {
        let task = TaskSampler::new(1).sample(0);
        let ep = run(&task, &engine(-1.0));
        assert_eq!(ep.rounds(), 1);
        assert_eq!(ep.state.status, Status::AcceptedByThreshold);
        let ep = run(&task, &engine(2.0));
        assert_eq!(ep.rounds(), 10);
        assert_eq!(ep.state.status, Status::ExhaustedRounds);
        assert_eq!(ep.transitions.len(), 10);
        assert!(ep.transitions.last().unwrap().done);
    }

    #[test]
    fn target_equal_to_start_stops_at_once() {
        let mut task = TaskSampler::new(2).sample(0);
        task.initial = task.target.clone();
        let e = engine(0.92);
        let self_score = start_session("x".into(), task.target.clone(), Some(task.target.clone()), 0, &e)
            .unwrap()
            .last_reward();
        assert!(self_score >= 0.92, "self score {self_score}");
        assert!(run(&task, &e).rounds() <= 1);
    }

    #[test]
    fn zero_episodes_returns_initial_heads() {
        let cfg = TrainConfig {
            episodes: 0,
            ..TrainConfig::default()
        };
        let e = engine(0.92);
        let (p, v, report) = train_policy(&cfg, &e, &TaskSampler::new(0), false).unwrap();
        let (p0, v0) = initial_heads(&cfg, 34);
        assert_eq!((p, v), (p0, v0));
        assert!(report.episodes.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            episodes: 12,
            ..TrainConfig::desk_scale()
        };
        let e = engine(0.92);
        let a = train_policy(&cfg, &e, &TaskSampler::new(3), false).unwrap();
        let b = train_policy(&cfg, &e, &TaskSampler::new(3), false).unwrap();
        assert_eq!(a.2, b.2);
        assert_eq!(a.0, b.0);
        assert_eq!(a.2.updates.len(), 3);
    }
}
