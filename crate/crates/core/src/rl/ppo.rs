use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{StateFeatures, Strategy, TrainConfig, Transition};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_softmax, seeded_rng, softmax, Matrix};

/// `r + gamma * V(s') - V(s)`.
pub fn td_error(r: f64, gamma: f64, v_s: f64, v_s_next: f64) -> f64 {
    r + gamma * v_s_next - v_s
}

/// One-step advantage; the same expression as [`td_error`].
pub fn advantage(r: f64, gamma: f64, v_s: f64, v_s_next: f64) -> f64 {
    td_error(r, gamma, v_s, v_s_next)
}

/// Clipped surrogate `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn ppo_objective(ratio: f64, adv: f64, eps_clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (ratio * adv).min(clipped * adv)
}

/// Linear interpolation from `beta0` to 1.
pub fn anneal_beta(step: usize, total: usize, beta0: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let frac = (step.min(total) as f64) / total as f64;
    beta0 + (1.0 - beta0) * frac
}

/// Softmax policy over strategies with linear scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearPolicy {
    pub fn zeros(features: usize) -> Self {
        Self {
            weights: Matrix::zeros(Strategy::COUNT, features),
            bias: vec![0.0; Strategy::COUNT],
        }
    }

    pub fn init(features: usize, std: f64, seed: u64) -> Self {
        let mut p = Self::zeros(features);
        if std > 0.0 {
            let mut rng = seeded_rng(seed, 0x9011);
            let normal = Normal::new(0.0, std).expect("std is positive");
            for w in p.weights.as_mut_slice() {
                *w = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn features(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, s: &StateFeatures) -> Vec<f64> {
        (0..Strategy::COUNT)
            .map(|a| dot(self.weights.row(a), &s.0) + self.bias[a])
            .collect()
    }

    pub fn probabilities(&self, s: &StateFeatures) -> Vec<f64> {
        softmax(&self.logits(s))
    }

    pub fn log_prob(&self, s: &StateFeatures, a: Strategy) -> f64 {
        log_softmax(&self.logits(s))[a.index()]
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValue {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearValue {
    pub fn zeros(features: usize) -> Self {
        Self {
            weights: vec![0.0; features],
            bias: 0.0,
        }
    }

    pub fn init(features: usize, std: f64, seed: u64) -> Self {
        let mut v = Self::zeros(features);
        if std > 0.0 {
            let mut rng = seeded_rng(seed, 0x7A1);
            let normal = Normal::new(0.0, std).expect("std is positive");
            for w in v.weights.iter_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        v
    }

    pub fn value(&self, s: &StateFeatures) -> f64 {
        dot(&self.weights, &s.0) + self.bias
    }
}

/// Samples a strategy (or takes the argmax when `greedy`), returning it with
/// its log-probability.
pub fn policy_action(
    policy: &LinearPolicy,
    s: &StateFeatures,
    rng: &mut impl Rng,
    greedy: bool,
) -> (Strategy, f64) {
    let logp = log_softmax(&policy.logits(s));
    let idx = if greedy {
        let mut best = 0;
        for (i, v) in logp.iter().enumerate() {
            if *v > logp[best] {
                best = i;
            }
        }
        best
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = Strategy::COUNT - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    (Strategy::ALL[idx], logp[idx])
}

/// One policy-update sample: state, action, behaviour log-probability,
/// advantage and importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub s: StateFeatures,
    pub a: Strategy,
    pub old_logprob: f64,
    pub advantage: f64,
    pub weight: f64,
}

fn kl(p_log: &[f64], q_log: &[f64]) -> f64 {
    p_log
        .iter()
        .zip(q_log)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum()
}

/// `mean_i w_i * surrogate_i - kl_coef * mean_i KL(pi(.|s_i) || ref(.|s_i))`.
pub fn policy_objective(
    policy: &LinearPolicy,
    reference: &LinearPolicy,
    batch: &[PolicySample],
    cfg: &TrainConfig,
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for x in batch {
        let logp = log_softmax(&policy.logits(&x.s));
        let ratio = (logp[x.a.index()] - x.old_logprob).exp();
        total += x.weight * ppo_objective(ratio, x.advantage, cfg.eps_clip);
        if cfg.kl_coef != 0.0 {
            total -= cfg.kl_coef * kl(&logp, &log_softmax(&reference.logits(&x.s)));
        }
    }
    total / batch.len() as f64
}

/// Analytic gradient of [`policy_objective`] as `(d weights, d bias)`.
pub fn policy_gradient(
    policy: &LinearPolicy,
    reference: &LinearPolicy,
    batch: &[PolicySample],
    cfg: &TrainConfig,
) -> (Matrix, Vec<f64>) {
    let f = policy.features();
    let mut gw = Matrix::zeros(Strategy::COUNT, f);
    let mut gb = vec![0.0; Strategy::COUNT];
    if batch.is_empty() {
        return (gw, gb);
    }
    let inv = 1.0 / batch.len() as f64;
    for x in batch {
        let logp = log_softmax(&policy.logits(&x.s));
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = x.a.index();
        let ratio = (logp[a] - x.old_logprob).exp();
        let mut g_logits = [0.0; Strategy::COUNT];

        // The min picks the unclipped branch exactly when it is not larger;
        // only that branch depends on the parameters.
        let clipped = ratio.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
        if ratio * x.advantage <= clipped * x.advantage {
            let coef = x.weight * x.advantage * ratio;
            for (k, g) in g_logits.iter_mut().enumerate() {
                let onehot = if k == a { 1.0 } else { 0.0 };
                *g += coef * (onehot - probs[k]);
            }
        }
        if cfg.kl_coef != 0.0 {
            let q_log = log_softmax(&reference.logits(&x.s));
            let d = kl(&logp, &q_log);
            for (k, g) in g_logits.iter_mut().enumerate() {
                *g -= cfg.kl_coef * probs[k] * (logp[k] - q_log[k] - d);
            }
        }
        for (k, g) in g_logits.iter().enumerate() {
            gb[k] += inv * g;
            for (w, s) in gw.row_mut(k).iter_mut().zip(&x.s.0) {
                *w += inv * g * s;
            }
        }
    }
    (gw, gb)
}

/// Gradient ascent on the clipped objective for `cfg.ppo_epochs` full-batch
/// passes. Returns the new parameters and the objective they attain.
pub fn update_policy(
    policy: &LinearPolicy,
    reference: &LinearPolicy,
    batch: &[PolicySample],
    cfg: &TrainConfig,
) -> Result<(LinearPolicy, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("policy batch".into()));
    }
    let mut p = policy.clone();
    for epoch in 0..cfg.ppo_epochs {
        let (gw, gb) = policy_gradient(&p, reference, batch, cfg);
        if !gw.is_finite() || gb.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericsError(format!("policy gradient at epoch {epoch}")));
        }
        for (w, g) in p.params_mut().zip(gw.as_slice().iter().chain(&gb)) {
            *w += cfg.lr * g;
        }
        if !p.is_finite() {
            return Err(Error::NumericsError(format!("policy parameters at epoch {epoch}")));
        }
    }
    let objective = policy_objective(&p, reference, batch, cfg);
    Ok((p, objective))
}

fn residual(value: &LinearValue, t: &Transition, gamma: f64) -> f64 {
    let next = if t.done { 0.0 } else { value.value(&t.s_next) };
    td_error(t.r, gamma, value.value(&t.s), next)
}

/// `value_coef * mean(delta^2)` under the current value parameters.
pub fn value_loss(value: &LinearValue, batch: &[Transition], cfg: &TrainConfig) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let sum: f64 = batch.iter().map(|t| residual(value, t, cfg.gamma).powi(2)).sum();
    cfg.value_coef * sum / batch.len() as f64
}

/// Full (residual) gradient of [`value_loss`]: the bootstrap target is
/// differentiated too. Returns `(d weights, d bias)`.
pub fn value_gradient(value: &LinearValue, batch: &[Transition], cfg: &TrainConfig) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; value.weights.len()];
    let mut gb = 0.0;
    if batch.is_empty() {
        return (gw, gb);
    }
    let scale = 2.0 * cfg.value_coef / batch.len() as f64;
    for t in batch {
        let d = residual(value, t, cfg.gamma);
        let next = if t.done { 0.0 } else { cfg.gamma };
        for (k, g) in gw.iter_mut().enumerate() {
            let s_next = if t.done { 0.0 } else { t.s_next.0[k] };
            *g += scale * d * (cfg.gamma * s_next - t.s.0[k]);
        }
        gb += scale * d * (next - 1.0);
    }
    (gw, gb)
}

/// One descent step on the TD loss; returns the new parameters and the loss
/// measured before the step.
pub fn update_value(
    value: &LinearValue,
    batch: &[Transition],
    cfg: &TrainConfig,
) -> Result<(LinearValue, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("value batch".into()));
    }
    let loss = value_loss(value, batch, cfg);
    let (gw, gb) = value_gradient(value, batch, cfg);
    if gw.iter().any(|g| !g.is_finite()) || !gb.is_finite() {
        return Err(Error::NumericsError("value gradient".into()));
    }
    let mut v = value.clone();
    for (w, g) in v.weights.iter_mut().zip(&gw) {
        *w -= cfg.value_lr * g;
    }
    v.bias -= cfg.value_lr * gb;
    Ok((v, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: &[f64]) -> StateFeatures {
        StateFeatures(v.to_vec())
    }

    #[test]
    fn td_and_advantage_cases() {
        assert!((td_error(0.5, 0.9, 0.1, 0.2) - 0.58).abs() < 1e-12);
        assert_eq!(td_error(0.7, 0.0, 0.2, 9.0), 0.7 - 0.2);
        assert_eq!(td_error(1.0, 1.0, 0.3, 0.3), 1.0);
        assert_eq!(advantage(0.5, 0.9, 0.1, 0.2), td_error(0.5, 0.9, 0.1, 0.2));
    }

    #[test]
    fn objective_cases() {
        assert!((ppo_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        for adv in [-3.0, 0.0, 0.4] {
            assert_eq!(ppo_objective(1.0, adv, 0.2), adv);
        }
    }

    #[test]
    fn objective_unclipped_inside_trust_region() {
        for i in 81..=119 {
            let rho = i as f64 / 100.0;
            for adv in [-2.0, -0.5, 0.5, 2.0] {
                assert_eq!(ppo_objective(rho, adv, 0.2), rho * adv);
            }
        }
    }

    #[test]
    fn beta_schedule() {
        assert_eq!(anneal_beta(0, 10, 0.4), 0.4);
        assert_eq!(anneal_beta(10, 10, 0.4), 1.0);
        assert!((anneal_beta(5, 10, 0.4) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_policy_is_uniform() {
        let p = LinearPolicy::zeros(4);
        let s = state(&[0.3, -1.0, 2.0, 0.5]);
        for prob in p.probabilities(&s) {
            assert!((prob - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dominant_score_is_almost_always_sampled() {
        let mut p = LinearPolicy::zeros(2);
        p.bias[1] = 10.0;
        let s = state(&[0.0, 0.0]);
        assert!(p.probabilities(&s)[1] >= 0.9999);
        let mut rng = seeded_rng(1, 1);
        let hits = (0..10_000)
            .filter(|_| policy_action(&p, &s, &mut rng, false).0 == Strategy::AddPhrase)
            .count();
        assert!(hits >= 9_990);
        let (a, lp) = policy_action(&p, &s, &mut rng, true);
        assert_eq!(a, Strategy::AddPhrase);
        assert_eq!(policy_action(&p, &s, &mut rng, true), (a, lp));
    }

    #[test]
    fn zero_advantage_without_kl_leaves_policy() {
        let p = LinearPolicy::init(3, 0.1, 4);
        let cfg = TrainConfig {
            kl_coef: 0.0,
            lr: 0.5,
            ..TrainConfig::default()
        };
        let batch = vec![PolicySample {
            s: state(&[1.0, 0.5, -0.2]),
            a: Strategy::WordSwap,
            old_logprob: -1.1,
            advantage: 0.0,
            weight: 1.0,
        }];
        let (q, _) = update_policy(&p, &p, &batch, &cfg).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let p = LinearPolicy::init(3, 0.1, 5);
        let s = state(&[1.0, 0.5, -0.2]);
        let cfg = TrainConfig {
            lr: 0.1,
            ppo_epochs: 1,
            ..TrainConfig::default()
        };
        let batch = vec![PolicySample {
            s: s.clone(),
            a: Strategy::Reweight,
            old_logprob: p.log_prob(&s, Strategy::Reweight),
            advantage: 1.0,
            weight: 1.0,
        }];
        let (q, _) = update_policy(&p, &p, &batch, &cfg).unwrap();
        assert!(q.probabilities(&s)[2] > p.probabilities(&s)[2]);
    }

    #[test]
    fn perfect_value_is_fixed_point() {
        let v = LinearValue {
            weights: vec![0.5, -0.25],
            bias: 0.1,
        };
        let cfg = TrainConfig::default();
        let s = state(&[1.0, 2.0]);
        let s_next = state(&[0.0, 1.0]);
        let r = v.value(&s) - cfg.gamma * v.value(&s_next);
        let t = Transition {
            s,
            a: Strategy::WordSwap,
            r,
            s_next,
            done: false,
            delta: 0.0,
            inserted_at: 0,
            old_logprob: 0.0,
        };
        let (w, loss) = update_value(&v, &[t], &cfg).unwrap();
        assert!(loss < 1e-24);
        for (a, b) in w.weights.iter().zip(&v.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
