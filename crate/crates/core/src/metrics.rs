//! Evaluation: SSIM, rounds statistics and paired policy comparisons.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{read_png, ToyImage};
use crate::linalg::seeded_rng;
use crate::rl::LinearPolicy;
use crate::session::{run_session, Chooser, Engine, SessionLog, SimulatedUser, Status, Task};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

/// Mean SSIM over 8×8 windows at stride 4, averaged over channels.
/// Window statistics use population (divide-by-N) moments.
pub fn ssim(a: &ToyImage, b: &ToyImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimError(format!(
            "ssim of {}x{}x{} and {}x{}x{} images",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::DimError(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height, a.width
        )));
    }
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..a.channels {
        for y0 in (0..=a.height - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            for x0 in (0..=a.width - SSIM_WINDOW).step_by(SSIM_STRIDE) {
                let (mut sa, mut sb) = (0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        sa += a.get(y, x, c);
                        sb += b.get(y, x, c);
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let (da, db) = (a.get(y, x, c) - ma, b.get(y, x, c) - mb);
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
                total += (2.0 * ma * mb + c1) * (2.0 * vab + c2)
                    / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// Mean and sample standard deviation (divisor N−1; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no values to summarize".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Mean and sample SD of the terminal round index across logs.
pub fn rounds_stats(logs: &[SessionLog]) -> Result<(f64, f64)> {
    if logs.is_empty() {
        return Err(Error::EmptyInput("no session logs".into()));
    }
    let rounds: Vec<f64> = logs.iter().map(|l| l.terminal_round() as f64).collect();
    mean_sd(&rounds)
}

/// Outcome of a one-sided exact sign test that arm A needs fewer rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`; ties dropped.
    pub p_value: f64,
}

/// Upper binomial tail `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // ln C(n, i) built incrementally, summed in log space.
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(n - k + 1);
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            terms.push(ln_c + ln_half_n);
        }
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// Paired sign test on `(a, b)` pairs; a win is `a < b`.
pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let wins = pairs.iter().filter(|(a, b)| a < b).count();
    let losses = pairs.iter().filter(|(a, b)| a > b).count();
    SignTest {
        wins,
        losses,
        ties: pairs.len() - wins - losses,
        p_value: binomial_upper_tail(wins, wins + losses),
    }
}

/// One evaluated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub task_seed: u64,
    pub policy_seed: u64,
    pub rounds: usize,
    pub final_reward: f64,
    pub ssim_to_target: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: String,
    pub sessions: usize,
    pub mean_rounds: f64,
    pub sd_rounds: f64,
    pub mean_final_reward: f64,
    pub mean_ssim_to_target: Option<f64>,
    pub threshold_rate: f64,
    #[serde(skip)]
    pub rows: Vec<SessionRow>,
}

impl EvalReport {
    pub fn from_rows(arm: impl Into<String>, rows: Vec<SessionRow>) -> Result<Self> {
        let rounds: Vec<f64> = rows.iter().map(|r| r.rounds as f64).collect();
        let (mean_rounds, sd_rounds) = mean_sd(&rounds)?;
        let n = rows.len() as f64;
        let ssims: Vec<f64> = rows.iter().filter_map(|r| r.ssim_to_target).collect();
        Ok(Self {
            arm: arm.into(),
            sessions: rows.len(),
            mean_rounds,
            sd_rounds,
            mean_final_reward: rows.iter().map(|r| r.final_reward).sum::<f64>() / n,
            mean_ssim_to_target: (!ssims.is_empty())
                .then(|| ssims.iter().sum::<f64>() / ssims.len() as f64),
            threshold_rate: rows
                .iter()
                .filter(|r| r.status == Status::AcceptedByThreshold)
                .count() as f64
                / n,
            rows,
        })
    }

    /// Builds a report from saved logs; SSIM uses the logged target image
    /// when there is one.
    pub fn from_logs(arm: impl Into<String>, logs: &[SessionLog], dir: &Path) -> Result<Self> {
        if logs.is_empty() {
            return Err(Error::EmptyInput("no session logs".into()));
        }
        let rows = logs
            .iter()
            .map(|log| {
                let last = log
                    .rounds
                    .last()
                    .ok_or_else(|| Error::EmptyInput(format!("log {} has no rounds", log.id)))?;
                let ssim_to_target = match &log.target_image_path {
                    Some(t) => Some(ssim(
                        &read_png(&dir.join(&last.image_path))?,
                        &read_png(&dir.join(t))?,
                    )?),
                    None => None,
                };
                Ok(SessionRow {
                    session_id: log.id.clone(),
                    task_seed: 0,
                    policy_seed: 0,
                    rounds: log.terminal_round(),
                    final_reward: last.clip_score,
                    ssim_to_target,
                    status: log.status,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(arm, rows)
    }

    /// Per-session rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("rows always serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|source| Error::WriteError {
            path: dir.to_owned(),
            source,
        })?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        for (path, body) in [(&csv_path, self.to_csv()), (&json_path, self.summary_json())] {
            std::fs::write(path, body).map_err(|source| Error::WriteError {
                path: path.clone(),
                source,
            })?;
        }
        Ok((csv_path, json_path))
    }
}

/// How an evaluation arm picks strategies.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmPolicy {
    Greedy,
    Policy { policy: LinearPolicy, greedy: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub policy: ArmPolicy,
    pub use_injection: bool,
}

impl Arm {
    pub fn new(name: impl Into<String>, policy: ArmPolicy, use_injection: bool) -> Self {
        Self {
            name: name.into(),
            policy,
            use_injection,
        }
    }
}

/// Seed for the strategy sampler of task `index`, shared by paired arms.
pub fn policy_seed(seed: u64, index: usize) -> u64 {
    crate::linalg::mix64(seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Runs every task under `arm`. Sessions run in parallel; row order
/// follows `tasks`.
pub fn evaluate(arm: &Arm, tasks: &[Task], engine: &Engine, seed: u64) -> Result<EvalReport> {
    let rows = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let user = SimulatedUser::new(task.target.clone(), &engine.generator)?;
            let chooser = match &arm.policy {
                ArmPolicy::Greedy => Chooser::Greedy,
                ArmPolicy::Policy { policy, greedy } => Chooser::Policy {
                    policy,
                    greedy: *greedy,
                },
            };
            let ps = policy_seed(seed, i);
            let mut rng = seeded_rng(ps, 0);
            let ep = run_session(task, &user, chooser, engine, arm.use_injection, &mut rng)?;
            Ok(SessionRow {
                session_id: task.id.clone(),
                task_seed: task.seed,
                policy_seed: ps,
                rounds: ep.rounds(),
                final_reward: ep.final_score(),
                ssim_to_target: Some(ssim(&ep.state.image, &user.target_image)?),
                status: ep.state.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(arm.name.clone(), rows)
}

/// Evaluates both arms on the same tasks and seeds.
pub fn compare_policies(
    a: &Arm,
    b: &Arm,
    tasks: &[Task],
    engine: &Engine,
    seed: u64,
) -> Result<(EvalReport, EvalReport)> {
    Ok((evaluate(a, tasks, engine, seed)?, evaluate(b, tasks, engine, seed)?))
}

/// Sign test that `a` needs fewer rounds than `b`, pairing rows by index.
pub fn paired_rounds_test(a: &EvalReport, b: &EvalReport) -> Result<SignTest> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::DimError(format!(
            "paired reports have {} and {} rows",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| (x.rounds as f64, y.rounds as f64))
        .collect();
    Ok(sign_test(&pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{SessionConfig, TaskSampler};
    use rand::Rng;
    use statrs::distribution::{Binomial, DiscreteCDF};

    fn noisy(base: &ToyImage, sigma: f64, seed: u64) -> ToyImage {
        let mut rng = seeded_rng(seed, 1);
        let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
        let data = base.data.iter().map(|v| (v + rng.sample(normal)).clamp(0.0, 1.0)).collect();
        ToyImage::new(base.height, base.width, base.channels, data).unwrap()
    }

    fn sample_image() -> ToyImage {
        let e = Engine::default();
        let p = crate::prompt::tokenize("a misty harbor at dawn", &e.vocab).unwrap();
        e.generator.generate(&p).unwrap().0
    }

    #[test]
    fn ssim_identity_constants_and_symmetry() {
        let x = sample_image();
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let zero = ToyImage::filled(32, 32, 3, 0.0);
        let one = ToyImage::filled(32, 32, 3, 1.0);
        let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
        assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
        let y = noisy(&x, 0.05, 3);
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    }

    #[test]
    fn ssim_shape_mismatch() {
        let a = ToyImage::filled(32, 32, 3, 0.5);
        let b = ToyImage::filled(16, 32, 3, 0.5);
        assert!(matches!(ssim(&a, &b), Err(Error::DimError(_))));
    }

    #[test]
    fn ssim_degrades_with_noise() {
        let x = sample_image();
        let mean = |sigma: f64| (0..50).map(|s| ssim(&x, &noisy(&x, sigma, s)).unwrap()).sum::<f64>() / 50.0;
        let (a, b, c) = (mean(0.01), mean(0.05), mean(0.1));
        assert!(1.0 > a && a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn mean_sd_hand_values() {
        assert_eq!(mean_sd(&[4.0]).unwrap(), (4.0, 0.0));
        let (m, sd) = mean_sd(&[3.0, 5.0]).unwrap();
        assert_eq!(m, 4.0);
        assert!((sd - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[2.0; 6]).unwrap().1, 0.0);
        assert!(matches!(mean_sd(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(rounds_stats(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn binomial_tail_matches_statrs() {
        for n in [1usize, 5, 20, 137, 200] {
            let dist = Binomial::new(0.5, n as u64).unwrap();
            for k in 0..=n {
                let oracle = if k == 0 { 1.0 } else { dist.sf(k as u64 - 1) };
                let ours = binomial_upper_tail(k, n);
                assert!((ours - oracle).abs() <= 1e-12 + 1e-9 * oracle, "n={n} k={k} {ours} {oracle}");
            }
        }
        let t = sign_test(&[(1.0, 2.0), (2.0, 2.0), (3.0, 1.0), (1.0, 4.0)]);
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_arms_identical_reports() {
        let e = Engine::default()
            .with_session(SessionConfig {
                refine: false,
                ..SessionConfig::default()
            })
            .unwrap();
        let tasks = TaskSampler::new(4).tasks(6);
        let arm = Arm::new("greedy", ArmPolicy::Greedy, false);
        let (a, b) = compare_policies(&arm, &arm, &tasks, &e, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        assert!(a.sd_rounds >= 0.0);
        let csv = a.to_csv();
        assert!(csv.starts_with("session_id,task_seed,policy_seed,rounds"));
        assert_eq!(csv.lines().count(), 7);
    }
}
