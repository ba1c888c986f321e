//! Attention edit operators and their reward-driven refinement.
//!
//! The three operators act on single `cells x tokens` maps. Refinement
//! treats the generator as a black box: gradients of the reward with
//! respect to a map, a soft alignment or a scale are estimated with
//! central finite differences.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{seeded_rng, Matrix};
use crate::prompt::{AlignmentMap, SCALE_MAX, SCALE_MIN};

/// Finite-difference step for the re-weight scale.
pub const SCALE_FD_STEP: f64 = 1e-3;
/// Finite-difference step for map and alignment entries.
pub const MAP_FD_STEP: f64 = 1e-2;

/// Step sizes and budget for the inner ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    pub eta_map: f64,
    pub eta_align: f64,
    pub eta_c: f64,
    pub steps: usize,
    /// Coordinates sampled per map/alignment step.
    pub coords: usize,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            eta_map: 200.0,
            eta_align: 10.0,
            eta_c: 0.5,
            steps: 8,
            coords: 64,
            seed: 0,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_map", self.eta_map), ("eta_align", self.eta_align), ("eta_c", self.eta_c)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn map_sampling(&self) -> Sampling {
        Sampling {
            coords: self.coords,
            seed: self.seed,
        }
    }

    pub fn alignment_sampling(&self) -> Sampling {
        Sampling {
            coords: (self.coords / 4).max(1),
            seed: self.seed ^ 0xA11,
        }
    }
}

/// Which coordinates a sampled finite-difference step touches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub coords: usize,
    pub seed: u64,
}

/// Relaxed alignment: `n_new x (n_old + 1)`, each row on the simplex. The
/// last column carries the "no source token" mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftAlignment {
    pub matrix: Matrix,
}

impl SoftAlignment {
    pub fn from_hard(a: &AlignmentMap, n_old: usize) -> Result<Self> {
        if !a.is_valid_for(n_old) {
            return Err(Error::DimError(format!(
                "alignment references indices beyond {n_old} source tokens"
            )));
        }
        let mut m = Matrix::zeros(a.0.len(), n_old + 1);
        for (j, entry) in a.0.iter().enumerate() {
            m.set(j, entry.unwrap_or(n_old), 1.0);
        }
        Ok(Self { matrix: m })
    }

    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.cols() == 0 {
            return Err(Error::DimError("soft alignment needs a none column".into()));
        }
        for r in 0..matrix.rows() {
            let row = matrix.row(r);
            if row.iter().any(|v| *v < 0.0 || !v.is_finite())
                || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::DimError(format!("alignment row {r} is off the simplex")));
            }
        }
        Ok(Self { matrix })
    }

    /// Number of new-prompt tokens.
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Number of old-prompt tokens (excluding the none column).
    pub fn old_len(&self) -> usize {
        self.matrix.cols() - 1
    }

    /// Per-row argmax; ties go to the lower index.
    pub fn decode(&self) -> AlignmentMap {
        let none = self.old_len();
        AlignmentMap(
            (0..self.rows())
                .map(|j| {
                    let row = self.matrix.row(j);
                    let mut best = 0;
                    for (k, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = k;
                        }
                    }
                    (best != none).then_some(best)
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControllerMode {
    WordSwap,
    AddPhrase {
        alignment: SoftAlignment,
    },
    /// `prior_weight` is the weight the source column was generated with;
    /// the source column is rescaled so it ends up at `scale` times the
    /// unweighted attention.
    Reweight {
        column: usize,
        scale: f64,
        prior_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditController {
    #[serde(flatten)]
    pub mode: ControllerMode,
    pub tau_inj: usize,
    pub ascent: AscentConfig,
    /// Refined maps substituted for the source during word-swap injection.
    #[serde(skip)]
    pub injected: Option<Vec<Matrix>>,
}

impl EditController {
    pub fn word_swap(tau_inj: usize, ascent: AscentConfig) -> Self {
        Self {
            mode: ControllerMode::WordSwap,
            tau_inj,
            ascent,
            injected: None,
        }
    }

    pub fn add_phrase(alignment: SoftAlignment, tau_inj: usize, ascent: AscentConfig) -> Self {
        Self {
            mode: ControllerMode::AddPhrase { alignment },
            tau_inj,
            ascent,
            injected: None,
        }
    }

    pub fn reweight(column: usize, scale: f64, prior_weight: f64, ascent: AscentConfig) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self {
            mode: ControllerMode::Reweight {
                column,
                scale,
                prior_weight,
            },
            tau_inj: 0,
            ascent,
            injected: None,
        })
    }
}

fn check_scale(c: f64) -> Result<()> {
    if !(SCALE_MIN..=SCALE_MAX).contains(&c) {
        return Err(Error::OutOfRange {
            name: "c",
            value: c,
            min: SCALE_MIN,
            max: SCALE_MAX,
        });
    }
    Ok(())
}

/// Injection: the injected map for steps before `tau_inj`, the fresh one after.
pub fn edit_word_swap(m_t: &Matrix, m_t_star: &Matrix, t: usize, tau_inj: usize) -> Result<Matrix> {
    if m_t.shape() != m_t_star.shape() {
        return Err(Error::DimError(format!(
            "word swap maps differ in shape: {:?} vs {:?}",
            m_t.shape(),
            m_t_star.shape()
        )));
    }
    Ok(if t < tau_inj { m_t_star.clone() } else { m_t.clone() })
}

/// Column routing: column `j` comes from `source` column `A(j)` when
/// aligned, from `fresh` otherwise.
pub fn edit_add_phrase(source: &Matrix, fresh: &Matrix, a: &AlignmentMap) -> Result<Matrix> {
    if source.rows() != fresh.rows() || a.0.len() != fresh.cols() {
        return Err(Error::DimError(format!(
            "alignment of length {} over maps {:?} and {:?}",
            a.0.len(),
            source.shape(),
            fresh.shape()
        )));
    }
    if !a.is_valid_for(source.cols()) {
        return Err(Error::DimError("alignment index beyond source columns".into()));
    }
    let mut out = fresh.clone();
    for (j, entry) in a.0.iter().enumerate() {
        if let Some(k) = entry {
            for r in 0..out.rows() {
                out.set(r, j, source.get(r, *k));
            }
        }
    }
    Ok(out)
}

/// Soft column routing: column `j` is `sum_k A[j,k] source[:,k] + A[j,none] fresh[:,j]`.
pub fn route_columns(source: &Matrix, fresh: &Matrix, a: &SoftAlignment) -> Result<Matrix> {
    if source.rows() != fresh.rows() || a.rows() != fresh.cols() || a.old_len() != source.cols() {
        return Err(Error::DimError(format!(
            "soft alignment {:?} over maps {:?} and {:?}",
            a.matrix.shape(),
            source.shape(),
            fresh.shape()
        )));
    }
    let none = a.old_len();
    let mut out = Matrix::zeros(fresh.rows(), fresh.cols());
    for j in 0..fresh.cols() {
        let weights = a.matrix.row(j);
        // One-hot rows copy exactly.
        if let Some(k) = weights.iter().position(|&w| w == 1.0) {
            for r in 0..out.rows() {
                let v = if k == none { fresh.get(r, j) } else { source.get(r, k) };
                out.set(r, j, v);
            }
            continue;
        }
        for r in 0..out.rows() {
            let mut v = weights[none] * fresh.get(r, j);
            for (k, w) in weights[..none].iter().enumerate() {
                v += w * source.get(r, k);
            }
            out.set(r, j, v);
        }
    }
    Ok(out)
}

/// Multiplies column `j_star` by `c` with no renormalization.
pub fn edit_reweight(m_t: &Matrix, j_star: usize, c: f64) -> Result<Matrix> {
    check_scale(c)?;
    scale_column(m_t, j_star, c)
}

pub(crate) fn scale_column(m: &Matrix, j: usize, factor: f64) -> Result<Matrix> {
    if j >= m.cols() {
        return Err(Error::DimError(format!("column {j} of {}", m.cols())));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        out.set(r, j, factor * m.get(r, j));
    }
    Ok(out)
}

fn finite(v: f64, at: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::RewardError(at()))
    }
}

/// Finite-difference ascent on the re-weight scale, clamped to `[-2, 2]`.
///
/// Uses central differences in the interior and the clamped (one-sided)
/// span at the boundary.
pub fn ascend_scale(
    c0: f64,
    mut reward_fn: impl FnMut(f64) -> f64,
    eta_c: f64,
    steps: usize,
) -> Result<f64> {
    check_scale(c0)?;
    let mut c = c0;
    for _ in 0..steps {
        let hi = (c + SCALE_FD_STEP).min(SCALE_MAX);
        let lo = (c - SCALE_FD_STEP).max(SCALE_MIN);
        let r_hi = finite(reward_fn(hi), || format!("c = {hi}"))?;
        let r_lo = finite(reward_fn(lo), || format!("c = {lo}"))?;
        let grad = (r_hi - r_lo) / (hi - lo);
        c = (c + eta_c * grad).clamp(SCALE_MIN, SCALE_MAX);
    }
    Ok(c)
}

/// Sampled-coordinate finite-difference gradient of `reward_fn` at `m`.
fn sampled_gradient(
    m: &Matrix,
    reward_fn: &mut impl FnMut(&Matrix) -> f64,
    sampling: Sampling,
    step: usize,
) -> Result<Vec<(usize, f64)>> {
    let total = m.rows() * m.cols();
    let k = sampling.coords.min(total);
    let mut rng = seeded_rng(sampling.seed, step as u64);
    let mut probe = m.clone();
    let mut grads = Vec::with_capacity(k);
    for idx in sample(&mut rng, total, k).into_iter() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + MAP_FD_STEP;
        let up = finite(reward_fn(&probe), || format!("entry {idx} + h"))?;
        probe.as_mut_slice()[idx] = orig - MAP_FD_STEP;
        let down = finite(reward_fn(&probe), || format!("entry {idx} - h"))?;
        probe.as_mut_slice()[idx] = orig;
        grads.push((idx, (up - down) / (2.0 * MAP_FD_STEP)));
    }
    Ok(grads)
}

fn ascend_rows(
    start: &Matrix,
    mut reward_fn: impl FnMut(&Matrix) -> f64,
    eta: f64,
    steps: usize,
    sampling: Sampling,
) -> Result<Matrix> {
    let mut m = start.clone();
    if steps == 0 {
        return Ok(m);
    }
    finite(reward_fn(&m), || "starting point".into())?;
    for step in 0..steps {
        let grads = sampled_gradient(&m, &mut reward_fn, sampling, step)?;
        for (idx, g) in grads {
            m.as_mut_slice()[idx] += eta * g;
        }
        m.project_rows_to_simplex();
    }
    Ok(m)
}

/// Ascent on an attention map; rows are projected back onto the simplex
/// after every step.
pub fn ascend_map(
    m_star: &Matrix,
    reward_fn: impl FnMut(&Matrix) -> f64,
    eta_map: f64,
    steps: usize,
    sampling: Sampling,
) -> Result<Matrix> {
    ascend_rows(m_star, reward_fn, eta_map, steps, sampling)
}

/// Ascent on a relaxed alignment; decode with [`SoftAlignment::decode`].
pub fn ascend_alignment(
    a_soft: &SoftAlignment,
    mut reward_fn: impl FnMut(&SoftAlignment) -> f64,
    eta_align: f64,
    steps: usize,
    sampling: Sampling,
) -> Result<SoftAlignment> {
    let mut probe = a_soft.clone();
    let matrix = ascend_rows(
        &a_soft.matrix,
        |m| {
            probe.matrix.as_mut_slice().copy_from_slice(m.as_slice());
            reward_fn(&probe)
        },
        eta_align,
        steps,
        sampling,
    )?;
    Ok(SoftAlignment { matrix })
}
