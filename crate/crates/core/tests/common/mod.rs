//! Oracles shared by the integration tests. Everything here is computed
//! independently of the library's own numerics.
#![allow(dead_code)]

use coadapt::generator::ToyImage;
use coadapt::linalg::Matrix;
use coadapt::rl::{
    policy_objective, value_loss, LinearPolicy, LinearValue, PolicySample, StateFeatures,
    Strategy, TrainConfig, Transition,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Pairs `(x, y)` of standard normals with correlation `rho`.
pub fn correlated_normals(n: usize, rho: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        xs.push(vec![a]);
        ys.push(vec![rho * a + (1.0 - rho * rho).sqrt() * b]);
    }
    (xs, ys)
}

fn random_features(r: &mut ChaCha20Rng, f: usize) -> StateFeatures {
    StateFeatures((0..f).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
}

fn random_matrix(r: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_policy(seed: u64, f: usize, scale: f64) -> LinearPolicy {
    let mut r = rng(seed);
    LinearPolicy {
        weights: random_matrix(&mut r, Strategy::COUNT, f, scale),
        bias: (0..Strategy::COUNT).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect(),
    }
}

pub fn random_value(seed: u64, f: usize, scale: f64) -> LinearValue {
    let mut r = rng(seed);
    LinearValue {
        weights: (0..f).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect(),
        bias: scale * r.sample::<f64, _>(StandardNormal),
    }
}

/// Samples whose behaviour log-probabilities sit near the given policy's,
/// so both clipped and unclipped branches occur.
pub fn random_policy_batch(seed: u64, policy: &LinearPolicy, n: usize) -> Vec<PolicySample> {
    let mut r = rng(seed ^ 0xBA7C);
    (0..n)
        .map(|_| {
            let s = random_features(&mut r, policy.features());
            let a = Strategy::ALL[r.random_range(0..3)];
            let shift: f64 = r.random_range(-0.4..0.4);
            PolicySample {
                old_logprob: policy.log_prob(&s, a) + shift,
                s,
                a,
                advantage: r.random_range(-2.0..2.0),
                weight: r.random_range(0.1..1.0),
            }
        })
        .collect()
}

pub fn random_transitions(seed: u64, f: usize, n: usize) -> Vec<Transition> {
    let mut r = rng(seed ^ 0x7A5);
    (0..n)
        .map(|_| Transition {
            s: random_features(&mut r, f),
            a: Strategy::ALL[r.random_range(0..3)],
            r: r.random_range(-1.0..1.0),
            s_next: random_features(&mut r, f),
            done: r.random_bool(0.3),
            delta: 0.0,
            inserted_at: 0,
            old_logprob: 0.0,
        })
        .collect()
}

/// Central-difference gradient of the policy objective, flattened as
/// weights (row-major) then bias.
pub fn fd_policy_gradient(
    policy: &LinearPolicy,
    reference: &LinearPolicy,
    batch: &[PolicySample],
    cfg: &TrainConfig,
    h: f64,
) -> Vec<f64> {
    let nw = policy.weights.as_slice().len();
    let mut out = Vec::with_capacity(nw + policy.bias.len());
    for i in 0..nw + policy.bias.len() {
        let mut up = policy.clone();
        let mut down = policy.clone();
        if i < nw {
            up.weights.as_mut_slice()[i] += h;
            down.weights.as_mut_slice()[i] -= h;
        } else {
            up.bias[i - nw] += h;
            down.bias[i - nw] -= h;
        }
        out.push((policy_objective(&up, reference, batch, cfg) - policy_objective(&down, reference, batch, cfg)) / (2.0 * h));
    }
    out
}

pub fn fd_value_gradient(value: &LinearValue, batch: &[Transition], cfg: &TrainConfig, h: f64) -> Vec<f64> {
    let n = value.weights.len();
    (0..=n)
        .map(|i| {
            let mut up = value.clone();
            let mut down = value.clone();
            if i < n {
                up.weights[i] += h;
                down.weights[i] -= h;
            } else {
                up.bias += h;
                down.bias -= h;
            }
            (value_loss(&up, batch, cfg) - value_loss(&down, batch, cfg)) / (2.0 * h)
        })
        .collect()
}

/// Max-norm relative error between two gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Plain SSIM, window by window, written from the textbook definition.
pub fn ssim_oracle(a: &ToyImage, b: &ToyImage) -> f64 {
    let (k1, k2, l) = (0.01f64, 0.03f64, 1.0f64);
    let (c1, c2) = ((k1 * l).powi(2), (k2 * l).powi(2));
    let mut vals = Vec::new();
    for c in 0..a.channels {
        let mut y0 = 0;
        while y0 + 8 <= a.height {
            let mut x0 = 0;
            while x0 + 8 <= a.width {
                let mut pa = Vec::new();
                let mut pb = Vec::new();
                for y in y0..y0 + 8 {
                    for x in x0..x0 + 8 {
                        pa.push(a.get(y, x, c));
                        pb.push(b.get(y, x, c));
                    }
                }
                let n = pa.len() as f64;
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cov = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
                vals.push(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
                x0 += 4;
            }
            y0 += 4;
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn noisy(base: &ToyImage, sigma: f64, seed: u64) -> ToyImage {
    let mut r = rng(seed);
    let data = base
        .data
        .iter()
        .map(|v| (v + sigma * r.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
        .collect();
    ToyImage::new(base.height, base.width, base.channels, data).unwrap()
}
