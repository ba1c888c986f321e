//! Similarity reward and Gaussian mutual-information estimation.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::generator::{image_embedding, ToyImage};
use crate::linalg::{cosine, Matrix};
use crate::prompt::{prompt_embedding, Prompt};

/// Default ridge added to every covariance before taking determinants.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Toy CLIP score: cosine between the image and prompt embeddings.
pub fn clip_score(img: &ToyImage, p: &Prompt) -> Result<f64> {
    let pe = prompt_embedding(p)?;
    let ie = image_embedding(img, pe.len())?;
    cosine(&ie, &pe).ok_or(Error::DegenerateEmbedding("zero-norm embedding"))
}

/// Unbiased sample covariance (divisor `N - 1`).
pub fn covariance(samples: &[Vec<f64>]) -> Result<Matrix> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::DimError("samples differ in dimension".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                let v = cov.get(a, b) + centered[a] * centered[b];
                cov.set(a, b, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

/// Marginal and joint covariances of paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_x: Matrix,
    pub sigma_y: Matrix,
    /// Covariance of the concatenation `[x; y]`.
    pub sigma_z: Matrix,
    pub n: usize,
    pub ridge: f64,
}

impl CovarianceEstimate {
    pub fn from_samples(xs: &[Vec<f64>], ys: &[Vec<f64>], ridge: f64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimError(format!(
                "{} x samples but {} y samples",
                xs.len(),
                ys.len()
            )));
        }
        let joint: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| [x.as_slice(), y].concat()).collect();
        Ok(Self {
            sigma_x: covariance(xs)?,
            sigma_y: covariance(ys)?,
            sigma_z: covariance(&joint)?,
            n: xs.len(),
            ridge,
        })
    }
}

fn log_det_pd(m: &Matrix, ridge: f64, which: &'static str) -> Result<f64> {
    let mut dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    for i in 0..m.rows() {
        dm[(i, i)] += ridge;
    }
    let chol = Cholesky::new(dm).ok_or(Error::SingularCovariance(which))?;
    let ld: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    if !ld.is_finite() {
        return Err(Error::SingularCovariance(which));
    }
    Ok(ld)
}

/// `0.5 * ln(det(Sx) det(Sy) / det(Sz))` in nats, after adding the ridge.
pub fn gaussian_mi(est: &CovarianceEstimate) -> Result<f64> {
    let lx = log_det_pd(&est.sigma_x, est.ridge, "sigma_x")?;
    let ly = log_det_pd(&est.sigma_y, est.ridge, "sigma_y")?;
    let lz = log_det_pd(&est.sigma_z, est.ridge, "sigma_z")?;
    Ok(0.5 * (lx + ly - lz))
}

/// Gaussian MI between paired samples.
pub fn empirical_mi(xs: &[Vec<f64>], ys: &[Vec<f64>], ridge: f64) -> Result<f64> {
    let d = xs
        .first()
        .map_or(0, Vec::len)
        .max(ys.first().map_or(0, Vec::len));
    let needed = d + 2;
    if xs.len() < needed || ys.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: xs.len().min(ys.len()),
        });
    }
    gaussian_mi(&CovarianceEstimate::from_samples(xs, ys, ridge)?)
}
