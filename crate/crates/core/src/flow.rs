//! Rectified-flow mathematics with an analytic velocity field.
//!
//! Convention throughout the crate: `t = 0` is data and `t = 1` is noise,
//!
//! ```text
//! z_t = (1 − t)·x + t·ε,     v*(z, t) = E[ε − x | z_t = z].
//! ```
//!
//! For a Gaussian-mixture data distribution the conditional expectation has a
//! closed form, which makes [`GaussianMixture`] a network-free stand-in for a
//! trained velocity model. Each component `k` gives
//! `z_t | k ~ N((1 − t)μ_k, (1 − t)²Σ_k + t²I)`, and `x`, `ε` are jointly
//! Gaussian with `z_t`, so both posterior means follow from one linear solve.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The oracle evaluates at `t` clamped into `[T_EPS, 1 − T_EPS]`.
pub const T_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("time {0} is outside [0, 1]")]
    TOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
}

fn check_t(t: f64) -> Result<(), FlowError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FlowError::TOutOfRange(t))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), FlowError> {
    if expected == got {
        Ok(())
    } else {
        Err(FlowError::DimensionMismatch { expected, got })
    }
}

/// `(1 − t)·x + t·ε`.
pub fn interpolate(x_data: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    check_t(t)?;
    check_dim(x_data.len(), eps.len())?;
    Ok(x_data.iter().zip(eps).map(|(x, e)| (1.0 - t) * x + t * e).collect())
}

/// Denoised estimate `x̂₀ = z − t·v`.
pub fn predict_x0(z: &[f64], v: &[f64], t: f64) -> Vec<f64> {
    z.iter().zip(v).map(|(z, v)| z - t * v).collect()
}

/// Squared error of a velocity prediction against the target `ε − x`.
pub fn rf_loss(v_pred: &[f64], x_data: &[f64], eps: &[f64]) -> Result<f64, FlowError> {
    check_dim(v_pred.len(), x_data.len())?;
    check_dim(v_pred.len(), eps.len())?;
    Ok(v_pred
        .iter()
        .zip(x_data.iter().zip(eps))
        .map(|(v, (x, e))| {
            let r = v - (e - x);
            r * r
        })
        .sum())
}

fn mean(v: &[f64]) -> Result<f64, FlowError> {
    if v.is_empty() {
        return Err(FlowError::EmptyInput);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Hinge loss of the discriminator: `E[relu(1 − D(real))] + E[relu(1 + D(fake))]`.
pub fn hinge_discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64, FlowError> {
    let real: Vec<f64> = d_real.iter().map(|d| (1.0 - d).max(0.0)).collect();
    let fake: Vec<f64> = d_fake.iter().map(|d| (1.0 + d).max(0.0)).collect();
    Ok(mean(&real)? + mean(&fake)?)
}

/// Generator side of the adversarial game: `−E[D(fake)]`.
pub fn adversarial_generator_loss(d_fake: &[f64]) -> Result<f64, FlowError> {
    Ok(-mean(d_fake)?)
}

/// `L_diffusion + λ_adv·L_adv`. No default weight is assumed.
pub fn distillation_total_loss(diffusion: f64, adversarial: f64, lambda_adv: f64) -> f64 {
    diffusion + lambda_adv * adversarial
}

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_chol: Cholesky<f64, Dyn>,
}

/// Weighted Gaussian components with symmetric positive-definite covariances.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

/// JSON shape of a mixture file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Posterior quantities of `x` and `ε` given `z_t = z`.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub responsibilities: Vec<f64>,
    pub mean_x: DVector<f64>,
    pub mean_eps: DVector<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)>) -> Result<Self, FlowError> {
        let Some(first) = components.first() else {
            return Err(FlowError::InvalidMixture("no components".into()));
        };
        let dim = first.1.len();
        if dim == 0 {
            return Err(FlowError::InvalidMixture("zero-dimensional mean".into()));
        }
        let mut total = 0.0;
        let mut out = Vec::with_capacity(components.len());
        for (k, (weight, mean, cov)) in components.into_iter().enumerate() {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(FlowError::InvalidMixture(format!("component {k}: bad weight {weight}")));
            }
            check_dim(dim, mean.len())?;
            check_dim(dim, cov.len())?;
            for row in &cov {
                check_dim(dim, row.len())?;
            }
            let cov = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
            let asym = (&cov - cov.transpose()).abs().max();
            if asym > 1e-12 * cov.abs().max().max(1.0) {
                return Err(FlowError::InvalidMixture(format!(
                    "component {k}: covariance not symmetric"
                )));
            }
            let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min_eig.is_nan() || min_eig <= 0.0 {
                return Err(FlowError::InvalidMixture(format!(
                    "component {k}: covariance not positive definite (min eigenvalue {min_eig:e})"
                )));
            }
            let cov_chol = Cholesky::new(cov.clone())
                .ok_or_else(|| FlowError::InvalidMixture(format!("component {k}: Cholesky failed")))?;
            total += weight;
            out.push(Component {
                weight,
                mean: DVector::from_vec(mean),
                cov,
                cov_chol,
            });
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(FlowError::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        Ok(GaussianMixture { dim, components: out })
    }

    pub fn from_spec(spec: MixtureSpec) -> Result<Self, FlowError> {
        Self::new(spec.components.into_iter().map(|c| (c.weight, c.mean, c.cov)).collect())
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            components: self
                .components
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov: c.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }

    /// Single isotropic Gaussian `N(mean, σ²I)`.
    pub fn isotropic(mean: Vec<f64>, sigma: f64) -> Result<Self, FlowError> {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { sigma * sigma } else { 0.0 }).collect())
            .collect();
        Self::new(vec![(1.0, mean, cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn component_mean(&self, k: usize) -> &DVector<f64> {
        &self.components[k].mean
    }

    pub fn component_cov(&self, k: usize) -> &DMatrix<f64> {
        &self.components[k].cov
    }

    /// Returns a copy with every mean shifted by `u`.
    pub fn shifted(&self, u: &[f64]) -> Result<Self, FlowError> {
        check_dim(self.dim, u.len())?;
        let u = DVector::from_column_slice(u);
        let mut out = self.clone();
        for c in &mut out.components {
            c.mean += &u;
        }
        Ok(out)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let second = self
            .components
            .iter()
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, c| {
                acc + (&c.cov + &c.mean * c.mean.transpose()) * c.weight
            });
        second - &m * m.transpose()
    }

    /// Draws `(component, x)` from the data distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.components[k];
        let n = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &c.mean + c.cov_chol.l() * n;
        (k, x.iter().copied().collect())
    }

    /// Component with the highest weighted data density at `x`.
    pub fn classify(&self, x: &[f64]) -> usize {
        let x = DVector::from_column_slice(x);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, c) in self.components.iter().enumerate() {
            let r = &x - &c.mean;
            let sol = c.cov_chol.solve(&r);
            let logdet: f64 = 2.0 * c.cov_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let lp = c.weight.ln() - 0.5 * (r.dot(&sol) + logdet);
            if lp > best.1 {
                best = (k, lp);
            }
        }
        best.0
    }

    /// Posterior responsibilities and means of `x` and `ε` given `z_t = z`.
    pub fn posterior(&self, z: &[f64], t: f64) -> Result<Posterior, FlowError> {
        check_t(t)?;
        check_dim(self.dim, z.len())?;
        let t = t.clamp(T_EPS, 1.0 - T_EPS);
        let a = 1.0 - t;
        let d = self.dim;
        let z = DVector::from_column_slice(z);

        let mut log_p = Vec::with_capacity(self.components.len());
        let mut ex = Vec::with_capacity(self.components.len());
        let mut ee = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let mut s = &c.cov * (a * a);
            for i in 0..d {
                s[(i, i)] += t * t;
            }
            let chol =
                Cholesky::new(s).ok_or_else(|| FlowError::InvalidMixture("marginal covariance not SPD".into()))?;
            let r = &z - &c.mean * a;
            let sol = chol.solve(&r);
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_p.push(c.weight.ln() - 0.5 * (r.dot(&sol) + logdet + d as f64 * (2.0 * PI).ln()));
            ex.push(&c.mean + &c.cov * &sol * a);
            ee.push(sol * t);
        }
        let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_p.iter().map(|lp| (lp - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let responsibilities: Vec<f64> = unnorm.iter().map(|u| u / total).collect();

        let mut mean_x = DVector::zeros(d);
        let mut mean_eps = DVector::zeros(d);
        for (k, r) in responsibilities.iter().enumerate() {
            mean_x += &ex[k] * *r;
            mean_eps += &ee[k] * *r;
        }
        Ok(Posterior {
            responsibilities,
            mean_x,
            mean_eps,
        })
    }

    /// Exact rectified-flow velocity `E[ε − x | z_t = z]`.
    pub fn oracle_velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        let post = self.posterior(z, t)?;
        Ok((post.mean_eps - post.mean_x).iter().copied().collect())
    }
}

/// `N(mean, σ²I)` with a per-coordinate closed-form velocity; cheap enough for
/// image-sized latents where a full mixture solve is not.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicGaussian {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl IsotropicGaussian {
    pub fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        let t = t.clamp(T_EPS, 1.0 - T_EPS);
        let a = 1.0 - t;
        let s2 = self.sigma * self.sigma;
        let s = a * a * s2 + t * t;
        z.iter()
            .zip(&self.mean)
            .map(|(z, m)| {
                let r = (z - a * m) / s;
                t * r - (m + a * s2 * r)
            })
            .collect()
    }
}
