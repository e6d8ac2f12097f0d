//! Rectified-flow samplers over an abstract velocity field.
//!
//! All samplers walk a [`TimeSchedule`] from its top time down to the `t = 0`
//! sentinel, one velocity evaluation per step plus any look-ahead
//! evaluations, and every evaluation goes through an [`NfeCounter`].
//!
//! Randomness comes from ChaCha8 streams derived from one seed: the initial
//! noise, the outer SDE steps and the look-ahead steps each get their own
//! stream, so switching travel on or off never shifts the outer noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{GaussianMixture, IsotropicGaussian};
use crate::freq::LowPass;
use crate::par;

pub type SamplerRng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_OUTER: u64 = 1;
pub const STREAM_INNER: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("SDE step requested at t = 0")]
    ZeroTime,
    #[error("travel interval and depth must be at least 1 (got s = {s}, l = {l})")]
    InvalidTravelParams { s: usize, l: usize },
    #[error("refine steps {k} must be smaller than the stage-2 step count {n}")]
    BadRefineSteps { k: usize, n: usize },
    #[error("low-pass operator does not accept a latent of length {0}")]
    OperatorShapeMismatch(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// A deterministic velocity model `v(z, t)`.
///
/// Implementations must be callable from several threads at once; samplers
/// themselves are single-threaded per run.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64>;

    /// Model calls consumed by one [`VelocityField::velocity`] call.
    fn evals_per_call(&self) -> u64 {
        1
    }
}

impl VelocityField for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        self.oracle_velocity(z, t).expect("sampler checked time and dimension")
    }
}

impl VelocityField for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        IsotropicGaussian::velocity(self, z, t)
    }
}

impl<V: VelocityField + ?Sized> VelocityField for &V {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        (**self).velocity(z, t)
    }

    fn evals_per_call(&self) -> u64 {
        (**self).evals_per_call()
    }
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> VelocityField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        (self.f)(z, t)
    }
}

/// `v_u + scale·(v_c − v_u)`.
pub fn cfg_velocity(v_cond: &[f64], v_uncond: &[f64], scale: f64) -> Result<Vec<f64>, SamplerError> {
    if v_cond.len() != v_uncond.len() {
        return Err(SamplerError::DimensionMismatch {
            expected: v_cond.len(),
            got: v_uncond.len(),
        });
    }
    Ok(v_cond.iter().zip(v_uncond).map(|(c, u)| u + scale * (c - u)).collect())
}

/// Classifier-free guidance over a conditional and an unconditional field;
/// each call costs both evaluations.
pub struct CfgField<C, U> {
    pub cond: C,
    pub uncond: U,
    pub scale: f64,
}

impl<C: VelocityField, U: VelocityField> CfgField<C, U> {
    pub fn new(cond: C, uncond: U, scale: f64) -> Result<Self, SamplerError> {
        if cond.dim() != uncond.dim() {
            return Err(SamplerError::DimensionMismatch {
                expected: cond.dim(),
                got: uncond.dim(),
            });
        }
        Ok(CfgField { cond, uncond, scale })
    }
}

impl<C: VelocityField, U: VelocityField> VelocityField for CfgField<C, U> {
    fn dim(&self) -> usize {
        self.cond.dim()
    }

    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        let vc = self.cond.velocity(z, t);
        let vu = self.uncond.velocity(z, t);
        cfg_velocity(&vc, &vu, self.scale).expect("dimensions checked at construction")
    }

    fn evals_per_call(&self) -> u64 {
        self.cond.evals_per_call() + self.uncond.evals_per_call()
    }
}

/// Running count of model evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NfeCounter {
    count: u64,
}

impl NfeCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn eval<V: VelocityField + ?Sized>(&mut self, field: &V, z: &[f64], t: f64) -> Vec<f64> {
        self.count += field.evals_per_call();
        field.velocity(z, t)
    }
}

/// Total evaluations recorded by `counter`.
pub fn nfe_report(counter: &NfeCounter) -> u64 {
    counter.count()
}

/// Times `t_0 < t_1 < … < t_{N−1}` in `[0, 1]`; samplers visit them from the
/// top down and finish with a step to the sentinel `t_{−1} = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeSchedule {
    /// Ascending; `ascending[i] = t_i`.
    ascending: Vec<f64>,
}

impl TimeSchedule {
    /// `t_i = (i + 1)/n`, starting at pure noise.
    pub fn uniform(n: usize) -> Result<Self, SamplerError> {
        if n == 0 {
            return Err(SamplerError::EmptySchedule);
        }
        Ok(TimeSchedule {
            ascending: (0..n).map(|i| (i + 1) as f64 / n as f64).collect(),
        })
    }

    /// Times in visiting order, i.e. strictly decreasing.
    pub fn from_times(visit_order: &[f64]) -> Result<Self, SamplerError> {
        if visit_order.is_empty() {
            return Err(SamplerError::EmptySchedule);
        }
        if let Some(t) = visit_order.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(SamplerError::InvalidSchedule(format!("time {t} outside [0, 1]")));
        }
        if visit_order.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SamplerError::InvalidSchedule(
                "times must be strictly decreasing".into(),
            ));
        }
        Ok(TimeSchedule {
            ascending: visit_order.iter().rev().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ascending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ascending.is_empty()
    }

    /// `t_i`.
    pub fn t(&self, i: usize) -> f64 {
        self.ascending[i]
    }

    /// `t_{i−1}`, with `t_{−1} = 0`.
    pub fn t_prev(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.ascending[i - 1]
        }
    }

    pub fn top(&self) -> f64 {
        *self.ascending.last().expect("non-empty")
    }

    pub fn visit_order(&self) -> Vec<f64> {
        self.ascending.iter().rev().copied().collect()
    }
}

impl TryFrom<Vec<f64>> for TimeSchedule {
    type Error = SamplerError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_times(&v)
    }
}

impl From<TimeSchedule> for Vec<f64> {
    fn from(s: TimeSchedule) -> Self {
        s.visit_order()
    }
}

fn default_eta() -> f64 {
    0.2
}
fn default_travel() -> usize {
    5
}
fn default_cfg_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_travel")]
    pub travel_interval: usize,
    #[serde(default = "default_travel")]
    pub travel_depth: usize,
    #[serde(default)]
    pub refine_steps: usize,
    #[serde(default = "default_cfg_scale")]
    pub cfg_scale: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            eta: default_eta(),
            travel_interval: default_travel(),
            travel_depth: default_travel(),
            refine_steps: 0,
            cfg_scale: default_cfg_scale(),
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(SamplerError::InvalidConfig(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(SamplerError::InvalidConfig(format!(
                "cfg_scale must be finite and >= 0, got {}",
                self.cfg_scale
            )));
        }
        if self.travel_interval == 0 || self.travel_depth == 0 {
            return Err(SamplerError::InvalidTravelParams {
                s: self.travel_interval,
                l: self.travel_depth,
            });
        }
        Ok(())
    }
}

/// The generator for one named stream of one seed.
pub fn stream_rng(seed: u64, stream: u64) -> SamplerRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut SamplerRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Initial latent for `seed`, drawn from the seed's init stream.
pub fn initial_noise(seed: u64, dim: usize) -> Vec<f64> {
    standard_normal(&mut stream_rng(seed, STREAM_INIT), dim)
}

fn check_start<V: VelocityField + ?Sized>(field: &V, schedule: &TimeSchedule, z: &[f64]) -> Result<(), SamplerError> {
    if schedule.is_empty() {
        return Err(SamplerError::EmptySchedule);
    }
    if z.len() != field.dim() {
        return Err(SamplerError::DimensionMismatch {
            expected: field.dim(),
            got: z.len(),
        });
    }
    Ok(())
}

fn euler_update(z: &[f64], v: &[f64], dt: f64) -> Vec<f64> {
    z.iter().zip(v).map(|(z, v)| z + dt * v).collect()
}

/// Euler integration down the schedule; exactly `N` evaluations.
pub fn euler_ode_sample<V: VelocityField + ?Sized>(
    field: &V,
    schedule: &TimeSchedule,
    z_init: &[f64],
    counter: &mut NfeCounter,
) -> Result<Vec<f64>, SamplerError> {
    check_start(field, schedule, z_init)?;
    let mut z = z_init.to_vec();
    for i in (0..schedule.len()).rev() {
        let (t, tp) = (schedule.t(i), schedule.t_prev(i));
        let v = counter.eval(field, &z, t);
        z = euler_update(&z, &v, tp - t);
    }
    Ok(z)
}

/// One SDE update from `t_i` to `t_{i−1}` given the velocity `v` at `(z, t_i)`.
///
/// With `eta == 0` this is the Euler update and no random numbers are drawn.
pub fn sde_update(
    z: &[f64],
    v: &[f64],
    t_i: f64,
    t_prev: f64,
    eta: f64,
    rng: &mut SamplerRng,
) -> Result<Vec<f64>, SamplerError> {
    if t_i == 0.0 {
        return Err(SamplerError::ZeroTime);
    }
    let dt = t_prev - t_i;
    if eta == 0.0 {
        return Ok(euler_update(z, v, dt));
    }
    let noise_scale = eta * dt.abs().sqrt();
    let drift_scale = 0.5 * eta * eta / (t_i * t_i);
    Ok(z.iter()
        .zip(v)
        .map(|(z, v)| {
            let z0 = z - t_i * v;
            let beta = drift_scale * (z - z0);
            let n: f64 = StandardNormal.sample(rng);
            z + dt * v + beta * dt + noise_scale * n
        })
        .collect())
}

/// Evaluates the field and takes one [`sde_update`].
#[allow(clippy::too_many_arguments)]
pub fn sde_step<V: VelocityField + ?Sized>(
    field: &V,
    z: &[f64],
    t_i: f64,
    t_prev: f64,
    eta: f64,
    rng: &mut SamplerRng,
    counter: &mut NfeCounter,
) -> Result<Vec<f64>, SamplerError> {
    if t_i == 0.0 {
        return Err(SamplerError::ZeroTime);
    }
    let v = counter.eval(field, z, t_i);
    sde_update(z, &v, t_i, t_prev, eta, rng)
}

/// SDE sampling down the schedule. A step that starts at `t = 0` has zero
/// length and is taken as a plain Euler step.
pub fn sde_sample<V: VelocityField + ?Sized>(
    field: &V,
    schedule: &TimeSchedule,
    z_init: &[f64],
    eta: f64,
    seed: u64,
    counter: &mut NfeCounter,
) -> Result<Vec<f64>, SamplerError> {
    check_start(field, schedule, z_init)?;
    let mut rng = stream_rng(seed, STREAM_OUTER);
    let mut z = z_init.to_vec();
    for i in (0..schedule.len()).rev() {
        let (t, tp) = (schedule.t(i), schedule.t_prev(i));
        let v = counter.eval(field, &z, t);
        z = if t == 0.0 {
            euler_update(&z, &v, tp - t)
        } else {
            sde_update(&z, &v, t, tp, eta, &mut rng)?
        };
    }
    Ok(z)
}

/// Time-travel SDE sampling.
///
/// Every outer index `i > 0` with `i % s == 0` runs a look-ahead from the
/// freshly stepped state: SDE steps over `t_{i−1} … t_{k_max+1}`, then one
/// evaluation at `t_{k_max}` with `k_max = max(i − l, 0)`. That final velocity
/// replaces the outer one and the step from `t_i` is recommitted from the
/// state before it, deterministically.
pub fn tts_sde_sample<V: VelocityField + ?Sized>(
    field: &V,
    schedule: &TimeSchedule,
    z_init: &[f64],
    config: &SamplerConfig,
    counter: &mut NfeCounter,
) -> Result<Vec<f64>, SamplerError> {
    config.validate()?;
    check_start(field, schedule, z_init)?;
    let (s, l, eta) = (config.travel_interval, config.travel_depth, config.eta);
    let mut outer = stream_rng(config.rng_seed, STREAM_OUTER);
    let mut inner = stream_rng(config.rng_seed, STREAM_INNER);
    let mut z = z_init.to_vec();
    for i in (0..schedule.len()).rev() {
        let (t, tp) = (schedule.t(i), schedule.t_prev(i));
        let v = counter.eval(field, &z, t);
        if t == 0.0 {
            z = euler_update(&z, &v, tp - t);
            continue;
        }
        let stepped = sde_update(&z, &v, t, tp, eta, &mut outer)?;
        if i > 0 && i % s == 0 {
            let k_max = i.saturating_sub(l);
            let mut zk = stepped;
            let mut v_hat = Vec::new();
            for k in (k_max..i).rev() {
                let vk = counter.eval(field, &zk, schedule.t(k));
                if k > k_max {
                    zk = sde_update(&zk, &vk, schedule.t(k), schedule.t_prev(k), eta, &mut inner)?;
                } else {
                    v_hat = vk;
                }
            }
            z = euler_update(&z, &v_hat, tp - t);
        } else {
            z = stepped;
        }
    }
    Ok(z)
}

/// `B((1 − t)·z_orig + t·z_noise) + (z − B(z))`: low band from the stage-1
/// path, high band from the current latent.
pub fn aam_recompose<B: LowPass + ?Sized>(b: &B, z: &[f64], z_orig: &[f64], z_noise: &[f64], t: f64) -> Vec<f64> {
    let target: Vec<f64> = z_orig.iter().zip(z_noise).map(|(o, n)| (1.0 - t) * o + t * n).collect();
    let low_target = b.low_pass(&target);
    let low_z = b.low_pass(z);
    low_target
        .iter()
        .zip(z.iter().zip(&low_z))
        .map(|(lt, (z, lz))| lt + (z - lz))
        .collect()
}

/// Two-stage anti-artifact sampling.
///
/// Stage 1 is a full Euler pass of `field1` from `z_noise`. Stage 2 restarts
/// from the same `z_noise` with `field2`; at its first `k` steps the latent
/// is recomposed with [`aam_recompose`] before the evaluation.
#[allow(clippy::too_many_arguments)]
pub fn aam_sample<V1, V2, B>(
    field1: &V1,
    field2: &V2,
    schedule1: &TimeSchedule,
    schedule2: &TimeSchedule,
    b: &B,
    k: usize,
    z_noise: &[f64],
    counter: &mut NfeCounter,
) -> Result<Vec<f64>, SamplerError>
where
    V1: VelocityField + ?Sized,
    V2: VelocityField + ?Sized,
    B: LowPass + ?Sized,
{
    check_start(field2, schedule2, z_noise)?;
    let n2 = schedule2.len();
    if k >= n2 {
        return Err(SamplerError::BadRefineSteps { k, n: n2 });
    }
    if !b.accepts(z_noise.len()) {
        return Err(SamplerError::OperatorShapeMismatch(z_noise.len()));
    }
    let z_orig = euler_ode_sample(field1, schedule1, z_noise, counter)?;
    let mut z = z_noise.to_vec();
    for i in (0..n2).rev() {
        let (t, tp) = (schedule2.t(i), schedule2.t_prev(i));
        if i >= n2 - k {
            z = aam_recompose(b, &z, &z_orig, z_noise, t);
        }
        let v = counter.eval(field2, &z, t);
        z = euler_update(&z, &v, tp - t);
    }
    Ok(z)
}

/// One finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub seed: u64,
    pub sample: Vec<f64>,
    pub nfe: u64,
}

/// Runs `run(seed, counter)` for every seed in parallel, each with its own
/// counter; results keep the seed order.
pub fn run_seeds<F>(seeds: &[u64], run: F) -> Result<Vec<SampleRun>, SamplerError>
where
    F: Fn(u64, &mut NfeCounter) -> Result<Vec<f64>, SamplerError> + Sync + Send,
{
    par::map_slice(seeds, |&seed| {
        let mut counter = NfeCounter::new();
        let sample = run(seed, &mut counter)?;
        Ok(SampleRun {
            seed,
            sample,
            nfe: counter.count(),
        })
    })
    .into_iter()
    .collect()
}

/// Empirical mean and (population) covariance of equal-length samples.
pub fn empirical_moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = samples.len().max(1) as f64;
    let d = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::DenseProjector;
    use proptest::prelude::*;

    fn zero_field(dim: usize) -> FnField<impl Fn(&[f64], f64) -> Vec<f64> + Sync> {
        FnField::new(dim, move |_: &[f64], _| vec![0.0; dim])
    }

    fn dirac(c: &[f64]) -> IsotropicGaussian {
        IsotropicGaussian {
            mean: c.to_vec(),
            sigma: 1e-6,
        }
    }

    fn gaussian_2d() -> GaussianMixture {
        GaussianMixture::new(vec![(1.0, vec![0.5, -0.3], vec![vec![0.5, 0.1], vec![0.1, 0.3]])]).unwrap()
    }

    #[test]
    fn schedules() {
        let s = TimeSchedule::uniform(4).unwrap();
        assert_eq!(s.visit_order(), vec![1.0, 0.75, 0.5, 0.25]);
        assert_eq!((s.t(0), s.t_prev(0), s.t_prev(3)), (0.25, 0.0, 0.75));
        assert_eq!(TimeSchedule::uniform(0), Err(SamplerError::EmptySchedule));
        assert!(TimeSchedule::from_times(&[1.0, 0.5, 0.5]).is_err());
        assert!(TimeSchedule::from_times(&[1.2, 0.5]).is_err());
        assert_eq!(TimeSchedule::from_times(&[]), Err(SamplerError::EmptySchedule));
        let json: TimeSchedule = serde_json::from_str("[0.9, 0.4, 0.0]").unwrap();
        assert_eq!(json.t(0), 0.0);
        assert_eq!(serde_json::to_string(&json).unwrap(), "[0.9,0.4,0.0]");
    }

    #[test]
    fn cfg_combination() {
        let (c, u) = ([2.0, 0.0], [0.0, 0.0]);
        assert_eq!(cfg_velocity(&c, &u, 3.0).unwrap(), vec![6.0, 0.0]);
        assert_eq!(cfg_velocity(&[1.5, -2.0], &[0.3, 0.7], 1.0).unwrap(), vec![1.5, -2.0]);
        assert_eq!(cfg_velocity(&[1.5, -2.0], &[0.3, 0.7], 0.0).unwrap(), vec![0.3, 0.7]);
        assert!(matches!(
            cfg_velocity(&[1.0], &[1.0, 2.0], 1.0),
            Err(SamplerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn euler_constant_field_and_nfe() {
        let f = zero_field(3);
        let mut c = NfeCounter::new();
        let z = euler_ode_sample(&f, &TimeSchedule::uniform(7).unwrap(), &[1.0, -2.0, 3.0], &mut c).unwrap();
        assert_eq!(z, vec![1.0, -2.0, 3.0]);
        assert_eq!(nfe_report(&c), 7);
        let empty = TimeSchedule { ascending: vec![] };
        assert_eq!(
            euler_ode_sample(&f, &empty, &[0.0; 3], &mut c),
            Err(SamplerError::EmptySchedule)
        );
        assert!(matches!(
            euler_ode_sample(&f, &TimeSchedule::uniform(2).unwrap(), &[0.0; 2], &mut c),
            Err(SamplerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn euler_one_step_lands_on_dirac() {
        let c = [0.7, -1.2];
        let mut n = NfeCounter::new();
        let z = euler_ode_sample(&dirac(&c), &TimeSchedule::uniform(1).unwrap(), &[0.3, 0.9], &mut n).unwrap();
        for i in 0..2 {
            assert!((z[i] - c[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn euler_schedule_ending_at_zero_keeps_n_evaluations() {
        let s = TimeSchedule::from_times(&[1.0, 0.5, 0.0]).unwrap();
        let mut n = NfeCounter::new();
        let g = gaussian_2d();
        let z = euler_ode_sample(&g, &s, &[0.1, 0.2], &mut n).unwrap();
        assert_eq!(n.count(), 3);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn euler_single_gaussian_moments() {
        let g = gaussian_2d();
        let sched = TimeSchedule::uniform(50).unwrap();
        let seeds: Vec<u64> = (0..10_000).collect();
        let runs = run_seeds(&seeds, |seed, c| {
            euler_ode_sample(&g, &sched, &initial_noise(seed, 2), c)
        })
        .unwrap();
        let samples: Vec<_> = runs.into_iter().map(|r| r.sample).collect();
        let (mean, cov) = empirical_moments(&samples);
        let target = g.covariance();
        assert!((mean[0] - 0.5).abs() < 0.05 && (mean[1] + 0.3).abs() < 0.05);
        let mut diff = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                diff += (cov[i][j] - target[(i, j)]).powi(2);
            }
        }
        assert!(diff.sqrt() / target.norm() < 0.1);
    }

    #[test]
    fn sde_eta_zero_is_euler() {
        let z = [0.4, -0.1];
        let v = [1.5, 0.25];
        let mut rng = stream_rng(9, STREAM_OUTER);
        let before = rng.clone();
        let out = sde_update(&z, &v, 0.6, 0.4, 0.0, &mut rng).unwrap();
        assert_eq!(out, euler_update(&z, &v, 0.4 - 0.6));
        assert_eq!(rng, before);
        assert_eq!(sde_update(&z, &v, 0.0, 0.0, 0.2, &mut rng), Err(SamplerError::ZeroTime));
        let mut c = NfeCounter::new();
        assert_eq!(
            sde_step(&zero_field(2), &z, 0.0, 0.0, 0.2, &mut rng, &mut c),
            Err(SamplerError::ZeroTime)
        );
    }

    #[test]
    fn sde_pure_noise_variance() {
        let mut rng = stream_rng(3, STREAM_OUTER);
        let (t, tp) = (0.5, 0.3);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let out = sde_update(&[1.0], &[0.0], t, tp, 1.0, &mut rng).unwrap();
            let d = out[0] - 1.0;
            sum += d;
            sq += d * d;
        }
        let var = sq / n as f64 - (sum / n as f64).powi(2);
        let want = (tp - t).abs();
        assert!((var.sqrt() / want.sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn sde_drift_identity() {
        let (z, v, t, tp, eta) = (0.83_f64, -1.7_f64, 0.42_f64, 0.36_f64, 0.2_f64);
        let z0 = z - t * v;
        let via_z0 = 0.5 * eta * eta * (z - z0) / (t * t) * (tp - t);
        let via_v = 0.5 * eta * eta * v / t * (tp - t);
        assert!((via_z0 - via_v).abs() < 1e-12);
    }

    #[test]
    fn tts_without_travel_is_euler() {
        let g = gaussian_2d();
        let sched = TimeSchedule::uniform(12).unwrap();
        let cfg = SamplerConfig {
            eta: 0.0,
            travel_interval: 100,
            ..Default::default()
        };
        for seed in 0..20 {
            let z0 = initial_noise(seed, 2);
            let (mut a, mut b) = (NfeCounter::new(), NfeCounter::new());
            let euler = euler_ode_sample(&g, &sched, &z0, &mut a).unwrap();
            let tts = tts_sde_sample(
                &g,
                &sched,
                &z0,
                &SamplerConfig {
                    rng_seed: seed,
                    ..cfg.clone()
                },
                &mut b,
            )
            .unwrap();
            assert_eq!(euler, tts);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tts_one_step_lookahead_matches_reference() {
        let g = gaussian_2d();
        let sched = TimeSchedule::uniform(4).unwrap();
        let cfg = SamplerConfig {
            eta: 0.0,
            travel_interval: 1,
            travel_depth: 1,
            ..Default::default()
        };
        let z0 = [0.9, -0.4];
        let mut c = NfeCounter::new();
        let got = tts_sde_sample(&g, &sched, &z0, &cfg, &mut c).unwrap();

        let ts = [0.25, 0.5, 0.75, 1.0];
        let mut z = z0.to_vec();
        for i in (0..4).rev() {
            let (t, tp) = (ts[i], if i == 0 { 0.0 } else { ts[i - 1] });
            let v = g.oracle_velocity(&z, t).unwrap();
            if i > 0 {
                let ahead: Vec<f64> = z.iter().zip(&v).map(|(z, v)| z + (tp - t) * v).collect();
                let v_ahead = g.oracle_velocity(&ahead, tp).unwrap();
                z = z.iter().zip(&v_ahead).map(|(z, v)| z + (tp - t) * v).collect();
            } else {
                z = z.iter().zip(&v).map(|(z, v)| z + (tp - t) * v).collect();
            }
        }
        assert_eq!(got, z);
        assert_eq!(c.count(), 4 + 3);
    }

    #[test]
    fn tts_rejects_bad_params() {
        let cfg = SamplerConfig {
            travel_depth: 0,
            ..Default::default()
        };
        let mut c = NfeCounter::new();
        assert!(matches!(
            tts_sde_sample(&zero_field(1), &TimeSchedule::uniform(3).unwrap(), &[0.0], &cfg, &mut c),
            Err(SamplerError::InvalidTravelParams { .. })
        ));
    }

    #[test]
    fn tts_dirac_mean() {
        let c = [0.6, -0.4];
        let f = dirac(&c);
        let sched = TimeSchedule::uniform(50).unwrap();
        let seeds: Vec<u64> = (0..10_000).collect();
        let runs = run_seeds(&seeds, |seed, n| {
            let cfg = SamplerConfig {
                rng_seed: seed,
                ..Default::default()
            };
            tts_sde_sample(&f, &sched, &initial_noise(seed, 2), &cfg, n)
        })
        .unwrap();
        let samples: Vec<_> = runs.into_iter().map(|r| r.sample).collect();
        let (mean, _) = empirical_moments(&samples);
        assert!(
            (mean[0] - c[0]).abs() < 0.05 && (mean[1] - c[1]).abs() < 0.05,
            "{mean:?}"
        );
    }

    #[test]
    fn tts_is_deterministic() {
        let g = gaussian_2d();
        let sched = TimeSchedule::uniform(20).unwrap();
        let cfg = SamplerConfig {
            rng_seed: 42,
            ..Default::default()
        };
        let run = || tts_sde_sample(&g, &sched, &initial_noise(42, 2), &cfg, &mut NfeCounter::new()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn aam_k_zero_is_stage_two_euler() {
        let g = gaussian_2d();
        let other = g.shifted(&[0.3, 0.3]).unwrap();
        let (s1, s2) = (TimeSchedule::uniform(10).unwrap(), TimeSchedule::uniform(8).unwrap());
        let z0 = initial_noise(5, 2);
        let mut c = NfeCounter::new();
        let aam = aam_sample(&other, &g, &s1, &s2, &DenseProjector::averaging(2), 0, &z0, &mut c).unwrap();
        let euler = euler_ode_sample(&g, &s2, &z0, &mut NfeCounter::new()).unwrap();
        assert_eq!(aam, euler);
        assert_eq!(c.count(), 18);
    }

    #[test]
    fn aam_identity_operator_collapses_to_interpolation() {
        let z = [0.3, -0.8, 1.1];
        let orig = [1.0, 2.0, 3.0];
        let noise = [-0.5, 0.25, 0.75];
        let t = 0.8;
        let out = aam_recompose(&DenseProjector::identity(3), &z, &orig, &noise, t);
        for i in 0..3 {
            assert_eq!(out[i], (1.0 - t) * orig[i] + t * noise[i]);
        }
    }

    #[test]
    fn aam_frequency_split() {
        let b = DenseProjector::averaging(4);
        let z = [0.3, -0.8, 1.1, 0.2];
        let orig = [1.0, 2.0, 3.0, -1.0];
        let noise = [-0.5, 0.25, 0.75, 0.1];
        let t = 0.6;
        let out = aam_recompose(&b, &z, &orig, &noise, t);
        let target: Vec<f64> = (0..4).map(|i| (1.0 - t) * orig[i] + t * noise[i]).collect();
        let (lo_out, lo_target) = (b.low_pass(&out), b.low_pass(&target));
        let lo_z = b.low_pass(&z);
        for i in 0..4 {
            assert!((lo_out[i] - lo_target[i]).abs() < 1e-5);
            assert!(((out[i] - lo_out[i]) - (z[i] - lo_z[i])).abs() < 1e-5);
        }
    }

    #[test]
    fn aam_errors() {
        let g = gaussian_2d();
        let s = TimeSchedule::uniform(5).unwrap();
        let z = [0.0, 0.0];
        let mut c = NfeCounter::new();
        assert_eq!(
            aam_sample(&g, &g, &s, &s, &DenseProjector::averaging(2), 5, &z, &mut c),
            Err(SamplerError::BadRefineSteps { k: 5, n: 5 })
        );
        assert_eq!(
            aam_sample(&g, &g, &s, &s, &DenseProjector::averaging(3), 1, &z, &mut c),
            Err(SamplerError::OperatorShapeMismatch(2))
        );
    }

    #[test]
    fn cfg_nfe_totals() {
        let g = gaussian_2d();
        let guided = CfgField::new(&g, &g, 4.0).unwrap();
        let fifty = TimeSchedule::uniform(50).unwrap();
        let thirty = TimeSchedule::uniform(30).unwrap();
        let z = [0.1, 0.1];

        let mut c = NfeCounter::new();
        euler_ode_sample(&guided, &fifty, &z, &mut c).unwrap();
        assert_eq!(nfe_report(&c), 100);

        let mut c = NfeCounter::new();
        euler_ode_sample(&g, &fifty, &z, &mut c).unwrap();
        assert_eq!(nfe_report(&c), 50);

        let mut c = NfeCounter::new();
        aam_sample(
            &g,
            &guided,
            &thirty,
            &thirty,
            &DenseProjector::averaging(2),
            5,
            &z,
            &mut c,
        )
        .unwrap();
        assert_eq!(nfe_report(&c), 90);
    }

    #[test]
    fn config_json_defaults() {
        let c: SamplerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, SamplerConfig::default());
        assert_eq!((c.travel_interval, c.travel_depth, c.eta), (5, 5, 0.2));
        assert!(serde_json::from_str::<SamplerConfig>(r#"{"eta": 0.1, "bogus": 1}"#).is_err());
        assert!(SamplerConfig { eta: -1.0, ..c }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nfe_matches_closed_form(n in 1usize..40, s in 1usize..12, l in 1usize..12, cfg in any::<bool>(), k_frac in 0.0f64..1.0) {
            let f = zero_field(2);
            let guided = CfgField::new(zero_field(2), zero_field(2), 2.0).unwrap();
            let per: u64 = if cfg { 2 } else { 1 };
            let sched = TimeSchedule::uniform(n).unwrap();
            let z = [0.5, -0.5];
            let run_euler = |c: &mut NfeCounter| if cfg {
                euler_ode_sample(&guided, &sched, &z, c)
            } else {
                euler_ode_sample(&f, &sched, &z, c)
            };
            let mut c = NfeCounter::new();
            run_euler(&mut c).unwrap();
            prop_assert_eq!(c.count(), per * n as u64);

            let config = SamplerConfig { travel_interval: s, travel_depth: l, ..Default::default() };
            let mut c = NfeCounter::new();
            if cfg {
                tts_sde_sample(&guided, &sched, &z, &config, &mut c).unwrap();
            } else {
                tts_sde_sample(&f, &sched, &z, &config, &mut c).unwrap();
            }
            let travel: usize = (1..n).filter(|i| i % s == 0).map(|i| l.min(i)).sum();
            prop_assert_eq!(c.count(), per * (n + travel) as u64);

            let k = ((n as f64) * k_frac) as usize;
            let mut c = NfeCounter::new();
            aam_sample(&f, &guided, &sched, &sched, &DenseProjector::averaging(2), k.min(n - 1), &z, &mut c).unwrap();
            prop_assert_eq!(c.count(), 3 * n as u64);
        }

        #[test]
        fn seeds_are_reproducible(seed in any::<u64>()) {
            prop_assert_eq!(initial_noise(seed, 4), initial_noise(seed, 4));
            let a = sde_sample(&gaussian_2d(), &TimeSchedule::uniform(6).unwrap(), &initial_noise(seed, 2), 0.3, seed, &mut NfeCounter::new()).unwrap();
            let b = sde_sample(&gaussian_2d(), &TimeSchedule::uniform(6).unwrap(), &initial_noise(seed, 2), 0.3, seed, &mut NfeCounter::new()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
