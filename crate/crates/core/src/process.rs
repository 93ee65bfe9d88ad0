//! Self-similar Gaussian models: covariance functions, exact grid sampling
//! and numerical probes of the regularity conditions (LND), (A), (B), (C).
//!
//! All components of a `d`-dimensional process are i.i.d. copies of the
//! one-dimensional model. Sampling is exact on the uniform grid
//! `t_i = i T / n`: fractional Brownian motion goes through circulant
//! embedding of its increment sequence, every other model (and any fBm grid
//! whose embedding is not non-negative definite) through a Cholesky factor
//! of the grid Gram matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Which one-dimensional model the components follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ProcessKind {
    Fbm,
    SubFbm,
    /// Bi-fractional Brownian motion with `hurst = h_prime * k`.
    BiFbm { h_prime: f64, k: f64 },
    /// Covariance supplied at runtime through [`ProcessSpec::custom`].
    Custom { name: String },
}

type CovFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// User covariance `R(s, t)` for [`ProcessKind::Custom`].
#[derive(Clone)]
pub struct CustomCovariance(Arc<CovFn>);

impl fmt::Debug for CustomCovariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCovariance(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub hurst: f64,
    /// Overall variance multiplier. For fBm and sfBm it equals the
    /// small-increment constant of condition (B); for bi-fBm that constant is
    /// `sigma * 2^{1-K}`.
    pub sigma: f64,
    pub dim: usize,
    #[serde(skip)]
    custom: Option<CustomCovariance>,
}

impl PartialEq for ProcessSpec {
    fn eq(&self, other: &Self) -> bool {
        let same_custom = match (&self.custom, &other.custom) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(&a.0, &b.0),
            _ => false,
        };
        self.kind == other.kind
            && self.hurst == other.hurst
            && self.sigma == other.sigma
            && self.dim == other.dim
            && same_custom
    }
}

impl ProcessSpec {
    pub fn fbm(hurst: f64, sigma: f64, dim: usize) -> Result<Self> {
        Self::build(ProcessKind::Fbm, hurst, sigma, dim)
    }

    pub fn sub_fbm(hurst: f64, sigma: f64, dim: usize) -> Result<Self> {
        Self::build(ProcessKind::SubFbm, hurst, sigma, dim)
    }

    pub fn bi_fbm(h_prime: f64, k: f64, sigma: f64, dim: usize) -> Result<Self> {
        Self::build(ProcessKind::BiFbm { h_prime, k }, h_prime * k, sigma, dim)
    }

    /// A model with a caller-provided one-component covariance. `hurst` and
    /// `sigma` are the self-similarity index and condition-(B) constant the
    /// caller claims for it; [`check_condition`] can probe the claim.
    pub fn custom<F>(name: &str, hurst: f64, sigma: f64, dim: usize, cov: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let mut spec = Self::build(ProcessKind::Custom { name: name.into() }, hurst, sigma, dim)?;
        spec.custom = Some(CustomCovariance(Arc::new(cov)));
        Ok(spec)
    }

    fn build(kind: ProcessKind, hurst: f64, sigma: f64, dim: usize) -> Result<Self> {
        let spec = ProcessSpec {
            kind,
            hurst,
            sigma,
            dim,
            custom: None,
        };
        spec.validate_params()?;
        Ok(spec)
    }

    fn validate_params(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::domain(format!("Hurst index {} must lie in (0, 1)", self.hurst)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma {} must be positive", self.sigma)));
        }
        if self.dim == 0 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        if let ProcessKind::BiFbm { h_prime, k } = self.kind {
            if !(h_prime > 0.0 && h_prime < 1.0) {
                return Err(Error::domain(format!("bi-fBm H' = {h_prime} must lie in (0, 1)")));
            }
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::domain(format!("bi-fBm K = {k} must lie in (0, 1]")));
            }
            if (h_prime * k - self.hurst).abs() > 1e-12 {
                return Err(Error::domain("bi-fBm requires H = H' K"));
            }
        }
        Ok(())
    }

    /// Full validation, including that a custom spec carries its covariance
    /// (deserialized custom specs do not).
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        if matches!(self.kind, ProcessKind::Custom { .. }) && self.custom.is_none() {
            return Err(Error::domain("custom covariance spec has no covariance attached"));
        }
        Ok(())
    }

    /// Closed-form condition-(B) constant `lim Var(X_{t+h} - X_t) / h^{2H}`.
    pub fn increment_sigma(&self) -> f64 {
        match self.kind {
            ProcessKind::Fbm | ProcessKind::SubFbm | ProcessKind::Custom { .. } => self.sigma,
            ProcessKind::BiFbm { k, .. } => self.sigma * 2f64.powf(1.0 - k),
        }
    }

    pub fn with_dim(&self, dim: usize) -> Self {
        let mut s = self.clone();
        s.dim = dim;
        s
    }
}

/// One-component covariance `R(s, t)` of a [`ProcessSpec`].
#[derive(Debug, Clone)]
pub struct Covariance {
    spec: ProcessSpec,
}

/// Builds the covariance evaluator for `spec`.
pub fn covariance(spec: &ProcessSpec) -> Result<Covariance> {
    spec.validate()?;
    Ok(Covariance { spec: spec.clone() })
}

impl Covariance {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        let h2 = 2.0 * self.spec.hurst;
        let sigma = self.spec.sigma;
        match &self.spec.kind {
            ProcessKind::Fbm => 0.5 * sigma * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2)),
            ProcessKind::SubFbm => {
                sigma * (s.powf(h2) + t.powf(h2) - 0.5 * ((s + t).powf(h2) + (t - s).abs().powf(h2)))
            }
            ProcessKind::BiFbm { h_prime, k } => {
                let hp2 = 2.0 * h_prime;
                sigma
                    * 2f64.powf(-k)
                    * ((s.powf(hp2) + t.powf(hp2)).powf(*k) - (t - s).abs().powf(hp2 * k))
            }
            ProcessKind::Custom { .. } => {
                let f = &self.spec.custom.as_ref().expect("validated custom spec").0;
                f(s, t)
            }
        }
    }

    /// Marginal variance `R(t, t)`.
    pub fn variance(&self, t: f64) -> f64 {
        let h2 = 2.0 * self.spec.hurst;
        match &self.spec.kind {
            ProcessKind::Fbm => self.spec.sigma * t.powf(h2),
            ProcessKind::SubFbm => self.spec.sigma * (2.0 - 2f64.powf(h2 - 1.0)) * t.powf(h2),
            ProcessKind::BiFbm { .. } => self.spec.sigma * t.powf(h2),
            ProcessKind::Custom { .. } => self.eval(t, t),
        }
    }

    /// `Var(X_{t+h} - X_t)` with the singular `h^{2H}` part kept separate
    /// from the smooth remainder to limit cancellation.
    pub fn increment_variance(&self, t: f64, h: f64) -> f64 {
        let hh = 2.0 * self.spec.hurst;
        let sigma = self.spec.sigma;
        match &self.spec.kind {
            ProcessKind::Fbm => sigma * h.powf(hh),
            ProcessKind::SubFbm => {
                let smooth = (2.0 * t + h).powf(hh) - 0.5 * (2.0 * t + 2.0 * h).powf(hh) - 0.5 * (2.0 * t).powf(hh);
                sigma * (h.powf(hh) + smooth)
            }
            ProcessKind::BiFbm { h_prime, k } => {
                let hp2 = 2.0 * h_prime;
                let c = 2f64.powf(1.0 - k);
                let smooth = (t + h).powf(hh) + t.powf(hh) - c * (t.powf(hp2) + (t + h).powf(hp2)).powf(*k);
                sigma * (c * h.powf(hh) + smooth)
            }
            ProcessKind::Custom { .. } => self.eval(t + h, t + h) + self.eval(t, t) - 2.0 * self.eval(t, t + h),
        }
    }

    /// `E[(X_{t4} - X_{t3})(X_{t2} - X_{t1})]`.
    pub fn increment_covariance(&self, t1: f64, t2: f64, t3: f64, t4: f64) -> f64 {
        self.eval(t4, t2) - self.eval(t4, t1) - self.eval(t3, t2) + self.eval(t3, t1)
    }

    /// Gram matrix `[R(t_i, t_j)]`.
    pub fn gram(&self, times: &[f64]) -> DMatrix<f64> {
        let n = times.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(times[i], times[j]))
    }
}

/// How a path was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplingMethod {
    CirculantEmbedding,
    Cholesky { jitter: f64 },
    /// Circulant embedding had an eigenvalue below the clipping tolerance.
    CholeskyFallback { jitter: f64, min_eigenvalue: f64 },
}

/// A `d`-component path on the uniform grid `t_i = i * horizon / steps`.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub horizon: f64,
    pub steps: usize,
    /// `values[l][i] = X^l_{t_i}`, with `values[l][0] = 0`.
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
    pub replicate: u64,
    pub spec: ProcessSpec,
    pub method: SamplingMethod,
}

impl PathSample {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.steps as f64
    }

    /// The point `X_{t_i}` as a vector.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[i]).collect()
    }

    /// Constant-zero path, used as a degenerate test input.
    pub fn zero(spec: &ProcessSpec, horizon: f64, steps: usize) -> Self {
        PathSample {
            horizon,
            steps,
            values: vec![vec![0.0; steps + 1]; spec.dim],
            seed: 0,
            replicate: 0,
            spec: spec.clone(),
            method: SamplingMethod::Cholesky { jitter: 0.0 },
        }
    }
}

/// Diagonal jitter levels, as multiples of the largest diagonal entry.
pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];
/// Relative tolerance below which negative circulant eigenvalues are clipped.
pub const CIRCULANT_CLIP: f64 = 1e-10;
/// Largest grid handled by the dense Cholesky path.
pub const MAX_CHOLESKY_STEPS: usize = 6000;

enum Engine {
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        lower: DMatrix<f64>,
        jitter: f64,
        fallback_min_eig: Option<f64>,
    },
}

/// Factorization for one `(spec, horizon, steps)` triple, shared read-only
/// by every replicate drawn from it.
pub struct PathSampler {
    spec: ProcessSpec,
    horizon: f64,
    steps: usize,
    engine: Engine,
}

impl fmt::Debug for PathSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathSampler")
            .field("spec", &self.spec)
            .field("horizon", &self.horizon)
            .field("steps", &self.steps)
            .field("method", &self.method())
            .finish()
    }
}

impl PathSampler {
    pub fn new(spec: &ProcessSpec, horizon: f64, steps: usize) -> Result<Self> {
        spec.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon {horizon} must be positive")));
        }
        if steps < 2 {
            return Err(Error::domain(format!("grid size {steps} must be >= 2")));
        }
        let engine = match spec.kind {
            ProcessKind::Fbm => match circulant_engine(spec, horizon, steps) {
                Ok(engine) => engine,
                Err(min_eig) => cholesky_engine(spec, horizon, steps, Some(min_eig))?,
            },
            _ => cholesky_engine(spec, horizon, steps, None)?,
        };
        Ok(PathSampler {
            spec: spec.clone(),
            horizon,
            steps,
            engine,
        })
    }

    /// Forces the Cholesky path (used to cross-check the circulant sampler).
    pub fn new_cholesky(spec: &ProcessSpec, horizon: f64, steps: usize) -> Result<Self> {
        spec.validate()?;
        if steps < 2 || !(horizon > 0.0) {
            return Err(Error::domain("horizon must be positive and grid size >= 2"));
        }
        Ok(PathSampler {
            spec: spec.clone(),
            horizon,
            steps,
            engine: cholesky_engine(spec, horizon, steps, None)?,
        })
    }

    pub fn method(&self) -> SamplingMethod {
        match &self.engine {
            Engine::Circulant { .. } => SamplingMethod::CirculantEmbedding,
            Engine::Cholesky {
                jitter,
                fallback_min_eig: None,
                ..
            } => SamplingMethod::Cholesky { jitter: *jitter },
            Engine::Cholesky {
                jitter,
                fallback_min_eig: Some(m),
                ..
            } => SamplingMethod::CholeskyFallback {
                jitter: *jitter,
                min_eigenvalue: *m,
            },
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    /// Draws replicate `replicate` under master seed `seed`. Component `l`
    /// reads from stream `rng::stream(seed, l, replicate)`.
    pub fn sample(&self, seed: u64, replicate: u64) -> PathSample {
        let values = (0..self.spec.dim)
            .map(|l| {
                let mut r = rng::stream(seed, l as u64, replicate);
                self.sample_component(&mut r)
            })
            .collect();
        PathSample {
            horizon: self.horizon,
            steps: self.steps,
            values,
            seed,
            replicate,
            spec: self.spec.clone(),
            method: self.method(),
        }
    }

    fn sample_component<R: Rng>(&self, r: &mut R) -> Vec<f64> {
        let n = self.steps;
        match &self.engine {
            Engine::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let a: f64 = r.sample(StandardNormal);
                        let b: f64 = r.sample(StandardNormal);
                        Complex64::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut buf);
                let mut out = Vec::with_capacity(n + 1);
                let mut acc = 0.0;
                out.push(0.0);
                for z in &buf[..n] {
                    acc += z.re;
                    out.push(acc);
                }
                out
            }
            Engine::Cholesky { lower, .. } => {
                let z = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
                let x = lower * z;
                let mut out = Vec::with_capacity(n + 1);
                out.push(0.0);
                out.extend(x.iter().copied());
                out
            }
        }
    }
}

fn circulant_engine(spec: &ProcessSpec, horizon: f64, steps: usize) -> std::result::Result<Engine, f64> {
    let n = steps;
    let h = horizon / n as f64;
    let hh = 2.0 * spec.hurst;
    let scale = 0.5 * spec.sigma * h.powf(hh);
    let gamma = |j: usize| {
        let j = j as f64;
        scale * ((j + 1.0).powf(hh) - 2.0 * j.powf(hh) + (j - 1.0).abs().powf(hh))
    };
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex64::new(gamma(lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let max = row.iter().map(|z| z.re).fold(f64::MIN, f64::max);
    let min = row.iter().map(|z| z.re).fold(f64::MAX, f64::min);
    if min < -CIRCULANT_CLIP * max {
        return Err(min);
    }
    let sqrt_eig = row.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
    Ok(Engine::Circulant { sqrt_eig, fft })
}

fn cholesky_engine(spec: &ProcessSpec, horizon: f64, steps: usize, fallback: Option<f64>) -> Result<Engine> {
    if steps > MAX_CHOLESKY_STEPS {
        return Err(Error::Capacity(format!(
            "dense Cholesky sampling supports at most {MAX_CHOLESKY_STEPS} steps, got {steps}"
        )));
    }
    let cov = covariance(spec)?;
    let times: Vec<f64> = (1..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
    let gram = cov.gram(&times);
    let (lower, jitter) = factor_with_jitter(gram)?;
    Ok(Engine::Cholesky {
        lower,
        jitter,
        fallback_min_eig: fallback,
    })
}

/// Cholesky with the diagonal jitter escalation of [`JITTER_SCHEDULE`].
/// Returns the lower factor and the jitter (relative) that succeeded.
pub fn factor_with_jitter(gram: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let max_diag = gram.diagonal().iter().cloned().fold(0.0, f64::max);
    for &delta in &JITTER_SCHEDULE {
        let mut m = gram.clone();
        if delta > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += delta * max_diag;
            }
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch.l(), delta));
        }
    }
    Err(Error::Factorization(format!(
        "Gram matrix of size {} is not positive definite after jitter {:e}",
        gram.nrows(),
        JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1]
    )))
}

/// Convenience wrapper: replicate 0 of master seed `seed`.
pub fn sample_path(spec: &ProcessSpec, horizon: f64, steps: usize, seed: u64) -> Result<PathSample> {
    Ok(PathSampler::new(spec, horizon, steps)?.sample(seed, 0))
}

// ---------------------------------------------------------------------------
// Condition probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Lnd,
    StrongLnd,
    VarianceEnvelope,
    Decorrelation,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Lnd,
        Condition::StrongLnd,
        Condition::VarianceEnvelope,
        Condition::Decorrelation,
    ];
}

/// Probe grids for [`check_condition`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Largest number of increments for the LND probe.
    pub lnd_max_n: usize,
    /// Largest conditioning set for condition (A); capped at 8.
    pub max_conditioning: usize,
    /// Explicit `(s_1..s_m, t)` probes for (A); defaults are generated when empty.
    pub strong_lnd_probes: Vec<(Vec<f64>, f64)>,
    /// Base times `t` for (B).
    pub envelope_times: Vec<f64>,
    /// Ratios `h / t` for (B), largest first.
    pub envelope_ratios: Vec<f64>,
    /// Ratio used to read off the limiting constant in (B).
    pub sigma_probe_ratio: f64,
    /// Decorrelation parameters `eta` for (C), increasing.
    pub etas: Vec<f64>,
    /// Positivity threshold for the LND constants.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lnd_max_n: 6,
            max_conditioning: 8,
            strong_lnd_probes: Vec::new(),
            envelope_times: vec![0.25, 1.0, 4.0],
            envelope_ratios: (1..=12).map(|j| 0.5f64.powi(j)).collect(),
            sigma_probe_ratio: 2f64.powi(-24),
            etas: (1..=10).map(|j| 2f64.powi(j)).collect(),
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDetail {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub grid: String,
    /// LND / (A): smallest observed constant. (B): envelope at the smallest
    /// ratio, relative to sigma. (C): envelope at the largest eta.
    pub worst_ratio: f64,
    pub pass: bool,
    pub details: Vec<ProbeDetail>,
    /// Probes skipped because a conditioning Gram matrix was singular.
    pub skipped: usize,
    /// (B) only: the limiting small-increment constant read off the model.
    pub sigma_estimate: Option<f64>,
}

/// Conditional variance `Var(X_t | X_{s_1}, ..., X_{s_m})` by Schur
/// complement; `None` if the conditioning Gram matrix is singular.
pub fn conditional_variance(cov: &Covariance, s: &[f64], t: f64) -> Option<f64> {
    let gram = cov.gram(s);
    let c = DVector::from_iterator(s.len(), s.iter().map(|&si| cov.eval(si, t)));
    let ch = gram.cholesky()?;
    let w = ch.solve(&c);
    Some(cov.eval(t, t) - c.dot(&w))
}

/// `Var(X_t | X_s...) / min_j |t - s_j|^{2H}`.
pub fn strong_lnd_ratio(cov: &Covariance, s: &[f64], t: f64) -> Option<f64> {
    let gap = s.iter().map(|&si| (t - si).abs()).fold(f64::INFINITY, f64::min);
    conditional_variance(cov, s, t).map(|v| v / gap.powf(2.0 * cov.spec().hurst))
}

/// Smallest `kappa` with `Var(Σ x_j ΔX_j) >= kappa Σ x_j^2 Δt_j^{2H}` for the
/// given partition `0 = t_0 < t_1 < ... < t_n`.
pub fn lnd_constant(cov: &Covariance, times: &[f64]) -> f64 {
    let n = times.len();
    let hh = 2.0 * cov.spec().hurst;
    let prev = |j: usize| if j == 0 { 0.0 } else { times[j - 1] };
    let c = DMatrix::from_fn(n, n, |i, j| {
        cov.increment_covariance(prev(j), times[j], prev(i), times[i])
    });
    let scale: Vec<f64> = (0..n).map(|j| (times[j] - prev(j)).powf(-0.5 * hh)).collect();
    let normalized = DMatrix::from_fn(n, n, |i, j| c[(i, j)] * scale[i] * scale[j]);
    SymmetricEigen::new(normalized).eigenvalues.min()
}

fn default_partitions(max_n: usize) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        out.push((format!("uniform n={n}"), (1..=n).map(|j| j as f64 / n as f64).collect()));
        out.push((
            format!("geometric n={n}"),
            (1..=n).map(|j| 2f64.powi(j as i32 - n as i32)).collect(),
        ));
        let mut r = rng::stream(0x1ead, n as u64, 0);
        let mut t = 0.0;
        let pts: Vec<f64> = (0..n)
            .map(|_| {
                t += 0.01 + r.random::<f64>();
                t
            })
            .collect();
        out.push((format!("random n={n}"), pts));
    }
    out
}

fn default_strong_lnd_probes(max_m: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for m in 1..=max_m {
        let t = 1.0;
        out.push(((1..=m).map(|j| j as f64 / (m as f64 + 1.0)).collect(), t));
        // clustered just below t
        out.push(((1..=m).map(|j| 1.0 - 0.5f64.powi(j as i32 + 1)).rev().collect(), t));
        let mut r = rng::stream(0xa5a5, m as u64, 0);
        let mut s: Vec<f64> = (0..m).map(|_| 0.02 + 0.96 * r.random::<f64>()).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        out.push((s, t));
    }
    out
}

/// Probes `condition` for `spec` on the grids in `cfg`.
pub fn check_condition(spec: &ProcessSpec, condition: Condition, cfg: &ProbeConfig) -> Result<ConditionReport> {
    let cov = covariance(spec)?;
    match condition {
        Condition::Lnd => {
            let mut details = Vec::new();
            let mut worst = f64::INFINITY;
            for (label, times) in default_partitions(cfg.lnd_max_n) {
                let kappa = lnd_constant(&cov, &times);
                worst = worst.min(kappa);
                details.push(ProbeDetail { label, value: kappa });
            }
            Ok(ConditionReport {
                condition,
                grid: format!("uniform/geometric/random partitions, n <= {}", cfg.lnd_max_n),
                worst_ratio: worst,
                pass: worst > cfg.tol,
                details,
                skipped: 0,
                sigma_estimate: None,
            })
        }
        Condition::StrongLnd => {
            let max_m = cfg.max_conditioning.min(8);
            let probes = if cfg.strong_lnd_probes.is_empty() {
                default_strong_lnd_probes(max_m)
            } else {
                cfg.strong_lnd_probes.clone()
            };
            let mut details = Vec::new();
            let mut worst = f64::INFINITY;
            let mut skipped = 0;
            for (s, t) in probes {
                if s.len() > 8 {
                    return Err(Error::Capacity("condition (A) is probed for m <= 8 only".into()));
                }
                match strong_lnd_ratio(&cov, &s, t) {
                    Some(k) => {
                        worst = worst.min(k);
                        details.push(ProbeDetail {
                            label: format!("m={} t={t}", s.len()),
                            value: k,
                        });
                    }
                    None => skipped += 1,
                }
            }
            Ok(ConditionReport {
                condition,
                grid: format!("conditioning sets m <= {max_m}"),
                worst_ratio: worst,
                pass: worst.is_finite() && worst > cfg.tol,
                details,
                skipped,
                sigma_estimate: None,
            })
        }
        Condition::VarianceEnvelope => {
            let hh = 2.0 * spec.hurst;
            let ratio = |t: f64, r: f64| {
                let h = r * t;
                cov.increment_variance(t, h) / h.powf(hh)
            };
            let sigma_hat = crate::stats::mean(
                &cfg.envelope_times
                    .iter()
                    .map(|&t| ratio(t, cfg.sigma_probe_ratio))
                    .collect::<Vec<_>>(),
            );
            // deviation per ratio, then the running max from small ratios up
            let mut ratios = cfg.envelope_ratios.clone();
            ratios.sort_by(f64::total_cmp);
            let mut envelope = Vec::with_capacity(ratios.len());
            let mut running: f64 = 0.0;
            for &r in &ratios {
                let dev = cfg
                    .envelope_times
                    .iter()
                    .map(|&t| (ratio(t, r) - sigma_hat).abs())
                    .fold(0.0, f64::max);
                running = running.max(dev);
                envelope.push(running);
            }
            let details = ratios
                .iter()
                .zip(&envelope)
                .map(|(r, e)| ProbeDetail {
                    label: format!("phi(h/t={r:.3e})"),
                    value: *e,
                })
                .collect();
            let small = envelope[0] / sigma_hat;
            let large = envelope[envelope.len() - 1] / sigma_hat;
            let vanishing = large <= 1e-12 || {
                let half = ratios.len().div_ceil(2).max(2);
                let positive: Vec<(f64, f64)> = ratios[..half]
                    .iter()
                    .zip(&envelope[..half])
                    .filter(|(_, e)| **e > 0.0)
                    .map(|(r, e)| (*r, *e))
                    .collect();
                positive.len() >= 2 && {
                    let (rs, es): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
                    crate::stats::log_log_fit(&rs, &es).slope > 0.0
                } && small < 0.5 * large
            };
            Ok(ConditionReport {
                condition,
                grid: format!("t in {:?}, h/t down to {:.3e}", cfg.envelope_times, ratios[0]),
                worst_ratio: small,
                pass: sigma_hat > 0.0 && vanishing,
                details,
                skipped: 0,
                sigma_estimate: Some(sigma_hat),
            })
        }
        Condition::Decorrelation => {
            let h = spec.hurst;
            let mut pool: Vec<(f64, f64)> = Vec::new(); // (config ratio, normalized covariance)
            let starts = [0.0, 0.5, 2.0];
            let mut push = |t1: f64, d2: f64, d3: f64, d4: f64, regime_ratio: f64| {
                let (t2, t3) = (t1 + d2, t1 + d2 + d3);
                let t4 = t3 + d4;
                let c = cov.increment_covariance(t1, t2, t3, t4).abs() / (d4.powf(h) * d2.powf(h));
                pool.push((regime_ratio, c));
            };
            for &t1 in &starts {
                for j in 1..=12 {
                    let small = 0.5f64.powi(j);
                    for &gap in &[0.0, 0.1, 1.0] {
                        push(t1, small, gap, 1.0, small); // (i)
                        push(t1, 1.0, gap, small, small); // (ii), ratio read as 1/eta
                    }
                    for &(d2, d4) in &[(1.0, 1.0), (0.3, 1.0), (1.0, 0.3)] {
                        let d3 = f64::max(d2, d4) / small;
                        push(t1, d2, d3, d4, small); // (iii)
                    }
                }
            }
            let mut details = Vec::new();
            let mut psi = Vec::new();
            for &eta in &cfg.etas {
                let v = pool
                    .iter()
                    .filter(|(r, _)| *r <= 1.0 / eta)
                    .map(|(_, c)| *c)
                    .fold(0.0, f64::max);
                psi.push(v);
                details.push(ProbeDetail {
                    label: format!("psi(eta={eta})"),
                    value: v,
                });
            }
            let first = psi[0];
            let last = psi[psi.len() - 1];
            let monotone = psi.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            Ok(ConditionReport {
                condition,
                grid: format!("regimes (i)-(iii), eta in [{}, {}]", cfg.etas[0], cfg.etas[cfg.etas.len() - 1]),
                worst_ratio: last,
                pass: monotone && (last <= 1e-12 || last < 0.5 * first),
                details,
                skipped: 0,
                sigma_estimate: None,
            })
        }
    }
}
