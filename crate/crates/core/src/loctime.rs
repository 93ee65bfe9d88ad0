//! Heat-kernel approximation of local-time derivatives along sampled paths,
//! `L_eps^{(k)}(T, x) = ∫_0^T p_eps^{(k)}(X_t + x) dt`, and its analytic mean.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatkernel::{self, hermite_he, MultiIndex};
use crate::process::{covariance, PathSample, ProcessSpec};
use crate::quadrature;
use crate::stats::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationRule {
    RiemannLeft,
    #[default]
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    /// Level point `x`.
    pub level: Vec<f64>,
    pub k: MultiIndex,
    pub horizon: f64,
    /// Number of time steps on `[0, horizon]`. `None` uses every path grid
    /// point up to the horizon; otherwise it must divide that count.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub rule: IntegrationRule,
}

impl EstimatorConfig {
    pub fn new(epsilon: f64, level: Vec<f64>, k: MultiIndex, horizon: f64) -> Result<Self> {
        let cfg = EstimatorConfig {
            epsilon,
            level,
            k,
            horizon,
            steps: None,
            rule: IntegrationRule::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `k = 0`, `x = 0` in `dim` dimensions.
    pub fn local_time(epsilon: f64, dim: usize, horizon: f64) -> Result<Self> {
        Self::new(epsilon, vec![0.0; dim], MultiIndex::zeros(dim), horizon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        EstimatorConfig {
            epsilon,
            ..self.clone()
        }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        EstimatorConfig {
            steps: Some(steps),
            ..self.clone()
        }
    }

    pub fn with_rule(&self, rule: IntegrationRule) -> Self {
        EstimatorConfig { rule, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.level.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain(format!("horizon {} must be positive", self.horizon)));
        }
        if self.level.len() != self.k.dim() {
            return Err(Error::Shape(format!(
                "level point has {} components but k has {}",
                self.level.len(),
                self.k.dim()
            )));
        }
        if self.steps == Some(0) {
            return Err(Error::domain("time grid needs at least one step"));
        }
        Ok(())
    }

    /// `H (2|k| + d) < 1`.
    pub fn exists_for(&self, hurst: f64) -> bool {
        hurst * (2.0 * self.k.order() + self.dim() as f64) < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateValue {
    pub value: f64,
    pub config: EstimatorConfig,
    pub seed: u64,
    pub replicate: u64,
    /// Time steps actually used and their width.
    pub steps: usize,
    pub step: f64,
    /// Set when `H (2|k| + d) >= 1`: the estimator has no finite limit.
    pub existence_violation: bool,
}

/// Evaluates `p_eps^{(k)}` quickly for integer `k`; fractional components
/// fall back to Fourier quadrature.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    eps: f64,
    sqrt_eps: f64,
    norm: f64,
    orders: Vec<Option<u32>>,
    k: MultiIndex,
    prefactor: f64,
}

impl KernelEvaluator {
    pub fn new(eps: f64, k: &MultiIndex) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::domain(format!("smoothing parameter eps = {eps} must be positive")));
        }
        let sqrt_eps = eps.sqrt();
        let orders: Vec<Option<u32>> = k
            .components()
            .iter()
            .map(|&c| if c.fract() == 0.0 { Some(c as u32) } else { None })
            .collect();
        // sign and eps^{-n/2} of the integer components
        let mut prefactor = 1.0;
        for n in orders.iter().flatten() {
            if n % 2 == 1 {
                prefactor = -prefactor;
            }
            prefactor *= sqrt_eps.powi(-(*n as i32));
        }
        Ok(KernelEvaluator {
            eps,
            sqrt_eps,
            norm: 1.0 / (2.0 * PI * eps).sqrt(),
            orders,
            k: k.clone(),
            prefactor,
        })
    }

    /// `p_eps^{(k)}(y)`; `y` must have `k.dim()` components.
    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        let mut v = self.prefactor;
        let mut r2 = 0.0;
        for (j, (&yj, order)) in y.iter().zip(&self.orders).enumerate() {
            match order {
                Some(n) => {
                    let z = yj / self.sqrt_eps;
                    r2 += z * z;
                    v *= hermite_he(*n, z) * self.norm;
                }
                None => {
                    v *= heatkernel::heat_kernel_deriv_1d(yj, self.eps, self.k.components()[j])?;
                }
            }
        }
        Ok(v * (-0.5 * r2).exp())
    }

    pub fn is_integer(&self) -> bool {
        self.orders.iter().all(Option::is_some)
    }
}

struct GridPlan {
    stride: usize,
    steps: usize,
    step: f64,
}

fn plan(path: &PathSample, cfg: &EstimatorConfig) -> Result<GridPlan> {
    cfg.validate()?;
    if path.dim() != cfg.dim() {
        return Err(Error::Shape(format!(
            "path has {} components but the level point has {}",
            path.dim(),
            cfg.dim()
        )));
    }
    if cfg.horizon > path.horizon * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "horizon {} exceeds the sampled path horizon {}",
            cfg.horizon, path.horizon
        )));
    }
    let end = end_index(path, cfg.horizon)?;
    let steps = cfg.steps.unwrap_or(end);
    if end % steps != 0 {
        return Err(Error::domain(format!(
            "{steps} time steps do not divide the {end} path steps up to the horizon"
        )));
    }
    let stride = end / steps;
    Ok(GridPlan {
        stride,
        steps,
        step: path.step() * stride as f64,
    })
}

fn end_index(path: &PathSample, t: f64) -> Result<usize> {
    let pos = t / path.step();
    let end = pos.round();
    if (pos - end).abs() > 1e-9 * pos.max(1.0) || end < 1.0 {
        return Err(Error::domain(format!("time {t} is not a point of the path grid")));
    }
    Ok(end as usize)
}

/// Integrand samples `p_eps^{(k)}(X_{t_i} + x)` on the configured grid.
fn integrand(path: &PathSample, cfg: &EstimatorConfig, grid: &GridPlan) -> Result<Vec<f64>> {
    let kernel = KernelEvaluator::new(cfg.epsilon, &cfg.k)?;
    let d = cfg.dim();
    let mut y = vec![0.0; d];
    let mut out = Vec::with_capacity(grid.steps + 1);
    for i in 0..=grid.steps {
        let idx = i * grid.stride;
        for l in 0..d {
            y[l] = path.values[l][idx] + cfg.level[l];
        }
        out.push(kernel.eval(&y)?);
    }
    Ok(out)
}

fn integrate(g: &[f64], step: f64, rule: IntegrationRule) -> f64 {
    let n = g.len() - 1;
    let mut acc = KahanSum::new();
    match rule {
        IntegrationRule::RiemannLeft => g[..n].iter().for_each(|&v| acc.add(v)),
        IntegrationRule::Trapezoid => {
            acc.add(0.5 * g[0]);
            g[1..n].iter().for_each(|&v| acc.add(v));
            acc.add(0.5 * g[n]);
        }
    }
    acc.value() * step
}

/// `L_eps^{(k)}(T, x)` along `path` with the configured quadrature rule.
pub fn estimate(path: &PathSample, cfg: &EstimatorConfig) -> Result<EstimateValue> {
    let grid = plan(path, cfg)?;
    let g = integrand(path, cfg, &grid)?;
    let value = integrate(&g, grid.step, cfg.rule);
    if !value.is_finite() {
        return Err(Error::accuracy("estimate is not finite", f64::INFINITY));
    }
    Ok(EstimateValue {
        value,
        config: cfg.clone(),
        seed: path.seed,
        replicate: path.replicate,
        steps: grid.steps,
        step: grid.step,
        existence_violation: !cfg.exists_for(path.spec.hurst),
    })
}

/// Estimates for several smoothing parameters on one path.
pub fn estimate_many(path: &PathSample, cfg: &EstimatorConfig, epsilons: &[f64]) -> Result<Vec<f64>> {
    epsilons
        .iter()
        .map(|&e| estimate(path, &cfg.with_epsilon(e)).map(|v| v.value))
        .collect()
}

/// Running values `L_eps^{(k)}(t, x)` at each of `times` (each a grid
/// point, at most `cfg.horizon`), from one pass over the path.
pub fn estimate_cumulative(path: &PathSample, cfg: &EstimatorConfig, times: &[f64]) -> Result<Vec<f64>> {
    let grid = plan(path, cfg)?;
    let g = integrand(path, cfg, &grid)?;
    let mut marks = Vec::with_capacity(times.len());
    for &t in times {
        if t <= 0.0 || t > cfg.horizon * (1.0 + 1e-12) {
            return Err(Error::domain(format!("time {t} outside (0, {}]", cfg.horizon)));
        }
        let pos = t / grid.step;
        let i = pos.round();
        if (pos - i).abs() > 1e-9 * pos.max(1.0) {
            return Err(Error::domain(format!("time {t} is not on the estimator grid")));
        }
        marks.push(i as usize);
    }
    Ok(marks
        .into_iter()
        .map(|m| integrate(&g[..=m], grid.step, cfg.rule))
        .collect())
}

/// Proxy for the limit `L^{(k)}(T, x)`: the same estimator at `eps_ref`.
pub fn reference_local_time(path: &PathSample, cfg: &EstimatorConfig, eps_ref: f64) -> Result<EstimateValue> {
    estimate(path, &cfg.with_epsilon(eps_ref))
}

/// `E L_eps^{(k)}(T, x) = ∫_0^T p_{eps + v(t)}^{(k)}(x) dt` with
/// `v(t) = R(t, t)`, by adaptive Gauss–Kronrod in `s` where `t = T s^q`.
pub fn expected_estimate(spec: &ProcessSpec, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    if spec.dim != cfg.dim() {
        return Err(Error::Shape(format!(
            "process has {} components but the level point has {}",
            spec.dim,
            cfg.dim()
        )));
    }
    let cov = covariance(spec)?;
    // makes v(T s^q) ~ s near 0, so the integrand is smooth in s
    let q = (1.0 / (2.0 * spec.hurst)).max(1.0);
    let t_end = cfg.horizon;
    let mut failure: Option<Error> = None;
    let integrand = |s: f64| {
        let t = t_end * s.powf(q);
        let jac = t_end * q * s.powf(q - 1.0);
        match heatkernel::heat_kernel_deriv(&cfg.level, cfg.epsilon + cov.variance(t), &cfg.k) {
            Ok(v) => jac * v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let est = quadrature::adaptive(integrand, 0.0, 1.0, 1e-15, 1e-11)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(est.value)
}

/// Default grid size: the next power of two at or above
/// `32 T eps^{-1/(2H)}`, between 16 and `2^20`.
pub fn recommended_grid_size(hurst: f64, epsilon: f64, horizon: f64) -> usize {
    const CAP: usize = 1 << 20;
    let want = 32.0 * horizon * epsilon.powf(-1.0 / (2.0 * hurst));
    if !want.is_finite() || want >= CAP as f64 {
        return CAP;
    }
    (want.ceil() as usize).next_power_of_two().clamp(16, CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::sample_path;

    fn bm() -> ProcessSpec {
        ProcessSpec::fbm(0.5, 1.0, 1).unwrap()
    }

    #[test]
    fn zero_path_gives_constant_integrand() {
        let spec = bm();
        let path = PathSample::zero(&spec, 1.0, 64);
        let cfg = EstimatorConfig::local_time(0.04, 1, 1.0).unwrap();
        let v = estimate(&path, &cfg).unwrap().value;
        assert!((v - 1.0 / (2.0 * PI * 0.04).sqrt()).abs() < 1e-13);
        let riemann = estimate(&path, &cfg.with_rule(IntegrationRule::RiemannLeft)).unwrap().value;
        assert!((riemann - v).abs() < 1e-13);
    }

    #[test]
    fn reference_difference_on_zero_path() {
        let spec = bm();
        let path = PathSample::zero(&spec, 2.0, 64);
        let cfg = EstimatorConfig::local_time(0.01, 1, 2.0).unwrap();
        let a = estimate(&path, &cfg).unwrap().value;
        let b = reference_local_time(&path, &cfg, 0.01 / 64.0).unwrap().value;
        let closed = 2.0 * ((2.0 * PI * 0.01).powf(-0.5) - (2.0 * PI * 0.01 / 64.0).powf(-0.5));
        assert!(((a - b) - closed).abs() < 1e-12 * closed.abs());
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let path = sample_path(&bm(), 1.0, 16, 1).unwrap();
        let cfg = EstimatorConfig::local_time(0.1, 2, 1.0).unwrap();
        assert!(matches!(estimate(&path, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn stride_and_horizon_checks() {
        let path = sample_path(&bm(), 2.0, 64, 1).unwrap();
        let cfg = EstimatorConfig::local_time(0.1, 1, 1.0).unwrap();
        assert_eq!(estimate(&path, &cfg).unwrap().steps, 32);
        assert_eq!(estimate(&path, &cfg.with_steps(8)).unwrap().steps, 8);
        assert!(estimate(&path, &cfg.with_steps(7)).is_err());
        let too_long = EstimatorConfig::local_time(0.1, 1, 3.0).unwrap();
        assert!(matches!(estimate(&path, &too_long), Err(Error::Domain(_))));
    }

    #[test]
    fn existence_violation_is_flagged_not_fatal() {
        let spec = ProcessSpec::fbm(0.6, 1.0, 2).unwrap();
        let path = sample_path(&spec, 1.0, 32, 4).unwrap();
        let cfg = EstimatorConfig::local_time(0.1, 2, 1.0).unwrap();
        let v = estimate(&path, &cfg).unwrap();
        assert!(v.existence_violation);
        assert!(v.value.is_finite());
    }

    #[test]
    fn cumulative_matches_individual_horizons() {
        let path = sample_path(&bm(), 1.0, 128, 2).unwrap();
        let cfg = EstimatorConfig::local_time(0.05, 1, 1.0).unwrap();
        let cum = estimate_cumulative(&path, &cfg, &[0.25, 0.5, 1.0]).unwrap();
        for (t, c) in [0.25, 0.5, 1.0].iter().zip(&cum) {
            let mut sub = cfg.clone();
            sub.horizon = *t;
            let direct = estimate(&path, &sub).unwrap().value;
            assert!((direct - c).abs() < 1e-12 * direct.abs());
        }
    }

    #[test]
    fn expected_estimate_brownian_closed_form() {
        let cfg = EstimatorConfig::local_time(0.01, 1, 1.0).unwrap();
        let v = expected_estimate(&bm(), &cfg).unwrap();
        let exact = 2.0 * (1.01f64.sqrt() - 0.1) / (2.0 * PI).sqrt();
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    }

    #[test]
    fn expected_estimate_limits() {
        let cfg = EstimatorConfig::local_time(1e4, 1, 1.0).unwrap();
        let v = expected_estimate(&ProcessSpec::fbm(0.3, 1.0, 1).unwrap(), &cfg).unwrap();
        let ratio = v / (2.0 * PI * 1e4f64).powf(-0.5);
        assert!((ratio - 1.0).abs() < 1e-4);
        let odd = EstimatorConfig::new(0.1, vec![0.0], MultiIndex::from_integers(&[1]), 1.0).unwrap();
        assert_eq!(expected_estimate(&bm(), &odd).unwrap(), 0.0);
    }

    #[test]
    fn evaluator_matches_heatkernel_module() {
        let k = MultiIndex::new(vec![2.0, 0.5]).unwrap();
        let ev = KernelEvaluator::new(0.3, &k).unwrap();
        let y = [0.4, -0.2];
        let direct = heatkernel::heat_kernel_deriv(&y, 0.3, &k).unwrap();
        assert!((ev.eval(&y).unwrap() - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn grid_size_heuristic() {
        assert_eq!(recommended_grid_size(0.5, 0.01, 1.0), 4096);
        assert_eq!(recommended_grid_size(0.1, 2f64.powi(-15), 1.0), 1 << 20);
        assert_eq!(recommended_grid_size(0.5, 10.0, 1.0), 16);
    }
}
