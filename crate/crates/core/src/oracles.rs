//! Independent checks: the mixed-moment formula for `W(L(., x))`
//! increments, its simulation counterpart, and randomized drivers for the
//! Fourier-difference inequalities.
//!
//! Variable naming in the moment integral: `x` is always the level point;
//! the Fourier variables are `xi[j]`, one per time point `u[j]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::heatkernel::{frac_power, MultiIndex, TestFunction};
use crate::loctime::{estimate_cumulative, EstimatorConfig};
use crate::process::{covariance, Covariance, PathSampler, ProcessSpec};
use crate::rng::{self, AUX_LANE};
use crate::stats::KahanSum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentQuery {
    /// Ordered disjoint intervals `(a_i, b_i]`.
    pub intervals: Vec<(f64, f64)>,
    pub m: Vec<u32>,
    pub level: Vec<f64>,
    pub spec: ProcessSpec,
}

impl MomentQuery {
    pub fn new(intervals: Vec<(f64, f64)>, m: Vec<u32>, level: Vec<f64>, spec: ProcessSpec) -> Result<Self> {
        let q = MomentQuery {
            intervals,
            m,
            level,
            spec,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() || self.intervals.len() != self.m.len() {
            return Err(Error::Shape("need one exponent per interval".into()));
        }
        if self.level.len() != self.spec.dim {
            return Err(Error::Shape(format!(
                "level has {} components, process has {}",
                self.level.len(),
                self.spec.dim
            )));
        }
        let mut prev_end = 0.0;
        for (i, &(a, b)) in self.intervals.iter().enumerate() {
            if !(a >= 0.0 && b > a && b.is_finite()) {
                return Err(Error::domain(format!("interval ({a}, {b}] is not a valid subinterval of [0, inf)")));
            }
            if i > 0 && a < prev_end {
                return Err(Error::domain("intervals must be ordered and disjoint"));
            }
            prev_end = b;
        }
        if self.m.iter().any(|&m| m == 0) {
            return Err(Error::domain("exponents m_i must be >= 1"));
        }
        self.spec.validate()
    }

    pub fn total_order(&self) -> u32 {
        self.m.iter().sum()
    }

    fn any_odd(&self) -> bool {
        self.m.iter().any(|m| m % 2 == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentMethod {
    FormulaMc,
    SimulationMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub value: f64,
    pub std_error: f64,
    pub method: MomentMethod,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBudget {
    pub samples: u64,
    pub seed: u64,
    /// Cap on `|m| d / 2`, the dimension of the Fourier integral.
    pub dim_cap: usize,
}

impl Default for MomentBudget {
    fn default() -> Self {
        MomentBudget {
            samples: 200_000,
            seed: 1,
            dim_cap: 6,
        }
    }
}

const CHUNK: u64 = 4096;
const RIDGE: f64 = 1e-10;

/// `Π m_i! / (2^{m_i/2} (2π)^{m_i d/2} (m_i/2)!)`.
fn combinatorial_prefactor(m: &[u32], d: usize) -> f64 {
    let fact = |n: u32| (1..=n).map(|j| j as f64).product::<f64>();
    m.iter()
        .map(|&mi| {
            fact(mi) / (2f64.powf(mi as f64 / 2.0) * (2.0 * PI).powf(mi as f64 * d as f64 / 2.0) * fact(mi / 2))
        })
        .product()
}

/// Ordered time points in one interval together with the importance
/// density of the draw. Gaps `g_1..g_K` (from `a` to the first point and
/// between points) follow Dirichlet weights `1 - Hd`, the last gap to `b`
/// weight 1, which matches the `gap^{-Hd}` blow-up of the integrand.
struct IntervalSampler {
    a: f64,
    len: f64,
    count: usize,
    alpha: f64,
    gap_dist: Gamma<f64>,
    last_dist: Gamma<f64>,
    log_norm: f64,
}

impl IntervalSampler {
    fn new(a: f64, b: f64, count: usize, alpha: f64) -> Self {
        let total = alpha * count as f64 + 1.0;
        let log_norm = libm::lgamma(total) - count as f64 * libm::lgamma(alpha);
        IntervalSampler {
            a,
            len: b - a,
            count,
            alpha,
            gap_dist: Gamma::new(alpha, 1.0).expect("positive shape"),
            last_dist: Gamma::new(1.0, 1.0).expect("positive shape"),
            log_norm,
        }
    }

    /// Pushes the points and returns `count! / q(points)`.
    fn draw<R: Rng>(&self, r: &mut R, out: &mut Vec<f64>) -> f64 {
        let mut gaps: Vec<f64> = (0..self.count).map(|_| self.gap_dist.sample(r)).collect();
        let last = self.last_dist.sample(r);
        let total: f64 = gaps.iter().sum::<f64>() + last;
        let mut t = self.a;
        let mut log_q = self.log_norm - self.count as f64 * self.len.ln();
        for g in gaps.iter_mut() {
            *g /= total;
            log_q += (self.alpha - 1.0) * g.max(1e-300).ln();
            t += *g * self.len;
            out.push(t);
        }
        let fact: f64 = (1..=self.count).map(|j| j as f64).product();
        fact * (-log_q).exp()
    }
}

/// One weighted draw of the Fourier integrand at the sampled times.
fn formula_draw<R: Rng>(
    cov: &Covariance,
    samplers: &[IntervalSampler],
    level: &[f64],
    r: &mut R,
    times: &mut Vec<f64>,
) -> f64 {
    times.clear();
    let mut w = 1.0;
    for s in samplers {
        w *= s.draw(r, times);
    }
    let k = times.len();
    let mut gram = DMatrix::from_fn(k, k, |i, j| cov.eval(times[i], times[j]));
    let max_diag = gram.diagonal().max();
    for i in 0..k {
        gram[(i, i)] += RIDGE * max_diag.max(1e-300);
    }
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // per component: (2π)^{K/2} det^{-1/2} E[cos(x_l 1·xi)], xi ~ N(0, Γ^{-1})
    let norm = (0.5 * k as f64 * (2.0 * PI).ln() - 0.5 * log_det).exp();
    for &x in level {
        let phase = if x == 0.0 {
            1.0
        } else {
            // xi = L^{-T} z has covariance Γ^{-1}
            let z = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
            let xi = l.transpose().solve_upper_triangular(&z).unwrap_or_else(|| DVector::zeros(k));
            (x * xi.sum()).cos()
        };
        w *= norm * phase;
    }
    w
}

/// Mixed moment `E Π [W(L(b_i, x)) - W(L(a_i, x))]^{m_i}` from its
/// `(u, xi)`-integral representation by Monte Carlo.
pub fn moment_formula(q: &MomentQuery, budget: &MomentBudget) -> Result<MomentResult> {
    q.validate()?;
    let d = q.spec.dim;
    if q.any_odd() {
        return Ok(MomentResult {
            value: 0.0,
            std_error: 0.0,
            method: MomentMethod::FormulaMc,
            samples: 0,
        });
    }
    let dim = q.total_order() as usize * d / 2;
    if dim > budget.dim_cap {
        return Err(Error::Capacity(format!(
            "Fourier integral dimension {dim} exceeds the cap {}",
            budget.dim_cap
        )));
    }
    let hd = q.spec.hurst * d as f64;
    if hd >= 1.0 {
        return Err(Error::domain("the moment integral needs H d < 1"));
    }
    if budget.samples < 2 {
        return Err(Error::domain("need at least two Monte Carlo samples"));
    }
    let cov = covariance(&q.spec)?;
    let samplers: Vec<IntervalSampler> = q
        .intervals
        .iter()
        .zip(&q.m)
        .map(|(&(a, b), &mi)| IntervalSampler::new(a, b, (mi / 2) as usize, 1.0 - hd))
        .collect();
    let chunks = budget.samples.div_ceil(CHUNK);
    let partials = exec::par_map(chunks, |c| {
        let mut r = rng::stream(budget.seed, AUX_LANE + 1, c);
        let n = CHUNK.min(budget.samples - c * CHUNK);
        let mut s1 = KahanSum::new();
        let mut s2 = KahanSum::new();
        let mut times = Vec::new();
        for _ in 0..n {
            let w = formula_draw(&cov, &samplers, &q.level, &mut r, &mut times);
            s1.add(w);
            s2.add(w * w);
        }
        (s1.value(), s2.value())
    });
    let mut s1 = KahanSum::new();
    let mut s2 = KahanSum::new();
    for (a, b) in partials {
        s1.add(a);
        s2.add(b);
    }
    let n = budget.samples as f64;
    let mean = s1.value() / n;
    let var = ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    let pref = combinatorial_prefactor(&q.m, d);
    Ok(MomentResult {
        value: pref * mean,
        std_error: pref * (var / n).sqrt(),
        method: MomentMethod::FormulaMc,
        samples: budget.samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationBudget {
    pub replicates: u64,
    pub steps: usize,
    pub eps_proxy: f64,
    pub seed: u64,
}

impl Default for SimulationBudget {
    fn default() -> Self {
        SimulationBudget {
            replicates: 10_000,
            steps: 1 << 14,
            eps_proxy: 1e-4,
            seed: 1,
        }
    }
}

/// Same moment by simulating `X`, the heat-kernel local-time proxy at
/// `eps_proxy`, and independent Brownian increments `W(L(b)) - W(L(a))`.
pub fn moment_simulated(q: &MomentQuery, budget: &SimulationBudget) -> Result<MomentResult> {
    q.validate()?;
    if budget.replicates < 2 {
        return Err(Error::domain("need at least two replicates"));
    }
    let horizon = q.intervals.last().map(|iv| iv.1).unwrap_or(1.0);
    let sampler = PathSampler::new(&q.spec, horizon, budget.steps)?;
    let d = q.spec.dim;
    let cfg = EstimatorConfig::new(budget.eps_proxy, q.level.clone(), MultiIndex::zeros(d), horizon)?;
    // local time at every interval endpoint (0 at t = 0)
    let mut marks: Vec<f64> = q.intervals.iter().flat_map(|&(a, b)| [a, b]).filter(|&t| t > 0.0).collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let values = exec::try_par_map(budget.replicates, |rep| -> Result<f64> {
        let path = sampler.sample(budget.seed, rep);
        let lt = estimate_cumulative(&path, &cfg, &marks)?;
        let at = |t: f64| -> f64 {
            if t <= 0.0 {
                0.0
            } else {
                lt[marks.iter().position(|&m| m == t).expect("mark present")]
            }
        };
        let mut r = rng::stream(budget.seed, AUX_LANE, rep);
        let mut prod = 1.0;
        for (&(a, b), &mi) in q.intervals.iter().zip(&q.m) {
            let dl = (at(b) - at(a)).max(0.0);
            let z: f64 = r.sample(StandardNormal);
            prod *= (dl.sqrt() * z).powi(mi as i32);
        }
        Ok(prod)
    })?;
    let n = values.len() as f64;
    let mean = crate::stats::mean(&values);
    let se = (crate::stats::variance(&values) / n).sqrt();
    Ok(MomentResult {
        value: mean,
        std_error: se,
        method: MomentMethod::SimulationMc,
        samples: budget.replicates,
    })
}

// ---------------------------------------------------------------------------
// Inequality drivers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `|f^(x+y) - f^(x)| <= C ((|x|^{N-1}|y|) ∧ 1 + |y|^N ∧ 1)`.
    FourierIncrement,
    /// The product bound over `n` frequency pairs with weights `(i x)^k`.
    WeightedProduct { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub inequality: Inequality,
    pub k: Vec<f64>,
    pub trials: u64,
    pub max_ratio: f64,
    /// Maximum over an independent run with twice the trials.
    pub max_ratio_doubled: f64,
    pub drift: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub function: String,
    pub order: u32,
    pub checks: Vec<InequalityCheck>,
    pub pass: bool,
}

/// Relative drift allowed between the maxima at `trials` and `2 trials`.
pub const DRIFT_TOL: f64 = 0.10;

fn min1(v: f64) -> f64 {
    v.min(1.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Random point with log-uniform radius in `[1e-2, 1e2]`; one in eight
/// draws is exactly zero.
fn draw_point<R: Rng>(r: &mut R, d: usize) -> Vec<f64> {
    if r.random::<f64>() < 0.125 {
        return vec![0.0; d];
    }
    let dir: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let n = norm(&dir).max(1e-300);
    let radius = 10f64.powf(-2.0 + 4.0 * r.random::<f64>());
    dir.iter().map(|v| v / n * radius).collect()
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

fn increment_ratio(f: &dyn TestFunction, order: u32, x: &[f64], y: &[f64]) -> f64 {
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let lhs = (f.fourier(&xy) - f.fourier(x)).norm();
    let n = order as i32;
    let (nx, ny) = (norm(x), norm(y));
    let rhs = min1(nx.powi(n - 1) * ny) + min1(ny.powi(n));
    ratio(lhs, rhs)
}

fn weighted_term(f: &dyn TestFunction, k: &[f64], f0: Complex64, x: &[f64]) -> Complex64 {
    let mut w = Complex64::new(1.0, 0.0);
    for (&xl, &kl) in x.iter().zip(k) {
        w *= frac_power(xl, kl);
    }
    w * (f.fourier(x) - f0)
}

fn product_ratio(f: &dyn TestFunction, order: u32, k: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let d = f.dim();
    let f0 = f.fourier(&vec![0.0; d]);
    let mut shifted = Complex64::new(1.0, 0.0);
    let mut base = Complex64::new(1.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
        shifted *= weighted_term(f, k, f0, &xy);
        base *= weighted_term(f, k, f0, x);
    }
    let lhs = (shifted - base).norm();
    let kk: f64 = k.iter().sum();
    let n = order as f64;
    let nx: Vec<f64> = xs.iter().map(|x| norm(x)).collect();
    let ny: Vec<f64> = ys.iter().map(|y| norm(y)).collect();
    let mut rhs = 0.0;
    for j in 0..xs.len() {
        let (x, y) = (nx[j], ny[j]);
        let own = if kk > 0.0 {
            x.powf(kk) * min1(x.powf(n - 1.0) * y)
                + y.powf(kk) * min1(y).powf(n)
                + x.powf(kk - 1.0) * min1(x).powf(n) * y
                + y.powf(kk) * min1(x).powf(n)
        } else {
            min1(x.powf(n - 1.0) * y) + min1(y.powf(n))
        };
        let mut others = 1.0;
        for i in 0..xs.len() {
            if i != j {
                let (xi, yi) = (nx[i], ny[i]);
                others *= if kk > 0.0 {
                    xi.powf(kk) * min1(xi).powf(n) + yi.powf(kk) * min1(yi).powf(n)
                } else {
                    min1(yi.powf(n)) + min1(xi.powf(n))
                };
            }
        }
        rhs += own * others;
    }
    ratio(lhs, rhs)
}

fn max_ratio(f: &dyn TestFunction, order: u32, ineq: Inequality, k: &[f64], trials: u64, seed: u64, lane: u64) -> f64 {
    let d = f.dim();
    let chunks = trials.div_ceil(CHUNK);
    let maxima = exec::par_map(chunks, |c| {
        let mut r = rng::stream(seed, AUX_LANE + 16 + lane, c);
        let n = CHUNK.min(trials - c * CHUNK);
        let mut best: f64 = 0.0;
        for _ in 0..n {
            let v = match ineq {
                Inequality::FourierIncrement => {
                    let x = draw_point(&mut r, d);
                    let y = draw_point(&mut r, d);
                    increment_ratio(f, order, &x, &y)
                }
                Inequality::WeightedProduct { n } => {
                    let xs: Vec<Vec<f64>> = (0..n).map(|_| draw_point(&mut r, d)).collect();
                    let ys: Vec<Vec<f64>> = (0..n).map(|_| draw_point(&mut r, d)).collect();
                    product_ratio(f, order, k, &xs, &ys)
                }
            };
            best = if v.is_nan() { f64::INFINITY } else { best.max(v) };
        }
        best
    });
    maxima.into_iter().fold(0.0, f64::max)
}

/// Maximum LHS/RHS ratios of the two Fourier-difference inequalities over
/// random draws, for every `n <= max_n` and integer `k` with `|k| <= max_k`
/// (first coordinate only). Each maximum is recomputed from an independent
/// run with twice the trials; a check passes when both are finite and
/// within [`DRIFT_TOL`] of each other.
pub fn lemma_inequality_suite(
    f: &dyn TestFunction,
    order: u32,
    trials: u64,
    max_n: usize,
    max_k: u32,
    seed: u64,
) -> Result<InequalityReport> {
    if order == 0 || trials == 0 {
        return Err(Error::domain("need N >= 1 and at least one trial"));
    }
    let d = f.dim();
    let mut plan: Vec<(Inequality, Vec<f64>)> = vec![(Inequality::FourierIncrement, vec![0.0; d])];
    for n in 1..=max_n {
        for kk in 0..=max_k {
            let mut k = vec![0.0; d];
            k[0] = kk as f64;
            plan.push((Inequality::WeightedProduct { n }, k));
        }
    }
    let mut checks = Vec::new();
    for (lane, (ineq, k)) in plan.into_iter().enumerate() {
        let a = max_ratio(f, order, ineq, &k, trials, seed, 2 * lane as u64);
        let b = max_ratio(f, order, ineq, &k, 2 * trials, seed, 2 * lane as u64 + 1);
        let drift = if a == b { 0.0 } else { (b - a).abs() / a.max(b) };
        checks.push(InequalityCheck {
            inequality: ineq,
            k,
            trials,
            max_ratio: a,
            max_ratio_doubled: b,
            drift,
            pass: a.is_finite() && b.is_finite() && drift <= DRIFT_TOL,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(InequalityReport {
        function: f.name(),
        order,
        checks,
        pass,
    })
}
