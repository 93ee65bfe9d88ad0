//! Monte Carlo experiments: convergence rates of `L_eps^{(k)}` towards a
//! small-`eps` proxy, mixed-normal diagnostics of the rescaled error, and
//! the record store and tables they produce.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::heatkernel::{verify_space_membership, GaussianPolynomial, MultiIndex, TestFunction};
use crate::limits::{classify, constant, lp_terms, ConstantName, ConstantParams, Hurst, Regime, RegimeReport};
use crate::loctime::{estimate_cumulative, expected_estimate, recommended_grid_size, EstimatorConfig, IntegrationRule};
use crate::process::{covariance, PathSample, PathSampler, ProcessSpec};
use crate::rng::{self, AUX_LANE};
use crate::stats::{self, KahanSum, LineFit};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bootstrap resamples used for slope standard errors.
pub const BOOTSTRAP_RESAMPLES: u64 = 200;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Fbm,
    SubFbm,
    BiFbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    #[serde(default = "default_model")]
    pub model: Model,
    pub hurst: Hurst,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Bi-fBm only: `H'`, with `K = H / H'`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_prime: Option<f64>,
}

fn default_model() -> Model {
    Model::Fbm
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

impl ProcessConfig {
    pub fn spec(&self) -> Result<ProcessSpec> {
        let h = self.hurst.value();
        match self.model {
            Model::Fbm => ProcessSpec::fbm(h, self.sigma, self.dim),
            Model::SubFbm => ProcessSpec::sub_fbm(h, self.sigma, self.dim),
            Model::BiFbm => {
                let hp = self
                    .h_prime
                    .ok_or_else(|| Error::config("model bi_fbm needs h_prime"))?;
                ProcessSpec::bi_fbm(hp, h / hp, self.sigma, self.dim)
            }
        }
    }
}

/// Test functions selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FunctionChoice {
    #[default]
    #[serde(rename = "p1")]
    P1,
    /// `(3 - x^2) p_1 / 2`, order 4, d = 1.
    #[serde(rename = "p1-4th")]
    FourthOrder,
    /// `x p_1(x)` scaled to unit first moment, order 1, d = 1.
    #[serde(rename = "x-gauss")]
    OddBump,
}

impl FunctionChoice {
    pub fn build(&self, dim: usize) -> Result<GaussianPolynomial> {
        match self {
            FunctionChoice::P1 => Ok(GaussianPolynomial::standard(dim)),
            FunctionChoice::FourthOrder if dim == 1 => Ok(GaussianPolynomial::fourth_order_kernel()),
            FunctionChoice::OddBump if dim == 1 => Ok(GaussianPolynomial::odd_bump()),
            _ => Err(Error::config(format!("function {self:?} is only defined for d = 1"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Level point `x`; zeros when omitted.
    #[serde(default)]
    pub level: Option<Vec<f64>>,
    /// Derivative order `k`; zeros when omitted.
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub function: FunctionChoice,
    /// Order `N` of `S~_{d,N}`; the function's own order when omitted.
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default)]
    pub rule: IntegrationRule,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            level: None,
            k: None,
            horizon: 1.0,
            function: FunctionChoice::P1,
            order: None,
            rule: IntegrationRule::Trapezoid,
        }
    }
}

/// Geometric grid `eps_0, eps_0 r, ..., eps_0 r^{count-1}` plus the proxy
/// parameter `eps_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub eps0: f64,
    #[serde(default = "half")]
    pub ratio: f64,
    pub count: usize,
    pub eps_ref: f64,
    /// Path grid size; derived from `eps_ref` when omitted.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn half() -> f64 {
    0.5
}
fn default_max_steps() -> usize {
    1 << 18
}

impl GridSection {
    pub fn epsilons(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.eps0 * self.ratio.powi(i as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSection {
    #[serde(default = "quarter")]
    pub t1: f64,
    #[serde(default = "default_gaps")]
    pub gaps: Vec<f64>,
}

fn quarter() -> f64 {
    0.25
}
fn default_gaps() -> Vec<f64> {
    vec![0.125, 0.25, 0.5]
}

impl Default for TightnessSection {
    fn default() -> Self {
        TightnessSection {
            t1: quarter(),
            gaps: default_gaps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub replicates: u64,
    pub process: ProcessConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    pub grid: GridSection,
    #[serde(default)]
    pub tightness: TightnessSection,
    /// Output locations; left out of the hash.
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON form (outputs excluded).
    pub fn hash(&self) -> String {
        let mut bare = self.clone();
        bare.output = OutputSection::default();
        let json = serde_json::to_string(&bare).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn dim(&self) -> usize {
        self.process.dim
    }

    pub fn level(&self) -> Vec<f64> {
        self.estimator.level.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }

    pub fn k(&self) -> Result<MultiIndex> {
        match &self.estimator.k {
            Some(k) => MultiIndex::new(k.clone()).map_err(|e| Error::config(e.to_string())),
            None => Ok(MultiIndex::zeros(self.dim())),
        }
    }

    pub fn function(&self) -> Result<GaussianPolynomial> {
        self.estimator.function.build(self.dim())
    }

    pub fn order(&self) -> Result<u32> {
        Ok(self.estimator.order.unwrap_or(self.function()?.declared_order()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if self.replicates < 2 {
            return Err(Error::config("replicates must be at least 2"));
        }
        if g.count < 3 {
            return Err(Error::config(format!(
                "the epsilon grid has {} points; a slope fit needs at least 3",
                g.count
            )));
        }
        if !(g.eps0 > 0.0 && g.eps0.is_finite()) || !(g.ratio > 0.0 && g.ratio < 1.0) {
            return Err(Error::config("the epsilon grid must be positive and strictly decreasing (0 < ratio < 1)"));
        }
        let eps = g.epsilons();
        if !(g.eps_ref > 0.0 && g.eps_ref < *eps.last().unwrap()) {
            return Err(Error::config("eps_ref must be positive and below the smallest grid epsilon"));
        }
        if !(self.estimator.horizon > 0.0 && self.estimator.horizon.is_finite()) {
            return Err(Error::config("horizon must be positive"));
        }
        if self.level().len() != self.dim() {
            return Err(Error::config("level must have d components"));
        }
        let k = self.k()?;
        if k.dim() != self.dim() {
            return Err(Error::config("k must have d components"));
        }
        let f = self.function()?;
        if !k.components().iter().all(|&c| c == 0.0) && self.estimator.function != FunctionChoice::P1 {
            return Err(Error::config("derivatives k > 0 are supported for the heat kernel p1 only"));
        }
        if self.order()? == 0 || f.dim() != self.dim() {
            return Err(Error::config("order N must be >= 1"));
        }
        self.process.spec().map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    fn steps(&self) -> usize {
        let g = &self.grid;
        g.steps.unwrap_or_else(|| {
            recommended_grid_size(self.process.hurst.value(), g.eps_ref, self.estimator.horizon).min(g.max_steps)
        })
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rates,
    Clt,
}

/// A check that was in force for a run; failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    /// `ell(eps)`, or `eps^{-N/2}` in the rate experiment.
    pub scale: f64,
    pub mean_abs_diff: f64,
    pub sd_diff: f64,
    pub mean_diff: f64,
    pub var_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Which per-epsilon statistic was regressed on `ln eps`.
    pub statistic: String,
    pub slope: f64,
    pub intercept: f64,
    /// Bootstrap standard error over replicates.
    pub slope_se: f64,
    /// Least-squares standard error from the residuals.
    pub regression_se: f64,
    pub expected: Option<f64>,
}

/// LP regime: scaled differences at the smallest epsilon against the limit
/// `Σ c_I L^{(k + e_I)}` built from proxies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpComparison {
    pub epsilon: f64,
    pub mean_scaled: f64,
    pub mean_predicted: f64,
    /// `mean |scaled - predicted| / mean |predicted|`.
    pub relative_l1: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub epsilon: f64,
    pub var_f: f64,
    pub constant: f64,
    pub constant_name: ConstantName,
    pub mean_local_time: f64,
    pub expected_local_time: f64,
    /// `Var F / (D mean L_proxy)`.
    pub ratio: f64,
    /// `Var F / (D E L)` with `E L` from the deterministic integral.
    pub ratio_expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tightness {
    pub t1: f64,
    pub gaps: Vec<f64>,
    /// `E (F(t1 + gap) - F(t1))^2` at the smallest epsilon.
    pub second_moments: Vec<f64>,
    pub exponent: f64,
    /// `1 - Hd`.
    pub reference_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltDiagnostics {
    pub variance: Vec<VarianceCheck>,
    /// Excess kurtosis of `F / sqrt(D L_eps)` at the smallest epsilon.
    pub kurtosis: f64,
    pub kurtosis_se: f64,
    /// Same with `L_proxy` in place of `L_eps`; dominated by paths whose
    /// proxy local time is near zero.
    pub kurtosis_proxy_normalized: f64,
    pub correlation: f64,
    pub correlation_se: f64,
    pub tightness: Tightness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub software_version: String,
    pub regime: RegimeReport,
    pub gates: Vec<Gate>,
    pub steps: usize,
    pub epsilons: Vec<f64>,
    /// Per epsilon, per replicate `F_eps(T) = scale (L_eps - f^(0) L_proxy)`.
    pub values: Vec<Vec<f64>>,
    /// Per replicate `L_proxy^{(k)}(T, x)`.
    pub proxy: Vec<f64>,
    pub summary: Vec<EpsilonSummary>,
    pub fit: SlopeFit,
    pub lp: Option<LpComparison>,
    pub clt: Option<CltDiagnostics>,
}

/// A stored line: the record plus when it was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub written_unix_ms: u64,
    pub record: ExperimentRecord,
}

/// Append-only JSON-lines store.
#[derive(Debug, Clone)]
pub struct RecordStore {
    path: PathBuf,
}

impl RecordStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RecordStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &ExperimentRecord) -> Result<StoredRecord> {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let stored = StoredRecord {
            written_unix_ms: ms,
            record: record.clone(),
        };
        self.append_stored(&stored)?;
        Ok(stored)
    }

    pub fn append_stored(&self, stored: &StoredRecord) -> Result<()> {
        let line = serde_json::to_string(stored).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn read_all(&self) -> Result<Vec<StoredRecord>> {
        let f = File::open(&self.path)?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", self.path.display(), i + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize)]
struct TableRow {
    epsilon: f64,
    scale: f64,
    mean_abs_diff: f64,
    sd_diff: f64,
    mean_diff: f64,
    var_f: f64,
    variance_ratio: Option<f64>,
}

/// One CSV row per epsilon.
pub fn write_table(path: &Path, record: &ExperimentRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for (i, s) in record.summary.iter().enumerate() {
        let ratio = record.clt.as_ref().map(|c| c.variance[i].ratio);
        w.serialize(TableRow {
            epsilon: s.epsilon,
            scale: s.scale,
            mean_abs_diff: s.mean_abs_diff,
            sd_diff: s.sd_diff,
            mean_diff: s.mean_diff,
            var_f: s.var_f,
            variance_ratio: ratio,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Persists to the configured outputs, if any.
pub fn persist(record: &ExperimentRecord) -> Result<()> {
    let out = &record.config.output;
    if let Some(p) = &out.records {
        RecordStore::new(p).append(record)?;
    }
    if let Some(p) = &out.table {
        write_table(p, record)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Per-path work
// ---------------------------------------------------------------------------

struct Setup {
    spec: ProcessSpec,
    f: Arc<GaussianPolynomial>,
    f0: f64,
    k: MultiIndex,
    level: Vec<f64>,
    order: u32,
    horizon: f64,
    rule: IntegrationRule,
    epsilons: Vec<f64>,
    eps_ref: f64,
    steps: usize,
    report: RegimeReport,
    gates: Vec<Gate>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let spec = cfg.process.spec()?;
    let k = cfg.k()?;
    let f = Arc::new(cfg.function()?);
    let order = cfg.order()?;
    let report = classify(cfg.process.hurst, &k, spec.dim, order)?;
    let steps = cfg.steps();
    let mut gates = Vec::new();
    let membership = verify_space_membership(f.as_ref(), order, 1e-8)?;
    gates.push(Gate {
        name: "function_space".into(),
        pass: membership.member,
        detail: format!("{} in S~_(d,{order})", f.name()),
    });
    gates.push(Gate {
        name: "existence".into(),
        pass: report.regime != Regime::Nonexistent,
        detail: format!("H(2|k|+d) = {}", report.index),
    });
    // path increments at the grid scale versus the proxy kernel width
    let cov = covariance(&spec)?;
    let dt = cfg.estimator.horizon / steps as f64;
    let spread = cov.increment_variance(cfg.estimator.horizon - dt, dt).sqrt();
    let width = cfg.grid.eps_ref.sqrt();
    gates.push(Gate {
        name: "grid_resolution".into(),
        pass: spread <= width,
        detail: format!("increment sd {spread:.3e} vs sqrt(eps_ref) {width:.3e} at n = {steps}"),
    });
    let f0 = f.fourier(&vec![0.0; spec.dim]).re;
    Ok(Setup {
        spec,
        f,
        f0,
        k,
        level: cfg.level(),
        order,
        horizon: cfg.estimator.horizon,
        rule: cfg.estimator.rule,
        epsilons: cfg.grid.epsilons(),
        eps_ref: cfg.grid.eps_ref,
        steps,
        report,
        gates,
    })
}

impl Setup {
    fn is_heat_kernel(&self) -> bool {
        self.f.terms.len() == 1 && self.f.terms[0].0.iter().all(|&e| e == 0) && self.f.terms[0].1 == 1.0
    }

    fn estimator(&self, eps: f64, k: &MultiIndex) -> Result<EstimatorConfig> {
        Ok(EstimatorConfig::new(eps, self.level.clone(), k.clone(), self.horizon)?.with_rule(self.rule))
    }

    /// `eps^{-(|k|+d)/2} ∫_0^t f^{(k)}(eps^{-1/2}(X_s + x)) ds` at each of `times`.
    fn functional(&self, path: &PathSample, eps: f64, times: &[f64]) -> Result<Vec<f64>> {
        if self.is_heat_kernel() {
            return estimate_cumulative(path, &self.estimator(eps, &self.k)?, times);
        }
        let d = self.spec.dim;
        let n = path.steps;
        let scale = eps.powf(-0.5 * d as f64);
        let inv = eps.powf(-0.5);
        let mut y = vec![0.0; d];
        let g: Vec<f64> = (0..=n)
            .map(|i| {
                for l in 0..d {
                    y[l] = inv * (path.values[l][i] + self.level[l]);
                }
                scale * self.f.eval(&y)
            })
            .collect();
        let h = path.step();
        times
            .iter()
            .map(|&t| {
                let m = (t / h).round() as usize;
                if m == 0 || m > n || ((t / h) - m as f64).abs() > 1e-9 * (t / h).max(1.0) {
                    return Err(Error::domain(format!("time {t} is not a point of the path grid")));
                }
                let mut acc = KahanSum::new();
                match self.rule {
                    IntegrationRule::RiemannLeft => g[..m].iter().for_each(|&v| acc.add(v)),
                    IntegrationRule::Trapezoid => {
                        acc.add(0.5 * g[0]);
                        g[1..m].iter().for_each(|&v| acc.add(v));
                        acc.add(0.5 * g[m]);
                    }
                }
                Ok(acc.value() * h)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ReplicateOutput {
    /// `L_eps - f^(0) L_proxy` at the horizon, per epsilon.
    diffs: Vec<f64>,
    proxy: f64,
    /// Plain local-time proxy (`k = 0`) at the horizon.
    local_time: f64,
    /// `L_eps(T, x)` with `k = 0` at the smallest epsilon.
    local_time_eps: f64,
    terminal: f64,
    /// LP regime: predicted limit of the scaled difference.
    predicted: Option<f64>,
    /// Differences over `(t1, t1 + gap]` at the smallest epsilon.
    increments: Vec<f64>,
}

fn replicate(
    s: &Setup,
    sampler: &PathSampler,
    seed: u64,
    rep: u64,
    lp: Option<&[(MultiIndex, f64)]>,
    tight: Option<&TightnessSection>,
) -> Result<ReplicateOutput> {
    let path = sampler.sample(seed, rep);
    let t = s.horizon;
    let mut times = vec![t];
    if let Some(ts) = tight {
        times.push(ts.t1);
        times.extend(ts.gaps.iter().map(|g| ts.t1 + g));
    }
    let proxy_all = s.functional_proxy(&path, &times)?;
    let proxy = proxy_all[0];
    let mut diffs = Vec::with_capacity(s.epsilons.len());
    let mut smallest = Vec::new();
    for (i, &eps) in s.epsilons.iter().enumerate() {
        let ts = if i + 1 == s.epsilons.len() { &times[..] } else { &times[..1] };
        let v = s.functional(&path, eps, ts)?;
        diffs.push(v[0] - s.f0 * proxy);
        if i + 1 == s.epsilons.len() {
            smallest = v;
        }
    }
    let increments = match tight {
        Some(ts) => (0..ts.gaps.len())
            .map(|j| {
                let le = smallest[2 + j] - smallest[1];
                let lr = proxy_all[2 + j] - proxy_all[1];
                le - s.f0 * lr
            })
            .collect(),
        None => Vec::new(),
    };
    let zero = MultiIndex::zeros(s.spec.dim);
    let local_time = if s.k == zero {
        proxy
    } else {
        estimate_cumulative(&path, &s.estimator(s.eps_ref, &zero)?, &[t])?[0]
    };
    let eps_min = *s.epsilons.last().expect("non-empty grid");
    let local_time_eps = if s.k == zero && s.is_heat_kernel() {
        diffs.last().copied().unwrap_or(0.0) + proxy
    } else {
        estimate_cumulative(&path, &s.estimator(eps_min, &zero)?, &[t])?[0]
    };
    let predicted = match lp {
        Some(terms) => {
            let mut acc = 0.0;
            for (idx, c) in terms {
                acc += c * estimate_cumulative(&path, &s.estimator(s.eps_ref, idx)?, &[t])?[0];
            }
            Some(acc)
        }
        None => None,
    };
    let end = (t / path.step()).round() as usize;
    Ok(ReplicateOutput {
        diffs,
        proxy,
        local_time,
        local_time_eps,
        terminal: path.values[0][end],
        predicted,
        increments,
    })
}

impl Setup {
    /// `L_proxy^{(k)}` at `times`: the heat-kernel estimator at `eps_ref`.
    fn functional_proxy(&self, path: &PathSample, times: &[f64]) -> Result<Vec<f64>> {
        estimate_cumulative(path, &self.estimator(self.eps_ref, &self.k)?, times)
    }
}

/// Limit coefficients grouped by the derivative index `k + e_{i_1} + ... + e_{i_N}`.
fn lp_plan(s: &Setup) -> Result<Vec<(MultiIndex, f64)>> {
    let mut plan: Vec<(MultiIndex, f64)> = Vec::new();
    for term in lp_terms(s.f.as_ref(), s.order) {
        if term.re == 0.0 {
            continue;
        }
        let mut k = s.k.components().to_vec();
        term.indices.iter().for_each(|&i| k[i] += 1.0);
        let k = MultiIndex::new(k)?;
        match plan.iter_mut().find(|(m, _)| *m == k) {
            Some(entry) => entry.1 += term.re,
            None => plan.push((k, term.re)),
        }
    }
    Ok(plan)
}

fn run_replicates(
    cfg: &ExperimentConfig,
    s: &Setup,
    lp: Option<&[(MultiIndex, f64)]>,
    tight: Option<&TightnessSection>,
) -> Result<Vec<ReplicateOutput>> {
    let sampler = PathSampler::new(&s.spec, s.horizon, s.steps)?;
    log::info!(
        "{} replicates, {} grid steps, {:?} sampling",
        cfg.replicates,
        s.steps,
        sampler.method()
    );
    exec::try_par_map(cfg.replicates, |rep| replicate(s, &sampler, cfg.seed, rep, lp, tight))
}

fn column(outs: &[ReplicateOutput], i: usize) -> Vec<f64> {
    outs.iter().map(|o| o.diffs[i]).collect()
}

/// Bootstrap SE of the log-log slope of `stat` over replicate resamples.
fn bootstrap_slope(
    columns: &[Vec<f64>],
    epsilons: &[f64],
    stat: fn(&[f64]) -> f64,
    seed: u64,
) -> f64 {
    let m = columns[0].len();
    let slopes = exec::par_map(BOOTSTRAP_RESAMPLES, |b| {
        let mut r = rng::stream(seed, AUX_LANE + 64, b);
        let idx: Vec<usize> = (0..m).map(|_| r.random_range(0..m)).collect();
        let ys: Vec<f64> = columns
            .iter()
            .map(|c| stat(&idx.iter().map(|&i| c[i]).collect::<Vec<_>>()))
            .collect();
        stats::log_log_fit(epsilons, &ys).slope
    });
    let finite: Vec<f64> = slopes.into_iter().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return f64::INFINITY;
    }
    stats::std_dev(&finite)
}

fn mean_abs(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    stats::mean(&v)
}

fn summaries(outs: &[ReplicateOutput], epsilons: &[f64], scales: &[f64]) -> (Vec<Vec<f64>>, Vec<EpsilonSummary>) {
    let mut values = Vec::new();
    let mut summary = Vec::new();
    for (i, (&eps, &scale)) in epsilons.iter().zip(scales).enumerate() {
        let c = column(outs, i);
        let f: Vec<f64> = c.iter().map(|v| scale * v).collect();
        summary.push(EpsilonSummary {
            epsilon: eps,
            scale,
            mean_abs_diff: mean_abs(&c),
            sd_diff: stats::std_dev(&c),
            mean_diff: stats::mean(&c),
            var_f: stats::variance(&f),
        });
        values.push(f);
    }
    (values, summary)
}

fn slope_fit(
    statistic: &str,
    columns: &[Vec<f64>],
    epsilons: &[f64],
    stat: fn(&[f64]) -> f64,
    seed: u64,
    expected: Option<f64>,
) -> SlopeFit {
    let ys: Vec<f64> = columns.iter().map(|c| stat(c)).collect();
    let fit: LineFit = stats::log_log_fit(epsilons, &ys);
    SlopeFit {
        statistic: statistic.into(),
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: bootstrap_slope(columns, epsilons, stat, seed),
        regression_se: fit.slope_se,
        expected,
    }
}

/// Convergence rate of `L_eps^{(k)}` to the proxy: log-log slope of
/// `mean |L_eps - f^(0) L_proxy|` over the epsilon grid. In the LP regime
/// the scaled difference at the smallest epsilon is also compared with the
/// limit built from higher-derivative proxies.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let mut s = setup(cfg)?;
    let in_lp = s.report.regime == Regime::LpLimit;
    if !in_lp {
        log::warn!("rate experiment outside the LP regime ({}); running anyway", s.report.regime);
    }
    s.gates.push(Gate {
        name: "regime".into(),
        pass: in_lp,
        detail: s.report.summary(),
    });
    let plan = if in_lp { Some(lp_plan(&s)?) } else { None };
    let outs = run_replicates(cfg, &s, plan.as_deref(), None)?;
    let n = s.order as f64;
    let scales: Vec<f64> = s.epsilons.iter().map(|e| e.powf(-0.5 * n)).collect();
    let (values, summary) = summaries(&outs, &s.epsilons, &scales);
    let columns: Vec<Vec<f64>> = (0..s.epsilons.len()).map(|i| column(&outs, i)).collect();
    let fit = slope_fit(
        "mean_abs_diff",
        &columns,
        &s.epsilons,
        mean_abs,
        cfg.seed,
        if in_lp { Some(0.5 * n) } else { None },
    );
    let lp = plan.map(|plan| {
        let last = s.epsilons.len() - 1;
        let scaled: Vec<f64> = values[last].clone();
        let pred: Vec<f64> = outs.iter().map(|o| o.predicted.unwrap_or(0.0)).collect();
        let dev: Vec<f64> = scaled.iter().zip(&pred).map(|(a, b)| (a - b).abs()).collect();
        LpComparison {
            epsilon: s.epsilons[last],
            mean_scaled: stats::mean(&scaled),
            mean_predicted: stats::mean(&pred),
            relative_l1: stats::mean(&dev) / mean_abs(&pred),
            coefficient: plan.iter().map(|(_, c)| c).sum(),
        }
    });
    let proxy = outs.iter().map(|o| o.proxy).collect();
    Ok(ExperimentRecord {
        experiment: ExperimentKind::Rates,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        software_version: SOFTWARE_VERSION.into(),
        regime: s.report,
        gates: s.gates,
        steps: s.steps,
        epsilons: s.epsilons,
        values,
        proxy,
        summary,
        fit,
        lp,
        clt: None,
    })
}

fn variance_constant(s: &Setup, cfg: &ExperimentConfig) -> Result<(ConstantName, f64)> {
    let p1 = s.is_heat_kernel();
    let name = match (s.report.regime, p1) {
        (Regime::Clt, true) => ConstantName::Dtilde2,
        (Regime::Clt, false) => ConstantName::DHdClt,
        (Regime::BoundaryLog, true) => ConstantName::Dtilde1,
        (Regime::BoundaryLog, false) => ConstantName::DHdBoundary,
        (r, _) => {
            return Err(Error::config(format!(
                "the distributional experiment needs the CLT or BOUNDARY_LOG regime, got {r}"
            )))
        }
    };
    let f: Arc<dyn TestFunction> = s.f.clone();
    let params = ConstantParams::new(cfg.process.hurst, s.spec.increment_sigma(), s.spec.dim)
        .with_k(s.k.clone())
        .with_order(s.order)
        .with_function(f);
    Ok((name, constant(name, &params)?.value))
}

/// Mixed-normal diagnostics for `F_eps(T) = ell(eps) (L_eps - f^(0) L_proxy)`:
/// variance against `D E L(T, x)`, kurtosis of `F / sqrt(D L_eps)`,
/// correlation with `X_T`, the slope of `sd(L_eps - L_proxy)` and an
/// increment-moment exponent in `T`.
pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let mut s = setup(cfg)?;
    s.gates.push(Gate {
        name: "regime".into(),
        pass: matches!(s.report.regime, Regime::Clt | Regime::BoundaryLog),
        detail: s.report.summary(),
    });
    let (cname, dconst) = variance_constant(&s, cfg)?;
    let tight = &cfg.tightness;
    let tmax = tight.t1 + tight.gaps.iter().cloned().fold(0.0, f64::max);
    if tight.gaps.len() < 2 || tight.t1 <= 0.0 || tmax > s.horizon || tight.gaps.iter().any(|&g| g <= 0.0) {
        return Err(Error::config("tightness needs t1 > 0, at least two positive gaps, and t1 + gap <= horizon"));
    }
    let outs = run_replicates(cfg, &s, None, Some(tight))?;
    let scales: Vec<f64> = s
        .epsilons
        .iter()
        .map(|&e| crate::limits::scaling(&s.report, e))
        .collect::<Result<_>>()?;
    let (values, summary) = summaries(&outs, &s.epsilons, &scales);
    let columns: Vec<Vec<f64>> = (0..s.epsilons.len()).map(|i| column(&outs, i)).collect();
    let expected_slope = if s.report.regime == Regime::Clt { Some(-s.report.exponent) } else { None };
    let fit = slope_fit("sd_diff", &columns, &s.epsilons, stats::std_dev, cfg.seed, expected_slope);

    let local: Vec<f64> = outs.iter().map(|o| o.local_time).collect();
    let mean_lt = stats::mean(&local);
    let zero = MultiIndex::zeros(s.spec.dim);
    let exp_lt = expected_estimate(&s.spec, &s.estimator(s.eps_ref, &zero)?)?;
    let variance = summary
        .iter()
        .map(|e| VarianceCheck {
            epsilon: e.epsilon,
            var_f: e.var_f,
            constant: dconst,
            constant_name: cname,
            mean_local_time: mean_lt,
            expected_local_time: exp_lt,
            ratio: e.var_f / (dconst * mean_lt),
            ratio_expected: e.var_f / (dconst * exp_lt),
        })
        .collect();
    let last = s.epsilons.len() - 1;
    let f = &values[last];
    let normalize = |by: &[f64]| -> Vec<f64> {
        f.iter()
            .zip(by)
            .filter(|(_, &l)| l > 0.0)
            .map(|(v, &l)| v / (dconst * l).sqrt())
            .collect()
    };
    let local_eps: Vec<f64> = outs.iter().map(|o| o.local_time_eps).collect();
    let (kurtosis, kurtosis_se) = stats::excess_kurtosis(&normalize(&local_eps));
    let (kurtosis_proxy_normalized, _) = stats::excess_kurtosis(&normalize(&local));
    let terminal: Vec<f64> = outs.iter().map(|o| o.terminal).collect();
    let (correlation, correlation_se) = stats::correlation(f, &terminal);

    let scale = scales[last];
    let second_moments: Vec<f64> = (0..tight.gaps.len())
        .map(|j| {
            let sq: Vec<f64> = outs.iter().map(|o| (scale * o.increments[j]).powi(2)).collect();
            stats::mean(&sq)
        })
        .collect();
    let tfit = stats::log_log_fit(&tight.gaps, &second_moments);
    let tightness = Tightness {
        t1: tight.t1,
        gaps: tight.gaps.clone(),
        second_moments,
        exponent: tfit.slope,
        reference_exponent: 1.0 - s.spec.hurst * s.spec.dim as f64,
    };
    let proxy = outs.iter().map(|o| o.proxy).collect();
    Ok(ExperimentRecord {
        experiment: ExperimentKind::Clt,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        software_version: SOFTWARE_VERSION.into(),
        regime: s.report,
        gates: s.gates,
        steps: s.steps,
        epsilons: s.epsilons,
        values,
        proxy,
        summary,
        fit,
        lp: None,
        clt: Some(CltDiagnostics {
            variance,
            kurtosis,
            kurtosis_se,
            kurtosis_proxy_normalized,
            correlation,
            correlation_se,
            tightness,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
replicates = 8

[process]
hurst = "1/3"

[grid]
eps0 = 0.0625
count = 3
eps_ref = 0.001
steps = 1024
"#;

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.process.model, Model::Fbm);
        assert_eq!(cfg.grid.ratio, 0.5);
        assert_eq!(cfg.estimator.function, FunctionChoice::P1);
        assert_eq!(cfg.grid.epsilons(), vec![0.0625, 0.03125, 0.015625]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = ExperimentConfig::from_toml(&format!("{BASE}\nbogus = 1\n")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("steps = 1024", "stepz = 1024")).unwrap_err();
        assert!(err.to_string().contains("stepz"));
    }

    #[test]
    fn degenerate_grid_rejected() {
        let cfg = ExperimentConfig::from_toml(&BASE.replace("count = 3", "count = 2")).unwrap();
        assert!(matches!(run_rate_experiment(&cfg), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_toml(&BASE.replace("replicates = 8", "replicates = 1")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_toml(&BASE.replace("eps_ref = 0.001", "eps_ref = 0.1")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_outputs() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.output.records = Some("x.jsonl".into());
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn clt_run_has_diagnostics_and_is_deterministic() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let a = run_clt_experiment(&cfg).unwrap();
        let b = exec::with_threads(2, || run_clt_experiment(&cfg).unwrap());
        assert_eq!(a, b);
        let clt = a.clt.as_ref().unwrap();
        assert_eq!(clt.variance.len(), 3);
        assert_eq!(clt.tightness.second_moments.len(), 3);
        assert_eq!(a.values[0].len(), 8);
        assert!(a.fit.slope.is_finite());
        assert_eq!(a.regime.regime, Regime::Clt);
    }

    #[test]
    fn clt_rejects_lp_regime() {
        let cfg = ExperimentConfig::from_toml(&BASE.replace("\"1/3\"", "0.1")).unwrap();
        assert!(matches!(run_clt_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rate_run_in_lp_regime_reports_comparison() {
        let cfg = ExperimentConfig::from_toml(&BASE.replace("\"1/3\"", "0.1")).unwrap();
        let rec = run_rate_experiment(&cfg).unwrap();
        let lp = rec.lp.as_ref().unwrap();
        assert_eq!(lp.coefficient, -0.5);
        assert_eq!(rec.fit.expected, Some(1.0));
        assert!(rec.gates.iter().any(|g| g.name == "regime" && g.pass));
    }

    #[test]
    fn record_store_round_trip() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let rec = run_rate_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::new(dir.path().join("r.jsonl"));
        let stored = store.append(&rec).unwrap();
        let back = store.read_all().unwrap();
        assert_eq!(back, vec![stored.clone()]);
        let again = RecordStore::new(dir.path().join("s.jsonl"));
        again.append_stored(&back[0]).unwrap();
        assert_eq!(
            std::fs::read(store.path()).unwrap(),
            std::fs::read(again.path()).unwrap()
        );
        let table = dir.path().join("t.csv");
        write_table(&table, &rec).unwrap();
        let text = std::fs::read_to_string(&table).unwrap();
        assert!(text.starts_with("epsilon,scale,"));
        assert_eq!(text.lines().count(), 4);
    }
}
