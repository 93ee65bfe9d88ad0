//! Regime classification, scaling factors and limiting constants.
//!
//! With `q = H (2|k| + d)` the parameter space splits into
//! `q >= 1` (no limit object), `q < 1 - 2NH` (L^p limit),
//! `q = 1 - 2NH` (log-corrected fluctuations) and `1 - 2NH < q < 1`
//! (mixed-normal fluctuations).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatkernel::{frac_power, multi_indices, GaussianPolynomial, MultiIndex, TestFunction};
use crate::quadrature::{composite, graded_breakpoints, uniform_breakpoints, GaussLegendre};

// ---------------------------------------------------------------------------
// Hurst parameter with optional exact value
// ---------------------------------------------------------------------------

/// A Hurst index, exact when it was written as a fraction `p/q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HurstRepr", into = "HurstRepr")]
pub struct Hurst {
    value: f64,
    exact: Option<Rational64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HurstRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<HurstRepr> for Hurst {
    type Error = Error;
    fn try_from(r: HurstRepr) -> Result<Self> {
        match r {
            HurstRepr::Number(v) => Hurst::approx(v),
            HurstRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Hurst> for HurstRepr {
    fn from(h: Hurst) -> Self {
        match h.exact {
            Some(r) => HurstRepr::Text(format!("{}/{}", r.numer(), r.denom())),
            None => HurstRepr::Number(h.value),
        }
    }
}

impl Hurst {
    pub fn approx(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::domain(format!("Hurst index {value} must lie in (0, 1)")));
        }
        Ok(Hurst { value, exact: None })
    }

    pub fn exact(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::domain("zero denominator in Hurst index"));
        }
        let r = Rational64::new(numer, denom);
        let value = *r.numer() as f64 / *r.denom() as f64;
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::domain(format!("Hurst index {r} must lie in (0, 1)")));
        }
        Ok(Hurst { value, exact: Some(r) })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn rational(&self) -> Option<Rational64> {
        self.exact
    }
}

impl FromStr for Hurst {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| Error::config(format!("bad Hurst index '{s}'")))?;
            let q: i64 = q.trim().parse().map_err(|_| Error::config(format!("bad Hurst index '{s}'")))?;
            Hurst::exact(p, q)
        } else {
            let v: f64 = s.parse().map_err(|_| Error::config(format!("bad Hurst index '{s}'")))?;
            Hurst::approx(v)
        }
    }
}

impl fmt::Display for Hurst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact {
            Some(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            None => write!(f, "{}", self.value),
        }
    }
}

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    LpLimit,
    BoundaryLog,
    Clt,
    Nonexistent,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::LpLimit => "LP_LIMIT",
            Regime::BoundaryLog => "BOUNDARY_LOG",
            Regime::Clt => "CLT",
            Regime::Nonexistent => "NONEXISTENT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub hurst: Hurst,
    pub k: MultiIndex,
    pub dim: usize,
    pub order: u32,
    /// `H (2|k| + d)`.
    pub index: f64,
    /// `1 - 2NH`.
    pub lp_threshold: f64,
    /// Exponent of `eps` in the scaling factor (0 when no limit exists).
    pub exponent: f64,
    pub has_log: bool,
    /// Whether the boundary comparison was decided in exact arithmetic.
    pub boundary_exact: bool,
    /// Variance constant governing the limit, if any.
    pub constant: Option<ConstantName>,
}

/// Rational value of `k`'s components when each is `p/q` with `q <= 64`.
fn rational_order(k: &MultiIndex) -> Option<Rational64> {
    let mut acc = Rational64::from_integer(0);
    for &c in k.components() {
        let q = (1..=64i64).find(|&q| (c * q as f64).fract() == 0.0 && (c * q as f64).abs() < 1e15)?;
        acc += Rational64::new((c * q as f64) as i64, q);
    }
    Some(acc)
}

/// Boundary relative tolerance for floating inputs.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub fn classify(hurst: Hurst, k: &MultiIndex, dim: usize, order: u32) -> Result<RegimeReport> {
    if dim == 0 || order == 0 {
        return Err(Error::domain("d and N must be >= 1"));
    }
    if k.dim() != dim {
        return Err(Error::Shape(format!("k has {} components for d = {dim}", k.dim())));
    }
    let h = hurst.value();
    let kk = k.order();
    let d = dim as f64;
    let n = order as f64;
    let index = h * (2.0 * kk + d);
    let lp_threshold = 1.0 - 2.0 * n * h;

    let exact = hurst.rational().zip(rational_order(k));
    let (regime, boundary_exact) = if let Some((hr, kr)) = exact {
        let one = Rational64::from_integer(1);
        let q = hr * (Rational64::from_integer(2) * kr + Rational64::from_integer(dim as i64));
        let thr = one - Rational64::from_integer(2 * order as i64) * hr;
        let regime = if q >= one {
            Regime::Nonexistent
        } else if q < thr {
            Regime::LpLimit
        } else if q == thr {
            Regime::BoundaryLog
        } else {
            Regime::Clt
        };
        (regime, true)
    } else {
        // compare H (2|k| + d + 2N) with 1
        let total = h * (2.0 * kk + d + 2.0 * n);
        let regime = if index >= 1.0 {
            Regime::Nonexistent
        } else if (total - 1.0).abs() <= BOUNDARY_TOL {
            Regime::BoundaryLog
        } else if total < 1.0 {
            Regime::LpLimit
        } else {
            Regime::Clt
        };
        (regime, false)
    };
    let (exponent, has_log, constant) = match regime {
        Regime::LpLimit => (-0.5 * n, false, Some(ConstantName::LpCoefficient)),
        Regime::BoundaryLog => (-0.5 * n, true, Some(ConstantName::DHdBoundary)),
        Regime::Clt => ((2.0 * kk + d - 1.0 / h) / 4.0, false, Some(ConstantName::DHdClt)),
        Regime::Nonexistent => (0.0, false, None),
    };
    Ok(RegimeReport {
        regime,
        hurst,
        k: k.clone(),
        dim,
        order,
        index,
        lp_threshold,
        exponent,
        has_log,
        boundary_exact: boundary_exact && regime == Regime::BoundaryLog,
        constant,
    })
}

impl RegimeReport {
    /// Exact CLT exponent `(2|k| + d - 1/H) / 4` when inputs are rational.
    pub fn exponent_exact(&self) -> Option<Rational64> {
        let h = self.hurst.rational()?;
        let k = rational_order(&self.k)?;
        let two = Rational64::from_integer(2);
        Some((two * k + Rational64::from_integer(self.dim as i64) - h.recip()) / Rational64::from_integer(4))
    }

    pub fn scaling_factor(&self) -> Result<ScalingFactor> {
        if self.regime == Regime::Nonexistent {
            return Err(Error::domain("no scaling factor: H(2|k| + d) >= 1"));
        }
        Ok(ScalingFactor {
            branch: self.regime,
            exponent: self.exponent,
            has_log: self.has_log,
        })
    }

    /// Human-readable form such as `CLT, ℓ(ε)=ε^-0.5`.
    pub fn summary(&self) -> String {
        match self.regime {
            Regime::Nonexistent => "NONEXISTENT".to_string(),
            Regime::BoundaryLog => format!("BOUNDARY_LOG, ℓ(ε)=ε^{}/sqrt(ln(1+ε^-0.5))", fmt_num(self.exponent)),
            r => format!("{r}, ℓ(ε)=ε^{}", fmt_num(self.exponent)),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactor {
    pub branch: Regime,
    pub exponent: f64,
    pub has_log: bool,
}

impl ScalingFactor {
    pub fn eval(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::domain(format!("eps = {eps} must be positive")));
        }
        let base = eps.powf(self.exponent);
        Ok(if self.has_log {
            base / (1.0 + eps.powf(-0.5)).ln().sqrt()
        } else {
            base
        })
    }
}

pub fn scaling(report: &RegimeReport, eps: f64) -> Result<f64> {
    report.scaling_factor()?.eval(eps)
}

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstantName {
    #[serde(rename = "D_Hd_boundary")]
    DHdBoundary,
    #[serde(rename = "D_Hd_clt")]
    DHdClt,
    #[serde(rename = "Dtilde1")]
    Dtilde1,
    #[serde(rename = "Dtilde2")]
    Dtilde2,
    #[serde(rename = "D_Hdf")]
    DHdf,
    #[serde(rename = "C_Hdf")]
    CHdf,
    #[serde(rename = "D_Hd_p1")]
    DHdP1,
    #[serde(rename = "C_Hd_p1")]
    CHdP1,
    #[serde(rename = "LP_COEFFICIENT")]
    LpCoefficient,
}

impl ConstantName {
    pub const ALL: [ConstantName; 9] = [
        ConstantName::DHdBoundary,
        ConstantName::DHdClt,
        ConstantName::Dtilde1,
        ConstantName::Dtilde2,
        ConstantName::DHdf,
        ConstantName::CHdf,
        ConstantName::DHdP1,
        ConstantName::CHdP1,
        ConstantName::LpCoefficient,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConstantName::DHdBoundary => "D_Hd_boundary",
            ConstantName::DHdClt => "D_Hd_clt",
            ConstantName::Dtilde1 => "Dtilde1",
            ConstantName::Dtilde2 => "Dtilde2",
            ConstantName::DHdf => "D_Hdf",
            ConstantName::CHdf => "C_Hdf",
            ConstantName::DHdP1 => "D_Hd_p1",
            ConstantName::CHdP1 => "C_Hd_p1",
            ConstantName::LpCoefficient => "LP_COEFFICIENT",
        }
    }
}

impl fmt::Display for ConstantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstantName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ConstantName::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown constant '{s}'")))
    }
}

/// Inputs to [`constant`]. `f` defaults to `p_1` in `dim` dimensions.
#[derive(Clone)]
pub struct ConstantParams {
    pub hurst: Hurst,
    pub sigma: f64,
    pub dim: usize,
    pub k: MultiIndex,
    pub order: u32,
    pub f: Option<Arc<dyn TestFunction>>,
    pub mesh: Mesh,
}

impl fmt::Debug for ConstantParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstantParams")
            .field("hurst", &self.hurst)
            .field("sigma", &self.sigma)
            .field("dim", &self.dim)
            .field("k", &self.k)
            .field("order", &self.order)
            .field("f", &self.f.as_ref().map(|f| f.name()))
            .finish()
    }
}

impl ConstantParams {
    /// `p_1`, `k = 0`, `N = 2`.
    pub fn new(hurst: Hurst, sigma: f64, dim: usize) -> Self {
        ConstantParams {
            hurst,
            sigma,
            dim,
            k: MultiIndex::zeros(dim),
            order: 2,
            f: None,
            mesh: Mesh::default(),
        }
    }

    pub fn with_k(mut self, k: MultiIndex) -> Self {
        self.k = k;
        self
    }

    pub fn with_order(mut self, order: u32) -> Self {
        self.order = order;
        self
    }

    pub fn with_function(mut self, f: Arc<dyn TestFunction>) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_mesh(mut self, mesh: Mesh) -> Self {
        self.mesh = mesh;
        self
    }

    fn function(&self) -> Arc<dyn TestFunction> {
        self.f
            .clone()
            .unwrap_or_else(|| Arc::new(GaussianPolynomial::standard(self.dim)))
    }

    fn cache_key(&self, name: ConstantName) -> String {
        format!(
            "{name}|{}|{:x}|{}|{:?}|{}|{}|{:?}",
            self.hurst,
            self.sigma.to_bits(),
            self.dim,
            self.k.components().iter().map(|c| c.to_bits()).collect::<Vec<_>>(),
            self.order,
            self.f.as_ref().map(|f| f.name()).unwrap_or_else(|| "p1".into()),
            self.mesh
        )
    }
}

/// Quadrature resolution. [`Mesh::refined`] halves every panel width and
/// doubles the truncation radius and angular node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub panel_width: f64,
    pub graded_levels: usize,
    pub cutoff: f64,
    pub angular_nodes: usize,
}

impl Default for Mesh {
    fn default() -> Self {
        Mesh {
            panel_width: 0.5,
            graded_levels: 60,
            cutoff: 40.0,
            angular_nodes: 64,
        }
    }
}

impl Mesh {
    pub fn refined(&self) -> Self {
        Mesh {
            panel_width: 0.5 * self.panel_width,
            graded_levels: 2 * self.graded_levels,
            cutoff: 2.0 * self.cutoff,
            angular_nodes: 2 * self.angular_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpTerm {
    pub indices: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstant {
    pub name: ConstantName,
    pub value: f64,
    /// Difference between the production rule and a coarser rule on the
    /// same panels.
    pub error: f64,
    /// LP_COEFFICIENT only: `i^N / N! ∫ v_{i_1}...v_{i_N} f` per index tuple.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<LpTerm>,
}

/// Relative residual above which a constant is reported as inaccurate.
pub const CONSTANT_RTOL: f64 = 1e-8;

fn require(params: &ConstantParams, k: &MultiIndex, order: u32, want: Regime, name: ConstantName) -> Result<RegimeReport> {
    let rep = classify(params.hurst, k, params.dim, order)?;
    if rep.regime != want {
        return Err(Error::domain(format!(
            "{name} needs the {want} regime, but H = {}, d = {}, |k| = {}, N = {order} is {}",
            params.hurst,
            params.dim,
            k.order(),
            rep.regime
        )));
    }
    Ok(rep)
}

fn check_common(params: &ConstantParams) -> Result<()> {
    if !(params.sigma > 0.0 && params.sigma.is_finite()) {
        return Err(Error::domain(format!("sigma {} must be positive", params.sigma)));
    }
    if params.k.dim() != params.dim {
        return Err(Error::Shape(format!("k has {} components for d = {}", params.k.dim(), params.dim)));
    }
    if let Some(f) = &params.f {
        if f.dim() != params.dim {
            return Err(Error::Shape(format!("test function lives in d = {}", f.dim())));
        }
    }
    Ok(())
}

/// Evaluates `name` at `params`.
pub fn constant(name: ConstantName, params: &ConstantParams) -> Result<LimitConstant> {
    check_common(params)?;
    let zero_k = MultiIndex::zeros(params.dim);
    let (value, error, terms) = match name {
        ConstantName::Dtilde1 => {
            require(params, &params.k, 2, Regime::BoundaryLog, name)?;
            let (v, e) = fourth_moment_constant(params, &params.k)?;
            (v, e, vec![])
        }
        ConstantName::DHdP1 => {
            require(params, &zero_k, 2, Regime::BoundaryLog, name)?;
            let (v, e) = fourth_moment_constant(params, &zero_k)?;
            (v, e, vec![])
        }
        ConstantName::DHdBoundary => {
            require(params, &params.k, params.order, Regime::BoundaryLog, name)?;
            let f = params.function();
            let v = moment_route(&*f, params, &params.k, params.order) / params.hurst.value();
            (v, 0.0, vec![])
        }
        ConstantName::DHdf => {
            require(params, &zero_k, 2, Regime::BoundaryLog, name)?;
            let f = params.function();
            (moment_route(&*f, params, &zero_k, 2), 0.0, vec![])
        }
        ConstantName::DHdClt => {
            require(params, &params.k, params.order, Regime::Clt, name)?;
            let f = params.function();
            let (v, e) = clt_constant(&*f, params, &params.k, params.order)?;
            (v, e, vec![])
        }
        ConstantName::Dtilde2 => {
            require(params, &params.k, 2, Regime::Clt, name)?;
            let f = GaussianPolynomial::standard(params.dim);
            let (v, e) = clt_constant(&f, params, &params.k, 2)?;
            (v, e, vec![])
        }
        ConstantName::CHdP1 => {
            require(params, &zero_k, 2, Regime::Clt, name)?;
            let f = GaussianPolynomial::standard(params.dim);
            let (v, e) = clt_constant(&f, params, &zero_k, 2)?;
            (v, e, vec![])
        }
        ConstantName::CHdf => {
            require(params, &zero_k, 2, Regime::Clt, name)?;
            let f = params.function();
            let (v, e) = clt_constant(&*f, params, &zero_k, 2)?;
            (v, e, vec![])
        }
        ConstantName::LpCoefficient => {
            let f = params.function();
            let terms = lp_terms(&*f, params.order);
            let first = terms
                .iter()
                .find(|t| t.indices.iter().all(|&i| i == 0))
                .map(|t| t.re)
                .unwrap_or(0.0);
            (first, 0.0, terms)
        }
    };
    if !value.is_finite() {
        return Err(Error::accuracy(format!("{name} is not finite"), f64::INFINITY));
    }
    if error > CONSTANT_RTOL * value.abs().max(1e-300) {
        return Err(Error::accuracy(format!("{name} quadrature residual too large"), error));
    }
    Ok(LimitConstant {
        name,
        value,
        error,
        terms,
    })
}

type Cache = RwLock<HashMap<String, LimitConstant>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// [`constant`] behind a process-wide read-mostly memo table.
pub fn constant_cached(name: ConstantName, params: &ConstantParams) -> Result<LimitConstant> {
    let key = params.cache_key(name);
    if let Some(hit) = cache().read().expect("constant cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let value = constant(name, params)?;
    cache()
        .write()
        .expect("constant cache poisoned")
        .insert(key, value.clone());
    Ok(value)
}

fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `∫_{S^{d-1}} Π |θ_l|^{2 k_l} dθ = 2 Π Γ(k_l + 1/2) / Γ(|k| + d/2)`.
pub fn sphere_factor(k: &MultiIndex) -> f64 {
    let d = k.dim() as f64;
    let num: f64 = k.components().iter().map(|&c| gamma(c + 0.5)).product();
    2.0 * num / gamma(k.order() + 0.5 * d)
}

/// `∫_{R^d} x^gamma Π |x_l|^{2 k_l} e^{-|x|^2/2} dx`, factorized.
fn weighted_gaussian_monomial(gamma_exp: &[u32], k: &MultiIndex) -> f64 {
    gamma_exp
        .iter()
        .zip(k.components())
        .map(|(&j, &kl)| {
            if j % 2 == 1 {
                0.0
            } else {
                let p = (j as f64 + 2.0 * kl + 1.0) / 2.0;
                2f64.powf(p) * gamma(p)
            }
        })
        .product()
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

/// Radial integral on `[0, cutoff]` with graded panels toward zero plus
/// uniform panels, returning `(value, |GL20 - GL14|)`.
fn radial<F: Fn(f64) -> f64>(f: F, mesh: &Mesh) -> (f64, f64) {
    static COARSE: OnceLock<GaussLegendre> = OnceLock::new();
    let coarse = COARSE.get_or_init(|| GaussLegendre::new(14));
    let fine = GaussLegendre::standard();
    let mut bps = graded_breakpoints(0.0, 1.0, 0.5, mesh.graded_levels);
    bps.pop();
    bps.extend(uniform_breakpoints(1.0, mesh.cutoff, mesh.panel_width));
    let v = composite(fine, &bps, &f);
    let c = composite(coarse, &bps, &f);
    (v, (v - c).abs())
}

/// `1/(2H (2π)^d σ^{1/2H}) ∫ |x|^4 Π|x_l|^{2k_l} e^{-|x|^2/2} dx` by radial
/// quadrature.
fn fourth_moment_constant(params: &ConstantParams, k: &MultiIndex) -> Result<(f64, f64)> {
    let h = params.hurst.value();
    let d = params.dim as f64;
    let pow = 4.0 + 2.0 * k.order() + d - 1.0;
    let (radial_value, err) = radial(|r| r.powf(pow) * (-0.5 * r * r).exp(), &params.mesh);
    let pref = sphere_factor(k) / (2.0 * h * (2.0 * PI).powf(d) * params.sigma.powf(1.0 / (2.0 * h)));
    Ok((pref * radial_value, pref * err))
}

/// `2/((2π)^d σ^{1/2H}) ∫ |Σ_{|α|=N} m_α x^α/α!|^2 Π|x_l|^{2k_l} e^{-|x|^2/2} dx`
/// from the moments `m_α` of `f`, exactly (no 1/H factor).
fn moment_route(f: &dyn TestFunction, params: &ConstantParams, k: &MultiIndex, order: u32) -> f64 {
    let h = params.hurst.value();
    let d = params.dim;
    let alphas = multi_indices(d, order);
    let coef: Vec<f64> = alphas
        .iter()
        .map(|a| f.moment(a) / a.iter().map(|&j| factorial(j)).product::<f64>())
        .collect();
    let mut acc = 0.0;
    for (a, ca) in alphas.iter().zip(&coef) {
        for (b, cb) in alphas.iter().zip(&coef) {
            if *ca == 0.0 || *cb == 0.0 {
                continue;
            }
            let g: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            acc += ca * cb * weighted_gaussian_monomial(&g, k);
        }
    }
    2.0 / ((2.0 * PI).powf(d as f64) * params.sigma.powf(1.0 / (2.0 * h))) * acc
}

/// Unit directions and weights on `S^{d-1}` including `Π|θ_l|^{2k_l}`.
fn sphere_rule(k: &MultiIndex, nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let kk = k.components();
    let weight = |th: &[f64]| -> f64 { th.iter().zip(kk).map(|(t, &kl)| t.abs().powf(2.0 * kl)).product() };
    match k.dim() {
        1 => vec![(vec![-1.0], weight(&[-1.0])), (vec![1.0], weight(&[1.0]))],
        2 => (0..nodes)
            .map(|j| {
                let a = 2.0 * PI * (j as f64 + 0.5) / nodes as f64;
                let th = vec![a.cos(), a.sin()];
                let w = 2.0 * PI / nodes as f64 * weight(&th);
                (th, w)
            })
            .collect(),
        3 => {
            let gl = GaussLegendre::new(nodes / 2);
            let mut out = Vec::new();
            for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                let rho = (1.0 - z * z).sqrt();
                for j in 0..nodes {
                    let a = 2.0 * PI * (j as f64 + 0.5) / nodes as f64;
                    let th = vec![rho * a.cos(), rho * a.sin(), *z];
                    let w = wz * 2.0 * PI / nodes as f64 * weight(&th);
                    out.push((th, w));
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

/// `2/((2π)^d σ^{1/2H}) ∫_0^∞ ∫ |f^(x) - f^(0)|^2 Π|x_l|^{2k_l} e^{-|x|^2 s^{2H}/2} dx ds`.
///
/// The `s`-integral is `Γ(1 + 1/2H) (|x|^2/2)^{-1/2H}`; the remaining
/// radial integral is truncated at `mesh.cutoff` with the algebraic tail
/// `|f^(0)|^2 ∫_R^∞ r^a dr` added in closed form.
fn clt_constant(f: &dyn TestFunction, params: &ConstantParams, k: &MultiIndex, order: u32) -> Result<(f64, f64)> {
    let h = params.hurst.value();
    let d = params.dim;
    let df = d as f64;
    let inv = 1.0 / (2.0 * h);
    let pref = 2.0 * gamma(1.0 + inv) * 2f64.powf(inv) / ((2.0 * PI).powf(df) * params.sigma.powf(inv));
    // r-exponent of the weight r^{2|k|} r^{d-1} r^{-1/H}
    let a = 2.0 * k.order() + df - 1.0 - 1.0 / h;
    let f0 = f.fourier(&vec![0.0; d]);
    let mesh = params.mesh;
    let r_cut = mesh.cutoff;
    let (body, err, angular_mass) = if let Some(g0) = f.radial_fourier(0.0) {
        let s = sphere_factor(k);
        let (v, e) = radial(
            |r| {
                if r == 0.0 {
                    return 0.0;
                }
                let diff = f.radial_fourier(r).unwrap_or(f64::NAN) - g0;
                diff * diff * r.powf(a)
            },
            &mesh,
        );
        (s * v, s * e, s)
    } else {
        if d > 3 {
            return Err(Error::Capacity(
                "non-radial test functions are supported for d <= 3 only".into(),
            ));
        }
        let rule = sphere_rule(k, mesh.angular_nodes);
        let mass: f64 = rule.iter().map(|(_, w)| w).sum();
        let (v, e) = radial(
            |r| {
                if r == 0.0 {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (th, w) in &rule {
                    let x: Vec<f64> = th.iter().map(|t| t * r).collect();
                    acc += w * (f.fourier(&x) - f0).norm_sqr();
                }
                acc * r.powf(a)
            },
            &mesh,
        );
        (v, e, mass)
    };
    // below the first graded panel the integrand behaves like r^{a + 2N}
    let head_exp = a + 2.0 * order as f64;
    if head_exp <= -1.0 {
        return Err(Error::domain("CLT constant diverges at the origin for this (H, k, d, N)"));
    }
    if a >= -1.0 {
        return Err(Error::domain("CLT constant diverges at infinity: H(2|k| + d) >= 1"));
    }
    let tail = f0.norm_sqr() * angular_mass * r_cut.powf(a + 1.0) / (-a - 1.0);
    Ok((pref * (body + tail), pref * err))
}

/// `i^N / N! ∫ v_{i_1} ... v_{i_N} f(v) dv` for every index tuple.
pub fn lp_terms(f: &dyn TestFunction, order: u32) -> Vec<LpTerm> {
    let d = f.dim();
    let scale = frac_power(1.0, order as f64) / factorial(order);
    let mut out = Vec::new();
    let total = d.pow(order);
    for code in 0..total {
        let mut idx = Vec::with_capacity(order as usize);
        let mut c = code;
        for _ in 0..order {
            idx.push(c % d);
            c /= d;
        }
        idx.reverse();
        let mut alpha = vec![0u32; d];
        idx.iter().for_each(|&i| alpha[i] += 1);
        let m = f.moment(&alpha);
        let z: Complex64 = scale * m;
        out.push(LpTerm {
            indices: idx,
            re: z.re,
            im: z.im,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(p: i64, q: i64) -> Hurst {
        Hurst::exact(p, q).unwrap()
    }

    #[test]
    fn classification_examples() {
        let k0 = MultiIndex::zeros(1);
        assert_eq!(classify(h(1, 10), &k0, 1, 2).unwrap().regime, Regime::LpLimit);
        let b = classify(h(1, 5), &k0, 1, 2).unwrap();
        assert_eq!(b.regime, Regime::BoundaryLog);
        assert!(b.boundary_exact);
        let c = classify(h(1, 3), &k0, 1, 2).unwrap();
        assert_eq!(c.regime, Regime::Clt);
        assert!((scaling(&c, 0.01).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(c.summary(), "CLT, ℓ(ε)=ε^-0.5");
        let k2 = MultiIndex::from_integers(&[1, 0]);
        assert_eq!(classify(h(1, 2), &k2, 2, 2).unwrap().regime, Regime::Nonexistent);
        assert_eq!(classify(h(1, 2), &MultiIndex::zeros(2), 2, 1).unwrap().regime, Regime::Nonexistent);
    }

    #[test]
    fn float_boundary_is_not_exact() {
        let r = classify(Hurst::approx(0.2).unwrap(), &MultiIndex::zeros(1), 1, 2).unwrap();
        assert_eq!(r.regime, Regime::BoundaryLog);
        assert!(!r.boundary_exact);
    }

    #[test]
    fn scaling_branches() {
        let b = classify(h(1, 5), &MultiIndex::zeros(1), 1, 2).unwrap();
        let eps = (-2.0f64).exp();
        let direct = eps.powi(-1) / (1.0 + eps.powf(-0.5)).ln().sqrt();
        assert!((scaling(&b, eps).unwrap() - direct).abs() < 1e-12 * direct);
        let lp = classify(h(1, 10), &MultiIndex::zeros(1), 1, 1).unwrap();
        assert!((scaling(&lp, 0.04).unwrap() - 5.0).abs() < 1e-12);
        let none = classify(h(1, 2), &MultiIndex::zeros(2), 2, 2).unwrap();
        assert!(matches!(scaling(&none, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn hurst_parsing_and_serde() {
        let x: Hurst = "1/3".parse().unwrap();
        assert_eq!(x.rational(), Some(Rational64::new(1, 3)));
        let y: Hurst = "0.25".parse().unwrap();
        assert!(y.rational().is_none());
        assert!("2/2".parse::<Hurst>().is_err());
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, "\"1/3\"");
        assert_eq!(serde_json::from_str::<Hurst>(&s).unwrap(), x);
        assert_eq!(serde_json::from_str::<Hurst>("0.3").unwrap().value(), 0.3);
    }

    #[test]
    fn dtilde1_closed_form() {
        let p = ConstantParams::new(h(1, 5), 1.0, 1);
        let c = constant(ConstantName::Dtilde1, &p).unwrap();
        let exact = 15.0 / (2.0 * (2.0 * PI).sqrt());
        assert!((c.value - exact).abs() < 1e-10, "{}", c.value);
    }

    #[test]
    fn boundary_routes_agree() {
        let p = ConstantParams::new(h(1, 5), 1.0, 1);
        let a = constant(ConstantName::DHdBoundary, &p).unwrap().value;
        let b = constant(ConstantName::Dtilde1, &p).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * b);
        let f = constant(ConstantName::DHdf, &p).unwrap().value;
        let q = constant(ConstantName::DHdP1, &p).unwrap().value;
        assert!((f / 0.2 - q).abs() <= 1e-10 * q);
    }

    #[test]
    fn dtilde2_closed_form_d1() {
        for (p, q) in [(1, 2), (3, 10), (2, 5)] {
            let hh = p as f64 / q as f64;
            let c = constant(ConstantName::Dtilde2, &ConstantParams::new(h(p, q), 1.0, 1)).unwrap();
            let a = 1.0 / (2.0 * hh);
            let b = a + 0.5;
            let exact = 2.0 * gamma(1.0 + a) / (2.0 * PI) * 2f64.sqrt() * gamma(1.0 - b) * (2f64.powf(b - 1.0) - 2.0);
            assert!((c.value - exact).abs() < 1e-9 * exact, "H={hh}: {} vs {exact}", c.value);
        }
        let bm = constant(ConstantName::Dtilde2, &ConstantParams::new(h(1, 2), 1.0, 1)).unwrap();
        assert!((bm.value - 4.0 / PI.sqrt() * (2f64.sqrt() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn non_radial_route_matches_radial() {
        // p_1 viewed through the direction rule
        struct Wrapped(GaussianPolynomial);
        impl TestFunction for Wrapped {
            fn dim(&self) -> usize {
                self.0.dim
            }
            fn eval(&self, u: &[f64]) -> f64 {
                self.0.eval(u)
            }
            fn name(&self) -> String {
                "wrapped".into()
            }
            fn fourier(&self, xi: &[f64]) -> Complex64 {
                self.0.fourier(xi)
            }
        }
        for d in [1usize, 2] {
            let hh = h(1, 4);
            let k = MultiIndex::zeros(d);
            if classify(hh, &k, d, 2).unwrap().regime != Regime::Clt {
                continue;
            }
            let p = ConstantParams::new(hh, 1.0, d);
            let radial = constant(ConstantName::CHdP1, &p).unwrap().value;
            let wrapped = constant(
                ConstantName::CHdf,
                &p.clone().with_function(Arc::new(Wrapped(GaussianPolynomial::standard(d)))),
            )
            .unwrap()
            .value;
            assert!((radial - wrapped).abs() < 1e-8 * radial, "d={d}: {radial} vs {wrapped}");
        }
    }

    #[test]
    fn validity_guards() {
        let p = ConstantParams::new(h(1, 3), 1.0, 1);
        assert!(matches!(constant(ConstantName::Dtilde1, &p), Err(Error::Domain(_))));
        let lp = ConstantParams::new(h(1, 10), 1.0, 1);
        assert!(matches!(constant(ConstantName::Dtilde2, &lp), Err(Error::Domain(_))));
    }

    #[test]
    fn lp_coefficient_for_p1() {
        let p = ConstantParams::new(h(1, 10), 1.0, 1);
        let c = constant(ConstantName::LpCoefficient, &p).unwrap();
        assert!((c.value + 0.5).abs() < 1e-14);
        let p2 = ConstantParams::new(h(1, 10), 1.0, 2);
        let c2 = constant(ConstantName::LpCoefficient, &p2).unwrap();
        assert_eq!(c2.terms.len(), 4);
        let off: Vec<_> = c2.terms.iter().filter(|t| t.indices[0] != t.indices[1]).collect();
        assert!(off.iter().all(|t| t.re == 0.0));
    }

    #[test]
    fn refinement_is_stable() {
        for (name, hh) in [(ConstantName::Dtilde1, h(1, 5)), (ConstantName::Dtilde2, h(1, 3))] {
            let p = ConstantParams::new(hh, 1.0, 1).with_k(MultiIndex::zeros(1));
            let a = constant(name, &p).unwrap().value;
            let b = constant(name, &p.clone().with_mesh(Mesh::default().refined())).unwrap().value;
            assert!((a - b).abs() <= 1e-6 * a.abs());
        }
    }

    #[test]
    fn cache_returns_same_value() {
        let p = ConstantParams::new(h(1, 3), 1.3, 1);
        let a = constant_cached(ConstantName::Dtilde2, &p).unwrap();
        let b = constant_cached(ConstantName::Dtilde2, &p).unwrap();
        assert_eq!(a, b);
    }
}
