//! Heat kernel `p_eps`, its integer and fractional partial derivatives, and
//! the test-function spaces used by the limit constants.
//!
//! Derivative orders act componentwise. Integer orders use the Hermite
//! closed form
//!
//! ```text
//! d^n/dx^n p_eps(x) = (-1)^n eps^{-n/2} He_n(x / sqrt(eps)) p_eps(x)
//! ```
//!
//! and non-integer orders use the Fourier representation
//! `(2 pi)^{-1} ∫ (i u)^k exp(-eps u^2 / 2) exp(i x u) du` with the complex
//! power convention of [`frac_power`].

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{graded_breakpoints, uniform_breakpoints, GaussLegendre};

/// Derivative order `k = (k_1, ..., k_d)` with non-negative real entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MultiIndex {
    k: Vec<f64>,
    order: f64,
    all_integer: bool,
}

impl MultiIndex {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::domain("multi-index needs at least one component"));
        }
        if let Some(bad) = k.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!("derivative order {bad} must be finite and >= 0")));
        }
        let order = k.iter().sum();
        let all_integer = k.iter().all(|v| v.fract() == 0.0);
        Ok(MultiIndex { k, order, all_integer })
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex::new(vec![0.0; dim]).expect("zero index is valid")
    }

    pub fn from_integers(k: &[u32]) -> Self {
        MultiIndex::new(k.iter().map(|&v| v as f64).collect()).expect("integer index is valid")
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.k
    }

    /// `|k|`, the component sum.
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn is_integer(&self) -> bool {
        self.all_integer
    }

    /// `k + e_i`.
    pub fn plus_unit(&self, i: usize) -> MultiIndex {
        let mut k = self.k.clone();
        k[i] += 1.0;
        MultiIndex::new(k).expect("increment keeps index valid")
    }
}

impl TryFrom<Vec<f64>> for MultiIndex {
    type Error = Error;
    fn try_from(k: Vec<f64>) -> Result<Self> {
        MultiIndex::new(k)
    }
}

impl From<MultiIndex> for Vec<f64> {
    fn from(m: MultiIndex) -> Vec<f64> {
        m.k
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("smoothing parameter eps = {eps} must be positive")))
    }
}

/// Centered Gaussian density with covariance `eps * I` at `x`.
pub fn heat_kernel(x: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let d = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * eps).powf(-0.5 * d) * (-0.5 * r2 / eps).exp())
}

#[inline]
fn heat_kernel_1d(x: f64, eps: f64) -> f64 {
    (-0.5 * x * x / eps).exp() / (2.0 * PI * eps).sqrt()
}

/// Probabilists' Hermite polynomial `He_n(x)`.
pub fn hermite_he(n: u32, x: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = x;
    for j in 1..n {
        let h2 = x * h1 - j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `(i x)^k`: `i^k x^k` for integer `k`, otherwise
/// `|x|^k exp(i pi k sgn(x) / 2)`.
pub fn frac_power(x: f64, k: f64) -> Complex64 {
    if k.fract() == 0.0 {
        let n = k as i64;
        let ipow = match n.rem_euclid(4) {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        ipow * x.powi(n as i32)
    } else {
        let sgn = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        Complex64::from_polar(x.abs().powf(k), 0.5 * PI * k * sgn)
    }
}

/// Controls for the Fourier-quadrature derivative path.
#[derive(Debug, Clone, Copy)]
pub struct FourierQuadrature {
    /// Tail bound for `exp(-w^2/2) w^{k+1}` in the scaled frequency `w = sqrt(eps) u`.
    pub tail_tol: f64,
    /// Acceptance threshold on the residual between two quadrature orders,
    /// relative to the natural scale `eps^{-(k+1)/2}`.
    pub accuracy: f64,
    /// Bound on the imaginary residue, relative to the same scale.
    pub imag_tol: f64,
}

impl Default for FourierQuadrature {
    fn default() -> Self {
        FourierQuadrature {
            tail_tol: 1e-18,
            accuracy: 1e-11,
            imag_tol: 1e-9,
        }
    }
}

/// Scaled truncation point `W` with `exp(-W^2/2) W^{k+1} < tol`.
fn scaled_cutoff(k: f64, tol: f64) -> f64 {
    let mut w = (2.0 * (1.0 / tol).ln()).sqrt();
    for _ in 0..50 {
        let next = (2.0 * ((k + 1.0) * w.max(1.0).ln() + (1.0 / tol).ln())).sqrt();
        if (next - w).abs() < 1e-12 {
            return next;
        }
        w = next;
    }
    w
}

fn fourier_sum(rule: &GaussLegendre, bps: &[f64], x: f64, eps: f64, k: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for w in bps.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let mid = 0.5 * (w[0] + w[1]);
        for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
            let u = mid + half * t;
            let damp = (-0.5 * eps * u * u).exp();
            let pos = frac_power(u, k) * Complex64::from_polar(1.0, x * u);
            let neg = frac_power(-u, k) * Complex64::from_polar(1.0, -x * u);
            acc += (pos + neg) * (damp * wt * half);
        }
    }
    acc / (2.0 * PI)
}

/// One-dimensional `k`-th derivative of `p_eps` at `x` by Fourier quadrature.
///
/// The frequency half-line `[0, U]` is split into geometrically graded panels
/// toward the origin (where `|u|^k` is not smooth) and uniform panels of
/// width at most `min(1/sqrt(eps), 2/|x|)` beyond. Both halves of the real
/// line are summed in complex arithmetic.
pub fn fourier_deriv_1d(x: f64, eps: f64, k: f64, opts: FourierQuadrature) -> Result<f64> {
    check_eps(eps)?;
    if k < 0.0 || !k.is_finite() {
        return Err(Error::domain(format!("derivative order {k} must be >= 0")));
    }
    let s = eps.sqrt();
    let upper = scaled_cutoff(k, opts.tail_tol) / s;
    let knee = upper.min(1.0 / s);
    let width = (1.0 / s).min(if x != 0.0 { 2.0 / x.abs() } else { f64::INFINITY });
    let mut bps = graded_breakpoints(0.0, knee, 0.5, 48);
    if upper > knee {
        bps.extend(uniform_breakpoints(knee, upper, width).into_iter().skip(1));
    }
    let fine = fourier_sum(GaussLegendre::standard(), &bps, x, eps, k);
    let coarse = fourier_sum(coarse_rule(), &bps, x, eps, k);
    let scale = s.powf(-(k + 1.0)) / (2.0 * PI);
    let residual = (fine - coarse).norm() / scale;
    if residual > opts.accuracy {
        return Err(Error::accuracy(
            format!("Fourier derivative of order {k} at x = {x}, eps = {eps}"),
            residual,
        ));
    }
    if fine.im.abs() > opts.imag_tol * scale {
        return Err(Error::accuracy(
            format!("imaginary residue in Fourier derivative of order {k}"),
            fine.im.abs() / scale,
        ));
    }
    Ok(fine.re)
}

fn coarse_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(14))
}

/// One-dimensional derivative of order `k` using the Hermite closed form
/// when `k` is an integer and Fourier quadrature otherwise.
pub fn heat_kernel_deriv_1d(x: f64, eps: f64, k: f64) -> Result<f64> {
    check_eps(eps)?;
    if k.fract() == 0.0 {
        let n = k as u32;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let s = eps.sqrt();
        Ok(sign * s.powi(-(n as i32)) * hermite_he(n, x / s) * heat_kernel_1d(x, eps))
    } else {
        fourier_deriv_1d(x, eps, k, FourierQuadrature::default())
    }
}

/// `p_eps^{(k)}(x)` in `d = k.dim()` dimensions (product over components).
pub fn heat_kernel_deriv(x: &[f64], eps: f64, k: &MultiIndex) -> Result<f64> {
    check_eps(eps)?;
    if x.len() != k.dim() {
        return Err(Error::Shape(format!(
            "point has {} components but multi-index has {}",
            x.len(),
            k.dim()
        )));
    }
    let mut v = 1.0;
    for (&xi, &ki) in x.iter().zip(k.components()) {
        v *= heat_kernel_deriv_1d(xi, eps, ki)?;
    }
    Ok(v)
}

/// Same as [`heat_kernel_deriv`] but forcing the Fourier path on every
/// component, integer or not. Used to cross-check the closed form.
pub fn heat_kernel_deriv_fourier(x: &[f64], eps: f64, k: &MultiIndex) -> Result<f64> {
    check_eps(eps)?;
    if x.len() != k.dim() {
        return Err(Error::Shape("point / multi-index dimension mismatch".into()));
    }
    let mut v = 1.0;
    for (&xi, &ki) in x.iter().zip(k.components()) {
        v *= fourier_deriv_1d(xi, eps, ki, FourierQuadrature::default())?;
    }
    Ok(v)
}

/// A test function `f` on `R^d` with (optionally analytic) Fourier transform
/// `f^(x) = ∫ f(u) exp(-i x·u) du`.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &[f64]) -> f64;

    fn name(&self) -> String;

    /// Order `N` of the space `S~_{d,N}` the function is declared to belong to.
    fn declared_order(&self) -> u32 {
        1
    }

    fn fourier(&self, xi: &[f64]) -> Complex64 {
        fourier_by_quadrature(self, xi)
    }

    /// `∫ u^alpha f(u) du`.
    fn moment(&self, alpha: &[u32]) -> f64 {
        moment_by_quadrature(self, alpha)
    }

    /// When `f^` depends on `|x|` only and is real: its radial profile.
    fn radial_fourier(&self, _r: f64) -> Option<f64> {
        None
    }
}

/// Half-width of the box used for moment and Fourier quadrature.
pub const MOMENT_BOX: f64 = 12.0;

fn tensor_nodes(d: usize) -> (Vec<f64>, Vec<f64>) {
    let per_panel = match d {
        1 => 20,
        2 => 16,
        _ => 10,
    };
    let rule = GaussLegendre::new(per_panel);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in uniform_breakpoints(-MOMENT_BOX, MOMENT_BOX, 1.0).windows(2) {
        rule.push_mapped(w[0], w[1], &mut nodes, &mut weights);
    }
    (nodes, weights)
}

fn tensor_integrate<F: FnMut(&[f64]) -> Complex64>(d: usize, mut f: F) -> Complex64 {
    let (nodes, weights) = tensor_nodes(d);
    let m = nodes.len();
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut acc = Complex64::new(0.0, 0.0);
    loop {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            point[j] = nodes[i];
            w *= weights[i];
        }
        acc += f(&point) * w;
        let mut j = 0;
        loop {
            if j == d {
                return acc;
            }
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

pub fn fourier_by_quadrature<F: TestFunction + ?Sized>(f: &F, xi: &[f64]) -> Complex64 {
    tensor_integrate(f.dim(), |u| {
        let phase: f64 = u.iter().zip(xi).map(|(a, b)| a * b).sum();
        Complex64::from_polar(f.eval(u), -phase)
    })
}

pub fn moment_by_quadrature<F: TestFunction + ?Sized>(f: &F, alpha: &[u32]) -> f64 {
    tensor_integrate(f.dim(), |u| {
        let mono: f64 = u.iter().zip(alpha).map(|(v, &a)| v.powi(a as i32)).product();
        Complex64::new(mono * f.eval(u), 0.0)
    })
    .re
}

/// `f(u) = p_1(u) * Σ_j c_j u^{a_j}`: a polynomial times the standard
/// Gaussian density, with closed-form moments and Fourier transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolynomial {
    pub dim: usize,
    /// `(exponents, coefficient)` pairs.
    pub terms: Vec<(Vec<u32>, f64)>,
    pub label: String,
    pub order: u32,
}

fn gaussian_moment_1d(n: u32) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        (1..n).step_by(2).map(|j| j as f64).product()
    }
}

impl GaussianPolynomial {
    /// The heat kernel `p_1` on `R^d`, a member of `S~_{d,2}`.
    pub fn standard(dim: usize) -> Self {
        GaussianPolynomial {
            dim,
            terms: vec![(vec![0; dim], 1.0)],
            label: "p1".into(),
            order: 2,
        }
    }

    /// `x exp(-x^2/2)` on `R`: first moment `sqrt(2 pi)`, so only in `S~_{1,1}`.
    pub fn odd_bump() -> Self {
        GaussianPolynomial {
            dim: 1,
            terms: vec![(vec![1], (2.0 * PI).sqrt())],
            label: "x-gauss".into(),
            order: 1,
        }
    }

    /// `(3 - x^2) p_1(x) / 2` on `R`: unit mass, vanishing moments of order
    /// one through three.
    pub fn fourth_order_kernel() -> Self {
        GaussianPolynomial {
            dim: 1,
            terms: vec![(vec![0], 1.5), (vec![2], -0.5)],
            label: "p1-4th".into(),
            order: 4,
        }
    }

    fn density(u: &[f64]) -> f64 {
        let r2: f64 = u.iter().map(|v| v * v).sum();
        (2.0 * PI).powf(-0.5 * u.len() as f64) * (-0.5 * r2).exp()
    }
}

impl TestFunction for GaussianPolynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[f64]) -> f64 {
        let poly: f64 = self
            .terms
            .iter()
            .map(|(a, c)| c * u.iter().zip(a).map(|(v, &e)| v.powi(e as i32)).product::<f64>())
            .sum();
        poly * Self::density(u)
    }

    fn name(&self) -> String {
        self.label.clone()
    }

    fn declared_order(&self) -> u32 {
        self.order
    }

    fn fourier(&self, xi: &[f64]) -> Complex64 {
        // ∫ u^n p_1(u) e^{-i x u} du = (-i)^n He_n(x) e^{-x^2/2}
        let gauss = (-0.5 * xi.iter().map(|v| v * v).sum::<f64>()).exp();
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, c) in &self.terms {
            let mut term = Complex64::new(*c, 0.0);
            for (&x, &n) in xi.iter().zip(a) {
                term *= frac_power(-1.0, n as f64) * hermite_he(n, x);
            }
            acc += term;
        }
        acc * gauss
    }

    fn moment(&self, alpha: &[u32]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().zip(alpha).map(|(&e, &m)| gaussian_moment_1d(e + m)).product::<f64>())
            .sum()
    }

    fn radial_fourier(&self, r: f64) -> Option<f64> {
        match self.terms.as_slice() {
            [(a, c)] if a.iter().all(|&e| e == 0) => Some(c * (-0.5 * r * r).exp()),
            _ => None,
        }
    }
}

/// All multi-indices `alpha` in `d` dimensions with `|alpha| = order`.
pub fn multi_indices(d: usize, order: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(d, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, order, &mut Vec::with_capacity(d), &mut out);
    out
}

/// Outcome of a moment-vanishing check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipReport {
    pub order: u32,
    pub member: bool,
    /// Every moment `∫ x^alpha f` with `1 <= |alpha| <= N-1`.
    pub moments: Vec<(Vec<u32>, f64)>,
}

/// Decides `f ∈ S~_{d,N}` by checking that all mixed moments of orders
/// `1..N-1` vanish within `tol`. Moments come from tensorized quadrature on
/// `[-12, 12]^d`, independent of any closed form the function may carry.
pub fn verify_space_membership<F: TestFunction + ?Sized>(
    f: &F,
    order: u32,
    tol: f64,
) -> Result<MembershipReport> {
    if order == 0 {
        return Err(Error::domain("space order N must be >= 1"));
    }
    let mut moments = Vec::new();
    for m in 1..order {
        for alpha in multi_indices(f.dim(), m) {
            let v = moment_by_quadrature(f, &alpha);
            if !v.is_finite() {
                return Err(Error::accuracy("moment quadrature produced a non-finite value", f64::INFINITY));
            }
            moments.push((alpha, v));
        }
    }
    let member = moments.iter().all(|(_, v)| v.abs() <= tol);
    Ok(MembershipReport {
        order,
        member,
        moments,
    })
}

/// `f^(x + y) - f^(x)`.
pub fn fourier_difference<F: TestFunction + ?Sized>(f: &F, x: &[f64], y: &[f64]) -> Result<Complex64> {
    if x.len() != f.dim() || y.len() != f.dim() {
        return Err(Error::Shape("fourier_difference: dimension mismatch".into()));
    }
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    Ok(f.fourier(&xy) - f.fourier(x))
}
