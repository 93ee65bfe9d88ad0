//! Small statistics kit used by the Monte Carlo drivers. All reductions are
//! sequential over an ordered slice, so results do not depend on how the
//! values were produced in parallel.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut k = KahanSum::new();
    xs.iter().for_each(|&x| k.add(x));
    k.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut k = KahanSum::new();
    xs.iter().for_each(|&x| k.add((x - m) * (x - m)));
    k.value() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample excess kurtosis (biased moment estimator) and its large-sample
/// standard error under normality, `sqrt(24 / n)`.
pub fn excess_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let mut m2 = KahanSum::new();
    let mut m4 = KahanSum::new();
    for &x in xs {
        let d = (x - m) * (x - m);
        m2.add(d);
        m4.add(d * d);
    }
    let m2 = m2.value() / n;
    let m4 = m4.value() / n;
    (m4 / (m2 * m2) - 3.0, (24.0 / n).sqrt())
}

/// Pearson correlation with the Fisher-z standard error, mapped back to the
/// correlation scale at zero (`1 / sqrt(n - 3)`).
pub fn correlation(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = KahanSum::new();
    let mut sxx = KahanSum::new();
    let mut syy = KahanSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
    }
    let r = sxy.value() / (sxx.value() * syy.value()).sqrt();
    (r, 1.0 / (xs.len() as f64 - 3.0).sqrt())
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Classical standard error of the slope from the residuals; NaN-free
    /// (zero) for an exact fit or two points.
    pub slope_se: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = KahanSum::new();
    let mut sxy = KahanSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx.add((x - mx) * (x - mx));
        sxy.add((x - mx) * (y - my));
    }
    let slope = sxy.value() / sxx.value();
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
        let mut rss = KahanSum::new();
        for (&x, &y) in xs.iter().zip(ys) {
            let r = y - intercept - slope * x;
            rss.add(r * r);
        }
        (rss.value() / (n - 2.0) / sxx.value()).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Log–log slope of `values` against `eps`.
pub fn log_log_fit(eps: &[f64], values: &[f64]) -> LineFit {
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut xs = vec![1e16];
        xs.extend(std::iter::repeat_n(1.0, 1000));
        xs.push(-1e16);
        assert_eq!(sum(&xs), 1000.0);
    }

    #[test]
    fn exact_line_has_zero_se() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let fit = fit_line(&x, &y);
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept + 1.0).abs() < 1e-14);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn log_log_recovers_power() {
        let eps: Vec<f64> = (0..5).map(|i| 0.5f64.powi(i)).collect();
        let v: Vec<f64> = eps.iter().map(|e| 3.0 * e.powf(0.75)).collect();
        assert!((log_log_fit(&eps, &v).slope - 0.75).abs() < 1e-12);
    }
}
