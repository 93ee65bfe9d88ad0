use loclim_core::heatkernel::GaussianPolynomial;
use loclim_core::oracles::{
    lemma_inequality_suite, moment_formula, moment_simulated, MomentBudget, MomentQuery, SimulationBudget,
};
use loclim_core::process::ProcessSpec;

fn bm() -> ProcessSpec {
    ProcessSpec::fbm(0.5, 1.0, 1).unwrap()
}

fn sim_budget(replicates: u64) -> SimulationBudget {
    SimulationBudget {
        replicates,
        steps: 1 << 13,
        eps_proxy: 1e-4,
        seed: 11,
    }
}

#[test]
fn simulated_mean_local_time_matches_anchor() {
    let q = MomentQuery::new(vec![(0.0, 1.0)], vec![2], vec![0.0], bm()).unwrap();
    let r = moment_simulated(&q, &sim_budget(10_000)).unwrap();
    let exact = (2.0 / std::f64::consts::PI).sqrt();
    assert!((r.value - exact).abs() < 3.0 * r.std_error, "{r:?}");
}

#[test]
fn simulated_first_moment_is_centered() {
    let q = MomentQuery::new(vec![(0.0, 1.0)], vec![1], vec![0.0], bm()).unwrap();
    let r = moment_simulated(&q, &sim_budget(4_000)).unwrap();
    assert!(r.value.abs() < 3.0 * r.std_error, "{r:?}");
}

#[test]
fn mixed_moment_formula_vs_simulation() {
    let q = MomentQuery::new(vec![(0.0, 0.5), (0.5, 1.0)], vec![2, 2], vec![0.0], bm()).unwrap();
    let f = moment_formula(&q, &MomentBudget { samples: 100_000, ..Default::default() }).unwrap();
    let s = moment_simulated(&q, &sim_budget(10_000)).unwrap();
    let se = (f.std_error.powi(2) + s.std_error.powi(2)).sqrt();
    assert!((f.value - s.value).abs() < 3.0 * se, "formula {f:?} simulation {s:?}");
}

#[test]
fn doubling_budget_shrinks_standard_error() {
    let spec = ProcessSpec::fbm(0.3, 1.0, 1).unwrap();
    let q = MomentQuery::new(vec![(0.0, 0.5), (0.5, 1.0)], vec![2, 2], vec![0.4], spec).unwrap();
    let a = moment_formula(&q, &MomentBudget { samples: 40_000, ..Default::default() }).unwrap();
    let b = moment_formula(&q, &MomentBudget { samples: 80_000, ..Default::default() }).unwrap();
    let ratio = b.std_error / a.std_error;
    assert!((ratio / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn inequality_ratios_are_stable() {
    let f = GaussianPolynomial::standard(1);
    let rep = lemma_inequality_suite(&f, 2, 10_000, 2, 1, 3).unwrap();
    for c in &rep.checks {
        assert!(c.max_ratio.is_finite(), "{c:?}");
    }
    assert!(rep.checks[0].pass, "{:?}", rep.checks[0]);
}
