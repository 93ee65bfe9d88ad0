use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use loclim_core::exec;
use loclim_core::harness::{self, ExperimentConfig, ExperimentRecord, RecordStore};
use loclim_core::heatkernel::{GaussianPolynomial, MultiIndex};
use loclim_core::limits::{classify, constant, ConstantName, ConstantParams, Hurst, CONSTANT_RTOL};
use loclim_core::loctime::{estimate, EstimatorConfig, IntegrationRule};
use loclim_core::oracles::{moment_formula, moment_simulated, MomentBudget, MomentQuery, SimulationBudget};
use loclim_core::process::{check_condition, sample_path, Condition, ProbeConfig, ProcessSpec};
use loclim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "loclim", version, about = "Smoothed local times of self-similar Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one path and print it as CSV.
    Simulate(SimulateArgs),
    /// Evaluate L_eps^(k)(T, x) on sampled paths.
    Estimate(EstimateArgs),
    /// Evaluate a limiting constant.
    Constants(ConstantArgs),
    /// Classify (H, k, d, N) into its asymptotic regime.
    Classify(ClassifyArgs),
    /// Convergence-rate experiment from a TOML config.
    Rates(ExperimentArgs),
    /// Mixed-normal diagnostics experiment from a TOML config.
    Clt(ExperimentArgs),
    /// Mixed moments of W(L(., x)) increments.
    Moments(MomentArgs),
    /// Probe the regularity conditions of a model.
    VerifyConditions(ConditionArgs),
    /// Summarize a record store.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fbm,
    SubFbm,
    BiFbm,
}

#[derive(Args, Clone)]
struct ProcessArgs {
    #[arg(long, value_enum, default_value = "fbm")]
    kind: Kind,
    /// Hurst index, decimal or exact fraction such as 1/3.
    #[arg(long = "H")]
    hurst: Hurst,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long = "d", default_value_t = 1)]
    dim: usize,
    /// Bi-fBm only.
    #[arg(long)]
    h_prime: Option<f64>,
}

impl ProcessArgs {
    fn spec(&self) -> Result<ProcessSpec> {
        let h = self.hurst.value();
        match self.kind {
            Kind::Fbm => ProcessSpec::fbm(h, self.sigma, self.dim),
            Kind::SubFbm => ProcessSpec::sub_fbm(h, self.sigma, self.dim),
            Kind::BiFbm => {
                let hp = self.h_prime.ok_or_else(|| Error::config("--kind bi-fbm needs --h-prime"))?;
                ProcessSpec::bi_fbm(hp, h / hp, self.sigma, self.dim)
            }
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long = "n")]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long)]
    eps: f64,
    /// Level point, comma separated.
    #[arg(long = "x", value_delimiter = ',')]
    level: Option<Vec<f64>>,
    /// Derivative order, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long = "n")]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long)]
    riemann: bool,
}

#[derive(Args)]
struct ConstantArgs {
    #[arg(long)]
    name: ConstantName,
    #[arg(long = "H")]
    hurst: Hurst,
    #[arg(long = "d", default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    #[arg(long = "N", default_value_t = 2)]
    order: u32,
    /// Test function: p1, p1-4th or x-gauss.
    #[arg(long, default_value = "p1")]
    f: String,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long = "H")]
    hurst: Hurst,
    #[arg(long = "d", default_value_t = 1)]
    dim: usize,
    /// Derivative order: one value (applied to the first coordinate) or d values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    k: Vec<f64>,
    #[arg(long = "N", default_value_t = 2)]
    order: u32,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    /// Record store (JSON lines, appended).
    #[arg(long)]
    records: Option<PathBuf>,
    /// CSV table.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MomentMethodArg {
    Formula,
    Simulation,
    Both,
}

#[derive(Args)]
struct MomentArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Intervals as a:b pairs, comma separated, e.g. 0:0.5,0.5:1.
    #[arg(long, value_delimiter = ',')]
    intervals: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<u32>,
    #[arg(long = "x", value_delimiter = ',')]
    level: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "formula")]
    method: MomentMethodArg,
    #[arg(long, default_value_t = 200_000)]
    samples: u64,
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,
    #[arg(long, default_value_t = 1 << 14)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    eps_proxy: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    All,
    Lnd,
    StrongLnd,
    VarianceEnvelope,
    Decorrelation,
}

#[derive(Args)]
struct ConditionArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long, value_enum, default_value = "all")]
    condition: ConditionArg,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    /// Write the parsed records back out to this file.
    #[arg(long)]
    rewrite: Option<PathBuf>,
}

fn level_or_zero(level: Option<Vec<f64>>, d: usize) -> Result<Vec<f64>> {
    let level = level.unwrap_or_else(|| vec![0.0; d]);
    if level.len() != d {
        return Err(Error::config(format!("--x needs {d} components")));
    }
    Ok(level)
}

fn multi_index(k: Option<Vec<f64>>, d: usize) -> Result<MultiIndex> {
    match k {
        None => Ok(MultiIndex::zeros(d)),
        Some(mut v) => {
            if v.len() == 1 && d > 1 {
                v.resize(d, 0.0);
            }
            if v.len() != d {
                return Err(Error::config(format!("--k needs 1 or {d} components")));
            }
            MultiIndex::new(v)
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = a.process.spec()?;
    let path = sample_path(&spec, a.horizon, a.steps, a.seed)?;
    let mut text = String::from("t");
    for l in 0..spec.dim {
        text.push_str(&format!(",x{}", l + 1));
    }
    text.push('\n');
    for i in 0..=path.steps {
        text.push_str(&format!("{}", path.time(i)));
        for l in 0..spec.dim {
            text.push_str(&format!(",{}", path.values[l][i]));
        }
        text.push('\n');
    }
    match a.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let spec = a.process.spec()?;
    let d = spec.dim;
    let mut cfg = EstimatorConfig::new(a.eps, level_or_zero(a.level, d)?, multi_index(a.k, d)?, a.horizon)?;
    if a.riemann {
        cfg = cfg.with_rule(IntegrationRule::RiemannLeft);
    }
    let sampler = loclim_core::process::PathSampler::new(&spec, a.horizon, a.steps)?;
    println!("replicate,value");
    for rep in 0..a.replicates {
        let path = sampler.sample(a.seed, rep);
        let v = estimate(&path, &cfg)?;
        if v.existence_violation {
            log::warn!("H(2|k|+d) >= 1: the limit does not exist");
        }
        println!("{rep},{}", v.value);
    }
    Ok(())
}

fn test_function(name: &str, d: usize) -> Result<GaussianPolynomial> {
    let choice: harness::FunctionChoice = serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| Error::config(format!("unknown test function {name:?} (p1, p1-4th, x-gauss)")))?;
    choice.build(d)
}

fn constants(a: ConstantArgs) -> Result<()> {
    let f = test_function(&a.f, a.dim)?;
    let params = ConstantParams::new(a.hurst, a.sigma, a.dim)
        .with_k(multi_index(a.k, a.dim)?)
        .with_order(a.order)
        .with_function(std::sync::Arc::new(f));
    let c = constant(a.name, &params)?;
    let rel = c.error / c.value.abs().max(f64::MIN_POSITIVE);
    println!("{} = {}", c.name, c.value);
    println!("quadrature residual = {:.3e} (relative {:.3e})", c.error, rel);
    for t in &c.terms {
        println!("  term {:?}: {} + {}i", t.indices, t.re, t.im);
    }
    if rel > CONSTANT_RTOL && c.value != 0.0 {
        return Err(Error::accuracy(format!("{} above the {CONSTANT_RTOL:e} tolerance", c.name), rel));
    }
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let k = multi_index(Some(a.k), a.dim)?;
    let rep = classify(a.hurst, &k, a.dim, a.order)?;
    println!("{}", rep.summary());
    Ok(())
}

fn load_experiment(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.records.is_some() {
        cfg.output.records = a.records.clone();
    }
    if a.table.is_some() {
        cfg.output.table = a.table.clone();
    }
    Ok(cfg)
}

fn print_record(r: &ExperimentRecord) {
    println!("experiment {:?}  config {}", r.experiment, &r.config_hash[..12]);
    println!("regime {}", r.regime.summary());
    for g in &r.gates {
        println!("gate {:<16} {}  {}", g.name, if g.pass { "pass" } else { "FAIL" }, g.detail);
    }
    println!("epsilon,mean_abs_diff,sd_diff,var_F");
    for s in &r.summary {
        println!("{:.6e},{:.6e},{:.6e},{:.6e}", s.epsilon, s.mean_abs_diff, s.sd_diff, s.var_f);
    }
    let expected = r.fit.expected.map(|e| format!(" (expected {e})")).unwrap_or_default();
    println!(
        "slope of {} = {:.4} ± {:.4}{expected}",
        r.fit.statistic, r.fit.slope, r.fit.slope_se
    );
    if let Some(lp) = &r.lp {
        println!(
            "LP limit at eps={:.3e}: mean scaled {:.5}, predicted {:.5}, relative L1 {:.3}",
            lp.epsilon, lp.mean_scaled, lp.mean_predicted, lp.relative_l1
        );
    }
    if let Some(c) = &r.clt {
        let v = c.variance.last().unwrap();
        println!(
            "Var F / ({} E L) = {:.4} (proxy mean), {:.4} (integral)",
            v.constant_name, v.ratio, v.ratio_expected
        );
        println!(
            "excess kurtosis {:.4} ± {:.4} (normalized by L_eps; {:.4} by L_proxy)",
            c.kurtosis, c.kurtosis_se, c.kurtosis_proxy_normalized
        );
        println!("corr(F, X_T) {:.4} ± {:.4}", c.correlation, c.correlation_se);
        println!(
            "increment exponent {:.4} (1 - Hd = {:.4})",
            c.tightness.exponent, c.tightness.reference_exponent
        );
    }
}

fn experiment(a: ExperimentArgs, clt: bool) -> Result<()> {
    let cfg = load_experiment(&a)?;
    let rec = if clt {
        harness::run_clt_experiment(&cfg)?
    } else {
        harness::run_rate_experiment(&cfg)?
    };
    harness::persist(&rec)?;
    print_record(&rec);
    Ok(())
}

fn parse_interval(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::config(format!("interval {s:?} is not of the form a:b")))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::config(format!("bad number {v:?}")));
    Ok((p(a)?, p(b)?))
}

fn moments(a: MomentArgs) -> Result<()> {
    let spec = a.process.spec()?;
    let intervals = a.intervals.iter().map(|s| parse_interval(s)).collect::<Result<Vec<_>>>()?;
    let level = level_or_zero(a.level, spec.dim)?;
    let q = MomentQuery::new(intervals, a.m, level, spec)?;
    if matches!(a.method, MomentMethodArg::Formula | MomentMethodArg::Both) {
        let r = moment_formula(&q, &MomentBudget { samples: a.samples, seed: a.seed, ..Default::default() })?;
        println!("FORMULA_MC {} ± {} ({} samples)", r.value, r.std_error, r.samples);
    }
    if matches!(a.method, MomentMethodArg::Simulation | MomentMethodArg::Both) {
        let b = SimulationBudget {
            replicates: a.replicates,
            steps: a.steps,
            eps_proxy: a.eps_proxy,
            seed: a.seed,
        };
        let r = moment_simulated(&q, &b)?;
        println!("SIMULATION_MC {} ± {} ({} replicates)", r.value, r.std_error, r.samples);
    }
    Ok(())
}

fn verify_conditions(a: ConditionArgs) -> Result<()> {
    let spec = a.process.spec()?;
    let which: Vec<Condition> = match a.condition {
        ConditionArg::All => Condition::ALL.to_vec(),
        ConditionArg::Lnd => vec![Condition::Lnd],
        ConditionArg::StrongLnd => vec![Condition::StrongLnd],
        ConditionArg::VarianceEnvelope => vec![Condition::VarianceEnvelope],
        ConditionArg::Decorrelation => vec![Condition::Decorrelation],
    };
    let cfg = ProbeConfig::default();
    for c in which {
        let r = check_condition(&spec, c, &cfg)?;
        let sigma = r.sigma_estimate.map(|s| format!(", sigma ≈ {s:.6}")).unwrap_or_default();
        println!(
            "{:?}: worst {:.6e}, {}{sigma}, {} probes skipped  [{}]",
            r.condition,
            r.worst_ratio,
            if r.pass { "pass" } else { "FAIL" },
            r.skipped,
            r.grid
        );
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let store = RecordStore::new(&a.records);
    let all = store.read_all()?;
    for (i, s) in all.iter().enumerate() {
        if i > 0 {
            println!();
        }
        println!("# record {} written at {} ms", i + 1, s.written_unix_ms);
        print_record(&s.record);
    }
    if let Some(out) = a.rewrite {
        let dst = RecordStore::new(out);
        for s in &all {
            dst.append_stored(s)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Constants(a) => constants(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Rates(a) => experiment(a, false),
        Command::Clt(a) => experiment(a, true),
        Command::Moments(a) => moments(a),
        Command::VerifyConditions(a) => verify_conditions(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    exec::init_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
