use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmtmf::synth::gauge_pairs_table;
use hmtmf::{NoisePolicy, Regression};
use hmtmf_harness::data::{engine_instance, one_d_instance, TestSet};
use hmtmf_harness::io::{read_json, write_json, write_text};
use hmtmf_harness::report::delta_text;
use hmtmf_harness::{
    fit_method, rmse, run_experiment, tune, write_report, ExperimentConfig, FitSettings, FittedMethod, HarnessError,
    Method, Result, TuneGrid,
};

#[derive(Parser)]
#[command(name = "hmtmf", version, about = "Multi-task multi-fidelity GP surrogates: fit, predict and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance (experiment.json and truth.json).
    Gen(GenArgs),
    /// Fit one model to an experiment file.
    Fit(FitArgs),
    /// Predict with a fitted model.
    Predict(PredictArgs),
    /// Run the 1D benchmark.
    #[command(name = "bench-1d")]
    Bench1d(Bench1dArgs),
    /// Run the engine-surface benchmark.
    BenchEngine(BenchEngineArgs),
    /// Run a sweep from a configuration file (default: engine, all nine gauge pairs).
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    OneD,
    Engine,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegressionArg {
    Ols,
    Huber,
    Gls,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    SampleVariance,
    DeclaredFallback,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "HMTMF_OUTPUT_DIR", default_value = "hmtmf-out")]
    out_dir: PathBuf,
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Squared length-scale of the base kernel.
    #[arg(long)]
    delta_sq: Option<f64>,
    /// Inverse-Wishart degrees of freedom.
    #[arg(long)]
    nu: Option<f64>,
    /// Precision scaling of the hyperprior mean.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    regression: Option<RegressionArg>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Select (δ², ν, λ) on a 20% held-out split.
    #[arg(long)]
    tune: bool,
}

impl ModelArgs {
    fn apply(&self, s: &mut FitSettings) {
        if let Some(v) = self.delta_sq {
            s.hyper.delta_sq = v;
        }
        if let Some(v) = self.nu {
            s.hyper.nu = v;
        }
        if let Some(v) = self.lambda {
            s.hyper.lambda = v;
        }
        if let Some(r) = self.regression {
            s.regression = match r {
                RegressionArg::Ols => Regression::Ols,
                RegressionArg::Huber => Regression::HuberIrls,
                RegressionArg::Gls => Regression::Gls,
            };
        }
        if let Some(p) = self.policy {
            s.policy = match p {
                PolicyArg::SampleVariance => NoisePolicy::SampleVarianceOnly,
                PolicyArg::DeclaredFallback => NoisePolicy::DeclaredVarianceFallback,
            };
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    benchmark: BenchKind,
    #[arg(long)]
    seed: u64,
    /// Row of the gauge-pair table (engine only).
    #[arg(long, default_value_t = 0)]
    pair_index: usize,
    /// Custom (p_high,p_low) pair in percent, overriding --pair-index.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<(f64, f64)>,
    /// Approximate size of the engine test grid.
    #[arg(long, default_value_t = 15_000)]
    n_test: usize,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct FitArgs {
    /// Experiment JSON.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Hmtmf)]
    method: Method,
    /// Start from the defaults of this benchmark.
    #[arg(long, value_enum, default_value_t = BenchKind::OneD)]
    preset: BenchKind,
    #[command(flatten)]
    model: ModelArgs,
    /// Seed of the held-out split (with --tune).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Query JSON in the truth-file layout; values, when present, are scored.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    task: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchCommon {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    replications: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
    methods: Vec<Method>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct Bench1dArgs {
    #[command(flatten)]
    common: BenchCommon,
    /// Skip the per-task curve files.
    #[arg(long)]
    no_curves: bool,
}

#[derive(Args)]
struct BenchEngineArgs {
    #[command(flatten)]
    common: BenchCommon,
    /// Rows of the gauge-pair table; all nine when omitted.
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<usize>,
    /// Custom (p_high,p_low) pair in percent, replacing --pairs.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<(f64, f64)>,
    #[arg(long, default_value_t = 15_000)]
    n_test: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// ExperimentConfig JSON; its seed is replaced by --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected p_high,p_low")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

fn table_pairs(rows: &[usize]) -> Result<Vec<(f64, f64)>> {
    let table = gauge_pairs_table();
    if rows.is_empty() {
        return Ok(table);
    }
    rows.iter()
        .map(|&i| {
            table
                .get(i)
                .copied()
                .ok_or_else(|| HarnessError::Config(format!("gauge pair row {i} out of range 0..9")))
        })
        .collect()
}

fn gen(a: &GenArgs) -> Result<()> {
    let inst = match a.benchmark {
        BenchKind::OneD => one_d_instance(&hmtmf::synth::Bench1DConfig::with_seed(a.seed))?,
        BenchKind::Engine => {
            let pair = match a.pair {
                Some(p) => p,
                None => table_pairs(&[a.pair_index])?[0],
            };
            engine_instance(&hmtmf::synth::EngineBenchConfig {
                seed: a.seed,
                gauge_pair: pair,
                n_test: a.n_test,
                ..Default::default()
            })?
        }
    };
    write_json(&a.out.out_dir.join("experiment.json"), &inst.experiment)?;
    write_json(&a.out.out_dir.join("truth.json"), &inst.test)?;
    println!("wrote {}", a.out.out_dir.display());
    Ok(())
}

fn preset(kind: BenchKind) -> FitSettings {
    match kind {
        BenchKind::OneD => FitSettings::one_d(),
        BenchKind::Engine => FitSettings::engine(),
    }
}

fn fit(a: &FitArgs) -> Result<()> {
    let experiment: hmtmf::Experiment = read_json(&a.data)?;
    let mut settings = preset(a.preset);
    a.model.apply(&mut settings);
    if a.model.tune {
        let t = tune(&experiment, &settings, &TuneGrid::default(), a.seed)?;
        println!(
            "tuned delta_sq={} nu={} lambda={} (held-out rmse {})",
            t.hyper.delta_sq, t.hyper.nu, t.hyper.lambda, t.score
        );
        settings.hyper = t.hyper;
    }
    let fitted = fit_method(a.method, &experiment, &settings)?;
    if let Some(s) = fitted.noise_variance() {
        println!("learned noise variance {s}");
    }
    write_json(&a.out, &fitted)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let fitted: FittedMethod = read_json(&a.model)?;
    let queries: TestSet = read_json(&a.queries)?;
    let q = queries
        .tasks
        .iter()
        .find(|t| t.task_id == a.task)
        .ok_or_else(|| HarnessError::Config(format!("no queries for task {}", a.task)))?;
    let p = fitted.predict(a.task, &q.locations, &q.basis)?;
    write_text(&a.out, &p.to_csv())?;
    if q.values.len() == p.mean.len() && !q.values.is_empty() {
        println!("rmse {}", rmse(&p.mean, &q.values)?);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn apply_common(cfg: &mut ExperimentConfig, c: &BenchCommon) {
    cfg.n_replications = c.replications;
    cfg.methods = c.methods.clone();
    c.model.apply(&mut cfg.fit);
    if c.model.tune {
        cfg.tune = Some(TuneGrid::default());
    }
}

fn run_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let report = run_experiment(cfg)?;
    let files = write_report(&report, dir)?;
    print!("{}", delta_text(&report));
    if report.n_failed() > 0 {
        println!("{} records failed; see raw.csv", report.n_failed());
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn bench_1d(a: &Bench1dArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::one_d(a.common.seed);
    apply_common(&mut cfg, &a.common);
    cfg.curves = !a.no_curves;
    run_and_write(&cfg, &a.common.out.out_dir)
}

fn bench_engine(a: &BenchEngineArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::engine(a.common.seed);
    apply_common(&mut cfg, &a.common);
    cfg.gauge_pairs = match a.pair {
        Some(p) => vec![p],
        None => table_pairs(&a.pairs)?,
    };
    cfg.engine.n_test = a.n_test;
    run_and_write(&cfg, &a.common.out.out_dir)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => ExperimentConfig::engine(a.seed),
    };
    cfg.seed = a.seed;
    run_and_write(&cfg, &a.out.out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Bench1d(a) => bench_1d(a),
        Command::BenchEngine(a) => bench_engine(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
