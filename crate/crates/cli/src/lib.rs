//! The `tenfill` command-line harness.
//!
//! Exit codes: 0 on success, 1 when a solver fails, 2 for usage and I/O
//! errors. `TENFILL_THREADS` sets the worker count of the solvers (unset or
//! 0 runs sequentially; results never depend on it).

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tenfill::bayes::{self, HyperParams, InitMode, SolverConfig};
use tenfill::flags::{parse_dims, parse_list, parse_ratios};
use tenfill::report::{csv_string, ExperimentReport, Method, RunConfig};
use tenfill::rng::{stream, sub_seed};
use tenfill::synth::{random_cp_tensor, wafer_pattern, WaferParams};
use tenfill::tns::{format_dense, format_observations, load_tns, read_tns, TnsData};
use tenfill::vp::{vp_recover_stack, LambdaRule, VpConfig};
use tenfill::DenseTensor;

pub mod protocol;

pub const THREADS_ENV: &str = "TENFILL_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, msg: String },
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, msg } => write!(f, "{}: {msg}", path.display()),
            CliError::Solver(m) => write!(f, "solver failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: tenfill::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn solver(e: tenfill::Error) -> CliError {
    CliError::Solver(e.to_string())
}

fn io_at(path: &Path) -> impl FnOnce(tenfill::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

#[derive(Debug, Parser)]
#[command(name = "tenfill", version, about = "Tensor completion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth tensor and optionally an observation file.
    Synth(SynthArgs),
    /// Complete an observation file and write a JSON report.
    Complete(CompleteArgs),
    /// Relative error across a grid of sampling ratios (CSV).
    Sweep(SweepArgs),
    /// Predicted rank under several maximum ranks (CSV).
    RankStudy(RankStudyArgs),
    /// Bayesian CP against the slice-wise DCT baseline (CSV).
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    BayesCp,
    Vp,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Relative ELBO change that stops the sweeps.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Relative component power below which a component is removed.
    #[arg(long, default_value_t = 1e-4)]
    pub prune_threshold: f64,
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long, value_enum, default_value_t = InitArg::Spectral)]
    pub init: InitArg,
}

#[derive(Debug, Clone, Args)]
pub struct VpArgs {
    /// Baseline l1 weight: a number, `auto` (1% of ||A^T y||_inf),
    /// `fraction:F`, or `cv` (5-fold cross-validation).
    #[arg(long, default_value = "auto")]
    pub lambda: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Extents, e.g. `30,30,15` or `64x64x10`.
    #[arg(long)]
    pub dims: String,
    /// CP rank of the random tensor.
    #[arg(long, required_unless_present = "wafer", conflicts_with = "wafer")]
    pub rank: Option<usize>,
    /// Smooth multi-die pattern instead of a random CP tensor.
    #[arg(long)]
    pub wafer: bool,
    /// Noise added to the observations (the truth file stays clean).
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth output, every entry.
    #[arg(long)]
    pub out: PathBuf,
    /// Observation output; needs `--ratio`.
    #[arg(long, requires = "ratio")]
    pub obs: Option<PathBuf>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub obs: PathBuf,
    /// Expected extents; checked against the file header when given.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::BayesCp)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 15)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub vp: VpArgs,
    /// Dense truth; adds `relative_error` to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Completed tensor output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report output; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated ratios; default 10 log-spaced points in [0.03, 0.5].
    #[arg(long)]
    pub ratios: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 15)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankStudyArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    pub ratio: f64,
    /// Comma-separated maximum ranks.
    #[arg(long, default_value = "5,10,15,20,25")]
    pub max_rank: String,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    pub ratio: f64,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 15)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub vp: VpArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Worker threads from `TENFILL_THREADS`.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
    }
}

pub fn solver_config(args: &SolverArgs, seed: u64, threads: usize) -> CliResult<SolverConfig> {
    let cfg = SolverConfig {
        max_iters: args.max_iters,
        tol: args.tol,
        prune_threshold: args.prune_threshold,
        prune_enabled: !args.no_prune,
        seed,
        init: match args.init {
            InitArg::Random => InitMode::Random,
            InitArg::Spectral => InitMode::Spectral,
        },
        threads,
        ..SolverConfig::default()
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn parse_lambda(s: &str) -> CliResult<LambdaRule> {
    let bad = || CliError::Usage(format!("invalid --lambda `{s}`"));
    let rule = match s.trim() {
        "auto" => LambdaRule::Fraction { fraction: 0.01 },
        "cv" => LambdaRule::default_cross_validation(),
        t => match t.strip_prefix("fraction:") {
            Some(f) => LambdaRule::Fraction { fraction: f.parse().map_err(|_| bad())? },
            None => LambdaRule::Fixed { value: t.parse().map_err(|_| bad())? },
        },
    };
    let ok = match &rule {
        LambdaRule::Fixed { value } => *value >= 0.0 && value.is_finite(),
        LambdaRule::Fraction { fraction } => *fraction >= 0.0 && fraction.is_finite(),
        LambdaRule::CrossValidate { .. } => true,
    };
    if ok {
        Ok(rule)
    } else {
        Err(bad())
    }
}

pub fn vp_config(args: &VpArgs, seed: u64, threads: usize) -> CliResult<VpConfig> {
    Ok(VpConfig { lambda: parse_lambda(&args.lambda)?, seed, threads, ..VpConfig::default() })
}

fn hyper(max_rank: usize) -> CliResult<HyperParams> {
    let h = HyperParams::with_max_rank(max_rank);
    h.validate().map_err(usage)?;
    Ok(h)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Io { path: path.to_path_buf(), msg: e.to_string() })
}

fn emit(out: Option<&Path>, contents: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn load_truth(path: &Path) -> CliResult<DenseTensor> {
    match load_tns(path, true).map_err(io_at(path))? {
        TnsData::Dense(t) => Ok(t),
        TnsData::Sparse(_) => unreachable!("dense load returns a dense tensor"),
    }
}

fn check_ratio(r: f64) -> CliResult<f64> {
    parse_ratios(&r.to_string()).map_err(usage)?;
    Ok(r)
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let dims = parse_dims(&a.dims).map_err(usage)?;
    let mut manifest = serde_json::Map::new();
    manifest.insert("command".into(), "synth".into());
    manifest.insert("dims".into(), dims.clone().into());
    manifest.insert("seed".into(), a.seed.into());
    let mut seeds = serde_json::Map::new();
    let truth = if a.wafer {
        seeds.insert(stream::WAFER.into(), sub_seed(a.seed, stream::WAFER, 0).into());
        wafer_pattern(&dims, &WaferParams::default(), a.seed).map_err(usage)?.tensor
    } else {
        let rank = a.rank.expect("clap requires --rank without --wafer");
        manifest.insert("rank".into(), rank.into());
        seeds.insert(stream::FACTORS.into(), sub_seed(a.seed, stream::FACTORS, 0).into());
        random_cp_tensor(&dims, rank, a.seed).map_err(usage)?.1
    };
    write_file(&a.out, &format_dense(&truth))?;
    manifest.insert("truth".into(), a.out.display().to_string().into());
    manifest.insert("entries".into(), truth.len().into());

    if let Some(obs_path) = &a.obs {
        let ratio = check_ratio(a.ratio.expect("clap requires --ratio with --obs"))?;
        let source = protocol::noisy_source(&truth, a.snr_db, a.seed).map_err(usage)?;
        if a.snr_db.is_some() {
            seeds.insert(stream::NOISE.into(), sub_seed(a.seed, stream::NOISE, 0).into());
        }
        let (obs, mask_seed) = protocol::draw(&source, ratio, a.seed, 0).map_err(usage)?;
        seeds.insert(stream::MASK.into(), mask_seed.into());
        write_file(obs_path, &format_observations(&obs))?;
        manifest.insert("obs".into(), obs_path.display().to_string().into());
        manifest.insert("observed_entries".into(), obs.len().into());
    }
    manifest.insert("sub_seeds".into(), seeds.into());
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    Ok(())
}

fn complete(a: &CompleteArgs, threads: usize) -> CliResult<()> {
    let obs = read_tns(&a.obs).map_err(io_at(&a.obs))?;
    if let Some(d) = &a.dims {
        let dims = parse_dims(d).map_err(usage)?;
        if dims != obs.dims() {
            return Err(CliError::Usage(format!(
                "--dims {dims:?} does not match {:?} declared in {}",
                obs.dims(),
                a.obs.display()
            )));
        }
    }
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    if let Some(t) = &truth {
        if t.dims() != obs.dims() {
            return Err(CliError::Usage(format!(
                "truth dims {:?} differ from observation dims {:?}",
                t.dims(),
                obs.dims()
            )));
        }
    }

    let (prediction, report) = match a.method {
        MethodArg::BayesCp => {
            let h = hyper(a.max_rank)?;
            let cfg = solver_config(&a.solver, a.seed, threads)?;
            let res = bayes::run(&obs, &h, &cfg).map_err(solver)?;
            let report = ExperimentReport {
                method: Method::BayesCp,
                dims: obs.dims().to_vec(),
                sampling_ratio: obs.sampling_ratio(),
                observed_entries: obs.len(),
                seed: a.seed,
                relative_error: truth.as_ref().map(|t| res.relative_error(t)).transpose().map_err(solver)?,
                predicted_rank: Some(res.predicted_rank),
                iterations: res.iterations,
                converged: res.converged,
                final_elbo: Some(res.final_elbo),
                wall_time_seconds: res.wall_time_seconds,
                config: RunConfig::BayesCp { hyper: h, solver: cfg },
            };
            (res.prediction, report)
        }
        MethodArg::Vp => {
            let cfg = vp_config(&a.vp, a.seed, threads)?;
            let start = std::time::Instant::now();
            let rec = vp_recover_stack(&obs, &cfg).map_err(solver)?;
            let secs = start.elapsed().as_secs_f64();
            let report = ExperimentReport {
                method: Method::Vp,
                dims: obs.dims().to_vec(),
                sampling_ratio: obs.sampling_ratio(),
                observed_entries: obs.len(),
                seed: a.seed,
                relative_error: truth
                    .as_ref()
                    .map(|t| tenfill::tensor::relative_error(&rec.tensor, t))
                    .transpose()
                    .map_err(solver)?,
                predicted_rank: None,
                iterations: rec.slices.iter().flatten().map(|s| s.iterations).sum(),
                converged: rec.slices.iter().flatten().all(|s| s.converged),
                final_elbo: None,
                wall_time_seconds: secs,
                config: RunConfig::Vp { solver: cfg },
            };
            (rec.tensor, report)
        }
    };
    if let Some(out) = &a.out {
        write_file(out, &format_dense(&prediction))?;
    }
    emit(a.report.as_deref(), &report.to_json().map_err(solver)?)
}

fn sweep(a: &SweepArgs, threads: usize) -> CliResult<()> {
    let ratios = match &a.ratios {
        Some(s) => parse_ratios(s).map_err(usage)?,
        None => protocol::default_ratios(),
    };
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    hyper(a.max_rank)?;
    let cfg = solver_config(&a.solver, a.seed, threads)?;
    let truth = load_truth(&a.truth)?;
    let rows = protocol::sweep(&truth, &ratios, a.reps, a.snr_db, a.max_rank, &cfg).map_err(solver)?;
    emit(a.out.as_deref(), &csv_string(&rows).map_err(solver)?)
}

fn rank_study(a: &RankStudyArgs, threads: usize) -> CliResult<()> {
    let ratio = check_ratio(a.ratio)?;
    let ranks: Vec<usize> = parse_list(&a.max_rank).map_err(usage)?;
    for &r in &ranks {
        hyper(r)?;
    }
    let cfg = solver_config(&a.solver, a.seed, threads)?;
    let truth = load_truth(&a.truth)?;
    let rows = protocol::rank_study(&truth, ratio, &ranks, a.snr_db, &cfg).map_err(solver)?;
    emit(a.out.as_deref(), &csv_string(&rows).map_err(solver)?)
}

fn compare(a: &CompareArgs, threads: usize) -> CliResult<()> {
    let ratio = check_ratio(a.ratio)?;
    hyper(a.max_rank)?;
    let cfg = solver_config(&a.solver, a.seed, threads)?;
    let vp = vp_config(&a.vp, a.seed, threads)?;
    let truth = load_truth(&a.truth)?;
    let rows = protocol::compare(&truth, ratio, a.snr_db, a.max_rank, &cfg, &vp).map_err(solver)?;
    emit(a.out.as_deref(), &csv_string(&rows).map_err(solver)?)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let threads = threads_from_env()?;
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Complete(a) => complete(a, threads),
        Command::Sweep(a) => sweep(a, threads),
        Command::RankStudy(a) => rank_study(a, threads),
        Command::Compare(a) => compare(a, threads),
    }
}
