//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use panelfill_core::risk::risk_measures;
use panelfill_core::{
    build_locators, favar_fit, impute, reestimate, risk_report, tp_impute, tw_impute, CovMethod,
    ImputationResult, InferenceComponents, Method, OptionTerms, RiskReport, RiskSettings, TransformMode,
    VarBenchmark,
};
use serde::Serialize;

use crate::config::Config;
use crate::error::{AppError, AppResult};
use crate::io::{self, CsvOptions, CsvPanel, IndexColumn};
use crate::mc::{self, covariance_for, parse_frequency, parse_method, parse_mode, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "panelfill", version, about = "Impute missing panel entries with a factor model")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Impute missing cells and optionally write standard errors of the common component.
    Impute(ImputeArgs),
    /// Covariance matrix of an incomplete panel.
    Cov(CovArgs),
    /// Portfolio and option risk measures from an estimated covariance.
    Risk(RiskArgs),
    /// Factor-augmented regression on imputed factors.
    Favar(FavarArgs),
    /// Run a Monte Carlo study from a preset or config file.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum IndexArg {
    Auto,
    Yes,
    No,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Panel CSV: header row, one column per series, optional index column.
    #[arg(long)]
    pub input: PathBuf,
    /// Tokens read as missing (comma separated).
    #[arg(long, value_delimiter = ',', default_value = ",NA,NaN")]
    pub na_tokens: Vec<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub index: IndexArg,
}

impl InputArgs {
    fn options(&self) -> CsvOptions {
        CsvOptions {
            na_tokens: self.na_tokens.clone(),
            index: match self.index {
                IndexArg::Auto => IndexColumn::Auto,
                IndexArg::Yes => IndexColumn::Present,
                IndexArg::No => IndexColumn::Absent,
            },
        }
    }

    fn read(&self) -> AppResult<CsvPanel> {
        io::read_panel(&self.input, &self.options())
    }
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of factors.
    #[arg(long)]
    pub r: usize,
    /// tp, tw, tp+, tw+ or em.
    #[arg(long, default_value = "tp+")]
    pub method: String,
    /// raw, demean or standardize.
    #[arg(long, default_value = "raw")]
    pub transform: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard errors of the estimated common component at every cell.
    #[arg(long)]
    pub se_out: Option<PathBuf>,
    /// Estimated common component at every cell.
    #[arg(long)]
    pub common_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Write observed cells from parsed values instead of their original text.
    #[arg(long)]
    pub reformat_observed: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FirstPass {
    Tp,
    Tw,
}

impl FirstPass {
    fn run(self, panel: &panelfill_core::PanelMatrix, r: usize) -> AppResult<ImputationResult> {
        Ok(match self {
            FirstPass::Tp => tp_impute(panel, r)?,
            FirstPass::Tw => tw_impute(panel, r)?,
        })
    }

    fn method(self) -> Method {
        match self {
            FirstPass::Tp => Method::Tp,
            FirstPass::Tw => Method::Tw,
        }
    }
}

#[derive(Debug, Args)]
pub struct CovArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r: usize,
    /// sm0, sm+0, sm1..sm4, sm+1..sm+4, sf, sf+, sfa, sfa+ or pairwise.
    #[arg(long, default_value = "sm+2")]
    pub method: String,
    /// Overlay draws.
    #[arg(long = "S", default_value_t = 100)]
    pub draws: usize,
    /// Required for overlay estimators.
    #[arg(long)]
    pub seed: Option<u64>,
    /// First-pass imputation behind the estimate.
    #[arg(long, value_enum, default_value = "tp")]
    pub impute: FirstPass,
    /// Labeled CSV matrix.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binary dump (PFILLCOV format).
    #[arg(long)]
    pub bin_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value = "sm+2")]
    pub method: String,
    #[arg(long = "S", default_value_t = 100)]
    pub draws: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "tp")]
    pub impute: FirstPass,
    /// Complete returns with the same columns, used as the benchmark.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    /// daily, weekly, monthly, quarterly or annual.
    #[arg(long, default_value = "monthly")]
    pub frequency: String,
    #[arg(long, default_value_t = 1.0)]
    pub units_scale: f64,
    #[arg(long, default_value_t = 0.02)]
    pub rate: f64,
    /// Benchmark VaR from the empirical quantile instead of the Gaussian formula.
    #[arg(long)]
    pub empirical_var: bool,
    /// JSON output (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FavarArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Outcome series: CSV with one data column and the panel's row count.
    #[arg(long)]
    pub y: PathBuf,
    /// Observed covariates: CSV with the panel's row count.
    #[arg(long)]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub h: usize,
    #[arg(long, default_value = "tp+")]
    pub method: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration entry (key=value); repeatable.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the configuration's full-scale replication count.
    #[arg(long)]
    pub full_scale: bool,
    /// Include wall-clock time in the report.
    #[arg(long)]
    pub record_timing: bool,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the aligned text table to stdout.
    #[arg(long)]
    pub table: bool,
}

/// Parse `argv`, run the command, report errors on one stderr line, and return the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return crate::error::EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> AppResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(AppError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| AppError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Impute(a) => cmd_impute(a),
        Command::Cov(a) => cmd_cov(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Favar(a) => cmd_favar(a),
        Command::Simulate(a) => cmd_simulate(a),
    })
}

fn check_rank(r: usize) -> AppResult<()> {
    if r == 0 {
        return Err(AppError::Usage("--r must be at least 1".into()));
    }
    Ok(())
}

fn cmd_impute(a: ImputeArgs) -> AppResult<()> {
    check_rank(a.r)?;
    let method = parse_method(&a.method)?;
    let mode = parse_mode(&a.transform)?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(AppError::Usage("--level must lie in (0, 1)".into()));
    }
    let csv = a.input.read()?;
    let result = impute(&csv.panel, a.r, method, mode)?;
    let se = match &a.se_out {
        Some(_) => Some(se_matrix(&result)?),
        None => None,
    };
    let completed = result.restored_completed(&csv.panel)?;
    io::write_atomic(&a.out, &csv.render(&completed, !a.reformat_observed)?)?;
    if let Some(path) = &a.common_out {
        io::write_atomic(path, &csv.render(&result.restored_common(), false)?)?;
    }
    if let (Some(path), Some(se)) = (&a.se_out, se) {
        io::write_atomic(path, &csv.render(&se, false)?)?;
    }
    Ok(())
}

/// Standard error of the common component at every cell, in original units.
fn se_matrix(result: &ImputationResult) -> AppResult<DMatrix<f64>> {
    let comps = InferenceComponents::new(result)?;
    let (t, n) = (result.t(), result.n());
    Ok(DMatrix::from_fn(t, n, |s, i| {
        comps.se(result, i, s) * result.transform.scale(i)
    }))
}

fn require_seed(method: CovMethod, seed: Option<u64>) -> AppResult<u64> {
    match (method.overlay_scheme(), seed) {
        (Some(_), None) => Err(AppError::Usage(format!(
            "--seed is required for the overlay estimator {}",
            method.name()
        ))),
        (_, s) => Ok(s.unwrap_or(0)),
    }
}

fn parse_cov_method(s: &str) -> AppResult<CovMethod> {
    CovMethod::parse(&s.to_ascii_lowercase())
        .ok_or_else(|| AppError::Usage(format!("unknown covariance estimator {s:?}")))
}

fn estimate(
    input: &InputArgs,
    r: usize,
    method: &str,
    first: FirstPass,
    draws: usize,
    seed: Option<u64>,
) -> AppResult<(CsvPanel, ImputationResult, panelfill_core::CovEstimate)> {
    check_rank(r)?;
    let method = parse_cov_method(method)?;
    let seed = require_seed(method, seed)?;
    if draws == 0 {
        return Err(AppError::Usage("--S must be at least 1".into()));
    }
    let csv = input.read()?;
    let first_pass = first.run(&csv.panel, r)?;
    let cov = covariance_for(method, &first_pass, None, &csv.panel, draws, seed)?;
    Ok((csv, first_pass, cov))
}

fn cmd_cov(a: CovArgs) -> AppResult<()> {
    if a.out.is_none() && a.bin_out.is_none() {
        return Err(AppError::Usage("give --out and/or --bin-out".into()));
    }
    let (csv, _, cov) = estimate(&a.input, a.r, &a.method, a.impute, a.draws, a.seed)?;
    if let Some(path) = &a.out {
        io::write_atomic(path, &io::render_labeled_matrix(&csv.names, &cov.matrix)?)?;
    }
    if let Some(path) = &a.bin_out {
        io::write_atomic(path, &io::encode_cov_binary(&cov.matrix))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MeasuresJson {
    pvol: f64,
    pvar: f64,
    call_prices: Vec<f64>,
    variances: Vec<f64>,
    covariances: Vec<f64>,
}

impl From<&RiskReport> for MeasuresJson {
    fn from(r: &RiskReport) -> Self {
        MeasuresJson {
            pvol: r.pvol,
            pvar: r.pvar,
            call_prices: r.call_prices.clone(),
            variances: r.variances.clone(),
            covariances: r.covariances.clone(),
        }
    }
}

#[derive(Serialize)]
struct RiskJson {
    schema: u32,
    estimator: String,
    imputation: String,
    incomplete_series: Vec<String>,
    covariance_pairs: Vec<(String, String)>,
    estimate: MeasuresJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<MeasuresJson>,
}

fn cmd_risk(a: RiskArgs) -> AppResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(AppError::Usage("--alpha must lie in (0, 1)".into()));
    }
    let settings = RiskSettings {
        alpha: a.alpha,
        frequency: parse_frequency(&a.frequency)?,
        option: OptionTerms {
            rate: a.rate,
            ..OptionTerms::default()
        },
        units_scale: a.units_scale,
        var_benchmark: if a.empirical_var {
            VarBenchmark::Empirical
        } else {
            VarBenchmark::Gaussian
        },
    };
    let (csv, first, cov) = estimate(&a.input, a.r, &a.method, a.impute, a.draws, a.seed)?;
    let incomplete = build_locators(&csv.panel).incomplete_series();
    let (est, truth) = match &a.truth {
        Some(path) => {
            let t = io::read_panel(path, &a.input.options())?;
            if !t.panel.is_complete() {
                return Err(AppError::Data(format!("{}: benchmark returns must be complete", path.display())));
            }
            let cmp = risk_report(&cov, t.panel.values(), &incomplete, &settings)?;
            (cmp.estimate, Some(cmp.truth))
        }
        None => (risk_measures(&cov.matrix, &incomplete, &settings)?, None),
    };
    let names = &csv.names;
    let out = RiskJson {
        schema: crate::report::SCHEMA_VERSION,
        estimator: cov.method.name().into(),
        imputation: first.method.name().into(),
        incomplete_series: incomplete.iter().map(|&i| names[i].clone()).collect(),
        covariance_pairs: panelfill_core::risk::covariance_pairs(csv.n(), &incomplete)
            .into_iter()
            .map(|(x, y)| (names[x].clone(), names[y].clone()))
            .collect(),
        estimate: (&est).into(),
        truth: truth.as_ref().map(Into::into),
    };
    debug_assert_eq!(a.impute.method(), first.method);
    emit_json(a.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn emit_json(path: Option<&Path>, text: &str) -> AppResult<()> {
    match path {
        Some(p) => io::write_atomic(p, format!("{text}\n").as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| AppError::io("stdout", e))
        }
    }
}

#[derive(Serialize)]
struct FavarJson {
    schema: u32,
    method: String,
    h: usize,
    t_used: usize,
    n_factors: usize,
    /// The first `n_factors` coefficients load on estimated factors and are identified only
    /// up to a rotation.
    note: &'static str,
    delta: Vec<f64>,
    std_errors: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn cmd_favar(a: FavarArgs) -> AppResult<()> {
    check_rank(a.r)?;
    let method = parse_method(&a.method)?;
    if method == Method::Em {
        return Err(AppError::Usage("favar needs tp, tw, tp+ or tw+".into()));
    }
    let csv = a.input.read()?;
    let first = match method {
        Method::Tp | Method::TpPlus => tp_impute(&csv.panel, a.r)?,
        _ => tw_impute(&csv.panel, a.r)?,
    };
    let result = if method.is_reestimated() { reestimate(&first)? } else { first };
    let (_, y) = io::read_series(&a.y, &a.input.options())?;
    if y.ncols() != 1 {
        return Err(AppError::Data(format!("{}: expected one data column", a.y.display())));
    }
    let y = DVector::from_column_slice(y.as_slice());
    let w = match &a.w {
        Some(p) => io::read_series(p, &a.input.options())?.1,
        None => DMatrix::zeros(csv.t(), 0),
    };
    let fit = favar_fit(&y, &w, &result, a.h)?;
    let k = fit.delta.len();
    let out = FavarJson {
        schema: crate::report::SCHEMA_VERSION,
        method: method.name().into(),
        h: fit.h,
        t_used: fit.t_used,
        n_factors: fit.n_factors,
        note: "factor coefficients are identified up to rotation",
        delta: fit.delta.iter().copied().collect(),
        std_errors: fit.std_errors().iter().copied().collect(),
        cov: (0..k).map(|r| (0..k).map(|c| fit.cov[(r, c)]).collect()).collect(),
    };
    emit_json(a.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn cmd_simulate(a: SimulateArgs) -> AppResult<()> {
    let seed = a
        .seed
        .ok_or_else(|| AppError::Usage("--seed is required for simulate".into()))?;
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => Config::preset(p)?,
        (None, Some(path)) => Config::load(path)?,
        (None, None) => return Err(AppError::Usage("give --preset or --config".into())),
    };
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    let report = mc::run_config(
        &cfg,
        &RunOptions {
            seed,
            replications: a.reps,
            full_scale: a.full_scale,
            record_timing: a.record_timing,
        },
    )?;
    if a.table {
        print!("{}", report.render_table());
    }
    match &a.out {
        Some(p) => io::write_atomic(p, format!("{}\n", report.to_json()).as_bytes()),
        None if a.table => Ok(()),
        None => emit_json(None, &report.to_json()),
    }
}

/// Transform mode names accepted on the command line.
pub fn transform_names() -> [&'static str; 3] {
    [
        TransformMode::Raw.name(),
        TransformMode::Demean.name(),
        TransformMode::Standardize.name(),
    ]
}
