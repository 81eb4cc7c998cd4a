// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use covscan::detectors::DetectorKind;
use covscan::harness::{self, ExperimentPlan};
use covscan::lasso::{write_delta_csv, RefineConfig};
use covscan::registry::{MethodContext, MethodRegistry, SearchRegistry};
use covscan::scanners::{
    estimate_v, Calibration, DetectorConfig, OcScanResult, ScanParams, SignalStrengthEstimate, DEFAULT_ALPHA,
    DEFAULT_C, DEFAULT_C_BAR, DEFAULT_PERMUTATIONS,
};
use covscan::search::SearchTrace;
use covscan::simgen::{generate, ScenarioSpec};
use covscan::{Dataset, PrefixSummaries, ScanError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "covscan", version, about = "Covariance-scanning change-point detection for linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect a change point in a CSV dataset (first column is the response).
    Detect(Box<DetectArgs>),
    /// Generate a synthetic dataset from a scenario JSON.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo experiment plan and write metrics CSV.
    Experiment(ExperimentArgs),
    /// Time prefix summaries and detection over a list of sizes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibArg {
    Perm,
    Plugin,
    Manual,
}

#[derive(Args)]
struct DetectArgs {
    /// Dataset CSV.
    data: PathBuf,
    /// mc, qc, oc or ocr (default oc).
    #[arg(long)]
    method: Option<String>,
    #[arg(long, value_enum)]
    calib: Option<CalibArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of permutations.
    #[arg(long = "B", visible_alias = "permutations")]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    zeta_mc: Option<f64>,
    #[arg(long)]
    zeta_qc: Option<f64>,
    #[arg(long)]
    c_bar: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    varpi_mc: Option<usize>,
    #[arg(long)]
    varpi_qc: Option<usize>,
    /// os (optimistic) or fs (full grid).
    #[arg(long)]
    search: Option<String>,
    /// Include the search traces in the output.
    #[arg(long)]
    trace: bool,
    /// Maximise the absolute projected statistic in the refinement.
    #[arg(long)]
    abs: bool,
    /// Penalty override for the refinement Lasso.
    #[arg(long)]
    lambda: Option<f64>,
    /// The CSV starts with a header row.
    #[arg(long)]
    header: bool,
    /// JSON file with `detector`, `refine`, `method` and `search` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Result JSON path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the nonzero coordinates of the Lasso estimate here (ocr only).
    #[arg(long)]
    delta_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a header row (`y,x1,...,xp`).
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    plan: PathBuf,
    /// Metrics CSV path; defaults to the plan's `output`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated `NxP` pairs.
    #[arg(long, default_value = "16384x64,32768x64,16384x128")]
    sizes: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    detector: DetectorConfig,
    #[serde(default)]
    refine: RefineConfig,
    method: Option<String>,
    search: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Scan(ScanError),
}

impl From<ScanError> for Failure {
    fn from(e: ScanError) -> Self {
        Failure::Scan(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Scan(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Scan(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Detect(a) => detect(*a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::Bench(a) => bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Scan(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_USAGE })
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, fill: impl FnOnce(&mut dyn Write) -> covscan::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => harness::write_atomically(p, fill)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn calibration_kind(c: &Calibration) -> CalibArg {
    match c {
        Calibration::Permutation { .. } => CalibArg::Perm,
        Calibration::Plugin { .. } => CalibArg::Plugin,
        Calibration::Manual { .. } => CalibArg::Manual,
    }
}

/// Merges calibration flags into the configured policy. Flags belonging to
/// a different policy are rejected.
fn resolve_calibration(args: &DetectArgs, base: &Calibration) -> CliResult<Calibration> {
    let kind = args.calib.unwrap_or_else(|| calibration_kind(base));
    let same = calibration_kind(base) == kind;
    let stray = |flags: &[(&str, bool)]| -> CliResult<()> {
        match flags.iter().find(|(_, set)| *set) {
            Some((name, _)) => Err(Failure::Usage(format!("{name} does not apply to the selected calibration"))),
            None => Ok(()),
        }
    };
    let perm_flags = [("--alpha", args.alpha.is_some()), ("--B", args.b.is_some())];
    let plugin_flags = [("--c-bar", args.c_bar.is_some()), ("--c", args.c.is_some())];
    let manual_flags = [("--zeta-mc", args.zeta_mc.is_some()), ("--zeta-qc", args.zeta_qc.is_some())];
    Ok(match kind {
        CalibArg::Perm => {
            stray(&plugin_flags)?;
            stray(&manual_flags)?;
            let (b0, a0) = match (same, base) {
                (true, Calibration::Permutation { b, alpha }) => (*b, *alpha),
                _ => (DEFAULT_PERMUTATIONS, DEFAULT_ALPHA),
            };
            Calibration::Permutation {
                b: args.b.unwrap_or(b0),
                alpha: args.alpha.unwrap_or(a0),
            }
        }
        CalibArg::Plugin => {
            stray(&perm_flags)?;
            stray(&manual_flags)?;
            let (cb0, c0) = match (same, base) {
                (true, Calibration::Plugin { c_bar, c }) => (*c_bar, *c),
                _ => (DEFAULT_C_BAR, DEFAULT_C),
            };
            Calibration::Plugin {
                c_bar: args.c_bar.unwrap_or(cb0),
                c: args.c.unwrap_or(c0),
            }
        }
        CalibArg::Manual => {
            stray(&perm_flags)?;
            stray(&plugin_flags)?;
            let (m0, q0) = match (same, base) {
                (true, Calibration::Manual { zeta_mc, zeta_qc }) => (Some(*zeta_mc), Some(*zeta_qc)),
                _ => (None, None),
            };
            match (args.zeta_mc.or(m0), args.zeta_qc.or(q0)) {
                (Some(zeta_mc), Some(zeta_qc)) => Calibration::Manual { zeta_mc, zeta_qc },
                _ => return Err(Failure::Usage("manual calibration needs --zeta-mc and --zeta-qc".into())),
            }
        }
    })
}

#[derive(Serialize)]
struct DetectReport<'a> {
    method: &'a str,
    search: &'a str,
    n: usize,
    p: usize,
    theta_hat: usize,
    q_hat: u8,
    /// OcScan fields other than `q_hat`, inlined.
    #[serde(flatten)]
    oc: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refinement: Option<RefinementReport<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    signal_strength: Option<SignalStrengthEstimate>,
    thresholds: ScanParams,
    calibration: &'a Calibration,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<BTreeMap<&'static str, &'a SearchTrace>>,
}

#[derive(Serialize)]
struct RefinementReport<'a> {
    lambda: f64,
    varpi_r: usize,
    fallback: bool,
    converged: bool,
    iterations: usize,
    kkt_gap: f64,
    objective: f64,
    support: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    projected_stats: Option<&'a Vec<f64>>,
}

fn detect(args: DetectArgs) -> CliResult<()> {
    let file: ConfigFile = match &args.config {
        Some(p) => read_json(p)?,
        None => ConfigFile::default(),
    };
    let mut detector = file.detector.clone();
    detector.calibration = resolve_calibration(&args, &detector.calibration)?;
    if let Some(seed) = args.seed {
        detector.seed = seed;
    }
    if args.varpi_mc.is_some() {
        detector.varpi_mc = args.varpi_mc;
    }
    if args.varpi_qc.is_some() {
        detector.varpi_qc = args.varpi_qc;
    }
    let mut refine = file.refine.clone();
    refine.abs |= args.abs;
    refine.keep_trace |= args.trace;
    if args.lambda.is_some() {
        refine.lambda = args.lambda;
    }
    let method_name = args.method.clone().or(file.method.clone()).unwrap_or_else(|| "oc".into());
    let search_name = args.search.clone().or(file.search.clone()).unwrap_or_else(|| "os".into());
    let method = MethodRegistry::with_defaults().get(&method_name)?;
    let search = SearchRegistry::with_defaults().get(&search_name)?;
    detector.validate()?;

    let ds = Dataset::read_csv(BufReader::new(File::open(&args.data)?), args.header)?;
    let ps = PrefixSummaries::precompute(&ds);
    let params = detector.resolve(&ds)?;
    let ctx = MethodContext {
        ds: &ds,
        ps: &ps,
        params: &params,
        search: search.as_ref(),
        refine: &refine,
    };
    let detection = method.detect(&ctx)?;

    let oc = detection
        .oc
        .as_ref()
        .or_else(|| detection.refinement.as_ref().map(|r| &r.oc));
    // V̂ is reported at the quadratic estimate whenever it marks a change.
    let theta_qc = match (method.name(), oc) {
        (_, Some(oc)) if oc.q_hat == 1 => Some(oc.theta_qc),
        ("qc", _) if detection.q_hat == 1 => Some(detection.theta_hat),
        _ => None,
    };
    let signal_strength = theta_qc.filter(|&t| t < ds.n()).map(|t| estimate_v(&ps, t)).transpose()?;
    let refinement = detection.refinement.as_ref().map(|r| RefinementReport {
        lambda: r.lambda,
        varpi_r: r.varpi_r,
        fallback: r.fallback,
        converged: r.lasso.converged,
        iterations: r.lasso.iterations,
        kkt_gap: r.lasso.kkt_gap,
        objective: r.lasso.objective,
        support: r.lasso.support(),
        projected_stats: r.projected_stats.as_ref(),
    });
    if let Some(path) = &args.delta_out {
        let r = detection
            .refinement
            .as_ref()
            .ok_or_else(|| Failure::Usage("--delta-out needs --method ocr and a detected change".into()))?;
        harness::write_atomically(path, |w| write_delta_csv(w, &r.lasso.delta_hat))?;
    }
    let traces = args.trace.then(|| {
        detection
            .traces
            .iter()
            .map(|(kind, t)| {
                let key = match kind {
                    DetectorKind::Max => "max",
                    DetectorKind::Quad => "quad",
                };
                (key, t)
            })
            .collect()
    });
    let report = DetectReport {
        method: method.name(),
        search: search.name(),
        n: ds.n(),
        p: ds.p(),
        theta_hat: detection.theta_hat,
        q_hat: detection.q_hat,
        oc: oc.map(oc_fields).transpose()?,
        theta_r: detection.refinement.as_ref().map(|r| r.theta_r),
        refinement,
        signal_strength,
        thresholds: params,
        calibration: &detector.calibration,
        seed: detector.seed,
        traces,
    };
    emit_json(args.out.as_deref(), &report)
}

fn oc_fields(oc: &OcScanResult) -> CliResult<serde_json::Map<String, serde_json::Value>> {
    match serde_json::to_value(oc)? {
        serde_json::Value::Object(mut map) => {
            map.remove("q_hat");
            Ok(map)
        }
        _ => Ok(serde_json::Map::new()),
    }
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut spec: ScenarioSpec = read_json(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (ds, model) = generate(&spec)?;
    log::info!("generated n={} p={} theta={}", ds.n(), ds.p(), model.theta);
    emit(args.out.as_deref(), |w| ds.write_csv(w, args.header))
}

fn experiment(args: ExperimentArgs) -> CliResult<()> {
    let mut plan: ExperimentPlan = read_json(&args.plan)?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(r) = args.repetitions {
        plan.repetitions = r;
    }
    let out = harness::run_experiment(&plan)?;
    let path = args.out.clone().or_else(|| plan.output.as_ref().map(PathBuf::from));
    emit(path.as_deref(), |w| harness::write_metrics(w, &out.rows))
}

fn parse_sizes(text: &str) -> CliResult<Vec<(usize, usize)>> {
    text.split(',')
        .map(|item| {
            let (n, p) = item
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| Failure::Usage(format!("size '{item}' is not of the form NxP")))?;
            match (n.trim().parse(), p.trim().parse()) {
                (Ok(n), Ok(p)) => Ok((n, p)),
                _ => Err(Failure::Usage(format!("size '{item}' is not of the form NxP"))),
            }
        })
        .collect()
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let sizes = parse_sizes(&args.sizes)?;
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be >= 1".into()));
    }
    let report = harness::run_bench(&sizes, args.reps, args.seed)?;
    for check in report.checks.iter().filter(|c| c.required && !c.pass) {
        log::warn!("scaling check failed: {} ratio {:.3} outside [{}, {}]", check.name, check.ratio, check.lo, check.hi);
    }
    emit_json(args.out.as_deref(), &report)
}
