// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte-Carlo experiment runner and the runtime benchmark.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PrefixSummaries;
use crate::error::{Result, ScanError};
use crate::lasso::RefineConfig;
use crate::registry::{MethodContext, MethodRegistry, SearchRegistry};
use crate::scanners::{default_varpi_mc, default_varpi_qc, run_ocscan, DetectorConfig, ScanParams};
use crate::search::OptimisticSearch;
use crate::simgen::{builder_for, generate_with, mix_seed, Scenario, ScenarioSpec, SparsityMode};

pub const DEFAULT_REPETITIONS: usize = 200;
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CPSCAN_THREADS";

/// Salt separating the calibration seed from the data seed of a repetition.
const CALIBRATION_SALT: u64 = 0xCA11_B2A7;

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}
fn default_methods() -> Vec<String> {
    ["mc", "qc", "oc"].map(String::from).to_vec()
}
fn default_search() -> String {
    "os".into()
}
fn default_ns() -> Vec<usize> {
    vec![300]
}
fn zero_list() -> Vec<f64> {
    vec![0.0]
}
fn none_list() -> Vec<Option<usize>> {
    vec![None]
}
fn one() -> f64 {
    1.0
}

/// Scenario coordinates; the experiment runs over their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_ns")]
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub s: Vec<usize>,
    pub rho: Vec<f64>,
    #[serde(default = "zero_list")]
    pub gamma: Vec<f64>,
    #[serde(default = "zero_list")]
    pub nu: Vec<f64>,
    #[serde(default = "none_list")]
    pub r: Vec<Option<usize>>,
    /// `null` keeps the scenario default (`n / 4`).
    #[serde(default = "none_list")]
    pub theta: Vec<Option<usize>>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub sparsity_mode: SparsityMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub grid: GridSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default = "default_search")]
    pub search: String,
    /// Metrics CSV destination, used by the CLI when `--out` is absent.
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Scenario specs of every grid cell, in output order (seeds unset).
    pub fn cells(&self) -> Vec<ScenarioSpec> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n {
            for &p in &g.p {
                for &s in &g.s {
                    for &rho in &g.rho {
                        for &gamma in &g.gamma {
                            for &nu in &g.nu {
                                for &r in &g.r {
                                    for &theta in &g.theta {
                                        out.push(ScenarioSpec {
                                            scenario: self.scenario,
                                            n,
                                            p,
                                            theta,
                                            sigma: g.sigma,
                                            rho,
                                            gamma,
                                            nu,
                                            sparsity_mode: g.sparsity_mode,
                                            s,
                                            r,
                                            seed: 0,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, methods: &MethodRegistry, searches: &SearchRegistry) -> Result<()> {
        if self.repetitions == 0 {
            return Err(ScanError::Config("repetitions must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ScanError::Config("no methods requested".into()));
        }
        let cells = self.cells();
        if cells.is_empty() {
            return Err(ScanError::Config("scenario grid is empty".into()));
        }
        for cell in &cells {
            cell.validate()?;
        }
        for m in &self.methods {
            methods.get(m)?;
        }
        searches.get(&self.search)?;
        self.detector.validate()
    }
}

/// Outcome of one method on one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub cell: usize,
    pub rep: usize,
    pub method: String,
    pub theta: usize,
    /// `None` when the repetition failed.
    pub theta_hat: Option<usize>,
    pub q_hat: u8,
    pub seconds: f64,
    pub error_tag: Option<String>,
}

impl RepRecord {
    pub fn abs_error(&self) -> Option<usize> {
        self.theta_hat.map(|t| t.abs_diff(self.theta))
    }
}

/// Aggregate over the repetitions of one grid cell and method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: usize,
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    pub r: Option<usize>,
    pub theta: usize,
    pub method: String,
    /// Successful repetitions entering the aggregates.
    pub repetitions: usize,
    pub failures: usize,
    pub median_error: f64,
    pub q25_error: f64,
    pub q75_error: f64,
    pub iqr_error: f64,
    pub detection_rate: f64,
    pub median_time_s: f64,
    /// Distinct error tags of failed repetitions, `;`-separated.
    pub error_tags: String,
}

pub const METRICS_HEADER: [&str; 20] = [
    "cell",
    "scenario",
    "n",
    "p",
    "s",
    "rho",
    "gamma",
    "nu",
    "r",
    "theta",
    "method",
    "repetitions",
    "failures",
    "median_error",
    "q25_error",
    "q75_error",
    "iqr_error",
    "detection_rate",
    "median_time_s",
    "error_tags",
];

/// Column carrying wall-clock measurements (excluded from determinism checks).
pub const TIMING_COLUMNS: [&str; 1] = ["median_time_s"];

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        let scenario = serde_json::to_value(self.scenario)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        vec![
            self.cell.to_string(),
            scenario,
            self.n.to_string(),
            self.p.to_string(),
            self.s.to_string(),
            self.rho.to_string(),
            self.gamma.to_string(),
            self.nu.to_string(),
            self.r.map(|r| r.to_string()).unwrap_or_default(),
            self.theta.to_string(),
            self.method.clone(),
            self.repetitions.to_string(),
            self.failures.to_string(),
            self.median_error.to_string(),
            self.q25_error.to_string(),
            self.q75_error.to_string(),
            self.iqr_error.to_string(),
            self.detection_rate.to_string(),
            self.median_time_s.to_string(),
            self.error_tags.clone(),
        ]
    }
}

/// Linear-interpolation quantile of sorted data (`NaN` when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<RepRecord>,
}

/// Runs the plan with the built-in registries.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    run_experiment_with(plan, &MethodRegistry::with_defaults(), &SearchRegistry::with_defaults())
}

pub fn run_experiment_with(
    plan: &ExperimentPlan,
    methods: &MethodRegistry,
    searches: &SearchRegistry,
) -> Result<ExperimentOutput> {
    plan.validate(methods, searches)?;
    let cells = plan.cells();
    let method_impls = plan
        .methods
        .iter()
        .map(|m| methods.get(m))
        .collect::<Result<Vec<_>>>()?;
    let search = searches.get(&plan.search)?;
    // Covariance builders do not depend on the seed except for the random
    // orthonormal factor, which is redrawn per repetition.
    let shared_builders: Vec<_> = cells
        .iter()
        .map(|c| match c.scenario {
            Scenario::M1RankDeficient => Ok(None),
            _ => builder_for(c).map(Some),
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.repetitions).map(move |r| (c, r)))
        .collect();
    let run_job = |&(ci, rep): &(usize, usize)| -> Vec<RepRecord> {
        let mut spec = cells[ci].clone();
        spec.seed = mix_seed(mix_seed(plan.seed, ci as u64), rep as u64);
        let names: Vec<&str> = method_impls.iter().map(|m| m.name()).collect();
        let failed = |theta: usize, tag: String| -> Vec<RepRecord> {
            names
                .iter()
                .map(|name| RepRecord {
                    cell: ci,
                    rep,
                    method: (*name).into(),
                    theta,
                    theta_hat: None,
                    q_hat: 0,
                    seconds: 0.0,
                    error_tag: Some(tag.clone()),
                })
                .collect()
        };
        let generated = match &shared_builders[ci] {
            Some(b) => generate_with(&spec, b),
            None => builder_for(&spec).and_then(|b| generate_with(&spec, &b)),
        };
        let (ds, model) = match generated {
            Ok(v) => v,
            Err(e) => return failed(spec.n, error_tag(&e)),
        };
        let ps = PrefixSummaries::precompute(&ds);
        let mut detector = plan.detector.clone();
        detector.seed = mix_seed(spec.seed, CALIBRATION_SALT);
        let params = match detector.resolve(&ds) {
            Ok(p) => p,
            Err(e) => return failed(model.theta, error_tag(&e)),
        };
        let ctx = MethodContext {
            ds: &ds,
            ps: &ps,
            params: &params,
            search: search.as_ref(),
            refine: &plan.refine,
        };
        method_impls
            .iter()
            .map(|m| {
                let start = Instant::now();
                let res = m.detect(&ctx);
                let seconds = start.elapsed().as_secs_f64();
                match res {
                    Ok(d) => RepRecord {
                        cell: ci,
                        rep,
                        method: m.name().into(),
                        theta: model.theta,
                        theta_hat: Some(d.theta_hat),
                        q_hat: d.q_hat,
                        seconds,
                        error_tag: None,
                    },
                    Err(e) => {
                        log::warn!("cell {ci} rep {rep} method {}: {e}", m.name());
                        RepRecord {
                            cell: ci,
                            rep,
                            method: m.name().into(),
                            theta: model.theta,
                            theta_hat: None,
                            q_hat: 0,
                            seconds,
                            error_tag: Some(error_tag(&e)),
                        }
                    }
                }
            })
            .collect()
    };
    let records: Vec<RepRecord> = with_worker_pool(|| jobs.par_iter().flat_map_iter(run_job).collect())?;

    let rows = aggregate(&cells, &method_impls.iter().map(|m| m.name()).collect::<Vec<_>>(), &records);
    Ok(ExperimentOutput { rows, records })
}

/// Short machine-readable tag for an error (its variant name).
pub fn error_tag(e: &ScanError) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

/// Runs `f` on a pool capped by `CPSCAN_THREADS`, or on the global pool.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(k) if k >= 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| ScanError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

/// Aggregates records into one row per cell and method (in plan order).
pub fn aggregate(cells: &[ScenarioSpec], methods: &[&str], records: &[RepRecord]) -> Vec<MetricsRow> {
    let mut grouped: BTreeMap<(usize, &str), Vec<&RepRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.cell, r.method.as_str())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        for &m in methods {
            let mut recs = grouped.remove(&(ci, m)).unwrap_or_default();
            recs.sort_by_key(|r| r.rep);
            let ok: Vec<&RepRecord> = recs.iter().copied().filter(|r| r.theta_hat.is_some()).collect();
            let mut errors: Vec<f64> = ok.iter().filter_map(|r| r.abs_error()).map(|e| e as f64).collect();
            errors.sort_by(f64::total_cmp);
            let times: Vec<f64> = ok.iter().map(|r| r.seconds).collect();
            let detections = ok.iter().filter(|r| r.q_hat == 1).count();
            let mut tags: Vec<&str> = recs.iter().filter_map(|r| r.error_tag.as_deref()).collect();
            tags.sort_unstable();
            tags.dedup();
            let theta = recs.first().map(|r| r.theta).unwrap_or_else(|| cell.theta());
            let (q25, q75) = (quantile(&errors, 0.25), quantile(&errors, 0.75));
            rows.push(MetricsRow {
                cell: ci,
                scenario: cell.scenario,
                n: cell.n,
                p: cell.p,
                s: cell.s,
                rho: cell.rho,
                gamma: cell.gamma,
                nu: cell.nu,
                r: cell.r,
                theta,
                method: m.into(),
                repetitions: ok.len(),
                failures: recs.len() - ok.len(),
                median_error: quantile(&errors, 0.5),
                q25_error: q25,
                q75_error: q75,
                iqr_error: q75 - q25,
                detection_rate: if ok.is_empty() {
                    f64::NAN
                } else {
                    detections as f64 / ok.len() as f64
                },
                median_time_s: median(&times),
                error_tags: tags.join(";"),
            });
        }
    }
    rows
}

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomically(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ScanError::Io(e.error))?;
    Ok(())
}

pub fn write_metrics_file(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_atomically(path, |w| write_metrics(w, rows))
}

/// Timing of one `(n, p)` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub n: usize,
    pub p: usize,
    /// Median seconds per prefix-summary construction.
    pub precompute_s: f64,
    /// Median seconds per OcScan detection on precomputed summaries.
    pub detect_s: f64,
    /// Calls averaged inside each timed sample.
    pub precompute_inner: usize,
    pub detect_inner: usize,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCheck {
    pub name: String,
    pub ratio: f64,
    pub lo: f64,
    pub hi: f64,
    /// Whether the check is part of the acceptance contract.
    pub required: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    pub checks: Vec<BenchCheck>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.required).all(|c| c.pass)
    }
}

/// Smallest total duration of one timed sample.
const MIN_SAMPLE_SECONDS: f64 = 0.05;

/// Median per-call time of `f`. The number of calls per sample doubles
/// until a sample lasts at least [`MIN_SAMPLE_SECONDS`].
fn time_per_call(reps: usize, mut f: impl FnMut()) -> (f64, usize) {
    // Warm-up call keeps first-touch effects out of the calibration.
    f();
    let mut inner = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..inner {
            f();
        }
        if start.elapsed().as_secs_f64() >= MIN_SAMPLE_SECONDS || inner >= 1 << 24 {
            break;
        }
        inner *= 2;
    }
    let samples: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                f();
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    (median(&samples), inner)
}

/// Times prefix-summary construction and post-precompute OcScan detection
/// (optimistic search, zero thresholds so both searches run to completion).
pub fn run_bench(sizes: &[(usize, usize)], reps: usize, seed: u64) -> Result<BenchReport> {
    let mut entries = Vec::with_capacity(sizes.len());
    for &(n, p) in sizes {
        let spec = ScenarioSpec {
            seed,
            ..ScenarioSpec::m1(n, p, 1, 0.0, seed)
        };
        let builder = builder_for(&spec)?;
        let (ds, _) = generate_with(&spec, &builder)?;
        let (precompute_s, precompute_inner) = time_per_call(reps, || {
            black_box(PrefixSummaries::precompute(black_box(&ds)));
        });
        let ps = PrefixSummaries::precompute(&ds);
        let params = ScanParams {
            zeta_mc: 0.0,
            zeta_qc: 0.0,
            varpi_mc: default_varpi_mc(n, p),
            varpi_qc: default_varpi_qc(n),
        };
        run_ocscan(&ps, &params, &OptimisticSearch)?;
        let (detect_s, detect_inner) = time_per_call(reps, || {
            black_box(run_ocscan(black_box(&ps), &params, &OptimisticSearch).ok());
        });
        log::info!("bench n={n} p={p}: precompute {precompute_s:.3e}s, detect {detect_s:.3e}s");
        entries.push(BenchEntry {
            n,
            p,
            precompute_s,
            detect_s,
            precompute_inner,
            detect_inner,
            reps,
        });
    }
    let checks = scaling_checks(&entries);
    Ok(BenchReport { entries, checks })
}

/// Ratio checks between entries that differ by a doubling of `n` or `p`.
pub fn scaling_checks(entries: &[BenchEntry]) -> Vec<BenchCheck> {
    let mut checks = Vec::new();
    let mut push = |name: String, ratio: f64, lo: f64, hi: f64, required: bool| {
        checks.push(BenchCheck {
            name,
            ratio,
            lo,
            hi,
            required,
            pass: ratio >= lo && ratio <= hi,
        });
    };
    for a in entries {
        for b in entries {
            if b.p == a.p && b.n == 2 * a.n {
                let tag = format!("n {}->{} at p={}", a.n, b.n, a.p);
                push(format!("precompute {tag}"), b.precompute_s / a.precompute_s, 1.6, 2.6, true);
                push(format!("detect {tag}"), b.detect_s / a.detect_s, 0.0, 1.5, true);
            }
            if b.n == a.n && b.p == 2 * a.p {
                let tag = format!("p {}->{} at n={}", a.p, b.p, a.n);
                push(format!("precompute {tag}"), b.precompute_s / a.precompute_s, 1.6, 2.6, true);
                push(format!("detect {tag}"), b.detect_s / a.detect_s, 1.6, 2.6, false);
            }
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanners::Calibration;

    fn tiny_plan() -> ExperimentPlan {
        ExperimentPlan::from_json(
            r#"{
                "scenario": "M1",
                "grid": {"n": [120], "p": [10], "s": [1, 10], "rho": [3.0]},
                "methods": ["MCSCAN", "qc", "oc", "ocscan_r"],
                "repetitions": 6,
                "seed": 17,
                "detector": {"calibration": {"policy": "permutation", "B": 19, "alpha": 0.05}}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert!(quantile(&[], 0.5).is_nan());
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn one_row_per_cell_and_method() {
        let out = run_experiment(&tiny_plan()).unwrap();
        assert_eq!(out.rows.len(), 2 * 4);
        assert_eq!(out.records.len(), 2 * 4 * 6);
        for row in &out.rows {
            assert_eq!(row.repetitions + row.failures, 6);
            assert_eq!(row.theta, 30);
        }
        let names: Vec<&str> = out.rows[..4].iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["mc", "qc", "oc", "ocr"]);
    }

    #[test]
    fn deterministic_metrics() {
        let strip = |rows: &[MetricsRow]| -> String {
            let mut buf = Vec::new();
            let rows: Vec<MetricsRow> = rows
                .iter()
                .cloned()
                .map(|mut r| {
                    r.median_time_s = 0.0;
                    r
                })
                .collect();
            write_metrics(&mut buf, &rows).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = run_experiment(&tiny_plan()).unwrap();
        let b = run_experiment(&tiny_plan()).unwrap();
        assert_eq!(strip(&a.rows), strip(&b.rows));
        let mut other = tiny_plan();
        other.seed = 18;
        let c = run_experiment(&other).unwrap();
        assert_ne!(
            a.records.iter().map(|r| r.theta_hat).collect::<Vec<_>>(),
            c.records.iter().map(|r| r.theta_hat).collect::<Vec<_>>()
        );
    }

    #[test]
    fn null_with_huge_thresholds_scores_zero() {
        let mut plan = tiny_plan();
        plan.grid.s = vec![1];
        plan.grid.rho = vec![0.0];
        plan.repetitions = 1;
        plan.methods = vec!["oc".into()];
        plan.detector.calibration = Calibration::Manual {
            zeta_mc: 1e12,
            zeta_qc: 1e12,
        };
        let out = run_experiment(&plan).unwrap();
        let row = &out.rows[0];
        assert_eq!((row.detection_rate, row.median_error, row.theta), (0.0, 0.0, 120));
    }

    #[test]
    fn failures_are_tagged_and_excluded() {
        let mut plan = tiny_plan();
        plan.grid.s = vec![1];
        plan.repetitions = 3;
        plan.methods = vec!["mc".into()];
        // Trimming too large for the dyadic grid: every repetition fails.
        plan.detector.varpi_mc = Some(40);
        plan.detector.calibration = Calibration::Manual {
            zeta_mc: 1.0,
            zeta_qc: 1.0,
        };
        let out = run_experiment(&plan).unwrap();
        let row = &out.rows[0];
        assert_eq!((row.repetitions, row.failures), (0, 3));
        assert_eq!(row.error_tags, "GridEmpty");
        assert!(row.median_error.is_nan());
    }

    #[test]
    fn plan_validation() {
        let mut plan = tiny_plan();
        plan.methods = vec!["cusum".into()];
        assert!(matches!(run_experiment(&plan), Err(ScanError::Unknown { .. })));
        let mut plan = tiny_plan();
        plan.repetitions = 0;
        assert!(run_experiment(&plan).is_err());
        let mut plan = tiny_plan();
        plan.grid.s = vec![];
        assert!(run_experiment(&plan).is_err());
        assert!(ExperimentPlan::from_json(r#"{"scenario":"M1","grid":{"p":[1],"s":[1],"rho":[1]},"bogus":1}"#).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        std::fs::write(&path, "old").unwrap();
        let out = run_experiment(&ExperimentPlan {
            repetitions: 1,
            ..tiny_plan()
        })
        .unwrap();
        write_metrics_file(&path, &out.rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&METRICS_HEADER.join(",")));
        assert_eq!(text.lines().count(), 1 + out.rows.len());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let err = write_atomically(&path, |_| Err(ScanError::Config("boom".into())));
        assert!(err.is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn scaling_check_pairs() {
        let e = |n, p, pre, det| BenchEntry {
            n,
            p,
            precompute_s: pre,
            detect_s: det,
            precompute_inner: 1,
            detect_inner: 1,
            reps: 1,
        };
        let checks = scaling_checks(&[e(100, 8, 1.0, 1.0), e(200, 8, 2.0, 1.1), e(100, 16, 2.1, 1.9)]);
        assert_eq!(checks.len(), 4);
        assert!(checks.iter().all(|c| c.pass));
        let bad = scaling_checks(&[e(100, 8, 1.0, 1.0), e(200, 8, 3.0, 1.6)]);
        assert!(bad.iter().all(|c| !c.pass));
    }
}
