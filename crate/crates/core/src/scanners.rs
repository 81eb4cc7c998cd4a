// SPDX-License-Identifier: MIT OR Apache-2.0

//! McScan, QcScan and their adaptive combination OcScan, together with
//! threshold calibration and the signal-strength estimate `V̂`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrefixSummaries};
use crate::detectors::{qcscan_stat, DetectorKind};
use crate::error::{Result, ScanError};
use crate::linalg::power_iteration_second_moment;
use crate::search::{dyadic_grid, SearchOutcome, SearchStrategy};
use crate::simgen::stream_rng;

pub const DEFAULT_C_BAR: f64 = 2.0;
pub const DEFAULT_C: f64 = 2.0;
pub const DEFAULT_PERMUTATIONS: usize = 99;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const MIN_PERMUTATIONS: usize = 19;

/// How the detection thresholds are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum Calibration {
    /// `ζ_Mc = c̄ ‖Σ̂‖^{1/2} Ψ̂ sqrt(log(p log n))`, `ζ_Qc = c ‖Σ̂‖ Ψ̂² sqrt(p log log n)`.
    Plugin {
        #[serde(default = "default_c_bar")]
        c_bar: f64,
        #[serde(default = "default_c")]
        c: f64,
    },
    /// Upper `α` quantile of dyadic-grid maxima over random time permutations.
    Permutation {
        #[serde(default = "default_b", rename = "B", alias = "b")]
        b: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Manual { zeta_mc: f64, zeta_qc: f64 },
}

fn default_c_bar() -> f64 {
    DEFAULT_C_BAR
}
fn default_c() -> f64 {
    DEFAULT_C
}
fn default_b() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::Permutation {
            b: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Detector configuration; unset trimmings fall back to
/// [`default_varpi_mc`] / [`default_varpi_qc`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub calibration: Calibration,
    pub varpi_mc: Option<usize>,
    pub varpi_qc: Option<usize>,
    /// Seed for the calibration RNG.
    pub seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.varpi_mc == Some(0) || self.varpi_qc == Some(0) {
            return Err(ScanError::Config("trimmings must be >= 1".into()));
        }
        match self.calibration {
            Calibration::Plugin { c_bar, c } => {
                if !(c_bar.is_finite() && c.is_finite()) {
                    return Err(ScanError::Config("plug-in constants must be finite".into()));
                }
            }
            Calibration::Permutation { b, alpha } => {
                if b < MIN_PERMUTATIONS {
                    return Err(ScanError::Config(format!(
                        "need at least {MIN_PERMUTATIONS} permutations, got {b}"
                    )));
                }
                if !(alpha > 0.0 && alpha < 0.5) {
                    return Err(ScanError::Config(format!("alpha must lie in (0, 0.5), got {alpha}")));
                }
            }
            Calibration::Manual { zeta_mc, zeta_qc } => {
                if !(zeta_mc.is_finite() && zeta_qc.is_finite()) {
                    return Err(ScanError::Config("thresholds must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Resolves trimmings and thresholds for a concrete dataset.
    pub fn resolve(&self, ds: &Dataset) -> Result<ScanParams> {
        self.validate()?;
        let (n, p) = (ds.n(), ds.p());
        let varpi_mc = self.varpi_mc.unwrap_or_else(|| default_varpi_mc(n, p));
        let varpi_qc = self.varpi_qc.unwrap_or_else(|| default_varpi_qc(n));
        let (zeta_mc, zeta_qc) = match self.calibration {
            Calibration::Manual { zeta_mc, zeta_qc } => (zeta_mc, zeta_qc),
            Calibration::Plugin { c_bar, c } => {
                let plug = calibrate_plugin(ds, c_bar, c);
                (plug.zeta_mc, plug.zeta_qc)
            }
            Calibration::Permutation { b, alpha } => {
                calibrate_permutation_pair(ds, varpi_mc, varpi_qc, b, alpha, self.seed)?
            }
        };
        Ok(ScanParams {
            zeta_mc,
            zeta_qc,
            varpi_mc,
            varpi_qc,
        })
    }
}

/// Thresholds and trimmings ready for scanning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub zeta_mc: f64,
    pub zeta_qc: f64,
    pub varpi_mc: usize,
    pub varpi_qc: usize,
}

impl ScanParams {
    pub fn for_kind(&self, kind: DetectorKind) -> (f64, usize) {
        match kind {
            DetectorKind::Max => (self.zeta_mc, self.varpi_mc),
            DetectorKind::Quad => (self.zeta_qc, self.varpi_qc),
        }
    }
}

/// `⌈log(p log n)⌉`, floored at 2.
pub fn default_varpi_mc(n: usize, p: usize) -> usize {
    let v = (p as f64 * (n as f64).ln()).ln().ceil();
    (v.max(2.0)) as usize
}

/// `⌈log((log n)³)⌉`, floored at 2.
pub fn default_varpi_qc(n: usize) -> usize {
    let v = (3.0 * (n as f64).ln().ln()).ceil();
    (v.max(2.0)) as usize
}

/// `log(p log n)`.
pub fn log_p_log_n(n: usize, p: usize) -> f64 {
    (p as f64 * (n as f64).ln()).ln()
}

/// `log log n`, floored at 1 (only binds for `n < 16`).
pub fn log_log_n(n: usize) -> f64 {
    (n as f64).ln().ln().max(1.0)
}

/// Runs the search over one detector's statistic.
pub fn run_scan(
    kind: DetectorKind,
    ps: &PrefixSummaries,
    params: &ScanParams,
    search: &dyn SearchStrategy,
) -> Result<SearchOutcome> {
    let (zeta, varpi) = params.for_kind(kind);
    let mut eval = |k: usize| kind.eval(ps, k);
    search.search(&mut eval, ps.n(), zeta, varpi)
}

pub fn run_mcscan(ps: &PrefixSummaries, params: &ScanParams, search: &dyn SearchStrategy) -> Result<SearchOutcome> {
    run_scan(DetectorKind::Max, ps, params, search)
}

pub fn run_qcscan(ps: &PrefixSummaries, params: &ScanParams, search: &dyn SearchStrategy) -> Result<SearchOutcome> {
    run_scan(DetectorKind::Quad, ps, params, search)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Chosen {
    Mc,
    Qc,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcScanResult {
    pub theta_oc: usize,
    pub q_hat: u8,
    pub theta_mc: usize,
    pub theta_qc: usize,
    pub tbar_at_mc: f64,
    pub t_at_qc: f64,
    /// Normalised ratio; present only when both detectors fire.
    pub c_mq: Option<f64>,
    pub chosen: Chosen,
    #[serde(skip)]
    pub mc: Option<SearchOutcome>,
    #[serde(skip)]
    pub qc: Option<SearchOutcome>,
}

/// `(T / sqrt(p log log n))^{-1} · T̄² / log(p log n)`. A non-positive
/// quadratic statistic makes the ratio `+∞` (max-type preferred).
pub fn c_mq_ratio(tbar: f64, t: f64, n: usize, p: usize) -> f64 {
    let dense = t / (p as f64 * log_log_n(n)).sqrt();
    let sparse = tbar * tbar / log_p_log_n(n, p);
    if dense <= 0.0 {
        f64::INFINITY
    } else {
        sparse / dense
    }
}

/// Combines the two component results: the sole firing detector wins; if
/// both fire, max-type is chosen iff `C_{M/Q} > 1`.
pub fn combine(
    n: usize,
    p: usize,
    theta_mc: usize,
    tbar: f64,
    theta_qc: usize,
    t: f64,
    params: &ScanParams,
) -> OcScanResult {
    combine_fired(n, p, (theta_mc, tbar, tbar > params.zeta_mc), (theta_qc, t, t > params.zeta_qc))
}

fn combine_fired(
    n: usize,
    p: usize,
    (theta_mc, tbar, fire_mc): (usize, f64, bool),
    (theta_qc, t, fire_qc): (usize, f64, bool),
) -> OcScanResult {
    let (theta_oc, chosen, c_mq) = match (fire_mc, fire_qc) {
        (true, false) => (theta_mc, Chosen::Mc, None),
        (false, true) => (theta_qc, Chosen::Qc, None),
        (false, false) => (n, Chosen::None, None),
        (true, true) => {
            let c = c_mq_ratio(tbar, t, n, p);
            if c > 1.0 {
                (theta_mc, Chosen::Mc, Some(c))
            } else {
                (theta_qc, Chosen::Qc, Some(c))
            }
        }
    };
    OcScanResult {
        theta_oc,
        q_hat: u8::from(fire_mc || fire_qc),
        theta_mc,
        theta_qc,
        tbar_at_mc: tbar,
        t_at_qc: t,
        c_mq,
        chosen,
        mc: None,
        qc: None,
    }
}

pub fn run_ocscan(ps: &PrefixSummaries, params: &ScanParams, search: &dyn SearchStrategy) -> Result<OcScanResult> {
    let mc = run_mcscan(ps, params, search)?;
    let qc = run_qcscan(ps, params, search)?;
    // Search values already follow the T̄_n = T_n = 0 convention.
    let mut out = combine_fired(
        ps.n(),
        ps.p(),
        (mc.theta_hat, mc.value, mc.detected()),
        (qc.theta_hat, qc.value, qc.detected()),
    );
    out.mc = Some(mc);
    out.qc = Some(qc);
    Ok(out)
}

/// Index (1-based) of the order statistic used as the permutation
/// threshold: `⌈(1 − α)(B + 1)⌉`, capped at `B`.
pub fn permutation_rank(b: usize, alpha: f64) -> usize {
    // Guard against (1 − α)(B + 1) landing a hair above an integer.
    let raw = ((1.0 - alpha) * (b as f64 + 1.0) - 1e-9).ceil() as usize;
    raw.clamp(1, b)
}

fn grid_max(kind: DetectorKind, ps: &PrefixSummaries, grid: &[usize]) -> f64 {
    grid.iter()
        .map(|&k| kind.eval(ps, k))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Dyadic-grid maxima of each requested statistic over `b` random
/// permutations of the time order. Permutation `i` draws from the ChaCha
/// stream `(seed, i)`.
pub fn permuted_grid_maxima(
    ds: &Dataset,
    kinds: &[(DetectorKind, usize)],
    b: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand::seq::SliceRandom;
    let grids = kinds
        .iter()
        .map(|&(_, varpi)| dyadic_grid(ds.n(), varpi))
        .collect::<Result<Vec<_>>>()?;
    let per_perm: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<usize> = (0..ds.n()).collect();
            order.shuffle(&mut stream_rng(seed, i as u64));
            let ps = PrefixSummaries::precompute_permuted(ds, &order);
            kinds
                .iter()
                .zip(&grids)
                .map(|(&(kind, _), grid)| grid_max(kind, &ps, grid))
                .collect()
        })
        .collect();
    Ok((0..kinds.len())
        .map(|j| per_perm.iter().map(|row| row[j]).collect())
        .collect())
}

fn order_statistic(mut values: Vec<f64>, alpha: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    values[permutation_rank(values.len(), alpha) - 1]
}

/// Permutation threshold for one detector.
pub fn calibrate_permutation(
    ds: &Dataset,
    kind: DetectorKind,
    varpi: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<f64> {
    check_permutation_args(b, alpha)?;
    let maxima = permuted_grid_maxima(ds, &[(kind, varpi)], b, seed)?;
    Ok(order_statistic(maxima.into_iter().next().unwrap_or_default(), alpha))
}

/// Permutation thresholds for both detectors from one shared set of
/// permutations; each detector is calibrated at level `alpha`.
pub fn calibrate_permutation_pair(
    ds: &Dataset,
    varpi_mc: usize,
    varpi_qc: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_permutation_args(b, alpha)?;
    let mut maxima = permuted_grid_maxima(
        ds,
        &[(DetectorKind::Max, varpi_mc), (DetectorKind::Quad, varpi_qc)],
        b,
        seed,
    )?
    .into_iter();
    let mc = order_statistic(maxima.next().unwrap_or_default(), alpha);
    let qc = order_statistic(maxima.next().unwrap_or_default(), alpha);
    Ok((mc, qc))
}

fn check_permutation_args(b: usize, alpha: f64) -> Result<()> {
    if b < MIN_PERMUTATIONS {
        return Err(ScanError::Config(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {b}"
        )));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(ScanError::Config(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    Ok(())
}

/// Plug-in quantities and thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginEstimates {
    /// Sample standard deviation of the response.
    pub psi_hat: f64,
    /// Top eigenvalue of `(1/n) XᵀX`.
    pub sigma_norm_hat: f64,
    pub zeta_mc: f64,
    pub zeta_qc: f64,
    /// Set when the design is identically zero.
    pub degenerate: bool,
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(Ψ̂, ‖Σ̂‖)`: response sd and the power-iteration estimate of the top
/// eigenvalue of `(1/n) XᵀX` (50 iterations or relative change < 1e-8).
pub fn plugin_scales(ds: &Dataset) -> (f64, f64) {
    let psi = sample_sd(ds.y());
    let norm = power_iteration_second_moment(ds.x(), ds.n(), ds.p(), 50, 1e-8);
    (psi, norm)
}

pub fn calibrate_plugin(ds: &Dataset, c_bar: f64, c: f64) -> PluginEstimates {
    let (n, p) = (ds.n(), ds.p());
    let (psi_hat, sigma_norm_hat) = plugin_scales(ds);
    let degenerate = sigma_norm_hat == 0.0;
    if degenerate {
        log::warn!("design matrix is identically zero; plug-in thresholds are 0");
    }
    PluginEstimates {
        psi_hat,
        sigma_norm_hat,
        zeta_mc: c_bar * sigma_norm_hat.sqrt() * psi_hat * log_p_log_n(n, p).max(0.0).sqrt(),
        zeta_qc: c * sigma_norm_hat * psi_hat * psi_hat * (p as f64 * log_log_n(n)).sqrt(),
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStrengthEstimate {
    pub v_hat: f64,
    pub theta_used: usize,
}

/// `V̂ = n / (θ̂(n − θ̂)) · T_θ̂`, not truncated at zero.
pub fn estimate_v(ps: &PrefixSummaries, theta_qc: usize) -> Result<SignalStrengthEstimate> {
    let n = ps.n();
    if theta_qc == n {
        return Err(ScanError::NoChange("the signal-strength estimate"));
    }
    let t = qcscan_stat(ps, theta_qc)?;
    let (nf, k) = (n as f64, theta_qc as f64);
    Ok(SignalStrengthEstimate {
        v_hat: nf / (k * (nf - k)) * t,
        theta_used: theta_qc,
    })
}
