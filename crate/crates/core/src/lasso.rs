// SPDX-License-Identifier: MIT OR Apache-2.0

//! ℓ1-penalised estimation of the differential parameter and the projected
//! refinement scan built on it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrefixSummaries};
use crate::error::{Result, ScanError};
use crate::scanners::{plugin_scales, run_ocscan, OcScanResult, ScanParams};
use crate::search::SearchStrategy;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;
pub const DEFAULT_C_LAMBDA: f64 = 1.0;

/// `(1/2n)|z − Xa|² + λ_eff |a|₁` with the split-weighted response `z`.
#[derive(Clone, Debug)]
pub struct LassoProblem {
    pub theta_hat: usize,
    pub n: usize,
    pub p: usize,
    pub z: Vec<f64>,
    /// Row-major `n × p`.
    pub x: Vec<f64>,
    pub lambda_eff: f64,
}

impl LassoProblem {
    /// Builds the problem at split `theta_hat` for the base penalty `lambda`;
    /// the effective penalty is `λ sqrt(n / (θ̂(n − θ̂)))`.
    pub fn at_split(ds: &Dataset, theta_hat: usize, lambda: f64) -> Result<Self> {
        let n = ds.n();
        if theta_hat == 0 || theta_hat >= n {
            return Err(ScanError::SplitOutOfRange {
                k: theta_hat,
                n,
                max: n - 1,
            });
        }
        let (nf, kf) = (n as f64, theta_hat as f64);
        let z = ds
            .y()
            .iter()
            .enumerate()
            .map(|(t, &y)| if t < theta_hat { -(nf / kf) * y } else { nf / (nf - kf) * y })
            .collect();
        let lambda_eff = lambda * (nf / (kf * (nf - kf))).sqrt();
        Self::new(ds.x().to_vec(), z, ds.p(), lambda_eff).map(|mut prob| {
            prob.theta_hat = theta_hat;
            prob
        })
    }

    /// A generic Lasso instance; `theta_hat` is left at 0.
    pub fn new(x: Vec<f64>, z: Vec<f64>, p: usize, lambda_eff: f64) -> Result<Self> {
        let n = z.len();
        if p == 0 || x.len() != n * p {
            return Err(ScanError::Shape(format!(
                "design has {} entries, expected {n}×{p}",
                x.len()
            )));
        }
        if !(lambda_eff.is_finite() && lambda_eff >= 0.0) {
            return Err(ScanError::Config(format!("penalty must be finite and >= 0, got {lambda_eff}")));
        }
        Ok(Self {
            theta_hat: 0,
            n,
            p,
            z,
            x,
            lambda_eff,
        })
    }

    pub fn objective(&self, a: &[f64]) -> f64 {
        let resid = self.residual(a);
        self.objective_from_residual(&resid, a)
    }

    fn objective_from_residual(&self, resid: &[f64], a: &[f64]) -> f64 {
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        rss / (2.0 * self.n as f64) + self.lambda_eff * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn residual(&self, a: &[f64]) -> Vec<f64> {
        self.z
            .iter()
            .zip(self.x.chunks_exact(self.p))
            .map(|(&zt, row)| zt - row.iter().zip(a).map(|(x, a)| x * a).sum::<f64>())
            .collect()
    }

    /// `(1/n) Xᵀ r`.
    pub fn correlation(&self, resid: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.p];
        for (row, &r) in self.x.chunks_exact(self.p).zip(resid) {
            for (gj, &xj) in g.iter_mut().zip(row) {
                *gj += xj * r;
            }
        }
        let n = self.n as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    /// Largest violation of the subgradient optimality conditions at `a`.
    pub fn kkt_gap(&self, a: &[f64]) -> f64 {
        let g = self.correlation(&self.residual(a));
        kkt_gap_from(&g, a, self.lambda_eff)
    }
}

fn kkt_gap_from(g: &[f64], a: &[f64], lambda: f64) -> f64 {
    g.iter()
        .zip(a)
        .map(|(&gj, &aj)| {
            if aj != 0.0 {
                (gj - lambda * aj.signum()).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub delta_hat: Vec<f64>,
    pub objective: f64,
    /// Completed sweeps.
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

impl LassoSolution {
    pub fn support(&self) -> Vec<usize> {
        self.delta_hat
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.delta_hat.iter().all(|v| *v == 0.0)
    }
}

/// Cyclic coordinate descent from zero. Stops once the largest coordinate
/// move in a sweep is below `tol`; hitting `max_sweeps` returns the iterate
/// with `converged = false`.
pub fn solve_lasso(prob: &LassoProblem, tol: f64, max_sweeps: usize) -> Result<LassoSolution> {
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(ScanError::Config("need tol > 0 and max_sweeps >= 1".into()));
    }
    let (n, p) = (prob.n, prob.p);
    let nf = n as f64;
    // Column-major copy so each coordinate update streams one column.
    let mut cols = vec![0.0; n * p];
    for (t, row) in prob.x.chunks_exact(p).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cols[j * n + t] = v;
        }
    }
    let col_sq: Vec<f64> = cols.chunks_exact(n).map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let mut a = vec![0.0; p];
    let mut resid = prob.z.clone();
    let mut objective = prob.objective_from_residual(&resid, &a);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_sweeps {
        iterations += 1;
        let mut max_move = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j * n..(j + 1) * n];
            let corr = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf;
            let updated = soft_threshold(corr + col_sq[j] * a[j], prob.lambda_eff) / col_sq[j];
            let step = updated - a[j];
            if step != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= step * x;
                }
                a[j] = updated;
                max_move = max_move.max(step.abs());
            }
        }
        let next = prob.objective_from_residual(&resid, &a);
        debug_assert!(
            next <= objective + 1e-12 * objective.abs().max(1.0),
            "objective increased from {objective} to {next}"
        );
        objective = next;
        if max_move < tol {
            converged = true;
            break;
        }
    }
    // Recompute from scratch to shed residual drift.
    let resid = prob.residual(&a);
    let g = prob.correlation(&resid);
    Ok(LassoSolution {
        objective: prob.objective_from_residual(&resid, &a),
        kkt_gap: kkt_gap_from(&g, &a, prob.lambda_eff),
        delta_hat: a,
        iterations,
        converged,
    })
}

/// `λ = C_λ ‖Σ̂‖^{1/2} Ψ̂ sqrt(log max(p, n))`.
pub fn default_lambda(ds: &Dataset, c_lambda: f64) -> f64 {
    let (psi, norm) = plugin_scales(ds);
    let lambda = c_lambda * norm.sqrt() * psi * (ds.p().max(ds.n()) as f64).ln().sqrt();
    if lambda == 0.0 {
        log::warn!("plug-in penalty is 0 (constant response or zero design)");
    }
    lambda
}

/// `⌈log max(p, n)⌉`, floored at 2.
pub fn default_varpi_r(n: usize, p: usize) -> usize {
    ((p.max(n) as f64).ln().ceil().max(2.0)) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub theta_r: usize,
    /// Trace indexed by `k = varpi_r + 1, ..., n − varpi_r − 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_stats: Option<Vec<f64>>,
}

/// Argmax over `varpi_r < k < n − varpi_r` of
/// `sqrt(n/(k(n−k))) ((k/n) q_n − q_k)` with `q_k = δ̂ᵀ S_k`; the signed
/// form unless `abs` is set. Smallest index wins ties.
pub fn refine(
    ps: &PrefixSummaries,
    delta_hat: &[f64],
    varpi_r: usize,
    abs: bool,
    keep_trace: bool,
) -> Result<RefinementResult> {
    let (n, p) = (ps.n(), ps.p());
    if delta_hat.len() != p {
        return Err(ScanError::Shape(format!("δ̂ has length {}, expected {p}", delta_hat.len())));
    }
    let support: Vec<(usize, f64)> = delta_hat
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    if support.is_empty() {
        return Err(ScanError::ZeroDelta);
    }
    if varpi_r == 0 || n < 2 * varpi_r + 2 {
        return Err(ScanError::GridEmpty { n, varpi: varpi_r });
    }
    let q = |k: usize| {
        let s = ps.s(k);
        support.iter().map(|&(j, v)| v * s[j]).sum::<f64>()
    };
    let q_n = q(n);
    let nf = n as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut trace = keep_trace.then(|| Vec::with_capacity(n - 2 * varpi_r - 1));
    for k in varpi_r + 1..n - varpi_r {
        let kf = k as f64;
        let mut v = (nf / (kf * (nf - kf))).sqrt() * (kf / nf * q_n - q(k));
        if abs {
            v = v.abs();
        }
        if v > best.1 {
            best = (k, v);
        }
        if let Some(t) = trace.as_mut() {
            t.push(v);
        }
    }
    Ok(RefinementResult {
        theta_r: best.0,
        projected_stats: trace,
    })
}

/// Settings for the Lasso-refined scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub c_lambda: f64,
    /// Overrides the plug-in penalty when set.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub varpi_r: Option<usize>,
    pub abs: bool,
    /// Rescale columns to unit second moment before solving; `δ̂` is
    /// mapped back to the raw scale.
    pub standardise: bool,
    pub keep_trace: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            c_lambda: DEFAULT_C_LAMBDA,
            lambda: None,
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            varpi_r: None,
            abs: false,
            standardise: false,
            keep_trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcScanRResult {
    pub oc: OcScanResult,
    pub theta_r: usize,
    pub lambda: f64,
    pub varpi_r: usize,
    pub lasso: LassoSolution,
    /// `δ̂ = 0`, so `theta_r` is the OcScan estimate.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_stats: Option<Vec<f64>>,
}

/// Lasso at `θ̂` followed by the projected scan; falls back to `θ̂` when the
/// Lasso returns zero.
pub fn refine_at(
    ds: &Dataset,
    ps: &PrefixSummaries,
    theta_hat: usize,
    cfg: &RefineConfig,
) -> Result<(LassoSolution, f64, usize, Option<RefinementResult>)> {
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(ds, cfg.c_lambda));
    let varpi_r = cfg.varpi_r.unwrap_or_else(|| default_varpi_r(ds.n(), ds.p()));
    let lasso = if cfg.standardise {
        solve_standardised(ds, theta_hat, lambda, cfg)?
    } else {
        solve_lasso(&LassoProblem::at_split(ds, theta_hat, lambda)?, cfg.tol, cfg.max_sweeps)?
    };
    if !lasso.converged {
        log::warn!(
            "lasso stopped after {} sweeps with KKT gap {:.3e}",
            lasso.iterations,
            lasso.kkt_gap
        );
    }
    if lasso.is_zero() {
        return Ok((lasso, lambda, varpi_r, None));
    }
    let refined = refine(ps, &lasso.delta_hat, varpi_r, cfg.abs, cfg.keep_trace)?;
    Ok((lasso, lambda, varpi_r, Some(refined)))
}

fn solve_standardised(ds: &Dataset, theta_hat: usize, lambda: f64, cfg: &RefineConfig) -> Result<LassoSolution> {
    let (n, p) = (ds.n(), ds.p());
    let mut scale = vec![0.0; p];
    for row in ds.x().chunks_exact(p) {
        for (s, v) in scale.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    let scale: Vec<f64> = scale
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<f64> = ds
        .x()
        .chunks_exact(p)
        .flat_map(|row| row.iter().zip(&scale).map(|(v, s)| v / s))
        .collect();
    let mut prob = LassoProblem::at_split(ds, theta_hat, lambda)?;
    prob.x = x;
    let mut sol = solve_lasso(&prob, cfg.tol, cfg.max_sweeps)?;
    sol.delta_hat.iter_mut().zip(&scale).for_each(|(d, s)| *d /= s);
    Ok(sol)
}

/// OcScan, then the Lasso at `θ̂_Oc`, then the projected scan.
pub fn run_ocscan_r(
    ds: &Dataset,
    ps: &PrefixSummaries,
    params: &ScanParams,
    search: &dyn SearchStrategy,
    cfg: &RefineConfig,
) -> Result<OcScanRResult> {
    let oc = run_ocscan(ps, params, search)?;
    if oc.q_hat == 0 {
        return Err(ScanError::NoChange("the refinement step"));
    }
    let (lasso, lambda, varpi_r, refined) = refine_at(ds, ps, oc.theta_oc, cfg)?;
    let (theta_r, fallback, projected_stats) = match refined {
        Some(r) => (r.theta_r, false, r.projected_stats),
        None => (oc.theta_oc, true, None),
    };
    Ok(OcScanRResult {
        oc,
        theta_r,
        lambda,
        varpi_r,
        lasso,
        fallback,
        projected_stats,
    })
}

/// Writes `index,value` rows for the nonzero coordinates (0-based index).
pub fn write_delta_csv<W: Write>(writer: W, delta_hat: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "value"])?;
    for (j, v) in delta_hat.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        w.write_record([j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::power_iteration_second_moment;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    /// Accelerated proximal gradient with restarts, run to a tight tolerance.
    fn prox_gradient(prob: &LassoProblem) -> Vec<f64> {
        let step = 1.0 / power_iteration_second_moment(&prob.x, prob.n, prob.p, 2000, 1e-15).max(1e-300) * 0.99;
        let mut a = vec![0.0; prob.p];
        let mut y = a.clone();
        let mut tk = 1.0f64;
        let mut prev_obj = prob.objective(&a);
        for _ in 0..200_000 {
            let g = prob.correlation(&prob.residual(&y));
            let next: Vec<f64> = y
                .iter()
                .zip(&g)
                .map(|(yj, gj)| soft_threshold(yj + step * gj, step * prob.lambda_eff))
                .collect();
            let obj = prob.objective(&next);
            let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            if obj > prev_obj {
                // Restart momentum.
                tk = 1.0;
                y = a.clone();
                continue;
            }
            let moved = next.iter().zip(&a).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            y = next
                .iter()
                .zip(&a)
                .map(|(u, v)| u + (tk - 1.0) / t_next * (u - v))
                .collect();
            a = next;
            tk = t_next;
            prev_obj = obj;
            if moved < 1e-13 {
                break;
            }
        }
        a
    }

    fn random_problem(seed: u64, n: usize, p: usize, lambda: f64) -> LassoProblem {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        LassoProblem::new(x, z, p, lambda).unwrap()
    }

    #[test]
    fn scalar_soft_threshold_example() {
        let ds = Dataset::new(vec![1.0; 4], vec![0.0, 0.0, 2.0, 2.0], 1).unwrap();
        let mut prob = LassoProblem::at_split(&ds, 2, 0.0).unwrap();
        assert_eq!(prob.z, vec![0.0, 0.0, 4.0, 4.0]);
        prob.lambda_eff = 0.5;
        let sol = solve_lasso(&prob, 1e-12, 100).unwrap();
        assert!((sol.delta_hat[0] - 1.5).abs() < 1e-12);
        assert!(sol.converged && sol.kkt_gap < 1e-12);
    }

    #[test]
    fn effective_penalty_scaling() {
        let ds = Dataset::new(vec![1.0; 4], vec![0.0, 0.0, 2.0, 2.0], 1).unwrap();
        let prob = LassoProblem::at_split(&ds, 1, 3.0).unwrap();
        assert!((prob.lambda_eff - 3.0 * (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(LassoProblem::at_split(&ds, 4, 1.0).is_err());
    }

    #[test]
    fn large_penalty_gives_zero() {
        let mut prob = random_problem(3, 40, 6, 0.0);
        let g = prob.correlation(&prob.z);
        prob.lambda_eff = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sol = solve_lasso(&prob, 1e-10, 100).unwrap();
        assert!(sol.is_zero());
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn matches_prox_gradient_oracle() {
        for seed in 0..10 {
            let prob = random_problem(seed, 30 + 7 * seed as usize, 3 + 2 * seed as usize, 0.2);
            let sol = solve_lasso(&prob, 1e-12, 100_000).unwrap();
            let oracle = prox_gradient(&prob);
            assert!(sol.converged);
            assert!((sol.objective - prob.objective(&oracle)).abs() < 1e-8, "seed {seed}");
            assert!(sol.kkt_gap < 1e-6);
        }
    }

    #[test]
    fn noiseless_sparse_recovery() {
        let (n, p) = (200, 50);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let mut delta = vec![0.0; p];
        delta[3] = 1.0;
        delta[17] = -0.8;
        delta[40] = 0.6;
        let y: Vec<f64> = x
            .chunks_exact(p)
            .enumerate()
            .map(|(t, row)| {
                let beta = if t < 100 { -0.5 } else { 0.5 };
                beta * row.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let ds = Dataset::new(x, y, p).unwrap();
        let prob = LassoProblem::at_split(&ds, 100, 0.02).unwrap();
        let sol = solve_lasso(&prob, 1e-12, 100_000).unwrap();
        for j in [3, 17, 40] {
            assert!(sol.delta_hat[j] != 0.0, "missed coordinate {j}");
        }
        let err: f64 = sol.delta_hat.iter().zip(&delta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 2.0 * prob.lambda_eff * 3f64.sqrt() / 0.5, "error {err}");
        let oracle = prox_gradient(&prob);
        assert!((sol.objective - prob.objective(&oracle)).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let prob = random_problem(5, 50, 20, 0.01);
        let sol = solve_lasso(&prob, 1e-14, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(solve_lasso(&prob, 0.0, 10).is_err());
        assert!(solve_lasso(&prob, 1e-8, 0).is_err());
    }

    #[test]
    fn refine_step_response() {
        let n = 64;
        let y: Vec<f64> = (0..n).map(|t| if t >= 32 { 1.0 } else { 0.0 }).collect();
        let ds = Dataset::new(vec![1.0; n], y, 1).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        let res = refine(&ps, &[1.0], 4, false, true).unwrap();
        assert_eq!(res.theta_r, 32);
        let trace = res.projected_stats.unwrap();
        assert_eq!(trace.len(), n - 9);
        // Brute force from the definition.
        for (i, v) in trace.iter().enumerate() {
            let k = i + 5;
            let ty = crate::detectors::tilde_y(ds.y(), k).unwrap();
            let direct: f64 = ty.iter().sum();
            assert!((v - direct).abs() < 1e-12);
        }
        assert_eq!(refine(&ps, &[2.0], 4, false, false).unwrap().theta_r, 32);
    }

    #[test]
    fn refine_sign_sensitivity() {
        let n = 64;
        let y: Vec<f64> = (0..n).map(|t| if t >= 32 { 1.0 } else { 0.0 } + 0.1 * (t as f64).sin()).collect();
        let ds = Dataset::new(vec![1.0; n], y, 1).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        let trace = refine(&ps, &[1.0], 4, false, true).unwrap().projected_stats.unwrap();
        let argmin = trace
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b })
            .0
            + 5;
        assert_eq!(refine(&ps, &[-1.0], 4, false, false).unwrap().theta_r, argmin);
        assert_ne!(argmin, 32);
        assert_eq!(refine(&ps, &[-1.0], 4, true, false).unwrap().theta_r, 32);
    }

    #[test]
    fn refine_rejects_zero_delta() {
        let ds = Dataset::new(vec![1.0; 16], vec![1.0; 16], 1).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        assert!(matches!(refine(&ps, &[0.0], 2, false, false), Err(ScanError::ZeroDelta)));
        assert!(matches!(refine(&ps, &[1.0], 8, false, false), Err(ScanError::GridEmpty { .. })));
    }

    #[test]
    fn default_lambda_cases() {
        let ds = Dataset::new((0..40).map(|i| i as f64).collect(), vec![1.0; 20], 2).unwrap();
        assert_eq!(default_lambda(&ds, 1.0), 0.0);
        let ds = Dataset::new(vec![1.0; 20], (0..20).map(|i| i as f64).collect(), 1).unwrap();
        let expected = crate::scanners::sample_sd(ds.y()) * (20f64).ln().sqrt();
        assert!((default_lambda(&ds, 1.0) - expected).abs() < 1e-9);
        assert_eq!(default_varpi_r(300, 900), 7);
        assert_eq!(default_varpi_r(5, 1), 2);
    }

    #[test]
    fn ocscan_r_pipeline_and_fallback() {
        let spec = crate::simgen::ScenarioSpec::m1(400, 30, 1, 4.0, 9);
        let (ds, _) = crate::simgen::generate(&spec).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        let params = ScanParams {
            zeta_mc: 2.0,
            zeta_qc: 5.0,
            varpi_mc: 4,
            varpi_qc: 4,
        };
        let search = crate::search::OptimisticSearch;
        let res = run_ocscan_r(&ds, &ps, &params, &search, &RefineConfig::default()).unwrap();
        assert!(!res.fallback);
        assert!((res.theta_r as i64 - 100).abs() <= 10, "θ̂_R = {}", res.theta_r);
        let huge = RefineConfig {
            lambda: Some(1e6),
            ..RefineConfig::default()
        };
        let res = run_ocscan_r(&ds, &ps, &params, &search, &huge).unwrap();
        assert!(res.fallback);
        assert_eq!(res.theta_r, res.oc.theta_oc);
        let silent = ScanParams {
            zeta_mc: 1e9,
            zeta_qc: 1e9,
            ..params
        };
        assert!(matches!(
            run_ocscan_r(&ds, &ps, &silent, &search, &RefineConfig::default()),
            Err(ScanError::NoChange(_))
        ));
    }

    #[test]
    fn standardised_solution_on_raw_scale() {
        let spec = crate::simgen::ScenarioSpec::m1(200, 5, 2, 3.0, 4);
        let (ds, _) = crate::simgen::generate(&spec).unwrap();
        let cfg = RefineConfig {
            lambda: Some(0.0),
            standardise: true,
            tol: 1e-12,
            ..RefineConfig::default()
        };
        let a = solve_standardised(&ds, 50, 0.0, &cfg).unwrap();
        let b = solve_lasso(&LassoProblem::at_split(&ds, 50, 0.0).unwrap(), 1e-12, 100_000).unwrap();
        for (u, v) in a.delta_hat.iter().zip(&b.delta_hat) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_csv_lists_nonzeros() {
        let mut buf = Vec::new();
        write_delta_csv(&mut buf, &[0.0, 1.5, 0.0, -0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,value\n1,1.5\n3,-0.25\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kkt_and_monotone_objective(seed in 0u64..10_000, n in 10usize..60, p in 1usize..12, lam in 0.01f64..1.0) {
            let prob = random_problem(seed, n, p, lam);
            let mut last = f64::INFINITY;
            for sweeps in [1, 2, 4, 8] {
                let sol = solve_lasso(&prob, 1e-300, sweeps).unwrap();
                prop_assert!(sol.objective <= last + 1e-12);
                last = sol.objective;
            }
            let sol = solve_lasso(&prob, 1e-10, 100_000).unwrap();
            prop_assert!(sol.converged);
            prop_assert!(sol.kkt_gap <= 1e-6);
        }

        #[test]
        fn refine_positive_scale_invariance(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let spec = crate::simgen::ScenarioSpec::m1(80, 4, 2, 2.0, seed);
            let (ds, model) = crate::simgen::generate(&spec).unwrap();
            let ps = PrefixSummaries::precompute(&ds);
            let delta = model.delta();
            let base = refine(&ps, &delta, 3, false, false).unwrap().theta_r;
            let scaled: Vec<f64> = delta.iter().map(|v| v * c).collect();
            prop_assert_eq!(refine(&ps, &scaled, 3, false, false).unwrap().theta_r, base);
            let ys: Vec<f64> = ds.y().iter().map(|v| v * c).collect();
            let ps_y = PrefixSummaries::precompute(&ds.with_response(ys).unwrap());
            prop_assert_eq!(refine(&ps_y, &delta, 3, false, false).unwrap().theta_r, base);
        }
    }
}
