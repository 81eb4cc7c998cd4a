// SPDX-License-Identifier: MIT OR Apache-2.0

//! Argmax search over split indices.
//!
//! [`optimistic_search`] screens a dyadic grid and, if the best grid value
//! exceeds the threshold, narrows down on a maximiser by divide and conquer
//! with O(log n) evaluations in total. [`full_grid`] evaluates every admissible
//! split and serves as the baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub k: usize,
    pub value: f64,
}

/// One divide-and-conquer step: the interval `(s, t, e)` on entry, the probe
/// `w`, and the triple kept for the next step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub s: usize,
    pub t: usize,
    pub e: usize,
    pub w: usize,
    pub kept: (usize, usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Every distinct evaluation, in the order it was made.
    pub probes: Vec<Probe>,
    pub dyadic_grid: Vec<usize>,
    pub k_star: Option<usize>,
    /// Interval `(a, b)` handed to the divide-and-conquer phase.
    pub initial_bracket: Option<(usize, usize)>,
    pub branch_log: Vec<BranchRecord>,
    /// Interval `(s, e)` of the terminal exhaustive step.
    pub final_bracket: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Estimated change location; `n` when nothing was detected.
    pub theta_hat: usize,
    /// 1 if the statistic exceeded the threshold, else 0.
    pub q_hat: u8,
    /// Statistic at `theta_hat` (0 by convention when `theta_hat = n`).
    pub value: f64,
    pub trace: SearchTrace,
}

impl SearchOutcome {
    pub fn detected(&self) -> bool {
        self.q_hat == 1
    }

    fn none(n: usize, trace: SearchTrace) -> Self {
        Self {
            theta_hat: n,
            q_hat: 0,
            value: 0.0,
            trace,
        }
    }
}

/// A search routine over the statistic `k ↦ V_k` on `ϖ < k < n − ϖ`.
pub trait SearchStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn search(
        &self,
        eval: &mut dyn FnMut(usize) -> f64,
        n: usize,
        zeta: f64,
        varpi: usize,
    ) -> Result<SearchOutcome>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OptimisticSearch;

impl SearchStrategy for OptimisticSearch {
    fn name(&self) -> &'static str {
        "os"
    }

    fn search(
        &self,
        eval: &mut dyn FnMut(usize) -> f64,
        n: usize,
        zeta: f64,
        varpi: usize,
    ) -> Result<SearchOutcome> {
        optimistic_search(eval, n, zeta, varpi)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FullGridSearch;

impl SearchStrategy for FullGridSearch {
    fn name(&self) -> &'static str {
        "fs"
    }

    fn search(
        &self,
        eval: &mut dyn FnMut(usize) -> f64,
        n: usize,
        zeta: f64,
        varpi: usize,
    ) -> Result<SearchOutcome> {
        full_grid(eval, n, zeta, varpi)
    }
}

/// `⌊log₂(n / (2ϖ))⌋`, the number of dyadic levels.
pub fn dyadic_levels(n: usize, varpi: usize) -> Result<u32> {
    if varpi == 0 || n < 4 * varpi {
        return Err(ScanError::GridEmpty { n, varpi });
    }
    // Largest l with 2^l * 2ϖ ≤ n, in exact integer arithmetic.
    let mut levels = 0u32;
    while (2 * varpi) << (levels + 1) <= n {
        levels += 1;
    }
    Ok(levels)
}

/// `{ ⌊n/2^l⌋, ⌈n − n/2^l⌉ : l = 1..=⌊log₂(n/(2ϖ))⌋ }`, sorted and deduplicated.
pub fn dyadic_grid(n: usize, varpi: usize) -> Result<Vec<usize>> {
    let levels = dyadic_levels(n, varpi)?;
    let mut grid = Vec::with_capacity(2 * levels as usize);
    for l in 1..=levels {
        let lower = n >> l;
        // ⌈n − n/2^l⌉ = n − ⌊n/2^l⌋
        grid.push(lower);
        grid.push(n - lower);
    }
    grid.sort_unstable();
    grid.dedup();
    Ok(grid)
}

/// Upper bound on distinct evaluations made by [`optimistic_search`].
pub fn evaluation_budget(n: usize, varpi: usize) -> usize {
    let levels = dyadic_levels(n, varpi).unwrap_or(0) as usize;
    let log_n = (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize; // ⌈log₂ n⌉
    2 * levels + 3 * log_n + 5
}

struct Memo<'a> {
    eval: &'a mut dyn FnMut(usize) -> f64,
    cache: HashMap<usize, f64>,
    probes: Vec<Probe>,
}

impl<'a> Memo<'a> {
    fn new(eval: &'a mut dyn FnMut(usize) -> f64) -> Self {
        Self {
            eval,
            cache: HashMap::new(),
            probes: Vec::new(),
        }
    }

    fn get(&mut self, k: usize) -> f64 {
        if let Some(&v) = self.cache.get(&k) {
            return v;
        }
        let v = (self.eval)(k);
        self.cache.insert(k, v);
        self.probes.push(Probe { k, value: v });
        v
    }

    /// First maximiser over `ks` (smallest index on ties when `ks` ascends).
    fn argmax(&mut self, ks: impl IntoIterator<Item = usize>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for k in ks {
            let v = self.get(k);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        best
    }
}

/// Optimistic search with dyadic screening.
///
/// `eval` is called at most once per split; all calls satisfy
/// `varpi < k < n − varpi`. Returns `(n, 0)` when the best grid value does
/// not exceed `zeta`.
pub fn optimistic_search(
    eval: &mut dyn FnMut(usize) -> f64,
    n: usize,
    zeta: f64,
    varpi: usize,
) -> Result<SearchOutcome> {
    let grid = dyadic_grid(n, varpi)?;
    let mut memo = Memo::new(eval);
    let (k_star, v_star) = memo
        .argmax(grid.iter().copied())
        .ok_or(ScanError::GridEmpty { n, varpi })?;
    let mut trace = SearchTrace {
        dyadic_grid: grid,
        k_star: Some(k_star),
        ..SearchTrace::default()
    };
    if !(v_star > zeta) {
        trace.probes = memo.probes;
        return Ok(SearchOutcome::none(n, trace));
    }

    // Neighbouring dyadic scales around k*, clamped to the trimmed range so
    // every probe stays inside (ϖ, n − ϖ).
    let (a, b) = if 2 * k_star <= n {
        (k_star / 2, 2 * k_star)
    } else {
        // ⌊k* − (n − k*)⌋, ⌈k* + (n − k*)/2⌉
        (2 * k_star - n, k_star + (n - k_star).div_ceil(2))
    };
    let a = a.max(varpi);
    let b = b.min(n - varpi);
    trace.initial_bracket = Some((a, b));

    let (mut s, mut t, mut e) = (a, k_star, b);
    let theta_hat = loop {
        if e - s <= 2 || !(s < t && t < e) {
            return Err(ScanError::Search(format!(
                "degenerate interval (s, t, e) = ({s}, {t}, {e})"
            )));
        }
        if e - s <= 5 {
            trace.final_bracket = Some((s, e));
            let (k, _) = memo.argmax(s + 1..e).expect("non-empty base case");
            break k;
        }
        let vt = memo.get(t);
        let (w, kept) = if e - t > t - s {
            // ⌈e − (e − t)/2⌉
            let w = e - (e - t) / 2;
            if memo.get(w) >= vt {
                (w, (t, w, e))
            } else {
                (w, (s, t, w))
            }
        } else {
            // ⌊s + (t − s)/2⌋
            let w = s + (t - s) / 2;
            if memo.get(w) >= vt {
                (w, (s, w, t))
            } else {
                (w, (w, t, e))
            }
        };
        trace.branch_log.push(BranchRecord { s, t, e, w, kept });
        (s, t, e) = kept;
    };
    let value = memo.get(theta_hat);
    trace.probes = memo.probes;
    Ok(SearchOutcome {
        theta_hat,
        q_hat: 1,
        value,
        trace,
    })
}

/// Exhaustive argmax over `varpi < k < n − varpi` (smallest index on ties).
pub fn full_grid(
    eval: &mut dyn FnMut(usize) -> f64,
    n: usize,
    zeta: f64,
    varpi: usize,
) -> Result<SearchOutcome> {
    if n < 2 * varpi + 2 {
        return Err(ScanError::GridEmpty { n, varpi });
    }
    let mut memo = Memo::new(eval);
    let (k, v) = memo
        .argmax(varpi + 1..n - varpi)
        .ok_or(ScanError::GridEmpty { n, varpi })?;
    let trace = SearchTrace {
        k_star: Some(k),
        probes: std::mem::take(&mut memo.probes),
        ..SearchTrace::default()
    };
    if v > zeta {
        Ok(SearchOutcome {
            theta_hat: k,
            q_hat: 1,
            value: v,
            trace,
        })
    } else {
        Ok(SearchOutcome::none(n, trace))
    }
}
