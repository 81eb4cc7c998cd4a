// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset representation and the prefix summaries behind every O(p)
//! detector evaluation.
//!
//! Given observations `(Y_t, x_t)` for `t = 1..=n`, the summaries are
//!
//! * `a0  = (1/n) Σ_t |x_t|²`
//! * `r_k = Σ_{t≤k} Y_t²` for `k = 0..=n` (with `r_0 = 0`)
//! * `S_k = Σ_{t≤k} x_t Y_t` for `k = 0..=n` (with `S_0 = 0`)
//!
//! All running sums use Neumaier compensation so that `S_n` agrees with a
//! compensated column sum to ~1e-12 relative even for `n` in the millions.

use std::io::{Read, Write};

use crate::error::{Result, ScanError};

/// `n` observations of a scalar response and a `p`-dimensional regressor.
///
/// Rows are stored contiguously (`x[t * p + j]` is `x_{t+1, j+1}`) and row
/// order is time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Smallest sample size accepted by [`Dataset::new`].
pub const MIN_SAMPLES: usize = 4;

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if p == 0 {
            return Err(ScanError::Shape("dimension p must be at least 1".into()));
        }
        if n < MIN_SAMPLES {
            return Err(ScanError::Shape(format!(
                "need at least {MIN_SAMPLES} observations, got {n}"
            )));
        }
        if x.len() != n * p {
            return Err(ScanError::Shape(format!(
                "regressor buffer has {} entries, expected n * p = {} * {}",
                x.len(),
                n,
                p
            )));
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(ScanError::NonFinite { row: t, col: 0 });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ScanError::NonFinite {
                row: i / p,
                col: 1 + i % p,
            });
        }
        Ok(Self { n, p, x, y })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(ScanError::Shape(format!(
                "{} regressor rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(ScanError::Shape(format!(
                "row {bad} has {} entries, expected {p}",
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), y, p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major regressor matrix.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Regressor row for zero-based time index `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.p..(t + 1) * self.p]
    }

    /// Same observations in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        for t in (0..self.n).rev() {
            x.extend_from_slice(self.row(t));
        }
        let y = self.y.iter().rev().copied().collect();
        Self {
            n: self.n,
            p: self.p,
            x,
            y,
        }
    }

    /// Reorders observations so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        debug_assert_eq!(order.len(), self.n);
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.n);
        for &t in order {
            x.extend_from_slice(self.row(t));
            y.push(self.y[t]);
        }
        Self {
            n: self.n,
            p: self.p,
            x,
            y,
        }
    }

    /// Replaces the response, keeping the regressors.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.p)
    }

    /// Reads the CSV layout `Y, X_1, ..., X_p` (one row per time point).
    pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut p = None;
        for (t, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(ScanError::Shape(format!(
                    "row {t}: need a response and at least one regressor column"
                )));
            }
            let width = record.len() - 1;
            match p {
                None => p = Some(width),
                Some(w) if w != width => {
                    return Err(ScanError::Shape(format!(
                        "row {t} has {width} regressors, expected {w}"
                    )))
                }
                _ => {}
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    ScanError::Shape(format!("row {t}, column {col}: cannot parse '{field}'"))
                })?;
                if !v.is_finite() {
                    return Err(ScanError::NonFinite { row: t, col });
                }
                if col == 0 {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        Self::new(x, y, p.unwrap_or(0))
    }

    /// Writes the CSV layout read by [`Dataset::read_csv`]. Values use the
    /// shortest decimal form that parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, writer: W, header: bool) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().from_writer(writer);
        if header {
            let mut names = vec!["y".to_string()];
            names.extend((1..=self.p).map(|j| format!("x{j}")));
            wtr.write_record(&names)?;
        }
        let mut fields = Vec::with_capacity(self.p + 1);
        for t in 0..self.n {
            fields.clear();
            fields.push(self.y[t].to_string());
            fields.extend(self.row(t).iter().map(f64::to_string));
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Prefix summaries `(a0, r, S)`; immutable once built and freely shareable
/// between threads.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixSummaries {
    n: usize,
    p: usize,
    a0: f64,
    r: Vec<f64>,
    s: Vec<f64>,
}

impl PrefixSummaries {
    /// O(np) time and memory.
    pub fn precompute(ds: &Dataset) -> Self {
        Self::build(ds, |t| t)
    }

    /// Summaries of the dataset reordered so that time `i` holds the
    /// original observation `order[i]`, without materialising the copy.
    pub fn precompute_permuted(ds: &Dataset, order: &[usize]) -> Self {
        assert_eq!(order.len(), ds.n, "permutation length must equal n");
        Self::build(ds, |i| order[i])
    }

    fn build(ds: &Dataset, source: impl Fn(usize) -> usize) -> Self {
        let (n, p) = (ds.n, ds.p);
        let mut r = Vec::with_capacity(n + 1);
        let mut s = vec![0.0; (n + 1) * p];
        let mut r_acc = Compensated::default();
        let mut s_acc = vec![Compensated::default(); p];
        let mut norm_acc = Compensated::default();
        r.push(0.0);
        for t in 0..n {
            let src = source(t);
            let yt = ds.y[src];
            let row = ds.row(src);
            r_acc.add(yt * yt);
            r.push(r_acc.value());
            let mut row_norm = 0.0;
            let out = &mut s[(t + 1) * p..(t + 2) * p];
            for ((acc, &xv), dst) in s_acc.iter_mut().zip(row).zip(out.iter_mut()) {
                acc.add(xv * yt);
                *dst = acc.value();
                row_norm += xv * xv;
            }
            norm_acc.add(row_norm);
        }
        Self {
            n,
            p,
            a0: norm_acc.value() / n as f64,
            r,
            s,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Mean squared row norm of the regressors.
    pub fn a0(&self) -> f64 {
        self.a0
    }

    /// `r_k` for `k = 0..=n`.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    /// `S_k` as a length-`p` slice, `k = 0..=n`.
    pub fn s(&self, k: usize) -> &[f64] {
        &self.s[k * self.p..(k + 1) * self.p]
    }

    pub(crate) fn check_split(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.n {
            return Err(ScanError::SplitOutOfRange {
                k,
                n: self.n,
                max: self.n - 1,
            });
        }
        Ok(())
    }

    /// `S_k − (k/n) S_n` for an interior split `1 ≤ k ≤ n−1`.
    pub fn contrast(&self, k: usize) -> Result<Vec<f64>> {
        self.check_split(k)?;
        let frac = k as f64 / self.n as f64;
        Ok(self
            .s(k)
            .iter()
            .zip(self.s(self.n))
            .map(|(sk, sn)| sk - frac * sn)
            .collect())
    }

    /// Folds `f` over the contrast entries without allocating. Caller has
    /// already validated `k`.
    #[inline]
    pub(crate) fn fold_contrast<A>(&self, k: usize, init: A, mut f: impl FnMut(A, f64) -> A) -> A {
        let frac = k as f64 / self.n as f64;
        let mut acc = init;
        for (sk, sn) in self.s(k).iter().zip(self.s(self.n)) {
            acc = f(acc, sk - frac * sn);
        }
        acc
    }
}
