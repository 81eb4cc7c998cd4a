// SPDX-License-Identifier: MIT OR Apache-2.0

//! Covariance-scanning detector statistics.
//!
//! Both statistics are built from the contrast `S_k − (k/n) S_n`:
//!
//! * max-type:  `T̄_k = sqrt(n / (k(n−k))) · |S_k − (k/n) S_n|_∞`
//! * quadratic: `T_k = n/(k(n−k)) · |S_k − (k/n) S_n|₂² − a0 · ((n−2k)/(k(n−k)) · r_k + k/(n(n−k)) · r_n)`
//!
//! each O(p) given [`PrefixSummaries`]. The `direct_*` functions evaluate the
//! same quantities from their definitions via the rescaled response
//! [`tilde_y`] and are kept as oracles for the fast forms.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrefixSummaries};
use crate::error::{Result, ScanError};
use crate::linalg::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// ℓ∞ aggregation of the covariance contrast.
    Max,
    /// Centred ℓ2 quadratic form.
    Quad,
}

impl DetectorKind {
    /// Statistic at split `k`; `k = n` returns 0.
    pub fn stat(self, ps: &PrefixSummaries, k: usize) -> Result<f64> {
        match self {
            DetectorKind::Max => mcscan_stat(ps, k),
            DetectorKind::Quad => qcscan_stat(ps, k),
        }
    }

    /// Unchecked evaluation for search loops; `k` must be interior.
    #[inline]
    pub(crate) fn eval(self, ps: &PrefixSummaries, k: usize) -> f64 {
        match self {
            DetectorKind::Max => mcscan_unchecked(ps, k),
            DetectorKind::Quad => qcscan_unchecked(ps, k),
        }
    }

    pub fn direct(self, ds: &Dataset, k: usize) -> Result<f64> {
        match self {
            DetectorKind::Max => direct_mcscan(ds, k),
            DetectorKind::Quad => direct_qcscan(ds, k),
        }
    }
}

fn check_interior(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(ScanError::SplitOutOfRange { k, n, max: n - 1 });
    }
    Ok(())
}

/// Rescaled response: `−sqrt((n−k)/(nk)) Y_t` for `t ≤ k` and
/// `sqrt(k/(n(n−k))) Y_t` afterwards.
pub fn tilde_y(y: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = y.len();
    check_interior(n, k)?;
    let (nf, kf) = (n as f64, k as f64);
    let before = -((nf - kf) / (nf * kf)).sqrt();
    let after = (kf / (nf * (nf - kf))).sqrt();
    Ok(y.iter()
        .enumerate()
        .map(|(t, &v)| if t < k { before * v } else { after * v })
        .collect())
}

#[inline]
fn mcscan_unchecked(ps: &PrefixSummaries, k: usize) -> f64 {
    let (n, kf) = (ps.n() as f64, k as f64);
    let sup = ps.fold_contrast(k, 0.0f64, |m, c| m.max(c.abs()));
    (n / (kf * (n - kf))).sqrt() * sup
}

#[inline]
fn qcscan_unchecked(ps: &PrefixSummaries, k: usize) -> f64 {
    let (n, kf) = (ps.n() as f64, k as f64);
    let sq = ps.fold_contrast(k, 0.0f64, |s, c| s + c * c);
    let r = ps.r();
    let centring = (n - 2.0 * kf) / (kf * (n - kf)) * r[k] + kf / (n * (n - kf)) * r[ps.n()];
    n / (kf * (n - kf)) * sq - ps.a0() * centring
}

/// Max-type statistic `T̄_k` in O(p). Accepts `1 ≤ k ≤ n`; `k = n` gives 0.
pub fn mcscan_stat(ps: &PrefixSummaries, k: usize) -> Result<f64> {
    if k == ps.n() {
        return Ok(0.0);
    }
    ps.check_split(k)?;
    Ok(mcscan_unchecked(ps, k))
}

/// Quadratic statistic `T_k` in O(p); may be negative. `k = n` gives 0.
pub fn qcscan_stat(ps: &PrefixSummaries, k: usize) -> Result<f64> {
    if k == ps.n() {
        return Ok(0.0);
    }
    ps.check_split(k)?;
    Ok(qcscan_unchecked(ps, k))
}

/// `Xᵀ Ỹ(k)`, computed from the definition in O(np).
pub fn direct_covariance(ds: &Dataset, k: usize) -> Result<Vec<f64>> {
    let yt = tilde_y(ds.y(), k)?;
    let mut out = vec![0.0; ds.p()];
    for (t, &w) in yt.iter().enumerate() {
        for (o, &xv) in out.iter_mut().zip(ds.row(t)) {
            *o += xv * w;
        }
    }
    Ok(out)
}

/// `|Xᵀ Ỹ(k)|_∞` from the definition.
pub fn direct_mcscan(ds: &Dataset, k: usize) -> Result<f64> {
    if k == ds.n() {
        return Ok(0.0);
    }
    Ok(direct_covariance(ds, k)?
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs())))
}

/// `Ỹ(k)ᵀ (XXᵀ − tr(XXᵀ)/n · I) Ỹ(k)`, formed through the `n x n` Gram
/// matrix (O(n²p)).
pub fn direct_qcscan(ds: &Dataset, k: usize) -> Result<f64> {
    if k == ds.n() {
        return Ok(0.0);
    }
    let yt = tilde_y(ds.y(), k)?;
    let n = ds.n();
    let gram = Matrix::from_fn(n, n, |i, j| dot(ds.row(i), ds.row(j)));
    let trace_over_n = (0..n).map(|i| gram[(i, i)]).sum::<f64>() / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let g = if i == j { gram[(i, j)] - trace_over_n } else { gram[(i, j)] };
            row += g * yt[j];
        }
        total += yt[i] * row;
    }
    Ok(total)
}

/// Population covariance of the regressors.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Identity(usize),
    Dense(Matrix),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Identity(p) => *p,
            Covariance::Dense(m) => m.rows(),
        }
    }

    /// `Σ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Covariance::Identity(_) => v.to_vec(),
            Covariance::Dense(m) => m.matvec(v),
        }
    }

    /// `vᵀ Σ v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        dot(v, &self.apply(v))
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            Covariance::Identity(p) => Matrix::identity(*p),
            Covariance::Dense(m) => m.clone(),
        }
    }

    /// Spectral norm `‖Σ‖`.
    pub fn spectral_norm(&self) -> Result<f64> {
        match self {
            Covariance::Identity(_) => Ok(1.0),
            Covariance::Dense(m) => Ok(crate::linalg::jacobi_eigen(m)?
                .values
                .last()
                .copied()
                .unwrap_or(0.0)
                .max(0.0)),
        }
    }
}

/// Ground truth of the single change-point regression model: `Y_t = x_tᵀβ₀ + ε_t`
/// for `t ≤ θ` and `x_tᵀβ₁ + ε_t` afterwards, `x_t ~ N(0, Σ)`, `ε_t ~ N(0, σ²)`.
/// `θ = n` encodes "no change".
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationModel {
    pub covariance: Covariance,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub sigma: f64,
    pub theta: usize,
    pub n: usize,
    psi: f64,
}

impl PopulationModel {
    pub fn new(
        covariance: Covariance,
        beta0: Vec<f64>,
        beta1: Vec<f64>,
        sigma: f64,
        theta: usize,
        n: usize,
    ) -> Result<Self> {
        let p = covariance.dim();
        if beta0.len() != p || beta1.len() != p {
            return Err(ScanError::Shape(format!(
                "coefficient vectors must have length {p}"
            )));
        }
        if !(sigma >= 0.0) {
            return Err(ScanError::Config(format!("noise sd must be >= 0, got {sigma}")));
        }
        if theta == 0 || theta > n {
            return Err(ScanError::Config(format!("change location {theta} outside 1..={n}")));
        }
        if let Covariance::Dense(m) = &covariance {
            match m.asymmetry() {
                Some(a) if a <= 1e-10 => {}
                Some(a) => return Err(ScanError::NotSymmetric(a)),
                None => return Err(ScanError::Shape("covariance must be square".into())),
            }
        }
        let mut model = Self {
            covariance,
            beta0,
            beta1,
            sigma,
            theta,
            n,
            psi: 0.0,
        };
        model.psi = model.compute_psi();
        Ok(model)
    }

    fn compute_psi(&self) -> f64 {
        let q0 = self.covariance.quad(&self.beta0).max(0.0).sqrt();
        let q1 = self.covariance.quad(&self.beta1).max(0.0).sqrt();
        q0.max(q1).max(self.sigma)
    }

    /// `max(|Σ^{1/2}β₀|₂, |Σ^{1/2}β₁|₂, σ)`.
    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// Recomputes Ψ from the fields and compares to the cached value.
    pub fn psi_consistent(&self) -> bool {
        (self.compute_psi() - self.psi).abs() <= 1e-10 * self.psi.max(1.0)
    }

    pub fn delta(&self) -> Vec<f64> {
        self.beta1.iter().zip(&self.beta0).map(|(b1, b0)| b1 - b0).collect()
    }

    /// Minimal segment length `min(θ, n − θ)`.
    pub fn min_spacing(&self) -> usize {
        self.theta.min(self.n - self.theta)
    }

    pub fn has_change(&self) -> bool {
        self.theta < self.n
    }

    /// `|Σδ|₂²`, the quantity targeted by the signal-strength estimator.
    pub fn signal_strength(&self) -> f64 {
        let sd = self.covariance.apply(&self.delta());
        dot(&sd, &sd)
    }
}

/// Population mean of the quadratic statistic at split `k`:
///
/// `f_k = k(n−k)/n · [ c_k δᵀΣ²δ − d_k δᵀΣ²(β₀+β₁) + β₀ᵀΣ²β₀/k + β₁ᵀΣ²β₁/(n−k) ]`
///
/// with `c_k = (n−θ)²/(n−k)²`, `d_k = (θ−k)/(n−k)²` for `k ≤ θ` and
/// `c_k = θ²/k²`, `d_k = −(k−θ)/k²` for `k > θ`.
pub fn mean_fk(model: &PopulationModel, k: usize) -> Result<f64> {
    let n = model.n;
    check_interior(n, k)?;
    let (nf, kf, th) = (n as f64, k as f64, model.theta as f64);
    let s_delta = model.covariance.apply(&model.delta());
    let s_b0 = model.covariance.apply(&model.beta0);
    let s_b1 = model.covariance.apply(&model.beta1);
    let s_sum: Vec<f64> = s_b0.iter().zip(&s_b1).map(|(a, b)| a + b).collect();
    let dd = dot(&s_delta, &s_delta);
    let ds = dot(&s_delta, &s_sum);
    let b0 = dot(&s_b0, &s_b0);
    let b1 = dot(&s_b1, &s_b1);
    let (c, d) = if k <= model.theta {
        ((nf - th).powi(2) / (nf - kf).powi(2), (th - kf) / (nf - kf).powi(2))
    } else {
        (th * th / (kf * kf), -(kf - th) / (kf * kf))
    };
    Ok(kf * (nf - kf) / nf * (c * dd - d * ds + b0 / kf + b1 / (nf - kf)))
}

/// Population mean of `Xᵀ Ỹ(k)`:
/// `sqrt(k(n−k)/n) · ((n−θ)/(n−k) · 1{k≤θ} + θ/k · 1{k>θ}) · Σδ`.
pub fn mean_fbar(model: &PopulationModel, k: usize) -> Result<Vec<f64>> {
    let n = model.n;
    check_interior(n, k)?;
    let (nf, kf, th) = (n as f64, k as f64, model.theta as f64);
    let weight = if k <= model.theta {
        (nf - th) / (nf - kf)
    } else {
        th / kf
    };
    let scale = (kf * (nf - kf) / nf).sqrt() * weight;
    Ok(model
        .covariance
        .apply(&model.delta())
        .into_iter()
        .map(|v| scale * v)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize_columns;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::new(vec![1.0; 4], vec![0.0, 0.0, 1.0, 1.0], 1).unwrap()
    }

    #[test]
    fn tilde_y_examples() {
        assert_eq!(tilde_y(&[1.0; 4], 2).unwrap(), vec![-0.5, -0.5, 0.5, 0.5]);
        assert_eq!(tilde_y(&[0.0; 6], 3).unwrap(), vec![0.0; 6]);
        let (a, b) = (3.0, -2.0);
        let got = tilde_y(&[a, b], 1).unwrap();
        let h = 0.5f64.sqrt();
        assert!((got[0] + h * a).abs() < 1e-15 && (got[1] - h * b).abs() < 1e-15);
        assert!(tilde_y(&[1.0; 4], 0).is_err());
        assert!(tilde_y(&[1.0; 4], 4).is_err());
    }

    #[test]
    fn toy_statistics() {
        let ds = toy();
        let ps = PrefixSummaries::precompute(&ds);
        assert!((mcscan_stat(&ps, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((qcscan_stat(&ps, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((direct_mcscan(&ds, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((direct_qcscan(&ds, 2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mcscan_stat(&ps, 4).unwrap(), 0.0);
        assert_eq!(qcscan_stat(&ps, 4).unwrap(), 0.0);
        assert!(mcscan_stat(&ps, 0).is_err());
        assert!(qcscan_stat(&ps, 5).is_err());
    }

    #[test]
    fn zero_response_gives_zero() {
        let ds = Dataset::new((0..20).map(|i| i as f64 * 0.1).collect(), vec![0.0; 10], 2).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        for k in 1..=10 {
            assert_eq!(mcscan_stat(&ps, k).unwrap(), 0.0);
            assert_eq!(qcscan_stat(&ps, k).unwrap(), 0.0);
        }
        assert_eq!(direct_qcscan(&ds, 3).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_statistic_can_be_negative() {
        // Column 1 has much larger variance than column 0; putting the
        // response on the small column makes the centring term dominate.
        let n = 40;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in 0..n {
            let small = if t % 2 == 0 { 0.1 } else { -0.1 };
            let big = 10.0 * (t as f64 * 0.7).sin();
            x.extend([small, big]);
            y.push(if t < n / 2 { small } else { -small });
        }
        let ds = Dataset::new(x, y, 2).unwrap();
        let ps = PrefixSummaries::precompute(&ds);
        let worst = (1..n).map(|k| qcscan_stat(&ps, k).unwrap()).fold(f64::INFINITY, f64::min);
        assert!(worst < 0.0);
        assert!((1..n).all(|k| mcscan_stat(&ps, k).unwrap() >= 0.0));
    }

    #[test]
    fn fk_without_change_collapses() {
        let beta = vec![0.3, -1.0, 0.5];
        let sigma = Matrix::from_fn(3, 3, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let model =
            PopulationModel::new(Covariance::Dense(sigma.clone()), beta.clone(), beta.clone(), 1.0, 30, 30)
                .unwrap();
        let sb = sigma.matvec(&beta);
        let want = dot(&sb, &sb);
        for k in 1..30 {
            assert!((mean_fk(&model, k).unwrap() - want).abs() < 1e-12 * want);
            assert!(mean_fbar(&model, k).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fk_at_change_with_zero_pre_change_coefficients() {
        let (n, theta) = (50, 20);
        let delta = vec![1.0, -2.0];
        let model = PopulationModel::new(
            Covariance::Identity(2),
            vec![0.0; 2],
            delta.clone(),
            0.7,
            theta,
            n,
        )
        .unwrap();
        let (nf, th) = (n as f64, theta as f64);
        let dd = dot(&delta, &delta);
        let want = th * (nf - th) / nf * (dd + dd / (nf - th));
        assert!((mean_fk(&model, theta).unwrap() - want).abs() < 1e-12 * want);
        let fb = mean_fbar(&model, theta).unwrap();
        let scale = (th * (nf - th) / nf).sqrt();
        for (got, d) in fb.iter().zip(&delta) {
            assert!((got - scale * d).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_matches_definition() {
        let model = PopulationModel::new(
            Covariance::Dense(Matrix::diag(&[4.0, 1.0])),
            vec![1.0, 0.0],
            vec![0.0, 3.0],
            0.5,
            5,
            10,
        )
        .unwrap();
        assert!((model.psi() - 3.0).abs() < 1e-15);
        assert!(model.psi_consistent());
        assert_eq!(model.min_spacing(), 5);
    }

    fn arb_instance() -> impl Strategy<Value = Dataset> {
        (4usize..=64, 1usize..=16).prop_flat_map(|(n, p)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * p),
                proptest::collection::vec(-3.0f64..3.0, n),
            )
                .prop_map(move |(x, y)| Dataset::new(x, y, p).unwrap())
        })
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prefix_forms_match_definitions(ds in arb_instance()) {
            let ps = PrefixSummaries::precompute(&ds);
            for k in 1..ds.n() {
                let m = mcscan_stat(&ps, k).unwrap();
                let q = qcscan_stat(&ps, k).unwrap();
                prop_assert!(rel_close(m, direct_mcscan(&ds, k).unwrap(), 1e-9));
                prop_assert!(rel_close(q, direct_qcscan(&ds, k).unwrap(), 1e-9));
            }
        }

        #[test]
        fn response_scaling(ds in arb_instance(), c in -5.0f64..5.0) {
            let scaled = ds.with_response(ds.y().iter().map(|v| c * v).collect()).unwrap();
            let (ps, pc) = (PrefixSummaries::precompute(&ds), PrefixSummaries::precompute(&scaled));
            for k in 1..ds.n() {
                let m = mcscan_stat(&ps, k).unwrap();
                let q = qcscan_stat(&ps, k).unwrap();
                prop_assert!((mcscan_stat(&pc, k).unwrap() - c.abs() * m).abs() <= 1e-10 * (1.0 + c.abs() * m));
                let scale = c * c * (q.abs() + ps.a0() * ps.r()[ds.n()] + 1.0);
                prop_assert!((qcscan_stat(&pc, k).unwrap() - c * c * q).abs() <= 1e-10 * scale.max(1.0));
            }
        }

        #[test]
        fn time_reversal_symmetry(ds in arb_instance()) {
            let ps = PrefixSummaries::precompute(&ds);
            let rev = PrefixSummaries::precompute(&ds.reversed());
            let n = ds.n();
            let scale = 1.0 + ps.a0() * ps.r()[n];
            for k in 1..n {
                let (a, b) = (mcscan_stat(&rev, k).unwrap(), mcscan_stat(&ps, n - k).unwrap());
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()) * scale);
                let (a, b) = (qcscan_stat(&rev, k).unwrap(), qcscan_stat(&ps, n - k).unwrap());
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()) * scale);
            }
        }

        #[test]
        fn rotation_invariance(ds in arb_instance(), seed in proptest::collection::vec(-1.0f64..1.0, 256)) {
            let p = ds.p();
            let mut q = Matrix::from_fn(p, p, |i, j| seed[(i * 16 + j) % 256] + if i == j { 2.0 } else { 0.0 });
            prop_assume!(orthonormalize_columns(&mut q));
            let mut x = Vec::with_capacity(ds.n() * p);
            for t in 0..ds.n() {
                x.extend(q.t_matvec(ds.row(t)));
            }
            let rotated = Dataset::new(x, ds.y().to_vec(), p).unwrap();
            let (ps, pr) = (PrefixSummaries::precompute(&ds), PrefixSummaries::precompute(&rotated));
            let scale = 1.0 + ps.a0() * ps.r()[ds.n()];
            for k in 1..ds.n() {
                let (a, b) = (qcscan_stat(&pr, k).unwrap(), qcscan_stat(&ps, k).unwrap());
                prop_assert!((a - b).abs() <= 1e-8 * (b.abs() + scale));
            }
        }

        #[test]
        fn max_statistic_signed_permutation_invariance(ds in arb_instance(), flip in any::<u16>()) {
            let p = ds.p();
            let mut x = Vec::with_capacity(ds.n() * p);
            for t in 0..ds.n() {
                let row = ds.row(t);
                for j in 0..p {
                    let src = (j + 1) % p;
                    let sign = if flip >> (j % 16) & 1 == 1 { -1.0 } else { 1.0 };
                    x.push(sign * row[src]);
                }
            }
            let other = Dataset::new(x, ds.y().to_vec(), p).unwrap();
            let (ps, po) = (PrefixSummaries::precompute(&ds), PrefixSummaries::precompute(&other));
            for k in 1..ds.n() {
                let (a, b) = (mcscan_stat(&po, k).unwrap(), mcscan_stat(&ps, k).unwrap());
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b));
            }
        }
    }
}
