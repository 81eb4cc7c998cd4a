// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic scenarios for the single change-point regression model.
//!
//! * `M1`: isotropic design, `β₀ = −β₁ = ρ u` with `u` uniform on the unit
//!   sphere of a uniformly drawn support of size `s`.
//! * `M1_RANK_DEFICIENT`: as `M1` but `x_t = U_r x̃_t` with `U_r` a random
//!   `p x r` matrix with orthonormal columns.
//! * `M2`: Toeplitz design `Σ_ij = γ^|i−j|`, `β₀ = μ − δ/2`, `β₁ = μ + δ/2`,
//!   `μ = ν μ∘ / |Σ^{1/2} μ∘|₂`, `δ = ρ δ₀ / |Σ^{1/2} δ₀|₂`, where either `δ₀`
//!   (standard sparsity) or `Σ^{1/2} δ₀` (inherent sparsity) has `s` entries
//!   in `{±1}`.
//!
//! Randomness comes from ChaCha20 streams keyed by `(seed, stream)`:
//! stream 0 draws coefficients, stream 1 the design, stream 2 the noise and
//! stream 3 the orthonormal factor `U_r`. Normal variates use
//! `rand_distr::StandardNormal`.

use std::sync::OnceLock;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::detectors::{Covariance, PopulationModel};
use crate::error::{Result, ScanError};
use crate::linalg::{dot, jacobi_eigen, norm2, orthonormalize_columns, Matrix, SymmetricEigen};

pub use crate::linalg::symmetric_sqrt;

/// Independent, reproducible RNG stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; used to derive per-repetition seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    M1,
    M2,
    #[serde(rename = "M1_RANK_DEFICIENT")]
    M1RankDeficient,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SparsityMode {
    #[default]
    Standard,
    Inherent,
}

fn default_n() -> usize {
    300
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    #[serde(default = "default_n")]
    pub n: usize,
    pub p: usize,
    /// Defaults to `n / 4`.
    #[serde(default)]
    pub theta: Option<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Change magnitude; `0` produces a no-change dataset.
    pub rho: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default)]
    pub sparsity_mode: SparsityMode,
    pub s: usize,
    /// Rank of the design covariance (`M1_RANK_DEFICIENT` only).
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn m1(n: usize, p: usize, s: usize, rho: f64, seed: u64) -> Self {
        Self {
            scenario: Scenario::M1,
            n,
            p,
            theta: None,
            sigma: 1.0,
            rho,
            gamma: 0.0,
            nu: 0.0,
            sparsity_mode: SparsityMode::Standard,
            s,
            r: None,
            seed,
        }
    }

    pub fn m2(p: usize, s: usize, rho: f64, gamma: f64, nu: f64, mode: SparsityMode, seed: u64) -> Self {
        Self {
            scenario: Scenario::M2,
            n: 300,
            p,
            theta: Some(75),
            sigma: 1.0,
            rho,
            gamma,
            nu,
            sparsity_mode: mode,
            s,
            r: None,
            seed,
        }
    }

    pub fn theta(&self) -> usize {
        self.theta.unwrap_or(self.n / 4)
    }

    pub fn rank(&self) -> usize {
        self.r.unwrap_or(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        let theta = self.theta();
        if self.p == 0 || self.n < crate::data::MIN_SAMPLES {
            return Err(ScenarioError::bad("need p >= 1 and n >= 4"));
        }
        if theta == 0 || theta > self.n {
            return Err(ScenarioError::bad(format!("theta {theta} outside 1..={}", self.n)));
        }
        if self.s == 0 || self.s > self.p {
            return Err(ScenarioError::bad(format!("sparsity {} outside 1..={}", self.s, self.p)));
        }
        let r = self.rank();
        if r == 0 || r > self.p {
            return Err(ScenarioError::bad(format!("rank {r} outside 1..={}", self.p)));
        }
        if !(self.sigma >= 0.0) || !self.rho.is_finite() || !(self.rho >= 0.0) {
            return Err(ScenarioError::bad("sigma and rho must be finite and >= 0"));
        }
        if !(self.gamma.abs() < 1.0) {
            return Err(ScenarioError::bad(format!("|gamma| must be < 1, got {}", self.gamma)));
        }
        Ok(())
    }
}

struct ScenarioError;

impl ScenarioError {
    fn bad(msg: impl Into<String>) -> ScanError {
        ScanError::Config(format!("scenario: {}", msg.into()))
    }
}

#[derive(Clone, Debug)]
pub enum CovarianceKind {
    Identity,
    Toeplitz(f64),
    /// `Σ = U Uᵀ` for `U` with orthonormal columns.
    LowRank(Matrix),
}

/// Design covariance with a lazily cached eigendecomposition.
#[derive(Debug)]
pub struct CovarianceBuilder {
    kind: CovarianceKind,
    p: usize,
    eigen: OnceLock<SymmetricEigen>,
    sqrt: OnceLock<Matrix>,
}

impl CovarianceBuilder {
    pub fn identity(p: usize) -> Self {
        Self::new(CovarianceKind::Identity, p)
    }

    pub fn toeplitz(p: usize, gamma: f64) -> Result<Self> {
        if !(gamma.abs() < 1.0) {
            return Err(ScanError::Config(format!(
                "Toeplitz parameter must satisfy |gamma| < 1, got {gamma}"
            )));
        }
        Ok(Self::new(CovarianceKind::Toeplitz(gamma), p))
    }

    pub fn low_rank(u: Matrix) -> Result<Self> {
        let gram = u.transpose().matmul(&u);
        let err = gram.max_abs_diff(&Matrix::identity(u.cols()));
        if err > 1e-10 {
            return Err(ScanError::Config(format!(
                "low-rank factor is not orthonormal (error {err:e})"
            )));
        }
        let p = u.rows();
        Ok(Self::new(CovarianceKind::LowRank(u), p))
    }

    fn new(kind: CovarianceKind, p: usize) -> Self {
        Self {
            kind,
            p,
            eigen: OnceLock::new(),
            sqrt: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn matrix(&self) -> Matrix {
        match &self.kind {
            CovarianceKind::Identity => Matrix::identity(self.p),
            CovarianceKind::Toeplitz(g) => {
                Matrix::from_fn(self.p, self.p, |i, j| toeplitz_entry(*g, i.abs_diff(j)))
            }
            CovarianceKind::LowRank(u) => u.matmul(&u.transpose()),
        }
    }

    pub fn covariance(&self) -> Covariance {
        match self.kind {
            CovarianceKind::Identity => Covariance::Identity(self.p),
            _ => Covariance::Dense(self.matrix()),
        }
    }

    /// `Σ v` without forming `Σ` for the structured kinds.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            CovarianceKind::Identity => v.to_vec(),
            CovarianceKind::Toeplitz(g) => (0..self.p)
                .map(|i| {
                    v.iter()
                        .enumerate()
                        .map(|(j, &vj)| toeplitz_entry(*g, i.abs_diff(j)) * vj)
                        .sum()
                })
                .collect(),
            CovarianceKind::LowRank(u) => u.matvec(&u.t_matvec(v)),
        }
    }

    /// `|Σ^{1/2} v|₂ = sqrt(vᵀ Σ v)`.
    pub fn root_norm(&self, v: &[f64]) -> f64 {
        dot(v, &self.apply(v)).max(0.0).sqrt()
    }

    pub fn eigen(&self) -> Result<&SymmetricEigen> {
        if let Some(e) = self.eigen.get() {
            return Ok(e);
        }
        let e = jacobi_eigen(&self.matrix())?;
        Ok(self.eigen.get_or_init(|| e))
    }

    /// Symmetric square root `Σ^{1/2}`.
    pub fn sqrt(&self) -> Result<&Matrix> {
        if let Some(s) = self.sqrt.get() {
            return Ok(s);
        }
        let s = match &self.kind {
            CovarianceKind::Identity => Matrix::identity(self.p),
            // U Uᵀ is a projection and hence its own square root.
            CovarianceKind::LowRank(_) => self.matrix(),
            CovarianceKind::Toeplitz(_) => self.eigen()?.reconstruct_with(|l| l.max(0.0).sqrt()),
        };
        Ok(self.sqrt.get_or_init(|| s))
    }

    /// Least-squares solution of `Σ^{1/2} d = target` through the
    /// pseudo-inverse; eigenvalues below `1e-10` are treated as null
    /// directions. Fails if `target` is not in the column space.
    pub fn solve_root(&self, target: &[f64]) -> Result<Vec<f64>> {
        if let CovarianceKind::Identity = self.kind {
            return Ok(target.to_vec());
        }
        let eig = self.eigen()?;
        let v = &eig.vectors;
        let coords = v.t_matvec(target);
        let scaled: Vec<f64> = coords
            .iter()
            .zip(&eig.values)
            .map(|(&c, &l)| if l > 1e-10 { c / l.sqrt() } else { 0.0 })
            .collect();
        let solution = v.matvec(&scaled);
        let back = self.sqrt()?.matvec(&solution);
        let residual = norm2(&back.iter().zip(target).map(|(a, b)| a - b).collect::<Vec<_>>());
        if residual > 1e-8 * norm2(target).max(1.0) {
            return Err(ScanError::OutsideColumnSpace { residual });
        }
        Ok(solution)
    }
}

fn toeplitz_entry(gamma: f64, lag: usize) -> f64 {
    // 0^0 = 1
    if lag == 0 {
        1.0
    } else {
        gamma.powi(lag as i32)
    }
}

/// `p x r` matrix with orthonormal columns, from Gram–Schmidt on a Gaussian
/// draw (redrawn in the probability-zero event of a collapse).
pub fn random_orthonormal<R: Rng + ?Sized>(p: usize, r: usize, rng: &mut R) -> Result<Matrix> {
    if r == 0 || r > p {
        return Err(ScanError::Config(format!("need 1 <= r <= p, got r = {r}, p = {p}")));
    }
    loop {
        let mut a = Matrix::from_fn(p, r, |_, _| rng.sample(StandardNormal));
        if orthonormalize_columns(&mut a) {
            return Ok(a);
        }
    }
}

/// Row-major `n x p` design drawn from `N(0, Σ)`.
pub fn sample_design<R: Rng + ?Sized>(builder: &CovarianceBuilder, n: usize, rng: &mut R) -> Vec<f64> {
    let p = builder.dim();
    match &builder.kind {
        CovarianceKind::Identity => (0..n * p).map(|_| rng.sample(StandardNormal)).collect(),
        CovarianceKind::Toeplitz(gamma) => {
            let innov = (1.0 - gamma * gamma).sqrt();
            let mut x = Vec::with_capacity(n * p);
            for _ in 0..n {
                let mut prev: f64 = rng.sample(StandardNormal);
                x.push(prev);
                for _ in 1..p {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = gamma * prev + innov * z;
                    x.push(prev);
                }
            }
            x
        }
        CovarianceKind::LowRank(u) => {
            let r = u.cols();
            let mut x = Vec::with_capacity(n * p);
            let mut latent = vec![0.0; r];
            for _ in 0..n {
                latent.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                x.extend(u.matvec(&latent));
            }
            x
        }
    }
}

/// Coefficient vectors `(β₀, β₁)` for the scenario.
pub fn build_deltas<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    builder: &CovarianceBuilder,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = spec.p;
    match spec.scenario {
        Scenario::M1 | Scenario::M1RankDeficient => {
            let support = sample_indices(rng, p, spec.s).into_vec();
            let mut values: Vec<f64> = support.iter().map(|_| rng.sample(StandardNormal)).collect();
            let nrm = norm2(&values);
            values.iter_mut().for_each(|v| *v /= nrm);
            let mut beta0 = vec![0.0; p];
            for (&j, &v) in support.iter().zip(&values) {
                beta0[j] = spec.rho * v;
            }
            let beta1 = beta0.iter().map(|v| -v).collect();
            Ok((beta0, beta1))
        }
        Scenario::M2 => {
            let mu_raw: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let support = sample_indices(rng, p, spec.s).into_vec();
            let mut pattern = vec![0.0; p];
            for &j in &support {
                pattern[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            let mu_scale = builder.root_norm(&mu_raw);
            let mu: Vec<f64> = if spec.nu == 0.0 || mu_scale == 0.0 {
                vec![0.0; p]
            } else {
                mu_raw.iter().map(|v| spec.nu * v / mu_scale).collect()
            };
            let delta0 = match spec.sparsity_mode {
                SparsityMode::Standard => pattern,
                SparsityMode::Inherent => builder.solve_root(&pattern)?,
            };
            let d_scale = builder.root_norm(&delta0);
            let delta: Vec<f64> = delta0.iter().map(|v| spec.rho * v / d_scale).collect();
            let beta0 = mu.iter().zip(&delta).map(|(m, d)| m - d / 2.0).collect();
            let beta1 = mu.iter().zip(&delta).map(|(m, d)| m + d / 2.0).collect();
            Ok((beta0, beta1))
        }
    }
}

/// Covariance builder for a scenario; for the rank-deficient variant the
/// orthonormal factor is drawn from the coefficient stream of `spec.seed`.
pub fn builder_for(spec: &ScenarioSpec) -> Result<CovarianceBuilder> {
    match spec.scenario {
        Scenario::M1 => Ok(CovarianceBuilder::identity(spec.p)),
        Scenario::M2 => CovarianceBuilder::toeplitz(spec.p, spec.gamma),
        Scenario::M1RankDeficient => {
            let mut rng = stream_rng(spec.seed, 3);
            CovarianceBuilder::low_rank(random_orthonormal(spec.p, spec.rank(), &mut rng)?)
        }
    }
}

/// Draws a dataset and its ground truth. Deterministic in `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, PopulationModel)> {
    spec.validate()?;
    let builder = builder_for(spec)?;
    generate_with(spec, &builder)
}

/// As [`generate`] but reusing a covariance builder (and its cached
/// eigendecomposition) across repetitions.
pub fn generate_with(spec: &ScenarioSpec, builder: &CovarianceBuilder) -> Result<(Dataset, PopulationModel)> {
    spec.validate()?;
    if builder.dim() != spec.p {
        return Err(ScanError::Shape(format!(
            "covariance has dimension {}, scenario has p = {}",
            builder.dim(),
            spec.p
        )));
    }
    let (n, p) = (spec.n, spec.p);
    let (beta0, beta1) = build_deltas(spec, builder, &mut stream_rng(spec.seed, 0))?;
    let x = sample_design(builder, n, &mut stream_rng(spec.seed, 1));
    let mut noise = stream_rng(spec.seed, 2);
    let theta = if beta0 == beta1 { n } else { spec.theta() };
    let y: Vec<f64> = (0..n)
        .map(|t| {
            let beta = if t < theta { &beta0 } else { &beta1 };
            let eps: f64 = noise.sample(StandardNormal);
            dot(&x[t * p..(t + 1) * p], beta) + spec.sigma * eps
        })
        .collect();
    let ds = Dataset::new(x, y, p)?;
    let model = PopulationModel::new(builder.covariance(), beta0, beta1, spec.sigma, theta, n)?;
    Ok((ds, model))
}

/// Draws a fresh dataset from a fixed population model (coefficients held
/// constant, design and noise redrawn from `seed`).
pub fn sample_from_model(builder: &CovarianceBuilder, model: &PopulationModel, seed: u64) -> Result<Dataset> {
    let (n, p) = (model.n, builder.dim());
    let x = sample_design(builder, n, &mut stream_rng(seed, 1));
    let mut noise = stream_rng(seed, 2);
    let y: Vec<f64> = (0..n)
        .map(|t| {
            let beta = if t < model.theta { &model.beta0 } else { &model.beta1 };
            let eps: f64 = noise.sample(StandardNormal);
            dot(&x[t * p..(t + 1) * p], beta) + model.sigma * eps
        })
        .collect();
    Dataset::new(x, y, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cov(x: &[f64], n: usize, p: usize) -> Matrix {
        Matrix::from_fn(p, p, |i, j| (0..n).map(|t| x[t * p + i] * x[t * p + j]).sum::<f64>() / n as f64)
    }

    #[test]
    fn gamma_zero_is_iid() {
        let b = CovarianceBuilder::toeplitz(4, 0.0).unwrap();
        let a = sample_design(&b, 50, &mut stream_rng(3, 1));
        let c = sample_design(&CovarianceBuilder::identity(4), 50, &mut stream_rng(3, 1));
        assert_eq!(a, c);
        assert!(b.matrix().max_abs_diff(&Matrix::identity(4)) == 0.0);
    }

    #[test]
    fn toeplitz_adjacent_correlation() {
        let b = CovarianceBuilder::toeplitz(2, 0.6).unwrap();
        let n = 20_000;
        let x = sample_design(&b, n, &mut stream_rng(11, 1));
        let c = sample_cov(&x, n, 2);
        let corr = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
        assert!((corr - 0.6).abs() < 0.02, "{corr}");
    }

    #[test]
    fn ar1_sample_covariance() {
        let b = CovarianceBuilder::toeplitz(3, 0.6).unwrap();
        let n = 100_000;
        let x = sample_design(&b, n, &mut stream_rng(5, 1));
        assert!(sample_cov(&x, n, 3).max_abs_diff(&b.matrix()) < 0.02);
    }

    #[test]
    fn rejects_unit_gamma() {
        assert!(CovarianceBuilder::toeplitz(3, 1.0).is_err());
        assert!(CovarianceBuilder::toeplitz(3, -1.2).is_err());
    }

    #[test]
    fn orthonormal_factors() {
        let mut rng = stream_rng(1, 0);
        let u = random_orthonormal(9, 1, &mut rng).unwrap();
        assert!((norm2(&u.column(0)) - 1.0).abs() < 1e-12);
        let u = random_orthonormal(6, 6, &mut rng).unwrap();
        let eig = jacobi_eigen(&u.matmul(&u.transpose())).unwrap();
        assert!(eig.values.iter().all(|l| (l - 1.0).abs() < 1e-8));
        let u = random_orthonormal(10, 4, &mut rng).unwrap();
        let eig = jacobi_eigen(&u.matmul(&u.transpose())).unwrap();
        let ones = eig.values.iter().filter(|l| (*l - 1.0).abs() < 1e-8).count();
        let zeros = eig.values.iter().filter(|l| l.abs() < 1e-8).count();
        assert_eq!((ones, zeros), (4, 6));
        assert!(random_orthonormal(3, 4, &mut rng).is_err());
    }

    #[test]
    fn full_rank_low_rank_design_is_isotropic() {
        let mut rng = stream_rng(2, 0);
        let b = CovarianceBuilder::low_rank(random_orthonormal(3, 3, &mut rng).unwrap()).unwrap();
        let n = 50_000;
        let x = sample_design(&b, n, &mut stream_rng(2, 1));
        assert!(sample_cov(&x, n, 3).max_abs_diff(&Matrix::identity(3)) < 0.03);
    }

    #[test]
    fn m1_full_support_norm() {
        let spec = ScenarioSpec::m1(40, 30, 30, 2.0, 9);
        let (_, model) = generate(&spec).unwrap();
        assert!((norm2(&model.beta0) - 2.0).abs() < 1e-12);
        assert_eq!(model.beta0.iter().zip(&model.beta1).filter(|(a, b)| *a != &-**b).count(), 0);
        assert_eq!(model.theta, 10);
    }

    #[test]
    fn m1_sparse_support() {
        let spec = ScenarioSpec::m1(40, 30, 3, 1.0, 9);
        let (_, model) = generate(&spec).unwrap();
        assert_eq!(model.beta0.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn m2_defaults() {
        let spec = ScenarioSpec::m2(20, 4, 2.0, 0.6, 0.5, SparsityMode::Standard, 1);
        assert_eq!((spec.n, spec.theta()), (300, 75));
        let (ds, model) = generate(&spec).unwrap();
        assert_eq!((ds.n(), ds.p(), model.theta), (300, 20, 75));
    }

    #[test]
    fn m2_sparsity_modes_coincide_for_identity() {
        for seed in 0..5 {
            let a = ScenarioSpec::m2(25, 5, 4.0, 0.0, 1.0, SparsityMode::Standard, seed);
            let b = ScenarioSpec { sparsity_mode: SparsityMode::Inherent, ..a.clone() };
            assert_eq!(generate(&a).unwrap(), generate(&b).unwrap());
        }
    }

    #[test]
    fn m2_inherent_sparsity_round_trip() {
        let (p, s, rho) = (30, 4, 2.0);
        let spec = ScenarioSpec::m2(p, s, rho, 0.6, 0.0, SparsityMode::Inherent, 3);
        let builder = builder_for(&spec).unwrap();
        let (_, model) = generate_with(&spec, &builder).unwrap();
        let delta = model.delta();
        let root = builder.sqrt().unwrap().matvec(&delta);
        assert!((norm2(&root) - rho).abs() < 1e-8);
        let nonzero: Vec<f64> = root.iter().copied().filter(|v| v.abs() > 1e-8).collect();
        assert_eq!(nonzero.len(), s);
        let level = rho / (s as f64).sqrt();
        assert!(nonzero.iter().all(|v| (v.abs() - level).abs() < 1e-8));
    }

    #[test]
    fn m2_normalisations() {
        let spec = ScenarioSpec::m2(15, 15, 4.0, -0.6, 1.0, SparsityMode::Standard, 8);
        let builder = builder_for(&spec).unwrap();
        let (_, model) = generate_with(&spec, &builder).unwrap();
        assert!((builder.root_norm(&model.delta()) - 4.0).abs() < 1e-10);
        let mu: Vec<f64> = model.beta0.iter().zip(&model.beta1).map(|(a, b)| 0.5 * (a + b)).collect();
        assert!((builder.root_norm(&mu) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inherent_mode_rejects_target_outside_column_space() {
        let mut rng = stream_rng(4, 0);
        let b = CovarianceBuilder::low_rank(random_orthonormal(6, 2, &mut rng).unwrap()).unwrap();
        let mut target = vec![0.0; 6];
        target[0] = 1.0;
        assert!(matches!(b.solve_root(&target), Err(ScanError::OutsideColumnSpace { .. })));
    }

    #[test]
    fn noiseless_no_change_is_exact() {
        let spec = ScenarioSpec { sigma: 0.0, rho: 0.0, ..ScenarioSpec::m1(30, 5, 2, 0.0, 4) };
        let (ds, model) = generate(&spec).unwrap();
        assert_eq!(model.theta, 30);
        for t in 0..30 {
            assert_eq!(ds.y()[t], dot(ds.row(t), &model.beta0));
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        for spec in [
            ScenarioSpec::m1(50, 20, 3, 2.0, 77),
            ScenarioSpec { scenario: Scenario::M1RankDeficient, r: Some(5), ..ScenarioSpec::m1(50, 20, 3, 2.0, 77) },
            ScenarioSpec::m2(12, 3, 2.0, 0.6, 0.5, SparsityMode::Inherent, 77),
        ] {
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.0.x(), b.0.x());
            assert_eq!(a.0.y(), b.0.y());
            let other = generate(&ScenarioSpec { seed: 78, ..spec.clone() }).unwrap();
            assert_ne!(a.0.y(), other.0.y());
        }
    }

    #[test]
    fn psi_matches_monte_carlo_response_spread() {
        let spec = ScenarioSpec::m2(6, 3, 2.0, 0.6, 1.0, SparsityMode::Standard, 12);
        let builder = builder_for(&spec).unwrap();
        let (_, model) = generate_with(&spec, &builder).unwrap();
        let n = 200_000;
        let x = sample_design(&builder, n, &mut stream_rng(99, 1));
        let sd = |beta: &[f64]| {
            let v: f64 = (0..n).map(|t| dot(&x[t * 6..(t + 1) * 6], beta).powi(2)).sum::<f64>() / n as f64;
            v.sqrt()
        };
        let mc = sd(&model.beta0).max(sd(&model.beta1)).max(model.sigma);
        assert!((mc - model.psi()).abs() <= 0.03 * model.psi(), "{mc} vs {}", model.psi());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ScenarioSpec {
            scenario: Scenario::M1RankDeficient,
            r: Some(10),
            ..ScenarioSpec::m1(600, 40, 1, 4.0, 5)
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("M1_RANK_DEFICIENT"));
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let minimal: ScenarioSpec =
            serde_json::from_str(r#"{"scenario":"M2","p":10,"rho":2,"s":3,"gamma":0.6,"sparsity_mode":"INHERENT"}"#).unwrap();
        assert_eq!((minimal.n, minimal.theta(), minimal.sigma), (300, 75, 1.0));
    }
}
