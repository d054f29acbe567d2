//! Directional decomposition of the generator.
//!
//! A decomposition supplies integer directions `ℓ_k`, `k = ±1..±d1`, with
//! `ℓ_{-k} = -ℓ_k`, and nonnegative weights such that
//!
//! ```text
//! Σ_k a_k ℓ_k ℓ_kᵀ = ½ σσᵀ,    Σ_k b_k ℓ_k = β,    a_k = a_{-k}.
//! ```
//!
//! Only the `d1` "positive" directions are stored. `a` is stored once per
//! direction pair, so the symmetry `a_k = a_{-k}` holds exactly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{LogModel, SamplePoint};

/// Weights of every direction at one point `(t, x)`.
///
/// `a[p]` is the weight of each of `±ℓ_p` (so the pair contributes
/// `2 a[p] ℓ_p ℓ_pᵀ`); `b_pos[p]` and `b_neg[p]` are the drift weights of
/// `+ℓ_p` and `-ℓ_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirCoeffs {
    pub a: Vec<f64>,
    pub b_pos: Vec<f64>,
    pub b_neg: Vec<f64>,
}

impl DirCoeffs {
    pub fn zeros(d1: usize) -> Self {
        Self { a: vec![0.0; d1], b_pos: vec![0.0; d1], b_neg: vec![0.0; d1] }
    }

    /// Drift weight of the signed direction `k`.
    pub fn b(&self, k: i32) -> f64 {
        let p = k.unsigned_abs() as usize - 1;
        if k > 0 {
            self.b_pos[p]
        } else {
            self.b_neg[p]
        }
    }
}

pub type CoeffFn = Arc<dyn Fn(f64, &[f64]) -> DirCoeffs + Send + Sync>;

#[derive(Clone)]
pub struct StencilDecomposition {
    dim: usize,
    directions: Vec<Vec<i64>>,
    coeffs: CoeffFn,
}

impl fmt::Debug for StencilDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StencilDecomposition")
            .field("dim", &self.dim)
            .field("directions", &self.directions)
            .finish_non_exhaustive()
    }
}

impl StencilDecomposition {
    /// `directions` are the positive directions `ℓ_1..ℓ_{d1}`.
    pub fn new<F>(dim: usize, directions: Vec<Vec<i64>>, coeffs: F) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> DirCoeffs + Send + Sync + 'static,
    {
        if directions.is_empty() {
            return Err(invalid("directions", "at least one direction is required"));
        }
        for l in &directions {
            if l.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: l.len() });
            }
            if l.iter().all(|c| *c == 0) {
                return Err(invalid("directions", "zero direction"));
            }
        }
        Ok(Self { dim, directions, coeffs: Arc::new(coeffs) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d1(&self) -> usize {
        self.directions.len()
    }

    /// `ℓ_k` for `k ∈ {±1, …, ±d1}`.
    pub fn direction(&self, k: i32) -> Vec<i64> {
        let l = &self.directions[k.unsigned_abs() as usize - 1];
        if k > 0 {
            l.clone()
        } else {
            l.iter().map(|c| -c).collect()
        }
    }

    pub fn positive_directions(&self) -> &[Vec<i64>] {
        &self.directions
    }

    /// All `2·d1` signed indices in the order `+1, -1, +2, -2, …`.
    pub fn signed_indices(&self) -> impl Iterator<Item = i32> {
        (1..=self.d1() as i32).flat_map(|k| [k, -k])
    }

    /// Largest Euclidean length among the directions.
    pub fn max_len(&self) -> f64 {
        self.directions.iter().map(|l| (l.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt()).fold(0.0, f64::max)
    }

    pub fn coeffs(&self, t: f64, x: &[f64]) -> DirCoeffs {
        (self.coeffs)(t, x)
    }

    pub fn a(&self, t: f64, x: &[f64], k: i32) -> f64 {
        self.coeffs(t, x).a[k.unsigned_abs() as usize - 1]
    }

    pub fn b(&self, t: f64, x: &[f64], k: i32) -> f64 {
        self.coeffs(t, x).b(k)
    }

    /// `Σ_k a_k ℓ_k ℓ_kᵀ` and `Σ_k b_k ℓ_k` at `(t, x)`.
    pub fn reconstruct(&self, t: f64, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let c = self.coeffs(t, x);
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut v = DVector::zeros(self.dim);
        for (p, l) in self.directions.iter().enumerate() {
            let lv = DVector::from_iterator(self.dim, l.iter().map(|c| *c as f64));
            m += 2.0 * c.a[p] * &lv * lv.transpose();
            v += (c.b_pos[p] - c.b_neg[p]) * lv;
        }
        (m, v)
    }
}

/// The one-asset decomposition: `ℓ_{±1} = ±1`, `a = σ²/4` on each side,
/// drift split into positive and negative parts.
pub fn build_1d(model: &LogModel) -> Result<StencilDecomposition> {
    if model.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim() });
    }
    let m = model.clone();
    StencilDecomposition::new(1, vec![vec![1]], move |t, x| {
        let s = m.sigma(t, x)[(0, 0)];
        let beta = m.beta(t, x)[0];
        DirCoeffs { a: vec![0.25 * s * s], b_pos: vec![beta.max(0.0)], b_neg: vec![(-beta).max(0.0)] }
    })
}

/// Positive directions used for diagonally dominant diffusion: the axes,
/// then `e_i + e_j` and `e_i - e_j` for `i < j`.
pub fn diag_dominant_directions(dim: usize) -> Vec<Vec<i64>> {
    let mut dirs = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let mut l = vec![0; dim];
        l[i] = 1;
        dirs.push(l);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut plus = vec![0; dim];
            plus[i] = 1;
            plus[j] = 1;
            let mut minus = vec![0; dim];
            minus[i] = 1;
            minus[j] = -1;
            dirs.push(plus);
            dirs.push(minus);
        }
    }
    dirs
}

fn dominance_margin(a: &DMatrix<f64>, i: usize) -> f64 {
    let off: f64 = (0..a.ncols()).filter(|j| *j != i).map(|j| a[(i, j)].abs()).sum();
    a[(i, i)] - off
}

fn dominance_slack(a: &DMatrix<f64>) -> f64 {
    1e-14 * a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `A_ii >= Σ_{j≠i} |A_ij|` for every row, up to rounding.
pub fn is_diag_dominant(a: &DMatrix<f64>) -> bool {
    let slack = dominance_slack(a);
    (0..a.nrows()).all(|i| dominance_margin(a, i) >= -slack)
}

/// Axis-plus-diagonals decomposition for diffusion matrices that are
/// diagonally dominant at every sample point.
pub fn build_diag_dominant(model: &LogModel, samples: &[SamplePoint]) -> Result<StencilDecomposition> {
    let dim = model.dim();
    for (t, x) in samples {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
        }
        if !is_diag_dominant(&model.diffusion(*t, x)) {
            return Err(Error::DiagonalDominanceViolated { t: *t, x: x.clone() });
        }
    }
    let m = model.clone();
    let d1 = dim * dim;
    StencilDecomposition::new(dim, diag_dominant_directions(dim), move |t, x| {
        let a = m.diffusion(t, x);
        let beta = m.beta(t, x);
        let slack = dominance_slack(&a);
        let mut c = DirCoeffs::zeros(d1);
        for i in 0..dim {
            let margin = dominance_margin(&a, i);
            // Rounding-level negatives are clamped; genuine violations are left
            // for assembly to reject.
            c.a[i] = 0.5 * if margin < 0.0 && margin >= -slack { 0.0 } else { margin };
            c.b_pos[i] = beta[i].max(0.0);
            c.b_neg[i] = (-beta[i]).max(0.0);
        }
        let mut p = dim;
        for i in 0..dim {
            for j in i + 1..dim {
                let aij = a[(i, j)];
                c.a[p] = 0.5 * aij.max(0.0);
                c.a[p + 1] = 0.5 * (-aij).max(0.0);
                p += 2;
            }
        }
        c
    })
}

/// Worst reconstruction residuals over a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub samples: usize,
    /// max over samples of `|Σ a_k ℓ_k ℓ_kᵀ − ½σσᵀ|_F`.
    pub max_matrix_residual: f64,
    /// max over samples of `|Σ b_k ℓ_k − β|`.
    pub max_drift_residual: f64,
    pub min_a: f64,
    pub min_b: f64,
}

impl ReconstructionReport {
    pub fn max_residual(&self) -> f64 {
        self.max_matrix_residual.max(self.max_drift_residual)
    }
}

pub fn validate_decomposition(
    dec: &StencilDecomposition,
    model: &LogModel,
    samples: &[SamplePoint],
) -> ReconstructionReport {
    let mut report = ReconstructionReport {
        samples: samples.len(),
        min_a: f64::INFINITY,
        min_b: f64::INFINITY,
        ..Default::default()
    };
    for (t, x) in samples {
        let (m, v) = dec.reconstruct(*t, x);
        let mat_res = (m - model.diffusion(*t, x)).norm();
        let drift_res = (v - model.beta(*t, x)).norm();
        report.max_matrix_residual = report.max_matrix_residual.max(mat_res);
        report.max_drift_residual = report.max_drift_residual.max(drift_res);
        let c = dec.coeffs(*t, x);
        report.min_a = c.a.iter().copied().fold(report.min_a, f64::min);
        report.min_b = c.b_pos.iter().chain(&c.b_neg).copied().fold(report.min_b, f64::min);
    }
    report
}

/// A smooth test function with exact derivatives.
pub trait SmoothFn {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    /// `D_ℓ η(x)`.
    fn directional(&self, x: &[f64], l: &[f64]) -> f64 {
        self.gradient(x).iter().zip(l).map(|(g, c)| g * c).sum()
    }

    /// `D²_ℓ η(x)`.
    fn second_directional(&self, x: &[f64], l: &[f64]) -> f64 {
        let lv = DVector::from_column_slice(l);
        (lv.transpose() * self.hessian(x) * &lv)[(0, 0)]
    }
}

/// `Σ_m c_m Π_i x_i^{p_{m,i}}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if terms.iter().any(|(_, p)| p.len() != dim) {
            return Err(invalid("terms", "every monomial needs one exponent per coordinate"));
        }
        Ok(Self { dim, terms })
    }

    /// Single-variable polynomial `Σ c_n xⁿ` from coefficients in increasing degree.
    pub fn univariate(coeffs: &[f64]) -> Self {
        Self { dim: 1, terms: coeffs.iter().enumerate().map(|(n, c)| (*c, vec![n as u32])).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(_, p)| p.iter().sum::<u32>()).max().unwrap_or(0)
    }

    fn monomial(x: &[f64], powers: &[u32], skip: &[usize]) -> f64 {
        // Derivative helper: `skip` lists differentiated coordinates (with
        // multiplicity); each lowers that exponent by one and multiplies by it.
        let mut p: Vec<i64> = powers.iter().map(|v| *v as i64).collect();
        let mut factor = 1.0;
        for &i in skip {
            if p[i] == 0 {
                return 0.0;
            }
            factor *= p[i] as f64;
            p[i] -= 1;
        }
        factor * x.iter().zip(&p).map(|(v, e)| v.powi(*e as i32)).product::<f64>()
    }
}

impl SmoothFn for Polynomial {
    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, p)| c * Self::monomial(x, p, &[])).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|i| self.terms.iter().map(|(c, p)| c * Self::monomial(x, p, &[i])).sum()),
        )
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.terms.iter().map(|(c, p)| c * Self::monomial(x, p, &[i, j])).sum()
        })
    }
}

/// Continuous generator in directional form:
/// `Σ_k (a_k D²_{ℓ_k} η + b_k D_{ℓ_k} η) − ρ η`.
pub fn apply_continuous_l<F: SmoothFn + ?Sized>(
    dec: &StencilDecomposition,
    model: &LogModel,
    eta: &F,
    t: f64,
    x: &[f64],
) -> f64 {
    let c = dec.coeffs(t, x);
    let mut acc = 0.0;
    for k in dec.signed_indices() {
        let l: Vec<f64> = dec.direction(k).iter().map(|v| *v as f64).collect();
        let p = k.unsigned_abs() as usize - 1;
        acc += c.a[p] * eta.second_directional(x, &l) + c.b(k) * eta.directional(x, &l);
    }
    acc - model.rho(t, x) * eta.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::random_dominant_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_1d(sigma: f64, beta: f64, rho: f64) -> LogModel {
        LogModel::constant(DMatrix::from_element(1, 1, sigma), DVector::from_element(1, beta), rho)
    }

    fn with_diffusion(a: DMatrix<f64>) -> LogModel {
        // σ = chol(2A) gives ½σσᵀ = A.
        let sigma = (2.0 * &a).cholesky().unwrap().l();
        let dim = a.nrows();
        LogModel::constant(sigma, DVector::zeros(dim), 0.0)
    }

    #[test]
    fn one_dimensional_examples() {
        let d = build_1d(&const_1d(0.2, 0.03, 0.0)).unwrap();
        assert!((d.a(0.0, &[0.0], 1) - 0.01).abs() < 1e-17);
        assert_eq!(d.a(0.0, &[0.0], 1), d.a(0.0, &[0.0], -1));
        assert!((d.b(0.0, &[0.0], 1) - 0.03).abs() < 1e-17);
        assert_eq!(d.b(0.0, &[0.0], -1), 0.0);

        let d = build_1d(&const_1d(0.0, -0.5, 0.0)).unwrap();
        assert_eq!(d.a(0.0, &[0.0], 1), 0.0);
        assert_eq!(d.b(0.0, &[0.0], 1), 0.0);
        assert_eq!(d.b(0.0, &[0.0], -1), 0.5);

        let d = build_1d(&const_1d(0.2, 0.0, 0.0)).unwrap();
        assert_eq!(d.b(0.0, &[0.0], 1), 0.0);
        assert_eq!(d.b(0.0, &[0.0], -1), 0.0);

        assert_eq!(d.direction(1), vec![1]);
        assert_eq!(d.direction(-1), vec![-1]);
    }

    #[test]
    fn build_1d_rejects_multi_asset() {
        let m = LogModel::constant(DMatrix::identity(2, 2), DVector::zeros(2), 0.0);
        assert!(matches!(build_1d(&m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn diag_dominant_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.02]);
        let m = with_diffusion(a);
        let pts = vec![(0.0, vec![0.0, 0.0])];
        let d = build_diag_dominant(&m, &pts).unwrap();
        let c = d.coeffs(0.0, &[0.0, 0.0]);
        // totals per ± pair are 2·a
        assert!((2.0 * c.a[0] - 0.015).abs() < 1e-15);
        assert!((2.0 * c.a[1] - 0.015).abs() < 1e-15);
        assert!((2.0 * c.a[2] - 0.005).abs() < 1e-15);
        assert_eq!(c.a[3], 0.0);
        assert_eq!(d.direction(3), vec![1, 1]);
        assert_eq!(d.direction(4), vec![1, -1]);
        assert!(validate_decomposition(&d, &m, &pts).max_residual() <= 1e-12);

        let m = with_diffusion(DMatrix::from_row_slice(2, 2, &[0.02, 0.0, 0.0, 0.045]));
        let c = build_diag_dominant(&m, &pts).unwrap().coeffs(0.0, &[0.0, 0.0]);
        assert!((2.0 * c.a[0] - 0.02).abs() < 1e-15);
        assert!((2.0 * c.a[1] - 0.045).abs() < 1e-15);
        assert_eq!(&c.a[2..], &[0.0, 0.0]);

        // the literal example is indefinite, so no σ produces it; check the
        // dominance test on it directly and reject a PSD non-dominant model
        let lit = DMatrix::from_row_slice(2, 2, &[0.01, 0.02, 0.02, 0.01]);
        assert!(!is_diag_dominant(&lit));
        let m = with_diffusion(DMatrix::from_row_slice(2, 2, &[0.01, 0.02, 0.02, 0.05]));
        assert!(matches!(build_diag_dominant(&m, &pts), Err(Error::DiagonalDominanceViolated { .. })));
    }

    #[test]
    fn reconstruction_residual_reports_missing_diffusion() {
        let m = const_1d(0.2, 0.0, 0.0);
        let zero = StencilDecomposition::new(1, vec![vec![1]], |_, _| DirCoeffs::zeros(1)).unwrap();
        let r = validate_decomposition(&zero, &m, &[(0.0, vec![0.0])]);
        assert!((r.max_matrix_residual - 0.02).abs() < 1e-15);
        let own = build_1d(&m).unwrap();
        assert!(validate_decomposition(&own, &m, &[(0.0, vec![0.0])]).max_residual() <= 1e-14);
    }

    fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<SamplePoint> {
        (0..n).map(|_| (rng.random_range(0.0..1.0), (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())).collect()
    }

    #[test]
    fn reconstruction_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let m = random_dominant_model(&mut rng, dim);
            let pts = random_points(&mut rng, dim, 1000);
            let d = build_diag_dominant(&m, &pts).unwrap();
            let r = validate_decomposition(&d, &m, &pts);
            assert!(r.max_residual() <= 1e-12, "{r:?}");
            assert!(r.min_a >= 0.0 && r.min_b >= 0.0);
            if dim == 1 {
                let d = build_1d(&m).unwrap();
                assert!(validate_decomposition(&d, &m, &pts).max_residual() <= 1e-12);
            }
        }
    }

    #[test]
    fn continuous_generator_examples() {
        let x2 = Polynomial::univariate(&[0.0, 0.0, 1.0]);
        let m = const_1d(0.2, 0.0, 0.0);
        let d = build_1d(&m).unwrap();
        assert!((apply_continuous_l(&d, &m, &x2, 0.0, &[1.7]) - 0.04).abs() < 1e-15);

        let one = Polynomial::univariate(&[1.0]);
        let m = const_1d(0.2, 0.0, 0.05);
        let d = build_1d(&m).unwrap();
        assert!((apply_continuous_l(&d, &m, &one, 0.0, &[0.3]) + 0.05).abs() < 1e-15);

        let x = Polynomial::univariate(&[0.0, 1.0]);
        let m = const_1d(0.0, 0.03, 0.0);
        let d = build_1d(&m).unwrap();
        assert!((apply_continuous_l(&d, &m, &x, 0.0, &[-2.0]) - 0.03).abs() < 1e-15);
    }

    /// `Σ ½(σσᵀ)ij η_ij + Σ βi η_i − ρη`, written without the decomposition.
    fn direct_generator(m: &LogModel, eta: &Polynomial, t: f64, x: &[f64]) -> f64 {
        let a = m.diffusion(t, x);
        let h = eta.hessian(x);
        let g = eta.gradient(x);
        let b = m.beta(t, x);
        let second: f64 = a.iter().zip(h.iter()).map(|(p, q)| p * q).sum();
        second + b.dot(&g) - m.rho(t, x) * eta.value(x)
    }

    fn random_poly(rng: &mut ChaCha8Rng, dim: usize, degree: u32) -> Polynomial {
        let mut terms = Vec::new();
        for _ in 0..8 {
            let mut p = vec![0u32; dim];
            let mut left = rng.random_range(0..=degree);
            while left > 0 {
                p[rng.random_range(0..dim)] += 1;
                left -= 1;
            }
            terms.push((rng.random_range(-1.0..1.0), p));
        }
        Polynomial::new(dim, terms).unwrap()
    }

    #[test]
    fn directional_form_matches_direct_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100 {
            let dim = 1 + case % 3;
            let m = random_dominant_model(&mut rng, dim);
            let pts = random_points(&mut rng, dim, 5);
            let d = build_diag_dominant(&m, &pts).unwrap();
            let eta = random_poly(&mut rng, dim, 4);
            for (t, x) in &pts {
                let lhs = apply_continuous_l(&d, &m, &eta, *t, x);
                let rhs = direct_generator(&m, &eta, *t, x);
                assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }
}
