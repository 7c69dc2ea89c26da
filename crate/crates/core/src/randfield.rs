//! Anisotropic lognormal random fields on the slope grid.
//!
//! The ln-strength field is stationary Gaussian with the exponential Markovian
//! covariance `σ² exp(−|lx|/δ_h − |ly|/δ_v)`. The pairwise covariance matrix A
//! over cell centers is factored once per parameter set as `A = L·Lᵀ`; each
//! realization is then `exp(L·ε + μ_ln)` for a fresh standard-normal vector ε
//! drawn in row-major cell order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Fixed cell ordering: row-major from the top-left cell. Feature index i
/// always maps to the same cell for the life of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<F> {
    pub cell_size: F,
    /// Cell-center coordinates (x, y), row-major from top-left.
    pub cell_centers: Vec<(F, F)>,
}

impl<F: Scalar> GridSpec<F> {
    pub fn new(cell_size: F, cell_centers: Vec<(F, F)>) -> Result<Self> {
        if cell_size <= F::zero() {
            return Err(Error::domain("cell_size must be positive"));
        }
        Ok(GridSpec {
            cell_size,
            cell_centers,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cell_centers.len()
    }
}

/// Statistical parameters of the strength field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats<F> {
    /// Mean undrained shear strength (kPa).
    pub mu_cu: F,
    /// Coefficient of variation (dimensionless).
    pub cov: F,
    /// Horizontal correlation distance (m).
    pub delta_h: F,
    /// Vertical correlation distance (m).
    pub delta_v: F,
}

impl<F: Scalar> FieldStats<F> {
    pub fn new(mu_cu: F, cov: F, delta_h: F, delta_v: F) -> Result<Self> {
        if mu_cu <= F::zero() {
            return Err(Error::domain("mu_cu must be positive"));
        }
        if cov < F::zero() {
            return Err(Error::domain("cov must be non-negative"));
        }
        if delta_h <= F::zero() || delta_v <= F::zero() {
            return Err(Error::domain("correlation distances must be positive"));
        }
        Ok(FieldStats {
            mu_cu,
            cov,
            delta_h,
            delta_v,
        })
    }

    /// Anisotropy ratio ξ = δ_h/δ_v.
    pub fn xi(&self) -> F {
        self.delta_h / self.delta_v
    }

    /// Standard deviation of the strength itself, σ = COV·μ.
    pub fn sigma_cu(&self) -> F {
        self.cov * self.mu_cu
    }
}

/// Mean and standard deviation of ln C_u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalMoments<F> {
    pub mu_ln: F,
    pub sigma_ln: F,
}

/// Moments of ln C_u from the arithmetic mean and coefficient of variation:
/// `σ_ln = sqrt(ln(1+cov²))`, `μ_ln = ln(μ) − σ_ln²/2`.
pub fn lognormal_moments<F: Scalar>(mu_cu: F, cov: F) -> Result<LognormalMoments<F>> {
    if mu_cu <= F::zero() {
        return Err(Error::domain("mu_cu must be positive"));
    }
    if cov < F::zero() {
        return Err(Error::domain("cov must be non-negative"));
    }
    let two = F::from_count(2);
    let sigma_ln = (F::one() + cov * cov).ln().sqrt();
    let mu_ln = mu_cu.ln() - sigma_ln * sigma_ln / two;
    Ok(LognormalMoments { mu_ln, sigma_ln })
}

/// Exponential Markovian covariance of the ln-field at lag (lx, ly).
pub fn covariance<F: Scalar>(lx: F, ly: F, sigma_ln: F, delta_h: F, delta_v: F) -> F {
    sigma_ln * sigma_ln * (-(lx.abs() / delta_h) - ly.abs() / delta_v).exp()
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: Scalar> SquareMatrix<F> {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![F::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[F]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                if self[(i, j)] != self[(j, i)] {
                    return false;
                }
            }
        }
        true
    }

    /// max |self·selfᵀ − (a + shift·I)|, used to check a Cholesky factor.
    pub fn reconstruction_residual(&self, a: &SquareMatrix<F>, shift: F) -> F {
        let n = self.n;
        let mut worst = F::zero();
        for i in 0..n {
            for j in 0..=i {
                let mut s = F::zero();
                // lower triangular: only k <= min(i, j) contributes
                for k in 0..=j.min(i) {
                    s = s + self[(i, k)] * self[(j, k)];
                }
                let mut target = a[(i, j)];
                if i == j {
                    target = target + shift;
                }
                let d = (s - target).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

impl<F> std::ops::Index<(usize, usize)> for SquareMatrix<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.n + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for SquareMatrix<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.n + j]
    }
}

/// Pairwise ln-field covariance matrix over the grid's cell centers.
pub fn build_covariance<F: Scalar>(
    grid: &GridSpec<F>,
    moments: &LognormalMoments<F>,
    stats: &FieldStats<F>,
) -> SquareMatrix<F> {
    let n = grid.n_cells();
    let mut a = SquareMatrix::zeros(n);
    for i in 0..n {
        let (xi, yi) = grid.cell_centers[i];
        for j in 0..=i {
            let (xj, yj) = grid.cell_centers[j];
            let v = covariance(
                xi - xj,
                yi - yj,
                moments.sigma_ln,
                stats.delta_h,
                stats.delta_v,
            );
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Covariance matrix together with its lower-triangular Cholesky factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceFactor<F> {
    pub matrix_a: SquareMatrix<F>,
    pub factor_l: SquareMatrix<F>,
    /// Diagonal regularization added before factoring (0 if none).
    pub jitter_applied: F,
}

// Jitter escalation ladder, relative to the largest diagonal entry.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-11, 1e-10, 1e-8];

/// Cholesky factorization with escalating diagonal jitter.
///
/// Exponential covariance matrices become numerically semidefinite on large
/// grids at high anisotropy; a non-positive pivot triggers a retry with
/// `ε·max(diag)` added to the diagonal, ε escalating 1e-12 → 1e-8.
pub fn cholesky_factor<F: Scalar>(a: &SquareMatrix<F>) -> Result<CovarianceFactor<F>> {
    let n = a.n();
    debug_assert!(a.is_symmetric());
    let scale = (0..n)
        .map(|i| a[(i, i)])
        .fold(F::zero(), |acc, v| acc.max(v));
    if scale == F::zero() {
        // Degenerate zero-variance field: L = 0 reconstructs A exactly.
        return Ok(CovarianceFactor {
            matrix_a: a.clone(),
            factor_l: SquareMatrix::zeros(n),
            jitter_applied: F::zero(),
        });
    }
    let mut last = (0usize, F::zero(), F::zero());
    for eps in JITTER_LADDER {
        let jitter = F::from_f64(eps).unwrap() * scale;
        match try_cholesky(a, jitter) {
            Ok(factor_l) => {
                return Ok(CovarianceFactor {
                    matrix_a: a.clone(),
                    factor_l,
                    jitter_applied: jitter,
                })
            }
            Err((pivot, value)) => last = (pivot, value, jitter),
        }
    }
    Err(Error::Factorization {
        pivot: last.0,
        value: last.1.to_f64().unwrap_or(f64::NAN),
        jitter: last.2.to_f64().unwrap_or(f64::NAN),
    })
}

fn try_cholesky<F: Scalar>(
    a: &SquareMatrix<F>,
    jitter: F,
) -> std::result::Result<SquareMatrix<F>, (usize, F)> {
    let n = a.n();
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            if i == j {
                s = s + jitter;
            }
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= F::zero() {
                    return Err((i, s));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// One sampled grid of strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization<F> {
    /// Strength per cell (kPa), in the grid's canonical order.
    pub values: Vec<F>,
    /// Realization ordinal within its campaign stream.
    pub seed_index: u64,
}

/// Draw one realization: `values = exp(L·ε + μ_ln)` with ε i.i.d. standard
/// normal, consumed in row-major cell order.
pub fn sample_realization<F, R>(
    factor: &CovarianceFactor<F>,
    moments: &LognormalMoments<F>,
    seed_index: u64,
    rng: &mut R,
) -> Realization<F>
where
    F: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<F>,
{
    let n = factor.factor_l.n();
    let eps: Vec<F> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let l = &factor.factor_l;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = moments.mu_ln;
        for k in 0..=i {
            s = s + l[(i, k)] * eps[k];
        }
        values.push(s.exp());
    }
    Realization { values, seed_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;

    #[test]
    fn moments_cov_zero_degenerates() {
        let m = lognormal_moments(18.6f64, 0.0).unwrap();
        assert_relative_eq!(m.mu_ln, 2.923162, epsilon = 1e-6);
        assert_eq!(m.sigma_ln, 0.0);
    }

    #[test]
    fn moments_hand_arithmetic() {
        // ln(1.09) = 0.0861777
        let m = lognormal_moments(18.6f64, 0.3).unwrap();
        assert_relative_eq!(m.sigma_ln, 0.293560, epsilon = 1e-6);
        assert_relative_eq!(m.mu_ln, 2.880073, epsilon = 1e-6);
        // ln(1.25) = 0.2231436
        let m = lognormal_moments(26.0f64, 0.5).unwrap();
        assert_relative_eq!(m.sigma_ln, 0.472381, epsilon = 1e-6);
        assert_relative_eq!(m.mu_ln, 3.146525, epsilon = 1e-6);
    }

    #[test]
    fn moments_consistency_invariant() {
        // exp(mu_ln + sigma_ln^2/2) recovers mu_cu
        for &(mu, cov) in &[(18.6f64, 0.1), (22.3, 0.3), (33.5, 0.5), (1.0, 2.0)] {
            let m = lognormal_moments(mu, cov).unwrap();
            assert_relative_eq!(
                (m.mu_ln + m.sigma_ln * m.sigma_ln / 2.0).exp(),
                mu,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn moments_rejects_bad_input() {
        assert!(lognormal_moments(0.0f64, 0.1).is_err());
        assert!(lognormal_moments(-1.0f64, 0.1).is_err());
        assert!(lognormal_moments(1.0f64, -0.1).is_err());
    }

    #[test]
    fn covariance_values() {
        let s = 0.7f64;
        assert_relative_eq!(covariance(0.0, 0.0, s, 6.0, 1.0), s * s);
        assert_relative_eq!(
            covariance(6.0, 0.0, s, 6.0, 1.0),
            s * s * (-1.0f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            covariance(6.0, 1.0, s, 6.0, 1.0),
            s * s * (-2.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn covariance_symmetry_and_decay() {
        let s = 0.5f64;
        for &(lx, ly) in &[(0.5, 0.25), (3.0, 1.0), (12.0, 4.0)] {
            let c = covariance(lx, ly, s, 6.0, 1.0);
            assert_eq!(c, covariance(-lx, ly, s, 6.0, 1.0));
            assert_eq!(c, covariance(lx, -ly, s, 6.0, 1.0));
            assert!(covariance(lx + 0.1, ly, s, 6.0, 1.0) < c);
            assert!(covariance(lx, ly + 0.1, s, 6.0, 1.0) < c);
        }
    }

    fn toy_grid(centers: Vec<(f64, f64)>) -> GridSpec<f64> {
        GridSpec::new(0.5, centers).unwrap()
    }

    #[test]
    fn build_covariance_examples() {
        let stats = FieldStats::new(18.6, 0.3, 6.0, 1.0).unwrap();
        let m = lognormal_moments(stats.mu_cu, stats.cov).unwrap();
        let s2 = m.sigma_ln * m.sigma_ln;

        let a = build_covariance(&toy_grid(vec![(0.0, 0.0)]), &m, &stats);
        assert_relative_eq!(a[(0, 0)], s2);

        // two cells at horizontal distance delta_h
        let a = build_covariance(&toy_grid(vec![(0.0, 0.0), (6.0, 0.0)]), &m, &stats);
        assert_relative_eq!(a[(0, 1)], s2 * (-1.0f64).exp(), max_relative = 1e-12);
        assert!(a.is_symmetric());
    }

    #[test]
    fn isotropic_lag_swap_symmetry() {
        // with delta_h = delta_v, swapping lag roles leaves A unchanged
        let stats = FieldStats::new(18.6, 0.3, 2.0, 2.0).unwrap();
        let m = lognormal_moments(stats.mu_cu, stats.cov).unwrap();
        let a = build_covariance(&toy_grid(vec![(0.0, 0.0), (1.5, 0.5)]), &m, &stats);
        let b = build_covariance(&toy_grid(vec![(0.0, 0.0), (0.5, 1.5)]), &m, &stats);
        assert_eq!(a[(0, 1)], b[(0, 1)]);
    }

    #[test]
    fn cholesky_identity() {
        let i4 = SquareMatrix::<f64>::identity(4);
        let f = cholesky_factor(&i4).unwrap();
        assert_eq!(f.factor_l, i4);
        assert_eq!(f.jitter_applied, 0.0);
    }

    #[test]
    fn cholesky_known_2x2() {
        let a = SquareMatrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky_factor(&a).unwrap();
        assert_relative_eq!(f.factor_l[(0, 0)], 2.0);
        assert_relative_eq!(f.factor_l[(1, 0)], 1.0);
        assert_relative_eq!(f.factor_l[(1, 1)], std::f64::consts::SQRT_2, epsilon = 1e-6);
        assert!(f.factor_l.reconstruction_residual(&a, 0.0) <= 1e-12);
    }

    #[test]
    fn cholesky_indefinite_fails() {
        // eigenvalue -1 cannot be jittered away at <= 1e-8
        let a = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky_factor(&a) {
            Err(Error::Factorization { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_zero_matrix_is_degenerate_ok() {
        let a = SquareMatrix::<f64>::zeros(3);
        let f = cholesky_factor(&a).unwrap();
        assert_eq!(f.factor_l, SquareMatrix::zeros(3));
    }

    #[test]
    fn sample_zero_sigma_is_deterministic_mean() {
        let grid = toy_grid(vec![(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]);
        let stats = FieldStats::new(18.6, 0.0, 6.0, 1.0).unwrap();
        let m = lognormal_moments(stats.mu_cu, stats.cov).unwrap();
        let a = build_covariance(&grid, &m, &stats);
        let f = cholesky_factor(&a).unwrap();
        let mut rng = substream(1, 0, 0);
        let r = sample_realization(&f, &m, 0, &mut rng);
        for v in r.values {
            assert_relative_eq!(v, 18.6, max_relative = 1e-12);
        }
    }

    #[test]
    fn sample_fixed_stream_is_bit_identical() {
        let grid = toy_grid((0..16).map(|i| (0.5 * i as f64, 0.0)).collect());
        let stats = FieldStats::new(18.6, 0.3, 6.0, 1.0).unwrap();
        let m = lognormal_moments(stats.mu_cu, stats.cov).unwrap();
        let f = cholesky_factor(&build_covariance(&grid, &m, &stats)).unwrap();
        let a = sample_realization(&f, &m, 3, &mut substream(9, 0, 3));
        let b = sample_realization(&f, &m, 3, &mut substream(9, 0, 3));
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sample_moments_converge() {
        // 2000 samples at (mu=18.6, COV=0.3) on a small grid: sample mean and
        // COV must match the lognormal moments within Monte Carlo noise.
        let grid = toy_grid(
            (0..6)
                .flat_map(|r| (0..6).map(move |c| (0.5 * c as f64, 0.5 * r as f64)))
                .collect(),
        );
        let stats = FieldStats::new(18.6, 0.3, 6.0, 1.0).unwrap();
        let m = lognormal_moments(stats.mu_cu, stats.cov).unwrap();
        let f = cholesky_factor(&build_covariance(&grid, &m, &stats)).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for k in 0..2000u64 {
            let r = sample_realization(&f, &m, k, &mut substream(11, 0, k));
            for v in r.values {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        let cov = var.sqrt() / mean;
        assert!((18.23..=18.97).contains(&mean), "mean {mean}");
        assert!((0.285..=0.315).contains(&cov), "cov {cov}");
    }
}
