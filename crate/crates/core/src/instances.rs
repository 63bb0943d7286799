//! Data generators for the built-in problem families.

use nalgebra::{DVector, SVD};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::error::{Error, Result};
use crate::linalg::{column, gaussian, Mat};
use crate::manifold::{Manifold, Point};
use crate::problem::Family;

/// Default seed for the outliers of the basic 5x5 completion instance.
pub const RMC_BASIC_SEED: u64 = 42;

/// Half-width of the uniform outliers in the basic 5x5 completion instance.
pub const RMC_BASIC_OUTLIER_SCALE: f64 = 0.5;

/// Fraction of observed entries corrupted by outliers in random instances.
pub const RMC_OUTLIER_FRACTION: f64 = 0.03;

/// Mean of the exponential outlier magnitudes in random instances.
pub const RMC_OUTLIER_MEAN: f64 = 10.0;

/// Block-diagonal 5x5 test matrix for the sphere-l1 family.
pub fn sphere_l1_matrix() -> Mat {
    Mat::from_row_slice(
        5,
        5,
        &[
            10.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 25.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.028, 1.104, 0.0, //
            0.0, 0.0, 1.104, 1.672, 0.0, //
            0.0, 0.0, 0.0, 0.0, 8.0,
        ],
    )
}

/// Known KKT point of the sphere-l1 test matrix with `mu`: `x = -e2`, `y = -mu e2`.
pub fn sphere_l1_solution(mu: f64) -> (Mat, Mat) {
    let mut x = Mat::zeros(5, 1);
    x[1] = -1.0;
    (x.clone(), x * mu)
}

/// Standard-normal square matrix.
pub fn sphere_l1_random_matrix(n: usize, seed: u64) -> Mat {
    gaussian(&mut ChaCha8Rng::seed_from_u64(seed), n, n)
}

/// KKT point `(x, y, z)` of the circle family.
pub fn circle_solution() -> (Mat, Mat, Mat) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (column(&[h, h]), column(&[h]), column(&[0.0]))
}

/// Completion instance together with its ground truth.
#[derive(Debug, Clone)]
pub struct RmcData {
    pub family: Family,
    pub truth: Mat,
    pub observed: Mat,
    pub omega: Vec<(usize, usize)>,
    pub rank: usize,
}

impl RmcData {
    pub fn manifold(&self) -> Result<Manifold> {
        let (m, n) = self.observed.shape();
        Manifold::fixed_rank(m, n, self.rank)
    }

    /// Rank-`r` truncated SVD of the rescaled observations `(mn/|Omega|) P_Omega(A)`.
    pub fn spectral_init(&self) -> Result<Point> {
        let (m, n) = self.observed.shape();
        let mut masked = Mat::zeros(m, n);
        for &(i, j) in &self.omega {
            masked[(i, j)] = self.observed[(i, j)];
        }
        let scale = (m * n) as f64 / self.omega.len().max(1) as f64;
        self.manifold()?.project_to_manifold(&(masked * scale))
    }

    /// Spectral initialization after discarding observations farther than
    /// `k` robust standard deviations (`1.4826 * MAD`) from the median.
    /// Falls back to [`Self::spectral_init`] when the MAD vanishes.
    pub fn trimmed_spectral_init(&self, k: f64) -> Result<Point> {
        let mut values: Vec<f64> = self.omega.iter().map(|&(i, j)| self.observed[(i, j)]).collect();
        if values.is_empty() {
            return self.spectral_init();
        }
        values.sort_by(f64::total_cmp);
        let median = values[values.len() / 2];
        let mut dev: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let sigma = 1.4826 * dev[dev.len() / 2];
        if sigma <= 0.0 {
            return self.spectral_init();
        }
        let (m, n) = self.observed.shape();
        let mut masked = Mat::zeros(m, n);
        for &(i, j) in &self.omega {
            let v = self.observed[(i, j)];
            if (v - median).abs() <= k * sigma {
                masked[(i, j)] = v;
            }
        }
        let scale = (m * n) as f64 / self.omega.len() as f64;
        self.manifold()?.project_to_manifold(&(masked * scale))
    }
}

/// The 5x5 rank-3 instance `A = U S V^T + E` with outliers uniform in
/// `[-RMC_BASIC_OUTLIER_SCALE, RMC_BASIC_OUTLIER_SCALE]` on the lower-right
/// 2x2 block and every entry observed.
pub fn rmc_basic(seed: u64) -> RmcData {
    rmc_basic_scaled(seed, RMC_BASIC_OUTLIER_SCALE)
}

/// [`rmc_basic`] with outliers uniform in `[-scale, scale]`.
pub fn rmc_basic_scaled(seed: u64, scale: f64) -> RmcData {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let u = Mat::from_row_slice(
        5,
        3,
        &[
            1.0, 0.0, 0.0, //
            0.0, -h, h, //
            0.0, h, h, //
            0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0,
        ],
    );
    let v = Mat::from_row_slice(
        5,
        3,
        &[
            1.0, 0.0, 0.0, //
            0.0, 0.6, 0.8, //
            0.0, -0.8, 0.6, //
            0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0,
        ],
    );
    let s = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
    let truth = &u * s * v.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = truth.clone();
    for i in 3..5 {
        for j in 3..5 {
            observed[(i, j)] += rng.random_range(-scale..=scale);
        }
    }
    let omega: Vec<_> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).collect();
    RmcData {
        family: Family::Rmc {
            a: observed.clone(),
            omega: omega.clone(),
            rank: 3,
        },
        truth,
        observed,
        omega,
        rank: 3,
    }
}

/// Random completion instance: `A_ex = L R^T` with standard-normal factors,
/// `OS (m + n - r) r` entries observed uniformly without replacement, and
/// 3% of the observed entries corrupted by exponential outliers of mean 10.
pub fn rmc_random(m: usize, n: usize, r: usize, oversample: f64, seed: u64) -> Result<RmcData> {
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} must lie in 1..={}",
            m.min(n)
        )));
    }
    if !(oversample > 0.0) {
        return Err(Error::InvalidArgument("oversampling rate must be positive".into()));
    }
    let samples = (oversample * ((m + n - r) * r) as f64).round() as usize;
    if samples > m * n {
        return Err(Error::InvalidArgument(format!(
            "{samples} samples requested but the matrix has only {} entries",
            m * n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = gaussian(&mut rng, m, r);
    let rr = gaussian(&mut rng, n, r);
    let truth = l * rr.transpose();

    let mut flat = index::sample(&mut rng, m * n, samples).into_vec();
    flat.sort_unstable();
    let omega: Vec<_> = flat.iter().map(|&k| (k % m, k / m)).collect();

    let mut observed = truth.clone();
    let outliers = (RMC_OUTLIER_FRACTION * samples as f64).round() as usize;
    let exp = Exp::new(1.0 / RMC_OUTLIER_MEAN).expect("positive rate");
    for k in index::sample(&mut rng, samples, outliers).into_vec() {
        let (i, j) = omega[k];
        observed[(i, j)] += rng.sample(exp);
    }
    Ok(RmcData {
        family: Family::Rmc {
            a: observed.clone(),
            omega: omega.clone(),
            rank: r,
        },
        truth,
        observed,
        omega,
        rank: r,
    })
}

/// Singular values of `m` in decreasing order.
pub fn singular_values(m: &Mat) -> DVector<f64> {
    SVD::new(m.clone(), false, false).singular_values
}
