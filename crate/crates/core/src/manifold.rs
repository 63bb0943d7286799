//! Closed-form geometry for the unit sphere and the fixed-rank matrix manifold.
//!
//! Both manifolds are treated as embedded submanifolds: points and tangent
//! vectors are stored in their ambient dense representation and the metric is
//! the Euclidean (Frobenius) inner product restricted to the tangent space.
//!
//! Tangent vectors are plain [`Mat`] values of the same shape as the point.
//! For fixed-rank points the compact SVD `X = U S V^T` is cached alongside the
//! ambient matrix.

use nalgebra::{DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_shape, Error, Result};
use crate::linalg::{column_space, gaussian, inner, svd, Mat, Svd, SVD_TOL};

/// Singular values at or below this threshold count as a rank drop.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// Largest ambient dimension for which dense tangent bases are built.
pub const MAX_DENSE_BASIS_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SphereRetraction {
    /// `cos(|xi|) x + sin(|xi|) xi / |xi|`.
    #[default]
    Exponential,
    /// `(x + xi) / |x + xi|`.
    Normalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    /// Unit sphere in `R^n`, points stored as `n x 1` columns.
    Sphere { n: usize, retraction: SphereRetraction },
    /// Real `m x n` matrices of rank exactly `r`.
    FixedRank { m: usize, n: usize, r: usize },
}

/// Compact SVD factors of a fixed-rank point.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub u: Mat,
    pub s: DVector<f64>,
    pub v: Mat,
}

/// A feasible point on a [`Manifold`].
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    ambient: Mat,
    factors: Option<Factors>,
}

impl Point {
    pub fn ambient(&self) -> &Mat {
        &self.ambient
    }

    pub fn factors(&self) -> Option<&Factors> {
        self.factors.as_ref()
    }

    pub fn into_ambient(self) -> Mat {
        self.ambient
    }
}

impl Manifold {
    pub fn sphere(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "sphere dimension must be at least 2, got {n}"
            )));
        }
        Ok(Manifold::Sphere {
            n,
            retraction: SphereRetraction::Exponential,
        })
    }

    pub fn fixed_rank(m: usize, n: usize, r: usize) -> Result<Self> {
        if r == 0 || r > m.min(n) {
            return Err(Error::InvalidArgument(format!(
                "rank must satisfy 1 <= r <= min(m, n); got m={m}, n={n}, r={r}"
            )));
        }
        Ok(Manifold::FixedRank { m, n, r })
    }

    /// Switches a sphere to the normalization retraction. No effect on other manifolds.
    pub fn with_sphere_retraction(self, kind: SphereRetraction) -> Self {
        match self {
            Manifold::Sphere { n, .. } => Manifold::Sphere { n, retraction: kind },
            other => other,
        }
    }

    pub fn ambient_shape(&self) -> (usize, usize) {
        match *self {
            Manifold::Sphere { n, .. } => (n, 1),
            Manifold::FixedRank { m, n, .. } => (m, n),
        }
    }

    /// Intrinsic dimension.
    pub fn dimension(&self) -> usize {
        match *self {
            Manifold::Sphere { n, .. } => n - 1,
            Manifold::FixedRank { m, n, r } => (m + n - r) * r,
        }
    }

    /// Wraps an ambient array that already lies on the manifold.
    ///
    /// Sphere inputs within `1e-10` of unit norm are renormalized; fixed-rank
    /// inputs must have exactly `r` singular values above the rank threshold
    /// (relative `1e-10` gap to the trailing ones).
    pub fn point(&self, ambient: Mat) -> Result<Point> {
        check_shape(self.ambient_shape(), ambient.shape())?;
        match *self {
            Manifold::Sphere { .. } => {
                let norm = ambient.norm();
                if (norm - 1.0).abs() > 1e-10 {
                    return Err(Error::Infeasible(format!(
                        "sphere point has norm {norm}"
                    )));
                }
                Ok(Point {
                    ambient: ambient / norm,
                    factors: None,
                })
            }
            Manifold::FixedRank { r, .. } => {
                let svd = SVD::new(ambient.clone(), false, false);
                let sv = &svd.singular_values;
                let top = sv[0].max(1.0);
                if sv.len() > r && sv[r] > 1e-10 * top {
                    return Err(Error::Infeasible(format!(
                        "matrix has rank above {r} (singular value {:e})",
                        sv[r]
                    )));
                }
                self.project_to_manifold(&ambient)
            }
        }
    }

    /// Metric projection of an ambient array onto the manifold: normalization
    /// on the sphere, rank-`r` truncated SVD on fixed-rank.
    pub fn project_to_manifold(&self, ambient: &Mat) -> Result<Point> {
        check_shape(self.ambient_shape(), ambient.shape())?;
        match *self {
            Manifold::Sphere { .. } => {
                let norm = ambient.norm();
                if norm <= f64::MIN_POSITIVE {
                    return Err(Error::InvalidArgument(
                        "cannot normalize the zero vector".into(),
                    ));
                }
                Ok(Point {
                    ambient: ambient / norm,
                    factors: None,
                })
            }
            Manifold::FixedRank { r, .. } => {
                let svd = checked_svd(ambient)?;
                let u = svd.u.columns(0, r).into_owned();
                let v = svd.v_t.rows(0, r).transpose();
                let s = svd.s.rows(0, r).into_owned();
                self.point_from_factors(u, s, v)
            }
        }
    }

    /// Builds a fixed-rank point from orthonormal `u`, `v` and positive `s`.
    pub fn point_from_factors(&self, u: Mat, s: DVector<f64>, v: Mat) -> Result<Point> {
        let Manifold::FixedRank { m, n, r } = *self else {
            return Err(Error::InvalidArgument(
                "factored points exist only on the fixed-rank manifold".into(),
            ));
        };
        check_shape((m, r), u.shape())?;
        check_shape((n, r), v.shape())?;
        check_shape((r, 1), s.shape())?;
        if let Some(&smin) = s.iter().min_by(|a, b| a.total_cmp(b)) {
            if smin <= RANK_THRESHOLD {
                return Err(Error::RankDeficient {
                    sigma: smin,
                    threshold: RANK_THRESHOLD,
                });
            }
        }
        let ambient = &u * Mat::from_diagonal(&s) * v.transpose();
        Ok(Point {
            ambient,
            factors: Some(Factors { u, s, v }),
        })
    }

    /// Verifies the point invariants (unit norm, or orthonormal factors that
    /// reproduce the ambient matrix).
    pub fn check_point(&self, x: &Point) -> Result<()> {
        check_shape(self.ambient_shape(), x.ambient.shape())?;
        match *self {
            Manifold::Sphere { .. } => {
                let norm = x.ambient.norm();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(Error::Infeasible(format!("sphere point norm {norm}")));
                }
                Ok(())
            }
            Manifold::FixedRank { r, .. } => {
                let f = x
                    .factors
                    .as_ref()
                    .ok_or_else(|| Error::Infeasible("missing SVD factors".into()))?;
                let eye = Mat::identity(r, r);
                let ortho_u = (f.u.transpose() * &f.u - &eye).norm();
                let ortho_v = (f.v.transpose() * &f.v - &eye).norm();
                if ortho_u > 1e-10 || ortho_v > 1e-10 {
                    return Err(Error::Infeasible(format!(
                        "factors not orthonormal ({ortho_u:e}, {ortho_v:e})"
                    )));
                }
                if f.s.iter().any(|&s| s <= RANK_THRESHOLD) {
                    return Err(Error::Infeasible("non-positive singular value".into()));
                }
                let rebuilt = &f.u * Mat::from_diagonal(&f.s) * f.v.transpose();
                let rel = (&rebuilt - &x.ambient).norm() / x.ambient.norm().max(1e-300);
                if rel > 1e-10 {
                    return Err(Error::Infeasible(format!(
                        "ambient differs from U S V^T by {rel:e}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Orthogonal projection of an ambient array onto `T_x M`.
    pub fn project_tangent(&self, x: &Point, v: &Mat) -> Result<Mat> {
        check_shape(self.ambient_shape(), v.shape())?;
        Ok(match *self {
            Manifold::Sphere { .. } => {
                let c = inner(&x.ambient, v);
                v - &x.ambient * c
            }
            Manifold::FixedRank { .. } => {
                let f = fixed_rank_factors(x)?;
                let ut_v = f.u.transpose() * v;
                let v_v = v * &f.v;
                let core = &ut_v * &f.v;
                &f.u * ut_v + v_v * f.v.transpose() - &f.u * core * f.v.transpose()
            }
        })
    }

    /// Retraction: exponential map (or normalization) on the sphere, truncated
    /// SVD of `x + xi` on fixed-rank. `xi` must be tangent at `x`.
    pub fn retract(&self, x: &Point, xi: &Mat) -> Result<Point> {
        check_shape(self.ambient_shape(), xi.shape())?;
        match *self {
            Manifold::Sphere { retraction, .. } => {
                let ambient = match retraction {
                    SphereRetraction::Exponential => {
                        let t = xi.norm();
                        if t == 0.0 {
                            return Ok(x.clone());
                        }
                        &x.ambient * t.cos() + xi * (t.sin() / t)
                    }
                    SphereRetraction::Normalize => &x.ambient + xi,
                };
                let norm = ambient.norm();
                Ok(Point {
                    ambient: ambient / norm,
                    factors: None,
                })
            }
            Manifold::FixedRank { r, .. } => {
                if xi.iter().all(|&v| v == 0.0) {
                    return Ok(x.clone());
                }
                let f = fixed_rank_factors(x)?;
                // x + xi = [U Up] [[S + M, I], [I, 0]] [V Vp]^T for tangent xi.
                let xi_v = xi * &f.v;
                let xi_t_u = xi.transpose() * &f.u;
                let mid = f.u.transpose() * &xi_v;
                let up = &xi_v - &f.u * &mid;
                let vp = &xi_t_u - &f.v * mid.transpose();

                let (qu, ru) = thin_qr(&hstack(&f.u, &up));
                let (qv, rv) = thin_qr(&hstack(&f.v, &vp));
                let mut k = Mat::zeros(2 * r, 2 * r);
                k.view_mut((0, 0), (r, r))
                    .copy_from(&(Mat::from_diagonal(&f.s) + mid));
                k.view_mut((0, r), (r, r)).fill_with_identity();
                k.view_mut((r, 0), (r, r)).fill_with_identity();
                let core = ru * k * rv.transpose();

                let svd = checked_svd(&core)?;
                let sigma_r = svd.s[r - 1];
                if sigma_r <= RANK_THRESHOLD {
                    return Err(Error::RankDeficient {
                        sigma: sigma_r,
                        threshold: RANK_THRESHOLD,
                    });
                }
                let uc = svd.u.columns(0, r).into_owned();
                let vc = svd.v_t.rows(0, r).transpose();
                let s = svd.s.rows(0, r).into_owned();
                let u = reorthonormalize(qu * uc);
                let v = reorthonormalize(qv * vc);
                self.point_from_factors(u, s, v)
            }
        }
    }

    /// Geodesic distance on the sphere; Frobenius distance (a surrogate) on
    /// fixed-rank.
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        match *self {
            Manifold::Sphere { .. } => {
                if x.ambient == y.ambient {
                    return 0.0;
                }
                // atan2 form keeps accuracy for nearby points where arccos is ill-conditioned.
                let diff = (&x.ambient - &y.ambient).norm();
                let sum = (&x.ambient + &y.ambient).norm();
                2.0 * diff.atan2(sum)
            }
            Manifold::FixedRank { .. } => (&x.ambient - &y.ambient).norm(),
        }
    }

    pub fn riemannian_grad(&self, x: &Point, egrad: &Mat) -> Result<Mat> {
        self.project_tangent(x, egrad)
    }

    /// Riemannian Hessian-vector product from the ambient gradient `egrad` and
    /// the ambient Hessian-vector product `ehess_xi = D(egrad)(x)[xi]`.
    ///
    /// Sphere: `P(ehess_xi) - <x, egrad> xi`. Fixed-rank adds the Weingarten
    /// terms `P_U^perp G Vp S^-1 V^T + U S^-1 Up^T G P_V^perp`, where
    /// `Up = P_U^perp xi V` and `Vp = P_V^perp xi^T U`.
    pub fn riemannian_hess_apply(
        &self,
        x: &Point,
        egrad: &Mat,
        ehess_xi: &Mat,
        xi: &Mat,
    ) -> Result<Mat> {
        check_shape(self.ambient_shape(), egrad.shape())?;
        check_shape(self.ambient_shape(), xi.shape())?;
        let projected = self.project_tangent(x, ehess_xi)?;
        Ok(match *self {
            Manifold::Sphere { .. } => projected - xi * inner(&x.ambient, egrad),
            Manifold::FixedRank { .. } => {
                let f = fixed_rank_factors(x)?;
                let s_inv = Mat::from_diagonal(&f.s.map(|s| 1.0 / s));
                let xi_v = xi * &f.v;
                let up = &xi_v - &f.u * (f.u.transpose() * &xi_v);
                let xi_t_u = xi.transpose() * &f.u;
                let vp = &xi_t_u - &f.v * (f.v.transpose() * &xi_t_u);

                let g_vp = egrad * vp;
                let left = &g_vp - &f.u * (f.u.transpose() * &g_vp);
                let up_t_g = up.transpose() * egrad;
                let right = &up_t_g - (&up_t_g * &f.v) * f.v.transpose();
                projected + left * &s_inv * f.v.transpose() + &f.u * s_inv * right
            }
        })
    }

    /// Hessian-vector product by central differences of a Riemannian gradient
    /// field along the retraction, projected back to `T_x M`.
    pub fn hess_apply_fd<G>(&self, x: &Point, grad_field: G, xi: &Mat, h: f64) -> Result<Mat>
    where
        G: Fn(&Point) -> Result<Mat>,
    {
        let plus = self.retract(x, &(xi * h))?;
        let minus = self.retract(x, &(xi * -h))?;
        let diff = (grad_field(&plus)? - grad_field(&minus)?) / (2.0 * h);
        self.project_tangent(x, &diff)
    }

    pub fn random_point(&self, seed: u64) -> Point {
        self.random_point_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn random_point_with(&self, rng: &mut impl Rng) -> Point {
        match *self {
            Manifold::Sphere { n, .. } => {
                let g = gaussian(rng, n, 1);
                let norm = g.norm();
                Point {
                    ambient: g / norm,
                    factors: None,
                }
            }
            Manifold::FixedRank { m, n, r } => {
                let u = reorthonormalize(gaussian(rng, m, r));
                let v = reorthonormalize(gaussian(rng, n, r));
                let mut s: Vec<f64> = (0..r).map(|_| 1.0 + rng.random::<f64>()).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                self.point_from_factors(u, DVector::from_vec(s), v)
                    .expect("random factors are valid")
            }
        }
    }

    pub fn random_tangent(&self, x: &Point, seed: u64) -> Mat {
        self.random_tangent_with(x, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn random_tangent_with(&self, x: &Point, rng: &mut impl Rng) -> Mat {
        let (rows, cols) = self.ambient_shape();
        self.project_tangent(x, &gaussian(rng, rows, cols))
            .expect("shape matches by construction")
    }

    /// Orthonormal basis of `T_x M`; column `j` is a vectorized (column-major)
    /// tangent vector. Only for ambient dimensions up to [`MAX_DENSE_BASIS_DIM`].
    pub fn tangent_basis(&self, x: &Point) -> Result<Mat> {
        let (rows, cols) = self.ambient_shape();
        let dim = rows * cols;
        if dim > MAX_DENSE_BASIS_DIM {
            return Err(Error::Unsupported(format!(
                "dense tangent basis for ambient dimension {dim}"
            )));
        }
        let mut images = Mat::zeros(dim, dim);
        for j in 0..dim {
            let mut e = Mat::zeros(rows, cols);
            e[j] = 1.0;
            let p = self.project_tangent(x, &e)?;
            images.column_mut(j).copy_from_slice(p.as_slice());
        }
        // The projector has eigenvalues 0 and 1 only.
        let basis = column_space(&images, 0.5);
        debug_assert_eq!(basis.ncols(), self.dimension());
        Ok(basis)
    }
}

fn fixed_rank_factors(x: &Point) -> Result<&Factors> {
    x.factors
        .as_ref()
        .ok_or_else(|| Error::Infeasible("fixed-rank point without SVD factors".into()))
}

fn checked_svd(m: &Mat) -> Result<Svd> {
    let d = svd(m);
    if d.residual > SVD_TOL {
        return Err(Error::InvalidArgument(format!(
            "singular value decomposition inaccurate (relative residual {:e})",
            d.residual
        )));
    }
    Ok(d)
}

fn hstack(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn thin_qr(m: &Mat) -> (Mat, Mat) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Q factor of a thin QR, with column signs fixed so the R diagonal is
/// nonnegative (keeps the column orientation of the input).
fn reorthonormalize(m: Mat) -> Mat {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::column;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn sphere2() -> Manifold {
        Manifold::sphere(2).unwrap()
    }

    fn e1e1() -> (Manifold, Point) {
        let m = Manifold::fixed_rank(2, 2, 1).unwrap();
        let p = m
            .point_from_factors(column(&[1.0, 0.0]), DVector::from_vec(vec![1.0]), column(&[1.0, 0.0]))
            .unwrap();
        (m, p)
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(Manifold::sphere(1).is_err());
        assert!(Manifold::fixed_rank(3, 2, 3).is_err());
        assert!(Manifold::fixed_rank(3, 2, 0).is_err());
    }

    #[test]
    fn sphere_projection_examples() {
        let m = sphere2();
        let x = m.point(column(&[1.0, 0.0])).unwrap();
        let p = m.project_tangent(&x, &column(&[2.0, 3.0])).unwrap();
        assert_eq!(p, column(&[0.0, 3.0]));

        let x = m.point(column(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).unwrap();
        let p = m.project_tangent(&x, &column(&[1.0, 1.0])).unwrap();
        assert!(p.norm() < 1e-15);
    }

    #[test]
    fn fixed_rank_normal_block_projects_to_zero() {
        let (m, x) = e1e1();
        let v = Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 5.0]);
        assert!(m.project_tangent(&x, &v).unwrap().norm() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = sphere2();
        let x = m.point(column(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            m.project_tangent(&x, &column(&[1.0, 2.0, 3.0])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sphere_quarter_great_circle() {
        let m = sphere2();
        let x = m.point(column(&[1.0, 0.0])).unwrap();
        let y = m.retract(&x, &column(&[0.0, FRAC_PI_2])).unwrap();
        assert!((y.ambient() - column(&[0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let m = sphere2();
        let x = m.random_point(3);
        assert_eq!(m.retract(&x, &Mat::zeros(2, 1)).unwrap(), x);
        let (m, x) = e1e1();
        assert_eq!(m.retract(&x, &Mat::zeros(2, 2)).unwrap(), x);
    }

    #[test]
    fn fixed_rank_retraction_matches_truncated_svd() {
        // x + xi = [[1,1],[0,0]] has the single singular triple
        // (sqrt 2, e1, (e1+e2)/sqrt 2), so the retraction returns it unchanged.
        let (m, x) = e1e1();
        let xi = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let y = m.retract(&x, &xi).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!((y.ambient() - expected).norm() < 1e-14);
        let f = y.factors().unwrap();
        assert!((f.s[0] - 2f64.sqrt()).abs() < 1e-14);
        m.check_point(&y).unwrap();
    }

    #[test]
    fn fixed_rank_retraction_reports_rank_drop() {
        let (m, x) = e1e1();
        let xi = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(m.retract(&x, &xi), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn sphere_distances() {
        let m = sphere2();
        let e1 = m.point(column(&[1.0, 0.0])).unwrap();
        let e2 = m.point(column(&[0.0, 1.0])).unwrap();
        let d = m.point(column(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).unwrap();
        assert!((m.distance(&e1, &e2) - FRAC_PI_2).abs() < 1e-15);
        assert!((m.distance(&e1, &d) - FRAC_PI_4).abs() < 1e-15);
        assert!((m.distance(&e1, &d) - (FRAC_1_SQRT_2).acos()).abs() < 1e-15);
        assert_eq!(m.distance(&d, &d), 0.0);
    }

    #[test]
    fn sphere_gradient_examples() {
        let m = sphere2();
        let x = m.point(column(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).unwrap();
        // f = x2^2, egrad = (0, 2 x2) = (0, sqrt 2).
        let g = m.riemannian_grad(&x, &column(&[0.0, 2f64.sqrt()])).unwrap();
        assert!((g - column(&[-FRAC_1_SQRT_2, FRAC_1_SQRT_2])).norm() < 1e-15);
        // Radial gradient vanishes.
        let g = m.riemannian_grad(&x, &(x.ambient() * 2.0)).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn sphere_hessian_examples() {
        let m = sphere2();
        let x = m.point(column(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).unwrap();
        let xi = column(&[FRAC_1_SQRT_2, -FRAC_1_SQRT_2]);
        // Constant f.
        let h = m
            .riemannian_hess_apply(&x, &Mat::zeros(2, 1), &Mat::zeros(2, 1), &xi)
            .unwrap();
        assert_eq!(h.norm(), 0.0);
        // f = x2^2: <xi, Hess xi> = 2 xi2^2 - <x, grad> |xi|^2 = 1 - 1 = 0.
        let egrad = column(&[0.0, 2f64.sqrt()]);
        let ehess = column(&[0.0, 2.0 * xi[1]]);
        let h = m.riemannian_hess_apply(&x, &egrad, &ehess, &xi).unwrap();
        assert!(inner(&xi, &h).abs() < 1e-15);
        // Cross-check by differencing the gradient along the exponential curve.
        let fd = m
            .hess_apply_fd(
                &x,
                |p| m.riemannian_grad(p, &column(&[0.0, 2.0 * p.ambient()[1]])),
                &xi,
                1e-5,
            )
            .unwrap();
        assert!((fd - &h).norm() < 1e-8);
    }

    #[test]
    fn linear_function_hessian_is_scaled_identity() {
        let m = Manifold::sphere(3).unwrap();
        let a = column(&[1.0, 2.0, 2.0]);
        let x = m.point(&a / 3.0).unwrap();
        let xi = m.random_tangent(&x, 9);
        let h = m
            .riemannian_hess_apply(&x, &a, &Mat::zeros(3, 1), &xi)
            .unwrap();
        assert!((h + &xi * 3.0).norm() < 1e-14);
    }

    #[test]
    fn random_generation_is_deterministic() {
        for m in [Manifold::sphere(5).unwrap(), Manifold::fixed_rank(6, 4, 2).unwrap()] {
            let a = m.random_point(11);
            let b = m.random_point(11);
            assert_eq!(a, b);
            m.check_point(&a).unwrap();
            let t = m.random_tangent(&a, 5);
            assert_eq!(t, m.random_tangent(&a, 5));
            assert!((m.project_tangent(&a, &t).unwrap() - &t).norm() < 1e-10);
        }
        let s = Manifold::sphere(7).unwrap().random_point(1);
        assert!((s.ambient().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_basis_has_manifold_dimension() {
        let m = Manifold::fixed_rank(5, 4, 2).unwrap();
        let x = m.random_point(2);
        let b = m.tangent_basis(&x).unwrap();
        assert_eq!(b.ncols(), m.dimension());
        let gram = b.transpose() * &b;
        assert!((gram - Mat::identity(b.ncols(), b.ncols())).norm() < 1e-10);
    }

    #[test]
    fn rank_violation_detected() {
        let m = Manifold::fixed_rank(3, 3, 1).unwrap();
        assert!(m.point(Mat::identity(3, 3)).is_err());
        assert!(m.project_to_manifold(&Mat::identity(3, 3)).is_ok());
    }
}
