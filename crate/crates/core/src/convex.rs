//! Proximal and variational machinery for `theta = mu * ||.||_1` and for the
//! polyhedral sets used as constraint sets.
//!
//! All elementwise operations treat matrices as flattened vectors.

use crate::error::{check_shape, Error, Result};
use crate::linalg::Mat;

/// Tolerance used to decide whether a coordinate of `x` is zero in the
/// epiderivative formulas.
pub const ZERO_TOL: f64 = 1e-10;

/// Tolerance for the blockwise compatibility test of the conjugate `psi*`.
pub const COMPAT_TOL: f64 = 1e-8;

/// Per-coordinate shape of a polyhedral cone that is a product of
/// one-dimensional cones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateCone {
    Free,
    NonNeg,
    NonPos,
    Zero,
}

impl CoordinateCone {
    pub fn contains(self, d: f64, tol: f64) -> bool {
        match self {
            CoordinateCone::Free => true,
            CoordinateCone::NonNeg => d >= -tol,
            CoordinateCone::NonPos => d <= tol,
            CoordinateCone::Zero => d.abs() <= tol,
        }
    }
}

/// Value of the conjugate `psi*`: either finite or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjugateValue {
    Finite(f64),
    Infinite,
}

impl ConjugateValue {
    pub fn is_finite(self) -> bool {
        matches!(self, ConjugateValue::Finite(_))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            ConjugateValue::Finite(v) => v,
            ConjugateValue::Infinite => f64::INFINITY,
        }
    }
}

/// Moreau envelope evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub grad: Mat,
    pub prox: Mat,
}

/// Closed proper convex function acting elementwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexFunction {
    /// `mu * sum |u_i|`. `mu = 0` is accepted and gives the zero function.
    ScaledL1 { mu: f64 },
}

impl ConvexFunction {
    pub fn scaled_l1(mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "l1 weight must be finite and nonnegative, got {mu}"
            )));
        }
        Ok(ConvexFunction::ScaledL1 { mu })
    }

    pub fn mu(&self) -> f64 {
        match *self {
            ConvexFunction::ScaledL1 { mu } => mu,
        }
    }

    pub fn value(&self, u: &Mat) -> f64 {
        self.mu() * u.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `prox_{t theta}(u)`: soft thresholding at level `t * mu`, computed as
    /// `u - clamp(u, -t mu, t mu)`.
    pub fn prox(&self, u: &Mat, t: f64) -> Result<Mat> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prox parameter must be positive, got {t}"
            )));
        }
        let level = t * self.mu();
        Ok(u.map(|v| v - v.clamp(-level, level)))
    }

    /// Moreau-Yosida envelope `min_p theta(p) + (rho/2) |u - p|^2` and its
    /// gradient `rho (u - prox_{theta/rho}(u))`.
    pub fn moreau_env(&self, u: &Mat, rho: f64) -> Result<Envelope> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "envelope parameter must be positive, got {rho}"
            )));
        }
        let prox = self.prox(u, 1.0 / rho)?;
        let diff = u - &prox;
        let value = self.value(&prox) + 0.5 * rho * diff.norm_squared();
        Ok(Envelope {
            value,
            grad: diff * rho,
            prox,
        })
    }

    /// First-order directional derivative `theta^(x; d)`.
    pub fn directional_derivative(&self, x: &Mat, d: &Mat) -> f64 {
        let mu = self.mu();
        x.iter()
            .zip(d.iter())
            .map(|(&xi, &di)| {
                if xi.abs() <= ZERO_TOL {
                    mu * di.abs()
                } else {
                    mu * xi.signum() * di
                }
            })
            .sum()
    }

    /// Lower second-order directional epiderivative `theta^^_-(x; xi, w)`.
    pub fn second_epiderivative(&self, x: &Mat, xi: &Mat, w: &Mat) -> f64 {
        let mu = self.mu();
        x.iter()
            .zip(xi.iter())
            .zip(w.iter())
            .map(|((&xv, &dv), &wv)| match sign_block(xv, dv) {
                0 => mu * wv.abs(),
                s => mu * f64::from(s) * wv,
            })
            .sum()
    }

    /// Conjugate of `w -> theta^^_-(x; xi, w)` evaluated at `y`. The function
    /// is piecewise linear and positively homogeneous in `w`, so the supremum
    /// is `0` when `y` matches the block pattern and `+inf` otherwise.
    pub fn psi_conjugate(&self, x: &Mat, xi: &Mat, y: &Mat) -> ConjugateValue {
        let mu = self.mu();
        let compatible = x
            .iter()
            .zip(xi.iter())
            .zip(y.iter())
            .all(|((&xv, &dv), &yv)| match sign_block(xv, dv) {
                0 => yv.abs() <= mu + COMPAT_TOL,
                s => (yv - f64::from(s) * mu).abs() <= COMPAT_TOL,
            });
        if compatible {
            ConjugateValue::Finite(0.0)
        } else {
            ConjugateValue::Infinite
        }
    }

    /// Coordinate description of `{d : theta^(g; d) = <d, y>}`.
    pub fn critical_cone_classes(&self, g: &Mat, y: &Mat, tol: f64) -> Vec<CoordinateCone> {
        let mu = self.mu();
        g.iter()
            .zip(y.iter())
            .map(|(&gv, &yv)| {
                if gv.abs() > tol {
                    if (yv - mu * gv.signum()).abs() <= tol {
                        CoordinateCone::Free
                    } else {
                        CoordinateCone::Zero
                    }
                } else if mu <= tol && yv.abs() <= tol {
                    CoordinateCone::Free
                } else if (yv - mu).abs() <= tol {
                    CoordinateCone::NonNeg
                } else if (yv + mu).abs() <= tol {
                    CoordinateCone::NonPos
                } else {
                    CoordinateCone::Zero
                }
            })
            .collect()
    }
}

/// `+1` for the block {x > 0 or x = 0, xi > 0}, `-1` for the mirrored block,
/// `0` for {x = 0, xi = 0}.
fn sign_block(x: f64, xi: f64) -> i8 {
    if x > ZERO_TOL {
        1
    } else if x < -ZERO_TOL {
        -1
    } else if xi > ZERO_TOL {
        1
    } else if xi < -ZERO_TOL {
        -1
    } else {
        0
    }
}

/// Nonempty closed convex polyhedral set.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Zero { rows: usize, cols: usize },
    NonnegOrthant { rows: usize, cols: usize },
    Box { lower: Mat, upper: Mat },
    FullSpace { rows: usize, cols: usize },
}

impl ConvexSet {
    pub fn zero(shape: (usize, usize)) -> Self {
        ConvexSet::Zero { rows: shape.0, cols: shape.1 }
    }

    pub fn nonneg(shape: (usize, usize)) -> Self {
        ConvexSet::NonnegOrthant { rows: shape.0, cols: shape.1 }
    }

    pub fn full(shape: (usize, usize)) -> Self {
        ConvexSet::FullSpace { rows: shape.0, cols: shape.1 }
    }

    pub fn boxed(lower: Mat, upper: Mat) -> Result<Self> {
        check_shape(lower.shape(), upper.shape())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("box requires lower <= upper".into()));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ConvexSet::Zero { rows, cols }
            | ConvexSet::NonnegOrthant { rows, cols }
            | ConvexSet::FullSpace { rows, cols } => (*rows, *cols),
            ConvexSet::Box { lower, .. } => lower.shape(),
        }
    }

    pub fn project(&self, v: &Mat) -> Result<Mat> {
        check_shape(self.shape(), v.shape())?;
        Ok(match self {
            ConvexSet::Zero { rows, cols } => Mat::zeros(*rows, *cols),
            ConvexSet::NonnegOrthant { .. } => v.map(|x| x.max(0.0)),
            ConvexSet::Box { lower, upper } => {
                Mat::from_fn(v.nrows(), v.ncols(), |i, j| {
                    v[(i, j)].clamp(lower[(i, j)], upper[(i, j)])
                })
            }
            ConvexSet::FullSpace { .. } => v.clone(),
        })
    }

    /// `(rho/2) dist^2(v, Q)` and its gradient `rho (v - P_Q v)`.
    pub fn dist2_grad(&self, v: &Mat, rho: f64) -> Result<(f64, Mat)> {
        let diff = v - self.project(v)?;
        Ok((0.5 * rho * diff.norm_squared(), diff * rho))
    }

    pub fn contains(&self, v: &Mat, tol: f64) -> Result<bool> {
        Ok((v - self.project(v)?).norm() <= tol)
    }

    /// `z in N_Q(s)`, tested through `s = P_Q(s + z)`.
    pub fn normal_cone_member(&self, s: &Mat, z: &Mat, tol: f64) -> Result<bool> {
        check_shape(self.shape(), z.shape())?;
        if !self.contains(s, tol)? {
            return Err(Error::Precondition(
                "normal cone requested at a point outside the set".into(),
            ));
        }
        Ok((s - self.project(&(s + z))?).norm() <= tol)
    }

    /// Coordinate description of `T_Q(s) ∩ z^perp` for `z in N_Q(s)`.
    pub fn critical_cone_classes(&self, s: &Mat, z: &Mat, tol: f64) -> Result<Vec<CoordinateCone>> {
        check_shape(self.shape(), s.shape())?;
        check_shape(self.shape(), z.shape())?;
        let one_sided = |active_lower: bool, active_upper: bool, zv: f64| match (active_lower, active_upper) {
            (true, true) => CoordinateCone::Zero,
            _ if zv.abs() > tol && (active_lower || active_upper) => CoordinateCone::Zero,
            (true, false) => CoordinateCone::NonNeg,
            (false, true) => CoordinateCone::NonPos,
            (false, false) => CoordinateCone::Free,
        };
        Ok(match self {
            ConvexSet::Zero { .. } => vec![CoordinateCone::Zero; s.len()],
            ConvexSet::FullSpace { .. } => vec![CoordinateCone::Free; s.len()],
            ConvexSet::NonnegOrthant { .. } => s
                .iter()
                .zip(z.iter())
                .map(|(&sv, &zv)| one_sided(sv <= tol, false, zv))
                .collect(),
            ConvexSet::Box { lower, upper } => s
                .iter()
                .zip(z.iter())
                .zip(lower.iter().zip(upper.iter()))
                .map(|((&sv, &zv), (&l, &u))| one_sided(sv - l <= tol, u - sv <= tol, zv))
                .collect(),
        })
    }
}
