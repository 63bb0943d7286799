//! Composite problems `min f(x) + theta(g1(x))  s.t.  g2(x) in Q,  x in M`.
//!
//! Callers provide ambient Euclidean derivatives; Riemannian quantities are
//! obtained by projecting onto the tangent space. When there is no `(g2, Q)`
//! block the `z` multiplier is represented by an empty `0 x 1` matrix.

use std::fmt::Debug;
use std::sync::Arc;

use crate::convex::{ConvexFunction, ConvexSet};
use crate::error::{check_shape, Error, Result};
use crate::linalg::{inner, Mat};
use crate::manifold::{Manifold, Point};

/// Smooth objective on the ambient space.
pub trait Objective: Debug + Send + Sync {
    fn value(&self, x: &Mat) -> f64;
    fn egrad(&self, x: &Mat) -> Mat;
    /// Ambient Hessian-vector product, when available in closed form.
    fn ehess_apply(&self, _x: &Mat, _d: &Mat) -> Option<Mat> {
        None
    }
}

/// Smooth map from the ambient space into a Euclidean space of matrices.
pub trait SmoothMap: Debug + Send + Sync {
    fn input_shape(&self) -> (usize, usize);
    fn output_shape(&self) -> (usize, usize);
    fn value(&self, x: &Mat) -> Mat;
    /// `Dg(x)[d]`.
    fn jacobian_apply(&self, x: &Mat, d: &Mat) -> Mat;
    /// Ambient adjoint `Dg(x)^* y`.
    fn jacobian_adjoint(&self, x: &Mat, y: &Mat) -> Mat;
    /// `D(x -> Dg(x)^* y)(x)[d]`, when available in closed form.
    fn adjoint_derivative(&self, _x: &Mat, _y: &Mat, _d: &Mat) -> Option<Mat> {
        None
    }
}

/// `f(x) = <x, H x>` on column vectors.
#[derive(Debug, Clone)]
pub struct Quadratic {
    h: Mat,
}

impl Quadratic {
    pub fn new(h: Mat) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::InvalidArgument("quadratic form must be square".into()));
        }
        Ok(Self { h })
    }

    fn sym_apply(&self, d: &Mat) -> Mat {
        &self.h * d + self.h.transpose() * d
    }
}

impl Objective for Quadratic {
    fn value(&self, x: &Mat) -> f64 {
        inner(x, &(&self.h * x))
    }

    fn egrad(&self, x: &Mat) -> Mat {
        self.sym_apply(x)
    }

    fn ehess_apply(&self, _x: &Mat, d: &Mat) -> Option<Mat> {
        Some(self.sym_apply(d))
    }
}

#[derive(Debug, Clone)]
pub struct ZeroObjective {
    shape: (usize, usize),
}

impl ZeroObjective {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { shape }
    }
}

impl Objective for ZeroObjective {
    fn value(&self, _x: &Mat) -> f64 {
        0.0
    }

    fn egrad(&self, _x: &Mat) -> Mat {
        Mat::zeros(self.shape.0, self.shape.1)
    }

    fn ehess_apply(&self, _x: &Mat, _d: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.shape.0, self.shape.1))
    }
}

/// `f(x) - <a, x>`.
#[derive(Debug, Clone)]
pub struct Tilted {
    base: Arc<dyn Objective>,
    a: Mat,
}

impl Objective for Tilted {
    fn value(&self, x: &Mat) -> f64 {
        self.base.value(x) - inner(&self.a, x)
    }

    fn egrad(&self, x: &Mat) -> Mat {
        self.base.egrad(x) - &self.a
    }

    fn ehess_apply(&self, x: &Mat, d: &Mat) -> Option<Mat> {
        self.base.ehess_apply(x, d)
    }
}

/// `g(x) = A x` on column vectors.
#[derive(Debug, Clone)]
pub struct LinearMap {
    a: Mat,
}

impl LinearMap {
    pub fn new(a: Mat) -> Self {
        Self { a }
    }
}

impl SmoothMap for LinearMap {
    fn input_shape(&self) -> (usize, usize) {
        (self.a.ncols(), 1)
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.a.nrows(), 1)
    }

    fn value(&self, x: &Mat) -> Mat {
        &self.a * x
    }

    fn jacobian_apply(&self, _x: &Mat, d: &Mat) -> Mat {
        &self.a * d
    }

    fn jacobian_adjoint(&self, _x: &Mat, y: &Mat) -> Mat {
        self.a.transpose() * y
    }

    fn adjoint_derivative(&self, _x: &Mat, _y: &Mat, _d: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.a.ncols(), 1))
    }
}

#[derive(Debug, Clone)]
pub struct Identity {
    shape: (usize, usize),
}

impl Identity {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { shape }
    }
}

impl SmoothMap for Identity {
    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn output_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn value(&self, x: &Mat) -> Mat {
        x.clone()
    }

    fn jacobian_apply(&self, _x: &Mat, d: &Mat) -> Mat {
        d.clone()
    }

    fn jacobian_adjoint(&self, _x: &Mat, y: &Mat) -> Mat {
        y.clone()
    }

    fn adjoint_derivative(&self, _x: &Mat, _y: &Mat, _d: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.shape.0, self.shape.1))
    }
}

/// `g(X) = P_Omega(X - A)`, zero outside the observed set. Self-adjoint.
#[derive(Debug, Clone)]
pub struct MaskedResidual {
    target: Mat,
    mask: Mat,
}

impl MaskedResidual {
    pub fn new(target: Mat, omega: &[(usize, usize)]) -> Result<Self> {
        let (m, n) = target.shape();
        let mut mask = Mat::zeros(m, n);
        for &(i, j) in omega {
            if i >= m || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "observed index ({i}, {j}) outside a {m}x{n} matrix"
                )));
            }
            mask[(i, j)] = 1.0;
        }
        Ok(Self { target, mask })
    }

    pub fn mask(&self) -> &Mat {
        &self.mask
    }

    fn apply_mask(&self, d: &Mat) -> Mat {
        d.component_mul(&self.mask)
    }
}

impl SmoothMap for MaskedResidual {
    fn input_shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    fn output_shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    fn value(&self, x: &Mat) -> Mat {
        self.apply_mask(&(x - &self.target))
    }

    fn jacobian_apply(&self, _x: &Mat, d: &Mat) -> Mat {
        self.apply_mask(d)
    }

    fn jacobian_adjoint(&self, _x: &Mat, y: &Mat) -> Mat {
        self.apply_mask(y)
    }

    fn adjoint_derivative(&self, _x: &Mat, _y: &Mat, _d: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.target.nrows(), self.target.ncols()))
    }
}

/// `g(x) + b`.
#[derive(Debug, Clone)]
pub struct Shifted {
    base: Arc<dyn SmoothMap>,
    b: Mat,
}

impl SmoothMap for Shifted {
    fn input_shape(&self) -> (usize, usize) {
        self.base.input_shape()
    }

    fn output_shape(&self) -> (usize, usize) {
        self.base.output_shape()
    }

    fn value(&self, x: &Mat) -> Mat {
        self.base.value(x) + &self.b
    }

    fn jacobian_apply(&self, x: &Mat, d: &Mat) -> Mat {
        self.base.jacobian_apply(x, d)
    }

    fn jacobian_adjoint(&self, x: &Mat, y: &Mat) -> Mat {
        self.base.jacobian_adjoint(x, y)
    }

    fn adjoint_derivative(&self, x: &Mat, y: &Mat, d: &Mat) -> Option<Mat> {
        self.base.adjoint_derivative(x, y, d)
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub map: Arc<dyn SmoothMap>,
    pub set: ConvexSet,
}

/// Built-in problem families.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `min x2^2 + |x1 - x2|  s.t.  2 x1 + x2 >= 0` on the unit circle.
    Circle,
    /// `min -|A x|^2 + mu |x|_1` on the unit sphere.
    SphereL1 { a: Mat, mu: f64 },
    /// `min |P_Omega(X - A)|_1` over rank-`rank` matrices.
    Rmc {
        a: Mat,
        omega: Vec<(usize, usize)>,
        rank: usize,
    },
}

/// Evaluation of the augmented Lagrangian together with the multiplier
/// estimates it induces.
#[derive(Debug, Clone)]
pub struct AugEval {
    pub value: f64,
    pub rgrad: Mat,
    /// `rho (u - prox_{theta/rho}(u))`, `u = g1(x) + w/rho`.
    pub y_hat: Mat,
    /// `rho (v - P_Q(v))`, `v = g2(x) + p/rho`; empty without constraint.
    pub z_hat: Mat,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    manifold: Manifold,
    objective: Arc<dyn Objective>,
    g1: Arc<dyn SmoothMap>,
    theta: ConvexFunction,
    constraint: Option<Constraint>,
    label: String,
}

impl ProblemInstance {
    pub fn new(
        manifold: Manifold,
        objective: Arc<dyn Objective>,
        g1: Arc<dyn SmoothMap>,
        theta: ConvexFunction,
        constraint: Option<Constraint>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let shape = manifold.ambient_shape();
        check_shape(shape, g1.input_shape())?;
        if let Some(c) = &constraint {
            check_shape(shape, c.map.input_shape())?;
            check_shape(c.set.shape(), c.map.output_shape())?;
        }
        Ok(Self {
            manifold,
            objective,
            g1,
            theta,
            constraint,
            label: label.into(),
        })
    }

    pub fn from_family(family: &Family) -> Result<Self> {
        match family {
            Family::Circle => {
                let objective = Quadratic::new(Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]))?;
                let g1 = LinearMap::new(Mat::from_row_slice(1, 2, &[1.0, -1.0]));
                let g2 = LinearMap::new(Mat::from_row_slice(1, 2, &[2.0, 1.0]));
                Self::new(
                    Manifold::sphere(2)?,
                    Arc::new(objective),
                    Arc::new(g1),
                    ConvexFunction::scaled_l1(1.0)?,
                    Some(Constraint {
                        map: Arc::new(g2),
                        set: ConvexSet::nonneg((1, 1)),
                    }),
                    "circle",
                )
            }
            Family::SphereL1 { a, mu } => {
                if !a.is_square() {
                    return Err(Error::InvalidArgument("sphere-l1 matrix must be square".into()));
                }
                let n = a.nrows();
                let h = -(a.transpose() * a);
                Self::new(
                    Manifold::sphere(n)?,
                    Arc::new(Quadratic::new(h)?),
                    Arc::new(Identity::new((n, 1))),
                    ConvexFunction::scaled_l1(*mu)?,
                    None,
                    "sphere-l1",
                )
            }
            Family::Rmc { a, omega, rank } => {
                let (m, n) = a.shape();
                Self::new(
                    Manifold::fixed_rank(m, n, *rank)?,
                    Arc::new(ZeroObjective::new((m, n))),
                    Arc::new(MaskedResidual::new(a.clone(), omega)?),
                    ConvexFunction::scaled_l1(1.0)?,
                    None,
                    "rmc",
                )
            }
        }
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn g1(&self) -> &dyn SmoothMap {
        self.g1.as_ref()
    }

    pub fn theta(&self) -> &ConvexFunction {
        &self.theta
    }

    pub fn constraint(&self) -> Option<&Constraint> {
        self.constraint.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn y_shape(&self) -> (usize, usize) {
        self.g1.output_shape()
    }

    pub fn z_shape(&self) -> (usize, usize) {
        self.constraint
            .as_ref()
            .map_or((0, 1), |c| c.map.output_shape())
    }

    pub fn zero_y(&self) -> Mat {
        let (r, c) = self.y_shape();
        Mat::zeros(r, c)
    }

    pub fn zero_z(&self) -> Mat {
        let (r, c) = self.z_shape();
        Mat::zeros(r, c)
    }

    /// Composite objective `f(x) + theta(g1(x))`.
    pub fn value(&self, x: &Point) -> f64 {
        let a = x.ambient();
        self.objective.value(a) + self.theta.value(&self.g1.value(a))
    }

    /// `g2(x)`, empty without constraint.
    pub fn g2_value(&self, x: &Mat) -> Mat {
        match &self.constraint {
            Some(c) => c.map.value(x),
            None => Mat::zeros(0, 1),
        }
    }

    pub fn g2_jacobian_apply(&self, x: &Mat, d: &Mat) -> Mat {
        match &self.constraint {
            Some(c) => c.map.jacobian_apply(x, d),
            None => Mat::zeros(0, 1),
        }
    }

    /// `g2(x) - P_Q(g2(x) + z)`, empty without constraint.
    pub fn constraint_residual(&self, x: &Mat, z: &Mat) -> Result<Mat> {
        match &self.constraint {
            Some(c) => {
                let g2 = c.map.value(x);
                let proj = c.set.project(&(&g2 + z))?;
                Ok(g2 - proj)
            }
            None => Ok(Mat::zeros(0, 1)),
        }
    }

    /// `P_Q(g2(x) + t)`, empty without constraint.
    pub fn project_q(&self, v: &Mat) -> Result<Mat> {
        match &self.constraint {
            Some(c) => c.set.project(v),
            None => Ok(Mat::zeros(0, 1)),
        }
    }

    fn check_multipliers(&self, y: &Mat, z: &Mat) -> Result<()> {
        check_shape(self.y_shape(), y.shape())?;
        check_shape(self.z_shape(), z.shape())
    }

    fn check_x(&self, x: &Point) -> Result<()> {
        check_shape(self.manifold.ambient_shape(), x.ambient().shape())
    }

    /// `L(x, y, z) = f(x) + <y, g1(x)> + <z, g2(x)>`.
    pub fn lagrangian_value(&self, x: &Point, y: &Mat, z: &Mat) -> Result<f64> {
        self.check_x(x)?;
        self.check_multipliers(y, z)?;
        let a = x.ambient();
        let mut v = self.objective.value(a) + inner(y, &self.g1.value(a));
        if let Some(c) = &self.constraint {
            v += inner(z, &c.map.value(a));
        }
        Ok(v)
    }

    /// Ambient gradient `grad f + Dg1^* y + Dg2^* z`.
    pub fn lagrangian_egrad(&self, x: &Mat, y: &Mat, z: &Mat) -> Mat {
        let mut g = self.objective.egrad(x) + self.g1.jacobian_adjoint(x, y);
        if let Some(c) = &self.constraint {
            g += c.map.jacobian_adjoint(x, z);
        }
        g
    }

    pub fn lagrangian_rgrad(&self, x: &Point, y: &Mat, z: &Mat) -> Result<Mat> {
        self.check_x(x)?;
        self.check_multipliers(y, z)?;
        self.manifold
            .riemannian_grad(x, &self.lagrangian_egrad(x.ambient(), y, z))
    }

    fn check_rho(rho: f64) -> Result<()> {
        if rho > 0.0 && rho.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")))
        }
    }

    /// Value of `L_rho(x, w, p)`.
    pub fn aug_lagrangian_value(&self, x: &Point, w: &Mat, p: &Mat, rho: f64) -> Result<f64> {
        Self::check_rho(rho)?;
        self.check_x(x)?;
        self.check_multipliers(w, p)?;
        let a = x.ambient();
        let u = self.g1.value(a) + w / rho;
        let mut v = self.objective.value(a) + self.theta.moreau_env(&u, rho)?.value;
        if let Some(c) = &self.constraint {
            v += c.set.dist2_grad(&(c.map.value(a) + p / rho), rho)?.0;
        }
        Ok(v)
    }

    /// `L_rho(x, w, p)`, its Riemannian gradient and the multiplier estimates.
    pub fn aug_lagrangian(&self, x: &Point, w: &Mat, p: &Mat, rho: f64) -> Result<AugEval> {
        Self::check_rho(rho)?;
        self.check_x(x)?;
        self.check_multipliers(w, p)?;
        let a = x.ambient();
        let u = self.g1.value(a) + w / rho;
        let env = self.theta.moreau_env(&u, rho)?;
        let mut value = self.objective.value(a) + env.value;
        let z_hat = match &self.constraint {
            Some(c) => {
                let (d, grad) = c.set.dist2_grad(&(c.map.value(a) + p / rho), rho)?;
                value += d;
                grad
            }
            None => Mat::zeros(0, 1),
        };
        let egrad = self.lagrangian_egrad(a, &env.grad, &z_hat);
        let rgrad = self.manifold.riemannian_grad(x, &egrad)?;
        Ok(AugEval {
            value,
            rgrad,
            y_hat: env.grad,
            z_hat,
        })
    }

    /// Riemannian Hessian of `l(., z) = f + <z, g2>` applied to `xi`.
    pub fn hess_l_apply(&self, x: &Point, z: &Mat, xi: &Mat) -> Result<Mat> {
        self.hess_lagrangian_apply(x, &self.zero_y(), z, xi)
    }

    /// Riemannian Hessian of `L(., y, z)` applied to `xi`. Missing closed-form
    /// second derivatives fall back to central differences of the ambient
    /// gradient with step `1e-6 (1 + |x|)`.
    pub fn hess_lagrangian_apply(&self, x: &Point, y: &Mat, z: &Mat, xi: &Mat) -> Result<Mat> {
        self.check_x(x)?;
        self.check_multipliers(y, z)?;
        check_shape(self.manifold.ambient_shape(), xi.shape())?;
        let a = x.ambient();
        let egrad = self.lagrangian_egrad(a, y, z);
        let exact = self
            .objective
            .ehess_apply(a, xi)
            .and_then(|h| self.g1.adjoint_derivative(a, y, xi).map(|d| h + d))
            .and_then(|h| match &self.constraint {
                Some(c) => c.map.adjoint_derivative(a, z, xi).map(|d| h + d),
                None => Some(h),
            });
        let ehess_xi = match exact {
            Some(h) => h,
            None => {
                let step = 1e-6 * (1.0 + a.norm());
                let plus = self.lagrangian_egrad(&(a + xi * step), y, z);
                let minus = self.lagrangian_egrad(&(a - xi * step), y, z);
                (plus - minus) / (2.0 * step)
            }
        };
        self.manifold.riemannian_hess_apply(x, &egrad, &ehess_xi, xi)
    }

    /// Instance with `f - <a, x>`, `g1 + b` and `g2 + c`.
    pub fn perturbed(&self, a: &Mat, b: &Mat, c: &Mat) -> Result<Self> {
        check_shape(self.manifold.ambient_shape(), a.shape())?;
        self.check_multipliers(b, c)?;
        let constraint = self.constraint.as_ref().map(|con| Constraint {
            map: Arc::new(Shifted {
                base: Arc::clone(&con.map),
                b: c.clone(),
            }) as Arc<dyn SmoothMap>,
            set: con.set.clone(),
        });
        Ok(Self {
            manifold: self.manifold,
            objective: Arc::new(Tilted {
                base: Arc::clone(&self.objective),
                a: a.clone(),
            }),
            g1: Arc::new(Shifted {
                base: Arc::clone(&self.g1),
                b: b.clone(),
            }),
            theta: self.theta,
            constraint,
            label: format!("{} (perturbed)", self.label),
        })
    }
}
