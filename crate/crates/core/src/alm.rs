//! Inexact Riemannian augmented Lagrangian method.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::manifold::Point;
use crate::problem::ProblemInstance;

/// Inner Riemannian gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub init_step: f64,
    /// Armijo reference is the largest of the last `memory` values; 1 gives
    /// the monotone rule.
    pub memory: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            init_step: 1.0,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlmConfig {
    pub rho0: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eps0: f64,
    pub eps_decay: f64,
    pub eps_floor: f64,
    pub multiplier_bound: f64,
    /// Penalty growth stops here; `rho0` above it is kept as is.
    pub rho_max: f64,
    pub kkt_tol: f64,
    pub max_outer: usize,
    /// Keep `rho = rho0` for the whole run.
    pub fixed_rho: bool,
    pub inner: InnerConfig,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            gamma: 10.0,
            tau: 0.8,
            eps0: 1e-2,
            eps_decay: 0.5,
            eps_floor: 1e-12,
            multiplier_bound: 1e8,
            rho_max: 1e6,
            kkt_tol: 1e-7,
            max_outer: 200,
            fixed_rho: false,
            inner: InnerConfig::default(),
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        positive("rho0", self.rho0)?;
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        unit("tau", self.tau)?;
        positive("eps0", self.eps0)?;
        unit("eps_decay", self.eps_decay)?;
        positive("eps_floor", self.eps_floor)?;
        positive("multiplier_bound", self.multiplier_bound)?;
        positive("rho_max", self.rho_max)?;
        positive("kkt_tol", self.kkt_tol)?;
        positive("armijo_c", self.inner.armijo_c)?;
        unit("backtrack", self.inner.backtrack)?;
        positive("init_step", self.inner.init_step)?;
        if self.inner.armijo_c >= 1.0 {
            return Err(Error::InvalidArgument("armijo_c must be below 1".into()));
        }
        Ok(())
    }
}

/// Components of the KKT residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `|grad_x L(x, y, z)|`.
    pub stationarity: f64,
    /// `|g1(x) - prox_theta(g1(x) + y)|`.
    pub theta_block: f64,
    /// `|g2(x) - P_Q(g2(x) + z)|`.
    pub q_block: f64,
}

impl KktResidual {
    pub fn sum(&self) -> f64 {
        self.stationarity + self.theta_block + self.q_block
    }

    pub fn max(&self) -> f64 {
        self.stationarity.max(self.theta_block).max(self.q_block)
    }
}

/// Primal-dual triple.
#[derive(Debug, Clone)]
pub struct Triple {
    pub x: Point,
    pub y: Mat,
    pub z: Mat,
}

impl Triple {
    pub fn new(x: Point, y: Mat, z: Mat) -> Self {
        Self { x, y, z }
    }

    /// `d(x, x') + |y - y'| + |z - z'|`.
    pub fn distance(&self, problem: &ProblemInstance, other: &Triple) -> f64 {
        problem.manifold().distance(&self.x, &other.x)
            + (&self.y - &other.y).norm()
            + (&self.z - &other.z).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub x: Point,
    pub grad_norm: f64,
    pub iters: usize,
    pub status: InnerStatus,
}

/// Minimizes `L_rho(., w, p)` by Riemannian gradient descent with
/// nonmonotone Armijo backtracking along the retraction until
/// `|grad| <= eps`. The first trial step of each line search is the
/// Barzilai-Borwein step of the previous iteration (the configured
/// `init_step` on the first one).
pub fn subproblem_solve(
    problem: &ProblemInstance,
    w: &Mat,
    p: &Mat,
    rho: f64,
    x_init: &Point,
    eps: f64,
    cfg: &InnerConfig,
) -> Result<Subproblem> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    let manifold = problem.manifold();
    manifold.check_point(x_init)?;
    let mut x = x_init.clone();
    let mut eval = problem.aug_lagrangian(&x, w, p, rho)?;
    let mut step = cfg.init_step;
    let mut status = InnerStatus::MaxIters;
    let mut iters = 0;
    let memory = cfg.memory.max(1);
    let mut recent = std::collections::VecDeque::with_capacity(memory);
    let mut best = (eval.rgrad.norm(), x.clone());

    while iters < cfg.max_iters {
        let gn2 = eval.rgrad.norm_squared();
        if gn2.sqrt() <= eps {
            status = InnerStatus::Converged;
            break;
        }
        if recent.len() == memory {
            recent.pop_front();
        }
        recent.push_back(eval.value);
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let noise = 8.0 * f64::EPSILON * (1.0 + eval.value.abs());
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let cand = manifold.retract(&x, &(&eval.rgrad * -t))?;
            let v = problem.aug_lagrangian_value(&cand, w, p, rho)?;
            if v <= reference - cfg.armijo_c * t * gn2 {
                accepted = Some(problem.aug_lagrangian(&cand, w, p, rho).map(|e| (cand, e))?);
                break;
            }
            if v <= eval.value + noise {
                // Decrease is below the resolution of the function values:
                // accept when the gradient shrinks.
                let e = problem.aug_lagrangian(&cand, w, p, rho)?;
                if e.rgrad.norm_squared() < gn2 {
                    accepted = Some((cand, e));
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        let Some((cand, cand_eval)) = accepted else {
            status = InnerStatus::LineSearchFailed;
            break;
        };
        let s = cand.ambient() - x.ambient();
        let dy = &cand_eval.rgrad - &eval.rgrad;
        let sy = s.dot(&dy);
        step = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(1e-12, 1e12)
        } else {
            cfg.init_step.max(t / cfg.backtrack)
        };
        x = cand;
        eval = cand_eval;
        iters += 1;
        let gn = eval.rgrad.norm();
        if gn < best.0 {
            best = (gn, x.clone());
        }
    }
    if status == InnerStatus::MaxIters && eval.rgrad.norm() <= eps {
        status = InnerStatus::Converged;
    }
    // Nonmonotone steps can leave the last iterate worse than an earlier one.
    let (grad_norm, x) = if status == InnerStatus::Converged || eval.rgrad.norm() <= best.0 {
        (eval.rgrad.norm(), x)
    } else {
        best
    };
    Ok(Subproblem {
        grad_norm,
        x,
        iters,
        status,
    })
}

/// `y+ = rho (u - prox_{theta/rho}(u))`, `u = g1(x) + w/rho`, and
/// `z+ = rho (v - P_Q(v))`, `v = g2(x) + p/rho`.
pub fn update_multipliers(
    problem: &ProblemInstance,
    x_next: &Point,
    w: &Mat,
    p: &Mat,
    rho: f64,
) -> Result<(Mat, Mat)> {
    let eval = problem.aug_lagrangian(x_next, w, p, rho)?;
    Ok((eval.y_hat, eval.z_hat))
}

/// `max(|g1(x) - prox_theta(g1(x) + w/rho)|, |g2(x) - P_Q(g2(x) + p/rho)|)`.
pub fn auxiliary_v(problem: &ProblemInstance, x: &Point, w: &Mat, p: &Mat, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")));
    }
    let a = x.ambient();
    let g1 = problem.g1().value(a);
    let first = (&g1 - problem.theta().prox(&(&g1 + w / rho), 1.0)?).norm();
    let second = problem.constraint_residual(a, &(p / rho))?.norm();
    Ok(first.max(second))
}

/// Keeps `rho` when `k = 0` or `V_new <= tau V_prev`, otherwise multiplies by `gamma`.
pub fn penalty_update(v_new: f64, v_prev: f64, rho: f64, gamma: f64, tau: f64, k: usize) -> f64 {
    if k == 0 || v_new <= tau * v_prev {
        rho
    } else {
        rho * gamma
    }
}

pub fn kkt_residual(problem: &ProblemInstance, x: &Point, y: &Mat, z: &Mat) -> Result<KktResidual> {
    let a = x.ambient();
    let stationarity = problem.lagrangian_rgrad(x, y, z)?.norm();
    let g1 = problem.g1().value(a);
    let theta_block = (&g1 - problem.theta().prox(&(&g1 + y), 1.0)?).norm();
    let q_block = problem.constraint_residual(a, z)?.norm();
    Ok(KktResidual {
        stationarity,
        theta_block,
        q_block,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlmStatus {
    Converged,
    MaxOuterReached,
    SubproblemStall,
}

impl AlmStatus {
    pub fn is_converged(self) -> bool {
        self == AlmStatus::Converged
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlmStatus::Converged => "converged",
            AlmStatus::MaxOuterReached => "max-outer-reached",
            AlmStatus::SubproblemStall => "subproblem-stall",
        }
    }
}

/// One outer iteration. Record `k = 0` describes the initial triple.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Penalty used to produce this iterate.
    pub rho: f64,
    pub residual: KktResidual,
    pub v: f64,
    pub inner_grad_norm: f64,
    pub inner_iters: usize,
    pub eps: f64,
    pub wall_time: f64,
    pub dist_to_reference: Option<f64>,
    /// `|grad L(x+, y+, z+) - grad L_rho(x+, w, p)|`.
    pub chain_gap: f64,
    /// `|g1 - prox_theta(g1 + y+)| - |g1 - prox_{theta/rho}(g1 + w/rho)|`; nonpositive up to roundoff.
    pub multiplier_slack: f64,
    /// `R+ - (eps + |y+ - y|/rho + |z+ - z|/rho)` when the safeguard did not clamp.
    pub residual_bound_slack: Option<f64>,
    pub clamped: bool,
}

impl IterationRecord {
    /// Equality ignoring the wall-clock column.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        Self {
            wall_time: 0.0,
            ..self.clone()
        } == Self {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlmResult {
    pub status: AlmStatus,
    pub triple: Triple,
    pub residual: KktResidual,
    pub history: Vec<IterationRecord>,
}

impl AlmResult {
    pub fn outer_iterations(&self) -> usize {
        self.history.last().map_or(0, |r| r.k)
    }
}

fn clamp(m: &Mat, bound: f64) -> Mat {
    m.map(|v| v.clamp(-bound, bound))
}

pub fn alm_run(problem: &ProblemInstance, config: &AlmConfig, start: Triple) -> Result<AlmResult> {
    alm_run_with_reference(problem, config, start, None)
}

/// Runs the method from `start`; when `reference` is given every record
/// carries the distance of the iterate to it.
pub fn alm_run_with_reference(
    problem: &ProblemInstance,
    config: &AlmConfig,
    start: Triple,
    reference: Option<&Triple>,
) -> Result<AlmResult> {
    config.validate()?;
    problem
        .manifold()
        .check_point(&start.x)
        .map_err(|e| Error::InvalidArgument(format!("initial point: {e}")))?;
    let clock = Instant::now();
    let Triple { mut x, mut y, mut z } = start;
    let mut rho = config.rho0;
    let mut residual = kkt_residual(problem, &x, &y, &z)?;
    let bound = config.multiplier_bound;

    let dist = |t: &Triple| reference.map(|r| t.distance(problem, r));
    let v0 = auxiliary_v(problem, &x, &clamp(&y, bound), &clamp(&z, bound), rho)?;
    let mut history = vec![IterationRecord {
        k: 0,
        rho,
        residual,
        v: v0,
        inner_grad_norm: 0.0,
        inner_iters: 0,
        eps: 0.0,
        wall_time: clock.elapsed().as_secs_f64(),
        dist_to_reference: dist(&Triple::new(x.clone(), y.clone(), z.clone())),
        chain_gap: 0.0,
        multiplier_slack: 0.0,
        residual_bound_slack: None,
        clamped: false,
    }];
    let mut best = (residual, Triple::new(x.clone(), y.clone(), z.clone()));
    let mut v_prev = 0.0;
    let mut k = 0;

    let status = loop {
        if residual.max() <= config.kkt_tol {
            break AlmStatus::Converged;
        }
        if k >= config.max_outer {
            break AlmStatus::MaxOuterReached;
        }
        let w = clamp(&y, bound);
        let p = clamp(&z, bound);
        let clamped = w != y || p != z;
        let decay = config.eps0 * config.eps_decay.powi(k.min(i32::MAX as usize) as i32);
        let eps = decay.min(0.1 * residual.sum()).max(config.eps_floor);

        let sub = subproblem_solve(problem, &w, &p, rho, &x, eps, &config.inner)?;
        let eval = problem.aug_lagrangian(&sub.x, &w, &p, rho)?;
        let (y_next, z_next) = (eval.y_hat, eval.z_hat);
        let v_new = auxiliary_v(problem, &sub.x, &w, &p, rho)?;
        let next_residual = kkt_residual(problem, &sub.x, &y_next, &z_next)?;

        let chain_gap = (problem.lagrangian_rgrad(&sub.x, &y_next, &z_next)? - &eval.rgrad).norm();
        let g1 = problem.g1().value(sub.x.ambient());
        let q = problem.theta().prox(&(&g1 + &w / rho), 1.0 / rho)?;
        let multiplier_slack = next_residual.theta_block - (&g1 - q).norm();
        let residual_bound_slack = (!clamped).then(|| {
            next_residual.sum()
                - (eps.max(sub.grad_norm)
                    + (&y_next - &y).norm() / rho
                    + (&z_next - &z).norm() / rho)
        });

        let rho_next = if config.fixed_rho {
            rho
        } else {
            penalty_update(v_new, v_prev, rho, config.gamma, config.tau, k).min(config.rho_max.max(rho))
        };
        x = sub.x;
        y = y_next;
        z = z_next;
        residual = next_residual;
        k += 1;
        history.push(IterationRecord {
            k,
            rho,
            residual,
            v: v_new,
            inner_grad_norm: sub.grad_norm,
            inner_iters: sub.iters,
            eps,
            wall_time: clock.elapsed().as_secs_f64(),
            dist_to_reference: dist(&Triple::new(x.clone(), y.clone(), z.clone())),
            chain_gap,
            multiplier_slack,
            residual_bound_slack,
            clamped,
        });
        if residual.max() < best.0.max() {
            best = (residual, Triple::new(x.clone(), y.clone(), z.clone()));
        }
        v_prev = v_new;
        rho = rho_next;

        if residual.max() > config.kkt_tol && sub.status != InnerStatus::Converged {
            break AlmStatus::SubproblemStall;
        }
    };

    let (residual, triple) = if status.is_converged() {
        (residual, Triple::new(x, y, z))
    } else {
        best
    };
    Ok(AlmResult {
        status,
        triple,
        residual,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{circle_solution, sphere_l1_matrix};
    use crate::linalg::column;
    use crate::problem::Family;

    fn circle() -> ProblemInstance {
        ProblemInstance::from_family(&Family::Circle).unwrap()
    }

    fn circle_star(p: &ProblemInstance) -> Triple {
        let (x, y, z) = circle_solution();
        Triple::new(p.manifold().point(x).unwrap(), y, z)
    }

    #[test]
    fn defaults_are_valid() {
        AlmConfig::default().validate().unwrap();
        let bad = AlmConfig {
            tau: 1.0,
            ..AlmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlmConfig {
            rho0: -1.0,
            ..AlmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn penalty_rule() {
        assert_eq!(penalty_update(5.0, 1.0, 2.0, 10.0, 0.8, 0), 2.0);
        assert_eq!(penalty_update(0.0, 1.0, 2.0, 10.0, 0.8, 3), 2.0);
        assert_eq!(penalty_update(1.0, 1.0, 1.0, 10.0, 0.8, 3), 10.0);
    }

    #[test]
    fn kkt_residual_examples() {
        let p = circle();
        let s = circle_star(&p);
        assert!(kkt_residual(&p, &s.x, &s.y, &s.z).unwrap().sum() < 1e-12);
        let x = p.manifold().point(column(&[1.0, 0.0])).unwrap();
        let r = kkt_residual(&p, &x, &column(&[0.0]), &column(&[0.0])).unwrap();
        assert!((r.sum() - 1.0).abs() < 1e-15);
        assert_eq!(r.stationarity, 0.0);
    }

    #[test]
    fn auxiliary_examples() {
        let p = circle();
        let x = p.manifold().point(column(&[1.0, 0.0])).unwrap();
        let v = auxiliary_v(&p, &x, &column(&[0.0]), &column(&[0.0]), 1.0).unwrap();
        assert_eq!(v, 1.0);
        let s = circle_star(&p);
        assert!(auxiliary_v(&p, &s.x, &s.y, &s.z, 1e6).unwrap() < 1e-12);
    }

    #[test]
    fn multiplier_update_examples() {
        // theta = 0.25 |.|_1 with g1 = identity on the sphere.
        let p = ProblemInstance::from_family(&Family::SphereL1 {
            a: Mat::identity(2, 2),
            mu: 0.25,
        })
        .unwrap();
        let x = p.manifold().point(column(&[0.0, 1.0])).unwrap();
        let (y, _) = update_multipliers(&p, &x, &column(&[0.1, -1.0]), &p.zero_z(), 1.0).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15);
        assert_eq!(y[1], 0.0);

        let c = circle();
        let x = c.manifold().point(column(&[-0.6, 0.8])).unwrap();
        // g2 = -0.4, p / rho = -1.1: v = -1.5.
        let (_, z) = update_multipliers(&c, &x, &column(&[0.0]), &column(&[-2.2]), 2.0).unwrap();
        assert!((z[0] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn subproblem_at_solution_returns_immediately() {
        let p = circle();
        let s = circle_star(&p);
        let sub = subproblem_solve(&p, &s.y, &s.z, 100.0, &s.x, 1e-9, &InnerConfig::default()).unwrap();
        assert_eq!(sub.iters, 0);
        assert!(sub.grad_norm < 1e-12);
        assert_eq!(sub.status, InnerStatus::Converged);
    }

    #[test]
    fn subproblem_from_random_start() {
        let p = circle();
        let x0 = p.manifold().random_point(11);
        let sub = subproblem_solve(&p, &p.zero_y(), &p.zero_z(), 10.0, &x0, 1e-3, &InnerConfig::default()).unwrap();
        assert_eq!(sub.status, InnerStatus::Converged);
        assert!(sub.grad_norm <= 1e-3);
    }

    #[test]
    fn sphere_l1_subproblem_decreases_objective() {
        let p = ProblemInstance::from_family(&Family::SphereL1 {
            a: sphere_l1_matrix(),
            mu: 0.25,
        })
        .unwrap();
        let m = p.manifold();
        let x0 = m.project_to_manifold(&Mat::from_element(5, 1, 1.0)).unwrap();
        let sub = subproblem_solve(&p, &p.zero_y(), &p.zero_z(), 10.0, &x0, 1e-8, &InnerConfig::default()).unwrap();
        assert_eq!(sub.status, InnerStatus::Converged);
        assert!(p.value(&sub.x) <= p.value(&x0));
        assert!((sub.x.ambient()[1].abs() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn run_from_solution_stops_at_zero() {
        let p = circle();
        let s = circle_star(&p);
        let res = alm_run(&p, &AlmConfig::default(), s).unwrap();
        assert_eq!(res.status, AlmStatus::Converged);
        assert_eq!(res.outer_iterations(), 0);
        assert_eq!(res.history.len(), 1);
    }

    #[test]
    fn zero_outer_budget_is_partial() {
        let p = circle();
        let x0 = p.manifold().point(column(&[1.0, 0.0])).unwrap();
        let cfg = AlmConfig {
            max_outer: 0,
            ..AlmConfig::default()
        };
        let res = alm_run(&p, &cfg, Triple::new(x0, p.zero_y(), p.zero_z())).unwrap();
        assert_eq!(res.status, AlmStatus::MaxOuterReached);
    }

    #[test]
    fn circle_run_converges() {
        let p = circle();
        let star = circle_star(&p);
        let x0 = p.manifold().point(column(&[0.0, 1.0])).unwrap();
        let res = alm_run(&p, &AlmConfig::default(), Triple::new(x0, p.zero_y(), p.zero_z())).unwrap();
        assert_eq!(res.status, AlmStatus::Converged);
        assert!(res.triple.distance(&p, &star) < 1e-6);
        for pair in res.history.windows(2) {
            assert!(pair[1].rho >= pair[0].rho);
        }
    }

    #[test]
    fn penalty_growth_stops_at_cap() {
        // A 20-dimensional instance whose solution has entries below mu keeps
        // V bounded away from zero, so the rule asks for growth every step.
        let a = crate::instances::sphere_l1_random_matrix(20, 7);
        let p = ProblemInstance::from_family(&Family::SphereL1 { a, mu: 0.25 }).unwrap();
        let x0 = p.manifold().random_point(7);
        let cfg = AlmConfig {
            kkt_tol: 1e-10,
            rho_max: 1e4,
            ..AlmConfig::default()
        };
        let res = alm_run(&p, &cfg, Triple::new(x0, p.zero_y(), p.zero_z())).unwrap();
        assert!(res.history.iter().all(|r| r.rho <= 1e4));
        assert_eq!(res.status, AlmStatus::Converged);

        let above = AlmConfig {
            rho0: 1e7,
            ..AlmConfig::default()
        };
        let x0 = circle().manifold().point(column(&[1.0, 0.0])).unwrap();
        let res = alm_run(&circle(), &above, Triple::new(x0, column(&[0.0]), column(&[0.0]))).unwrap();
        assert!(res.history.iter().all(|r| r.rho == 1e7));
    }
}
