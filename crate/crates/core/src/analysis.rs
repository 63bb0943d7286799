//! Numerical checks of constraint qualifications, second-order conditions,
//! calmness and error bounds at KKT points.
//!
//! All cone computations work in coordinates of an orthonormal tangent basis,
//! so the routines here are limited to ambient dimensions supported by
//! [`Manifold::tangent_basis`](crate::manifold::Manifold::tangent_basis).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::alm::{alm_run, kkt_residual, AlmConfig, Triple};
use crate::convex::{ConjugateValue, CoordinateCone};
use crate::error::{check_shape, Error, Result};
use crate::linalg::{column_space, inner, null_space, numerical_rank, positively_spans, Mat};
use crate::manifold::Point;
use crate::problem::ProblemInstance;

/// Tolerances shared by the condition checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Largest KKT residual accepted as "approximately KKT".
    pub kkt_gate: f64,
    /// Singular values below `rank * sigma_max` count as zero.
    pub rank: f64,
    /// Cone membership slack.
    pub cone: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kkt_gate: 1e-6,
            rank: 1e-8,
            cone: 1e-8,
        }
    }
}

impl Tolerances {
    /// Threshold for deciding which components of `g1`, `g2` and the
    /// multipliers sit on a kink, given the KKT residual of the point. Errors
    /// of order `R` are tolerated through the `sqrt(R)` term.
    pub fn identification(&self, residual: f64) -> f64 {
        self.cone.max(residual.sqrt())
    }
}

/// Triple together with its stored KKT residual `R`.
#[derive(Debug, Clone)]
pub struct KktTriple {
    pub triple: Triple,
    pub residual: f64,
}

impl KktTriple {
    pub fn evaluate(problem: &ProblemInstance, triple: Triple) -> Result<Self> {
        let residual = kkt_residual(problem, &triple.x, &triple.y, &triple.z)?.sum();
        Ok(Self { triple, residual })
    }
}

/// Blocks of the natural map
/// `F = (grad_x L(x, y, z), g1 - prox_theta(g1 + y), g2 - P_Q(g2 + z))`.
#[derive(Debug, Clone)]
pub struct NaturalMap {
    pub stationarity: Mat,
    pub theta_block: Mat,
    pub q_block: Mat,
}

impl NaturalMap {
    /// Sum of the blockwise norms; equals the KKT residual `R`.
    pub fn blockwise_norm_sum(&self) -> f64 {
        self.stationarity.norm() + self.theta_block.norm() + self.q_block.norm()
    }

    /// All blocks vectorized and concatenated.
    pub fn stacked(&self) -> Vec<f64> {
        [&self.stationarity, &self.theta_block, &self.q_block]
            .iter()
            .flat_map(|m| m.iter().copied())
            .collect()
    }
}

pub fn natural_map(problem: &ProblemInstance, x: &Point, y: &Mat, z: &Mat) -> Result<NaturalMap> {
    problem.manifold().check_point(x)?;
    let a = x.ambient();
    let stationarity = problem.lagrangian_rgrad(x, y, z)?;
    let g1 = problem.g1().value(a);
    let theta_block = &g1 - problem.theta().prox(&(&g1 + y), 1.0)?;
    let q_block = problem.constraint_residual(a, z)?;
    Ok(NaturalMap {
        stationarity,
        theta_block,
        q_block,
    })
}

fn check_tangent(problem: &ProblemInstance, x: &Point, xi: &Mat, tol: f64) -> Result<()> {
    let m = problem.manifold();
    check_shape(m.ambient_shape(), xi.shape())?;
    let normal = (xi - m.project_tangent(x, xi)?).norm();
    if normal > tol * xi.norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "direction has normal component {normal:.3e}"
        )));
    }
    Ok(())
}

/// Whether `xi` lies in the critical cone
/// `{xi : <grad f, xi> + theta^(g1; Dg1 xi) = 0, Dg2 xi in T_Q(g2) ∩ z^perp}`.
pub fn critical_cone_member(
    problem: &ProblemInstance,
    x: &Point,
    z: &Mat,
    xi: &Mat,
    tol: f64,
) -> Result<bool> {
    check_tangent(problem, x, xi, tol)?;
    check_shape(problem.z_shape(), z.shape())?;
    let a = x.ambient();
    let first = inner(&problem.objective().egrad(a), xi)
        + problem
            .theta()
            .directional_derivative(&problem.g1().value(a), &problem.g1().jacobian_apply(a, xi));
    if first.abs() > tol {
        return Ok(false);
    }
    match problem.constraint() {
        None => Ok(true),
        Some(c) => {
            let classes = c.set.critical_cone_classes(&c.map.value(a), z, tol)?;
            let d = c.map.jacobian_apply(a, xi);
            Ok(classes.iter().zip(d.iter()).all(|(k, &dv)| k.contains(dv, tol)))
        }
    }
}

/// Critical cone in tangent coordinates: `{c : E c = 0, G c >= 0}`, with
/// `xi = B c` for the orthonormal tangent basis `B`.
struct CriticalSystem {
    basis: Mat,
    /// `[Dg1 B; Dg2 B]`.
    images: Mat,
    classes: Vec<CoordinateCone>,
}

impl CriticalSystem {
    fn build(problem: &ProblemInstance, t: &Triple, tol: f64) -> Result<Self> {
        let m = problem.manifold();
        let (rows, cols) = m.ambient_shape();
        let basis = m.tangent_basis(&t.x)?;
        let a = t.x.ambient();
        let (yr, yc) = problem.y_shape();
        let (zr, zc) = problem.z_shape();
        let (ny, nz) = (yr * yc, zr * zc);
        let mut images = Mat::zeros(ny + nz, basis.ncols());
        for (j, b) in basis.column_iter().enumerate() {
            let xi = Mat::from_column_slice(rows, cols, b.as_slice());
            let d1 = problem.g1().jacobian_apply(a, &xi);
            images.view_mut((0, j), (ny, 1)).copy_from_slice(d1.as_slice());
            if nz > 0 {
                let d2 = problem.g2_jacobian_apply(a, &xi);
                images.view_mut((ny, j), (nz, 1)).copy_from_slice(d2.as_slice());
            }
        }
        let g1 = problem.g1().value(a);
        let mut classes = problem.theta().critical_cone_classes(&g1, &t.y, tol);
        if let Some(c) = problem.constraint() {
            classes.extend(c.set.critical_cone_classes(&c.map.value(a), &t.z, tol)?);
        }
        Ok(Self {
            basis,
            images,
            classes,
        })
    }

    fn rows_of(&self, pick: impl Fn(CoordinateCone) -> Option<f64>) -> Mat {
        let picked: Vec<(usize, f64)> = self
            .classes
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| pick(k).map(|s| (i, s)))
            .collect();
        let mut out = Mat::zeros(picked.len(), self.images.ncols());
        for (r, &(i, s)) in picked.iter().enumerate() {
            out.row_mut(r).copy_from(&(self.images.row(i) * s));
        }
        out
    }

    /// Returns `(N, H)`: `N` spans `{c : E c = 0}` and the cone is
    /// `{N u : H u >= 0}`.
    fn reduced(&self, rank_tol: f64) -> (Mat, Mat) {
        let eq = self.rows_of(|k| (k == CoordinateCone::Zero).then_some(1.0));
        let ineq = self.rows_of(|k| match k {
            CoordinateCone::NonNeg => Some(1.0),
            CoordinateCone::NonPos => Some(-1.0),
            _ => None,
        });
        let n = null_space(&eq, rank_tol);
        let h = &ineq * &n;
        (n, h)
    }

    /// Exact test of `C(x) = {0}`: either no direction survives the equalities,
    /// or the remaining inequality rows positively span the reduced space.
    fn cone_is_trivial(&self, rank_tol: f64) -> bool {
        let (n, h) = self.reduced(rank_tol);
        n.ncols() == 0 || positively_spans(&h.transpose(), n.ncols(), rank_tol)
    }
}

fn gate(problem: &ProblemInstance, t: &Triple, tol: &Tolerances) -> Result<f64> {
    let r = kkt_residual(problem, &t.x, &t.y, &t.z)?.sum();
    if r > tol.kkt_gate {
        return Err(Error::Precondition(format!(
            "KKT residual {r:.3e} exceeds the gate {:.1e}",
            tol.kkt_gate
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsrcqReport {
    pub pass: bool,
    /// Rank of the stacked generator matrix.
    pub rank: usize,
    /// `dim Y + dim Z`.
    pub required: usize,
}

/// Strict Robinson condition
/// `[Dg1; Dg2] T_x M + C_theta(g1, y) x (T_Q(g2) ∩ z^perp) = Y x Z`.
///
/// Generators are an orthonormal basis of the image of the tangent space
/// (both signs) plus coordinate rays of the cone blocks. The check passes when
/// they positively span the whole space, which implies full row rank.
pub fn msrcq_check(problem: &ProblemInstance, t: &Triple, tol: &Tolerances) -> Result<MsrcqReport> {
    let r = gate(problem, t, tol)?;
    let sys = CriticalSystem::build(problem, t, tol.identification(r))?;
    let dim = sys.images.nrows();
    let image = column_space(&sys.images, tol.rank);
    let rays: Vec<(usize, f64)> = sys
        .classes
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| {
            let signs: &[f64] = match k {
                CoordinateCone::Free => &[1.0, -1.0],
                CoordinateCone::NonNeg => &[1.0],
                CoordinateCone::NonPos => &[-1.0],
                CoordinateCone::Zero => &[],
            };
            signs.iter().map(move |&s| (i, s))
        })
        .collect();
    let mut gens = Mat::zeros(dim, 2 * image.ncols() + rays.len());
    for (j, c) in image.column_iter().enumerate() {
        gens.column_mut(2 * j).copy_from(&c);
        gens.column_mut(2 * j + 1).copy_from(&(-c));
    }
    for (j, &(i, s)) in rays.iter().enumerate() {
        gens[(i, 2 * image.ncols() + j)] = s;
    }
    let rank = numerical_rank(&gens, tol.rank);
    let pass = rank == dim && positively_spans(&gens, dim, tol.rank);
    Ok(MsrcqReport {
        pass,
        rank,
        required: dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsoscVerdict {
    Pass,
    Fail,
    /// The critical cone is `{0}`, so the condition holds trivially.
    Vacuous,
}

impl MsoscVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            MsoscVerdict::Pass => "pass",
            MsoscVerdict::Fail => "fail",
            MsoscVerdict::Vacuous => "vacuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsoscReport {
    pub verdict: MsoscVerdict,
    /// Smallest finite `q(xi)` over the samples.
    pub min_value: Option<f64>,
    /// Accepted critical directions.
    pub samples: usize,
    /// Samples where the conjugate term was `+inf`.
    pub infinite: usize,
    pub critical_cone_trivial: bool,
}

/// Second-order check `q(xi) = <xi, Hess L xi> - psi*(y) > 0` on unit critical
/// directions. `C(x) = {0}` is decided exactly; otherwise `n_samples`
/// directions are drawn from the cone by rejection in its reduced coordinates.
/// A pass is evidence, not a certificate.
pub fn msosc_check(
    problem: &ProblemInstance,
    t: &Triple,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MsoscReport> {
    let r = gate(problem, t, tol)?;
    let id_tol = tol.identification(r);
    let sys = CriticalSystem::build(problem, t, id_tol)?;
    if sys.cone_is_trivial(tol.rank) {
        return Ok(MsoscReport {
            verdict: MsoscVerdict::Vacuous,
            min_value: None,
            samples: 0,
            infinite: 0,
            critical_cone_trivial: true,
        });
    }

    let (n, h) = sys.reduced(tol.rank);
    let (rows, cols) = problem.manifold().ambient_shape();
    let a = t.x.ambient();
    let g1 = problem.g1().value(a).map(|v| if v.abs() <= id_tol { 0.0 } else { v });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut samples, mut infinite, mut failed) = (0, 0, false);
    let mut min_value: Option<f64> = None;
    let max_attempts = 1000 * n_samples.max(1);
    for _ in 0..max_attempts {
        if samples == n_samples {
            break;
        }
        let u = Mat::from_fn(n.ncols(), 1, |_, _| rng.sample(StandardNormal));
        if h.nrows() > 0 && (&h * &u).min() < 0.0 {
            continue;
        }
        let c = &n * u;
        let v = &sys.basis * c;
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let xi = Mat::from_column_slice(rows, cols, (v / norm).as_slice());
        samples += 1;
        let curvature = inner(&xi, &problem.hess_lagrangian_apply(&t.x, &t.y, &t.z, &xi)?);
        let d = problem.g1().jacobian_apply(a, &xi);
        match problem.theta().psi_conjugate(&g1, &d, &t.y) {
            ConjugateValue::Finite(s) => {
                let q = curvature - s;
                min_value = Some(min_value.map_or(q, |m| m.min(q)));
            }
            ConjugateValue::Infinite => {
                infinite += 1;
                failed |= curvature < 0.0;
            }
        }
    }
    let pass = !failed && samples > 0 && min_value.is_none_or(|m| m > tol.cone);
    Ok(MsoscReport {
        verdict: if pass { MsoscVerdict::Pass } else { MsoscVerdict::Fail },
        min_value,
        samples,
        infinite,
        critical_cone_trivial: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub msrcq: MsrcqReport,
    pub msosc: MsoscReport,
    pub tolerances: Tolerances,
    pub residual: f64,
}

impl ConditionReport {
    pub fn critical_cone_trivial(&self) -> bool {
        self.msosc.critical_cone_trivial
    }
}

pub fn check_conditions(
    problem: &ProblemInstance,
    t: &Triple,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<ConditionReport> {
    let residual = gate(problem, t, tol)?;
    Ok(ConditionReport {
        msrcq: msrcq_check(problem, t, tol)?,
        msosc: msosc_check(problem, t, n_samples, seed, tol)?,
        tolerances: *tol,
        residual,
    })
}

/// Settings of the calmness probe.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Solver settings for the perturbed problems; `kkt_tol` is overridden per
    /// radius by `min(1e-10, 1e-3 r)`.
    pub alm: AlmConfig,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `1` runs sequentially.
    pub jobs: usize,
    pub tolerances: Tolerances,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            alm: AlmConfig::default(),
            trials: 20,
            seed: 0,
            jobs: 1,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub radius: f64,
    pub trial: usize,
    /// `None` when the perturbed solve did not converge.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusRecord {
    pub radius: f64,
    pub trials: usize,
    pub failed: usize,
    /// Largest ratio over the successful trials; `NaN` if none succeeded.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub radii: Vec<RadiusRecord>,
    pub trials: Vec<TrialRecord>,
    /// Largest ratio over all radii.
    pub kappa: f64,
}

impl ProbeReport {
    /// No growth beyond a factor 2 between consecutive radii, in the order given.
    pub fn bounded(&self) -> bool {
        self.radii.iter().all(|r| r.max_ratio.is_finite())
            && self
                .radii
                .windows(2)
                .all(|w| w[1].max_ratio <= 2.0 * w[0].max_ratio)
    }

    pub fn max_ratio_at(&self, radius: f64) -> Option<f64> {
        self.radii
            .iter()
            .find(|r| r.radius == radius)
            .map(|r| r.max_ratio)
    }
}

fn gaussian_like(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Mat {
    Mat::from_fn(shape.0, shape.1, |_, _| rng.sample(StandardNormal))
}

fn run_trial(
    problem: &ProblemInstance,
    star: &Triple,
    radius: f64,
    stream: u64,
    config: &ProbeConfig,
) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut a = gaussian_like(&mut rng, problem.manifold().ambient_shape());
    let mut b = gaussian_like(&mut rng, problem.y_shape());
    let mut c = gaussian_like(&mut rng, problem.z_shape());
    let norm = (a.norm_squared() + b.norm_squared() + c.norm_squared()).sqrt();
    let scale = radius / norm;
    a *= scale;
    b *= scale;
    c *= scale;
    let perturbed = problem.perturbed(&a, &b, &c)?;
    let alm = AlmConfig {
        kkt_tol: (1e-3 * radius).min(1e-10),
        ..config.alm.clone()
    };
    let result = alm_run(&perturbed, &alm, star.clone())?;
    Ok(result
        .status
        .is_converged()
        .then(|| result.triple.distance(problem, star) / radius))
}

/// Robust isolated calmness probe: for each radius, perturbs the data by
/// `(a, b, c)` uniform on the sphere of that norm, re-solves warm-started at
/// the reference triple and records `dist / |q|`. The multiplier distance is
/// taken to the singleton `{(y*, z*)}`, so the probe refuses to run when the
/// strict Robinson condition fails.
pub fn calmness_probe(
    problem: &ProblemInstance,
    star: &Triple,
    radii: &[f64],
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("probe radii must be positive".into()));
    }
    config.alm.validate()?;
    if !msrcq_check(problem, star, &config.tolerances)?.pass {
        return Err(Error::Precondition(
            "strict Robinson condition fails; multipliers need not be unique".into(),
        ));
    }
    let jobs: Vec<(usize, f64, usize)> = radii
        .iter()
        .enumerate()
        .flat_map(|(i, &r)| (0..config.trials).map(move |j| (i, r, j)))
        .collect();
    let run = || -> Result<Vec<TrialRecord>> {
        jobs.par_iter()
            .map(|&(i, radius, trial)| {
                let stream = (i * config.trials + trial) as u64;
                let ratio = run_trial(problem, star, radius, stream, config)?;
                Ok(TrialRecord {
                    radius,
                    trial,
                    ratio,
                })
            })
            .collect()
    };
    let trials = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
        .install(run)?;

    let records: Vec<RadiusRecord> = radii
        .iter()
        .map(|&radius| {
            let ratios: Vec<f64> = trials
                .iter()
                .filter(|t| t.radius == radius)
                .filter_map(|t| t.ratio)
                .collect();
            RadiusRecord {
                radius,
                trials: config.trials,
                failed: config.trials - ratios.len(),
                max_ratio: ratios.iter().copied().fold(f64::NAN, f64::max),
            }
        })
        .collect();
    let kappa = records.iter().map(|r| r.max_ratio).fold(f64::NAN, f64::max);
    Ok(ProbeReport {
        radii: records,
        trials,
        kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSample {
    pub dist: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundFit {
    /// `min dist / R` over the samples with `R > 1e-14`.
    pub c1: f64,
    /// `max dist / R` over the same samples.
    pub c2: f64,
    pub samples: Vec<BoundSample>,
    /// Samples discarded because `R <= 1e-14`.
    pub excluded: usize,
}

/// Residuals at or below this are treated as exact KKT points.
pub const ZERO_RESIDUAL: f64 = 1e-14;

/// Fits `c1 R <= d(x, x*) + |y - y*| + |z - z*| <= c2 R` on points
/// `(R_{x*}(xi), y* + dy, z* + dz)` with `(xi, dy, dz)` uniform in the ball of
/// the given radius.
pub fn error_bound_fit(
    problem: &ProblemInstance,
    star: &Triple,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<ErrorBoundFit> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument("neighbourhood radius must be positive".into()));
    }
    let m = problem.manifold();
    let dim = (m.dimension() + problem.y_shape().0 * problem.y_shape().1
        + problem.z_shape().0 * problem.z_shape().1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut excluded = 0;
    for _ in 0..n_samples {
        let xi = m.random_tangent_with(&star.x, &mut rng);
        let dy = gaussian_like(&mut rng, problem.y_shape());
        let dz = gaussian_like(&mut rng, problem.z_shape());
        let norm = (xi.norm_squared() + dy.norm_squared() + dz.norm_squared()).sqrt();
        let len = radius * rng.random::<f64>().powf(1.0 / dim);
        let scale = if norm > 0.0 { len / norm } else { 0.0 };
        let x = m.retract(&star.x, &(xi * scale))?;
        let t = Triple::new(x, &star.y + dy * scale, &star.z + dz * scale);
        let residual = kkt_residual(problem, &t.x, &t.y, &t.z)?.sum();
        if residual <= ZERO_RESIDUAL {
            excluded += 1;
            continue;
        }
        samples.push(BoundSample {
            dist: t.distance(problem, star),
            residual,
        });
    }
    if samples.is_empty() {
        return Err(Error::Precondition(
            "degenerate error-bound fit: every sample is an exact KKT point".into(),
        ));
    }
    let ratios = samples.iter().map(|s| s.dist / s.residual);
    let (c1, c2) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok(ErrorBoundFit {
        c1,
        c2,
        samples,
        excluded,
    })
}
