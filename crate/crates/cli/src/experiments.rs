//! Experiment runners shared by the binary and the tests.

use rayon::prelude::*;
use riemalm::alm::{alm_run, alm_run_with_reference, AlmConfig, AlmResult, InnerConfig, IterationRecord, Triple};
use riemalm::analysis::{
    calmness_probe, check_conditions, error_bound_fit, ConditionReport, ErrorBoundFit, ProbeConfig,
    ProbeReport, Tolerances,
};
use riemalm::instances::{
    circle_solution, rmc_basic, rmc_random, sphere_l1_matrix, sphere_l1_random_matrix, RmcData,
};
use riemalm::problem::{Family, ProblemInstance};
use riemalm::{Mat, Point, Result};

/// Penalties compared in the rate experiment.
pub const FIGURE1_RHOS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
/// Number of trailing iterations used for the rate fit.
pub const FIT_WINDOW: usize = 10;
/// Robust-deviation cutoff of the trimmed spectral start for random completion.
pub const TRIM_CUTOFF: f64 = 3.0;
/// Target residual of the polishing run that precedes the analysis suite.
pub const POLISH_TOL: f64 = 1e-12;
/// Starting penalty of the warm-started perturbed solves in the calmness probe.
pub const PROBE_RHO0: f64 = 10.0;
pub const PROBE_RADII: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
pub const PROBE_TRIALS: usize = 20;
pub const BOUND_SAMPLES: usize = 500;
pub const BOUND_RADIUS: f64 = 0.05;
pub const MSOSC_SAMPLES: usize = 200;

pub fn circle_problem() -> ProblemInstance {
    ProblemInstance::from_family(&Family::Circle).expect("built-in instance")
}

/// `x0 = (1, 0)` with zero multipliers.
pub fn circle_start(problem: &ProblemInstance) -> Triple {
    let x = problem
        .manifold()
        .point(riemalm::linalg::column(&[1.0, 0.0]))
        .expect("unit vector");
    Triple::new(x, problem.zero_y(), problem.zero_z())
}

pub fn circle_reference(problem: &ProblemInstance) -> Triple {
    let (x, y, z) = circle_solution();
    Triple::new(problem.manifold().point(x).expect("unit vector"), y, z)
}

/// Fixed penalty, a tolerance well below the plotted range and the monotone
/// inner line search.
pub fn figure1_config() -> AlmConfig {
    let base = AlmConfig::default();
    AlmConfig {
        kkt_tol: 1e-8,
        fixed_rho: true,
        inner: InnerConfig {
            memory: 1,
            ..base.inner
        },
        ..base
    }
}

/// Least-squares line through `(k, log10 R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Fits the last `window` outer iterations (`k >= 1`) of a run.
pub fn tail_fit(history: &[IterationRecord], window: usize) -> Option<LineFit> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|r| r.k >= 1 && r.residual.sum() > 0.0)
        .map(|r| (r.k as f64, r.residual.sum().log10()))
        .collect();
    let pts = &pts[pts.len().saturating_sub(window)..];
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        r2,
        points: pts.len(),
    })
}

#[derive(Debug, Clone)]
pub struct Figure1Run {
    pub rho: f64,
    pub result: AlmResult,
    pub fit: Option<LineFit>,
}

/// Circle runs with `rho = rho0` held fixed, one per entry of `rhos`.
pub fn figure1(base: &AlmConfig, rhos: &[f64]) -> Result<Vec<Figure1Run>> {
    let problem = circle_problem();
    let reference = circle_reference(&problem);
    rhos.par_iter()
        .map(|&rho| {
            let config = AlmConfig {
                rho0: rho,
                fixed_rho: true,
                ..*base
            };
            let result =
                alm_run_with_reference(&problem, &config, circle_start(&problem), Some(&reference))?;
            let fit = tail_fit(&result.history, FIT_WINDOW);
            Ok(Figure1Run { rho, result, fit })
        })
        .collect()
}

/// Whether the fitted slopes exist and strictly decrease along the runs.
pub fn slopes_strictly_decreasing(runs: &[Figure1Run]) -> bool {
    let slopes: Option<Vec<f64>> = runs.iter().map(|r| r.fit.map(|f| f.slope)).collect();
    slopes.is_some_and(|s| s.windows(2).all(|w| w[1] < w[0]))
}

pub fn sphere_config() -> AlmConfig {
    AlmConfig {
        kkt_tol: 1e-10,
        ..AlmConfig::default()
    }
}

/// `-(1, ..., 1) / sqrt(n)`.
pub fn sphere_start(problem: &ProblemInstance) -> Triple {
    let (n, _) = problem.manifold().ambient_shape();
    let x = Mat::from_element(n, 1, -1.0 / (n as f64).sqrt());
    let x = problem.manifold().point(x).expect("unit vector");
    Triple::new(x, problem.zero_y(), problem.zero_z())
}

pub fn sphere_problem(a: Mat, mu: f64) -> Result<ProblemInstance> {
    ProblemInstance::from_family(&Family::SphereL1 { a, mu })
}

#[derive(Debug, Clone)]
pub struct SphereMatrixOutcome {
    pub result: AlmResult,
    /// `| |x| - e2 |`.
    pub x_error: f64,
    /// `|y - mu sign(x2) e2|`.
    pub y_error: f64,
    pub objective: f64,
}

impl SphereMatrixOutcome {
    pub fn passes(&self, tol: f64) -> bool {
        self.x_error <= tol && self.y_error <= tol
    }
}

/// `(| |x| - e2 |, |y - mu sign(x2) e2|)` for a sphere-l1 run.
pub fn sphere_matrix_errors(result: &AlmResult, mu: f64) -> (f64, f64) {
    let x = result.triple.x.ambient();
    let mut e2 = Mat::zeros(x.nrows(), 1);
    e2[1] = 1.0;
    let x_error = (x.abs() - &e2).norm();
    let y_error = (&result.triple.y - e2 * (mu * x[1].signum())).norm();
    (x_error, y_error)
}

pub fn sphere_matrix(mu: f64, config: &AlmConfig) -> Result<(ProblemInstance, SphereMatrixOutcome)> {
    let problem = sphere_problem(sphere_l1_matrix(), mu)?;
    let result = alm_run(&problem, config, sphere_start(&problem))?;
    let (x_error, y_error) = sphere_matrix_errors(&result, mu);
    let objective = problem.value(&result.triple.x);
    Ok((
        problem,
        SphereMatrixOutcome {
            result,
            x_error,
            y_error,
            objective,
        },
    ))
}

/// Random Gaussian instance started from a seeded random point.
pub fn sphere_random(n: usize, mu: f64, seed: u64, config: &AlmConfig) -> Result<(ProblemInstance, AlmResult)> {
    let prepared = prepare(&InstanceSpec::SphereRandom { n, mu, seed })?;
    let result = alm_run(&prepared.problem, config, prepared.start)?;
    Ok((prepared.problem, result))
}

pub fn rmc_config() -> AlmConfig {
    AlmConfig {
        kkt_tol: 1e-7,
        ..AlmConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct RmcOutcome {
    pub data: RmcData,
    pub problem: ProblemInstance,
    pub result: AlmResult,
    /// `|X - A_ex|_F`.
    pub recovery_error: f64,
}

/// Solves a completion instance from the given start.
pub fn rmc_solve(data: RmcData, start: Point, config: &AlmConfig) -> Result<RmcOutcome> {
    let problem = ProblemInstance::from_family(&data.family)?;
    let triple = Triple::new(start, problem.zero_y(), problem.zero_z());
    let result = alm_run(&problem, config, triple)?;
    let recovery_error = (result.triple.x.ambient() - &data.truth).norm();
    Ok(RmcOutcome {
        data,
        problem,
        result,
        recovery_error,
    })
}

/// Basic 5x5 instance from the plain spectral start.
pub fn rmc_basic_run(seed: u64, config: &AlmConfig) -> Result<RmcOutcome> {
    let data = rmc_basic(seed);
    let start = data.spectral_init()?;
    rmc_solve(data, start, config)
}

/// Random instance from the trimmed spectral start.
pub fn rmc_random_run(
    m: usize,
    n: usize,
    r: usize,
    oversample: f64,
    seed: u64,
    config: &AlmConfig,
) -> Result<RmcOutcome> {
    let data = rmc_random(m, n, r, oversample, seed)?;
    let start = data.trimmed_spectral_init(TRIM_CUTOFF)?;
    rmc_solve(data, start, config)
}

/// Concrete instance selected by a command.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    Circle,
    /// Fixed 5x5 sphere-l1 matrix.
    SphereMatrix { mu: f64 },
    SphereRandom { n: usize, mu: f64, seed: u64 },
    SphereExplicit { a: Mat, mu: f64 },
    /// Fixed 5x5 rank-3 completion instance; `seed` draws the outliers.
    RmcBasic { seed: u64 },
    RmcRandom {
        m: usize,
        n: usize,
        r: usize,
        oversample: f64,
        seed: u64,
    },
    /// Fully observed explicit matrix.
    RmcExplicit { a: Mat, r: usize },
}

/// Problem, starting triple and the data needed to report on a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: ProblemInstance,
    pub start: Triple,
    /// Known KKT triple, for the distance column.
    pub reference: Option<Triple>,
    /// Ground-truth matrix of completion instances.
    pub truth: Option<Mat>,
    /// Solver settings used when nothing is overridden.
    pub default_config: AlmConfig,
    /// `n` or `m x n, r` for summaries.
    pub dims: String,
}

fn rmc_prepared(data: RmcData, start: Point, truth: Option<Mat>) -> Result<Prepared> {
    let problem = ProblemInstance::from_family(&data.family)?;
    let (m, n) = data.observed.shape();
    Ok(Prepared {
        start: Triple::new(start, problem.zero_y(), problem.zero_z()),
        problem,
        reference: None,
        truth,
        default_config: rmc_config(),
        dims: format!("m={m} n={n} r={}", data.rank),
    })
}

pub fn prepare(spec: &InstanceSpec) -> Result<Prepared> {
    let sphere = |problem: ProblemInstance, start: Option<Triple>| {
        let start = start.unwrap_or_else(|| sphere_start(&problem));
        Prepared {
            dims: format!("n={}", problem.manifold().ambient_shape().0),
            start,
            problem,
            reference: None,
            truth: None,
            default_config: sphere_config(),
        }
    };
    match spec {
        InstanceSpec::Circle => {
            let problem = circle_problem();
            Ok(Prepared {
                start: circle_start(&problem),
                reference: Some(circle_reference(&problem)),
                problem,
                truth: None,
                default_config: AlmConfig::default(),
                dims: "n=2".into(),
            })
        }
        InstanceSpec::SphereMatrix { mu } => Ok(sphere(sphere_problem(sphere_l1_matrix(), *mu)?, None)),
        InstanceSpec::SphereExplicit { a, mu } => Ok(sphere(sphere_problem(a.clone(), *mu)?, None)),
        InstanceSpec::SphereRandom { n, mu, seed } => {
            let problem = sphere_problem(sphere_l1_random_matrix(*n, *seed), *mu)?;
            let x = problem.manifold().random_point(*seed);
            let start = Triple::new(x, problem.zero_y(), problem.zero_z());
            Ok(sphere(problem, Some(start)))
        }
        InstanceSpec::RmcBasic { seed } => {
            let data = rmc_basic(*seed);
            let start = data.spectral_init()?;
            let truth = data.truth.clone();
            rmc_prepared(data, start, Some(truth))
        }
        InstanceSpec::RmcRandom {
            m,
            n,
            r,
            oversample,
            seed,
        } => {
            let data = rmc_random(*m, *n, *r, *oversample, *seed)?;
            let start = data.trimmed_spectral_init(TRIM_CUTOFF)?;
            let truth = data.truth.clone();
            rmc_prepared(data, start, Some(truth))
        }
        InstanceSpec::RmcExplicit { a, r } => {
            let (m, n) = a.shape();
            let omega: Vec<_> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
            let data = RmcData {
                family: Family::Rmc {
                    a: a.clone(),
                    omega: omega.clone(),
                    rank: *r,
                },
                truth: a.clone(),
                observed: a.clone(),
                omega,
                rank: *r,
            };
            let start = data.spectral_init()?;
            rmc_prepared(data, start, None)
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub polished: AlmResult,
    pub conditions: ConditionReport,
    /// `None` when the strict Robinson condition fails and the probe is skipped.
    pub probe: Option<ProbeReport>,
    pub bound: ErrorBoundFit,
}

/// Settings of the analysis suite.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub polish: AlmConfig,
    pub probe: ProbeConfig,
    pub radii: Vec<f64>,
    pub bound_samples: usize,
    pub bound_radius: f64,
    pub msosc_samples: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            polish: AlmConfig {
                kkt_tol: POLISH_TOL,
                ..AlmConfig::default()
            },
            probe: ProbeConfig {
                alm: AlmConfig {
                    rho0: PROBE_RHO0,
                    ..AlmConfig::default()
                },
                trials: PROBE_TRIALS,
                ..ProbeConfig::default()
            },
            radii: PROBE_RADII.to_vec(),
            bound_samples: BOUND_SAMPLES,
            bound_radius: BOUND_RADIUS,
            msosc_samples: MSOSC_SAMPLES,
            seed: 0,
        }
    }
}

/// Error raised when the polishing run stops short of its tolerance.
#[derive(Debug, Clone)]
pub struct PolishFailure(pub AlmResult);

#[derive(Debug)]
pub enum AnalysisError {
    Polish(PolishFailure),
    Solver(riemalm::Error),
}

impl From<riemalm::Error> for AnalysisError {
    fn from(e: riemalm::Error) -> Self {
        AnalysisError::Solver(e)
    }
}

/// Whether a polishing run reached `kkt_tol`, measured relative to
/// `max(1, |grad f(x)|)` so that badly scaled objectives are not held to a
/// target below double-precision resolution.
pub fn polish_accepted(problem: &ProblemInstance, result: &AlmResult, kkt_tol: f64) -> bool {
    let scale = problem
        .objective()
        .egrad(result.triple.x.ambient())
        .norm()
        .max(1.0);
    result.status.is_converged() || result.residual.max() <= kkt_tol * scale
}

/// Polishes a KKT point from `start`, then runs the condition checks, the
/// calmness probe and the error-bound fit.
pub fn analyze(
    problem: &ProblemInstance,
    start: Triple,
    config: &AnalysisConfig,
) -> std::result::Result<AnalysisOutcome, AnalysisError> {
    let polished = alm_run(problem, &config.polish, start)?;
    if !polish_accepted(problem, &polished, config.polish.kkt_tol) {
        return Err(AnalysisError::Polish(PolishFailure(polished)));
    }
    let star = polished.triple.clone();
    let tol = Tolerances::default();
    let conditions = check_conditions(problem, &star, config.msosc_samples, config.seed, &tol)?;
    let probe = if conditions.msrcq.pass {
        let probe_config = ProbeConfig {
            seed: config.seed,
            tolerances: tol,
            ..config.probe.clone()
        };
        Some(calmness_probe(problem, &star, &config.radii, &probe_config)?)
    } else {
        None
    };
    let bound = error_bound_fit(problem, &star, config.bound_samples, config.bound_radius, config.seed)?;
    Ok(AnalysisOutcome {
        polished,
        conditions,
        probe,
        bound,
    })
}
