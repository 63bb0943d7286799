use riemalm::instances::{rmc_basic_scaled, sphere_l1_random_matrix};
use riemalm::Mat;
use riemalm_cli::experiments::{
    analyze, circle_problem, circle_start, prepare, rmc_config, rmc_solve, sphere_config, sphere_random,
    tail_fit, AnalysisConfig, InstanceSpec,
};
use riemalm::analysis::MsoscVerdict;

/// Leading eigenvector of a symmetric positive semidefinite matrix.
fn power_iteration(h: &Mat) -> Mat {
    let mut v = Mat::from_element(h.nrows(), 1, 1.0).normalize();
    for _ in 0..100_000 {
        let next = (h * &v).normalize();
        if (&next - &v).norm() < 1e-15 {
            return next;
        }
        v = next;
    }
    v
}

#[test]
fn zero_weight_sphere_is_an_eigenvector_problem() {
    for seed in [3, 8] {
        let (problem, result) = sphere_random(10, 0.0, seed, &sphere_config()).unwrap();
        assert!(result.status.is_converged());
        assert!(result.history.iter().all(|h| h.residual.theta_block == 0.0));
        let a = sphere_l1_random_matrix(10, seed);
        let top = power_iteration(&(a.transpose() * &a));
        let x = result.triple.x.ambient();
        assert!((x.dot(&top).abs() - 1.0).abs() < 1e-8, "seed {seed}");
        assert!(problem.value(&result.triple.x) <= -(&a * &top).norm_squared() + 1e-8);
    }
}

#[test]
fn exact_observations_are_recovered_at_once() {
    let data = rmc_basic_scaled(42, 0.0);
    let start = data.spectral_init().unwrap();
    let outcome = rmc_solve(data, start, &rmc_config()).unwrap();
    assert!(outcome.result.status.is_converged());
    assert!(outcome.result.outer_iterations() <= 3);
    assert!(outcome.recovery_error <= 1e-12);
}

#[test]
fn circle_tail_is_linear() {
    let problem = circle_problem();
    let start = circle_start(&problem);
    let prepared = prepare(&InstanceSpec::Circle).unwrap();
    let result = riemalm::alm::alm_run(&problem, &prepared.default_config, start).unwrap();
    let fit = tail_fit(&result.history, 10).unwrap();
    assert!(fit.slope < 0.0 && fit.points >= 2);
}

fn analysis_holds(spec: InstanceSpec) {
    let prepared = prepare(&spec).unwrap();
    let config = AnalysisConfig {
        bound_samples: 200,
        ..AnalysisConfig::default()
    };
    let outcome = analyze(&prepared.problem, prepared.start.clone(), &config)
        .unwrap_or_else(|e| panic!("{spec:?}: {e:?}"));
    let c = &outcome.conditions;
    assert!(c.msrcq.pass, "{spec:?}");
    assert_ne!(c.msosc.verdict, MsoscVerdict::Fail, "{spec:?}");
    assert_eq!(c.msosc.verdict == MsoscVerdict::Vacuous, c.critical_cone_trivial());
    let probe = outcome.probe.expect("probe runs when msrcq passes");
    let coarse = probe.max_ratio_at(1e-2).unwrap();
    let fine = probe.max_ratio_at(1e-5).unwrap();
    assert!(fine <= 2.0 * coarse, "{spec:?}: ratio {fine} at 1e-5 vs {coarse} at 1e-2");
    assert!(probe.bounded(), "{spec:?}: kappa {}", probe.kappa);
    assert!(outcome.bound.c1 > 0.0 && outcome.bound.c1 <= outcome.bound.c2);
}

#[test]
fn analysis_of_circle() {
    analysis_holds(InstanceSpec::Circle);
}

#[test]
fn analysis_of_sphere_l1_matrix() {
    analysis_holds(InstanceSpec::SphereMatrix { mu: 0.25 });
}

#[test]
fn analysis_of_random_sphere() {
    analysis_holds(InstanceSpec::SphereRandom { n: 8, mu: 0.25, seed: 2 });
}

#[test]
fn analysis_of_basic_completion() {
    analysis_holds(InstanceSpec::RmcBasic { seed: 42 });
}

/// The sphere-l1 matrix has tangential curvature near 1.1e3, so multipliers
/// saturate at `mu` once the shift exceeds about `mu / 1.1e3`. Below that
/// scale the ratio settles.
#[test]
fn sphere_l1_calmness_settles_below_saturation() {
    let prepared = prepare(&InstanceSpec::SphereMatrix { mu: 0.25 }).unwrap();
    let config = AnalysisConfig {
        radii: vec![1e-4, 1e-5, 1e-6],
        bound_samples: 50,
        ..AnalysisConfig::default()
    };
    let probe = analyze(&prepared.problem, prepared.start.clone(), &config)
        .unwrap()
        .probe
        .unwrap();
    assert!(probe.bounded(), "{:?}", probe.radii);
    assert!(probe.kappa > 1e3 && probe.kappa < 1.3e3, "kappa {}", probe.kappa);
}
