//! End-to-end acceptance criteria. Each criterion prints one `PASS`/`FAIL`
//! line; the test fails if any criterion does.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riemalm::alm::{alm_run, AlmResult, Triple};
use riemalm::analysis::{calmness_probe, check_conditions, error_bound_fit, MsoscVerdict, Tolerances};
use riemalm::convex::{ConjugateValue, ConvexFunction};
use riemalm::instances::{rmc_basic, sphere_l1_matrix};
use riemalm::linalg::{gaussian, inner};
use riemalm::problem::{Family, ProblemInstance};
use riemalm::{Manifold, Mat};
use riemalm_cli::experiments::{
    circle_problem, circle_reference, figure1, figure1_config, prepare, rmc_basic_run, rmc_config,
    rmc_random_run, slopes_strictly_decreasing, sphere_config, sphere_matrix, sphere_random,
    AnalysisConfig, InstanceSpec, FIGURE1_RHOS, MSOSC_SAMPLES, PROBE_RADII,
};

const CHAIN_TOL: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Default)]
struct Ledger {
    lines: Vec<(String, bool)>,
    /// Largest `|grad L(x, y_hat, z_hat) - grad L_rho|` per solver run.
    chain: Vec<(String, f64)>,
}

impl Ledger {
    fn record(&mut self, id: &str, limit: Duration, f: impl FnOnce(&mut Self) -> Verdict) {
        let clock = Instant::now();
        let v = f(self);
        let elapsed = clock.elapsed();
        let in_time = elapsed < limit;
        let pass = v.pass && in_time;
        let line = format!(
            "{} criterion {id}: {} [{:.2}s of {:.0}s{}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
        println!("{line}");
        self.lines.push((line, pass));
    }

    fn track(&mut self, label: impl Into<String>, result: &AlmResult) {
        let gap = result.history.iter().map(|h| h.chain_gap).fold(0.0, f64::max);
        self.chain.push((label.into(), gap));
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn circle_exactness(ledger: &mut Ledger) -> Verdict {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_riemalm"))
        .args(["--no-timing", "--out"])
        .arg(out.path())
        .args(["solve", "--family", "circle"])
        .status()
        .unwrap();
    let summary = std::fs::read_to_string(out.path().join("summary.txt")).unwrap_or_default();

    let prepared = prepare(&InstanceSpec::Circle).unwrap();
    let result = alm_run(&prepared.problem, &prepared.default_config, prepared.start.clone()).unwrap();
    ledger.track("circle", &result);
    let reference = circle_reference(&prepared.problem);
    let t = &result.triple;
    let err = (t.x.ambient() - reference.x.ambient())
        .amax()
        .max((&t.y - &reference.y).amax())
        .max((&t.z - &reference.z).amax());
    Verdict::new(
        status.code() == Some(0) && summary.contains("status: converged") && err <= 1e-6,
        format!("exit {:?}, max deviation from the known triple {err:e}", status.code()),
    )
}

fn figure1_ordering(ledger: &mut Ledger) -> Verdict {
    let runs = figure1(&figure1_config(), &FIGURE1_RHOS).unwrap();
    let mut parts = Vec::new();
    let mut fits_ok = true;
    for r in &runs {
        ledger.track(format!("figure1 rho {}", r.rho), &r.result);
        match r.fit {
            Some(f) => {
                fits_ok &= f.r2 >= 0.95;
                parts.push(format!("rho {}: slope {:.3} r2 {:.3}", r.rho, f.slope, f.r2));
            }
            None => {
                fits_ok = false;
                parts.push(format!("rho {}: no fit", r.rho));
            }
        }
    }
    let ordered = slopes_strictly_decreasing(&runs);
    Verdict::new(
        fits_ok && ordered,
        format!("{}; strictly decreasing {ordered}", parts.join(", ")),
    )
}

fn sphere_matrix_instance(ledger: &mut Ledger) -> Verdict {
    let (problem, outcome) = sphere_matrix(0.25, &sphere_config()).unwrap();
    ledger.track("sphere-l1 5x5", &outcome.result);
    let report = check_conditions(
        &problem,
        &outcome.result.triple,
        MSOSC_SAMPLES,
        1,
        &Tolerances::default(),
    );
    let (msrcq, msosc) = match &report {
        Ok(r) => (r.msrcq.pass, r.msosc.verdict),
        Err(_) => (false, MsoscVerdict::Fail),
    };
    Verdict::new(
        outcome.passes(1e-6) && msrcq && msosc == MsoscVerdict::Vacuous,
        format!(
            "x error {:e}, y error {:e}, msrcq {msrcq}, msosc {}",
            outcome.x_error,
            outcome.y_error,
            msosc.as_str()
        ),
    )
}

fn sphere_random_msrcq(ledger: &mut Ledger) -> Verdict {
    let mut passed = 0;
    let mut failures = Vec::new();
    for seed in 1..=20 {
        let (problem, result) = sphere_random(10, 0.25, seed, &sphere_config()).unwrap();
        ledger.track(format!("sphere random seed {seed}"), &result);
        let ok = check_conditions(&problem, &result.triple, 0, seed, &Tolerances::default())
            .map(|r| r.msrcq.pass)
            .unwrap_or(false);
        if ok {
            passed += 1;
        } else {
            failures.push(seed);
        }
    }
    Verdict::new(passed == 20, format!("msrcq passes {passed}/20 (failing seeds {failures:?})"))
}

fn rmc_basic_recovery(ledger: &mut Ledger) -> Verdict {
    let outcome = rmc_basic_run(42, &rmc_config()).unwrap();
    ledger.track("rmc basic", &outcome.result);
    let kkt = outcome.result.residual.max();
    Verdict::new(
        outcome.recovery_error <= 1e-6 && kkt <= 1e-7,
        format!("recovery error {:e}, max KKT residual {kkt:e}", outcome.recovery_error),
    )
}

fn rmc_table(ledger: &mut Ledger) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let outcome = rmc_random_run(200, 200, 5, 3.0, seed, &rmc_config()).unwrap();
        ledger.track(format!("rmc random seed {seed}"), &outcome.result);
        let kkt = outcome.result.residual.max();
        let iters = outcome.result.outer_iterations();
        ok &= kkt <= 1e-7 && outcome.recovery_error <= 1e-5 && iters <= 60;
        parts.push(format!(
            "seed {seed}: {iters} iterations, KKT {kkt:.2e}, error {:.2e}",
            outcome.recovery_error
        ));
    }
    Verdict::new(ok, parts.join("; "))
}

fn error_bound(_: &mut Ledger) -> Verdict {
    let problem = circle_problem();
    let star = circle_reference(&problem);
    let fit = match error_bound_fit(&problem, &star, 500, 0.05, 1) {
        Ok(f) => f,
        Err(e) => return Verdict::new(false, format!("fit failed: {e}")),
    };
    let violations = fit
        .samples
        .iter()
        .filter(|s| fit.c1 * s.residual > s.dist * (1.0 + 1e-12) || s.dist > fit.c2 * s.residual * (1.0 + 1e-12))
        .count();
    let ratio = fit.c2 / fit.c1;
    Verdict::new(
        fit.c1 > 0.0 && fit.c1 <= fit.c2 && fit.c2.is_finite() && violations == 0 && ratio <= 1e4,
        format!(
            "c1 {:.4}, c2 {:.4}, c2/c1 {ratio:.3}, {} samples, {violations} violations",
            fit.c1,
            fit.c2,
            fit.samples.len()
        ),
    )
}

fn calmness(_: &mut Ledger) -> Verdict {
    let problem = circle_problem();
    let star = circle_reference(&problem);
    let config = AnalysisConfig::default().probe;
    let report = match calmness_probe(&problem, &star, &PROBE_RADII, &config) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("probe failed: {e}")),
    };
    let coarse = report.max_ratio_at(1e-2).unwrap_or(f64::INFINITY);
    let fine = report.max_ratio_at(1e-5).unwrap_or(f64::INFINITY);
    let failed: usize = report.radii.iter().map(|r| r.failed).sum();
    Verdict::new(
        fine.is_finite() && fine <= 2.0 * coarse,
        format!("kappa(1e-2) {coarse:.4}, kappa(1e-5) {fine:.4}, failed trials {failed}"),
    )
}

// Property suites, run on fixed seeds.

fn prox_identities(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let mu = rng.random_range(0.0..2.0);
        let t = rng.random_range(0.01..5.0);
        let theta = ConvexFunction::scaled_l1(mu).unwrap();
        let a = gaussian(rng, n, 1) * 3.0;
        let b = gaussian(rng, n, 1) * 3.0;
        let pa = theta.prox(&a, t).unwrap();
        let pb = theta.prox(&b, t).unwrap();
        if (&pa - &pb).norm() > (&a - &b).norm() + 1e-12 {
            return Err("prox expands a distance".into());
        }
        let dual = (&a / t).map(|v| v.clamp(-mu, mu)) * t;
        let gap = (&a - &pa - dual).amax();
        if gap > 1e-12 {
            return Err(format!("Moreau decomposition off by {gap:e}"));
        }
    }
    Ok(())
}

fn envelope_gradient(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let h = 1e-6;
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(1..=6);
        let mu = rng.random_range(0.05..2.0);
        let rho = rng.random_range(0.5..10.0);
        let u = gaussian(rng, n, 1) * 2.0;
        if u.iter().any(|v| (v.abs() - mu / rho).abs() <= 1e-3) {
            continue;
        }
        checked += 1;
        let theta = ConvexFunction::scaled_l1(mu).unwrap();
        let grad = theta.moreau_env(&u, rho).unwrap().grad;
        let mut fd = Mat::zeros(n, 1);
        for i in 0..n {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[i] += h;
            dn[i] -= h;
            fd[i] = (theta.moreau_env(&up, rho).unwrap().value - theta.moreau_env(&dn, rho).unwrap().value)
                / (2.0 * h);
        }
        let err = (&fd - &grad).norm();
        if err > 1e-6 * grad.norm() && err > 1e-10 {
            return Err(format!("envelope gradient relative error {:e}", err / grad.norm()));
        }
    }
    Ok(())
}

fn manifold_geometry(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..200 {
        let sphere = Manifold::sphere(rng.random_range(2..12)).unwrap();
        let (m, n) = (rng.random_range(2..8), rng.random_range(2..8));
        let fixed = Manifold::fixed_rank(m, n, rng.random_range(1..=m.min(n).min(3))).unwrap();
        for man in [sphere, fixed] {
            let (rows, cols) = man.ambient_shape();
            let x = man.random_point_with(rng);
            let a = gaussian(rng, rows, cols).normalize();
            let b = gaussian(rng, rows, cols).normalize();
            let pa = man.project_tangent(&x, &a).unwrap();
            let pb = man.project_tangent(&x, &b).unwrap();
            if (man.project_tangent(&x, &pa).unwrap() - &pa).norm() > 1e-10 {
                return Err("tangent projection not idempotent".into());
            }
            if (inner(&pa, &b) - inner(&a, &pb)).abs() > 1e-10 {
                return Err("tangent projection not self-adjoint".into());
            }
            let y = man
                .retract(&x, &(pa * rng.random_range(0.0..0.5) * x.ambient().norm()))
                .map_err(|e| e.to_string())?;
            match man {
                Manifold::Sphere { .. } => {
                    if (y.ambient().norm() - 1.0).abs() > 1e-12 {
                        return Err("retraction leaves the sphere".into());
                    }
                }
                Manifold::FixedRank { r, .. } => {
                    let sv = riemalm::instances::singular_values(y.ambient());
                    if sv[r - 1] <= 1e-8 * sv[0] || (sv.len() > r && sv[r] > 1e-12 * sv[0]) {
                        return Err(format!("retraction has wrong rank: {:?}", sv.as_slice()));
                    }
                }
            }
        }
    }
    Ok(())
}

fn aug_lagrangian_gradients(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let families = [
        Family::Circle,
        Family::SphereL1 {
            a: sphere_l1_matrix(),
            mu: 0.25,
        },
        rmc_basic(42).family,
    ];
    let h = 1e-6;
    for family in &families {
        let problem = ProblemInstance::from_family(family).unwrap();
        let man = problem.manifold();
        let (yr, yc) = problem.y_shape();
        let (zr, zc) = problem.z_shape();
        let (rows, cols) = man.ambient_shape();
        for _ in 0..100 {
            let x = man.random_point_with(rng);
            let w = gaussian(rng, yr, yc);
            let p = gaussian(rng, zr, zc);
            let rho = rng.random_range(0.5..10.0);
            let eval = problem.aug_lagrangian(&x, &w, &p, rho).unwrap();
            let basis = man.tangent_basis(&x).unwrap();
            let mut err2 = 0.0;
            for j in 0..basis.ncols() {
                let b = Mat::from_column_slice(rows, cols, basis.column(j).as_slice());
                let f = |s: f64| {
                    let moved = man.retract(&x, &(&b * s)).unwrap();
                    problem.aug_lagrangian_value(&moved, &w, &p, rho).unwrap()
                };
                err2 += ((f(h) - f(-h)) / (2.0 * h) - inner(&eval.rgrad, &b)).powi(2);
            }
            let rel = err2.sqrt() / eval.rgrad.norm().max(1e-12);
            if rel > 1e-5 {
                return Err(format!("{}: gradient relative error {rel:e}", problem.label()));
            }
        }
    }
    Ok(())
}

fn l1(mu: f64, u: &Mat) -> f64 {
    mu * u.iter().map(|v| v.abs()).sum::<f64>()
}

/// Zero or at least 0.5 in magnitude, keeping quotients away from kinks.
fn separated(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    Mat::from_fn(n, 1, |_, _| match rng.random_range(0..3) {
        0 => 0.0,
        1 => rng.random_range(0.5..2.0),
        _ => -rng.random_range(0.5..2.0),
    })
}

fn conjugate_grid(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let t = 1e-3;
    for _ in 0..200 {
        let n = rng.random_range(1..=3);
        let mu = if rng.random_bool(0.5) { 0.25 } else { 1.0 };
        let x = separated(rng, n);
        let xi = separated(rng, n);
        let y = Mat::from_fn(n, 1, |i, _| {
            let sign = if x[i] != 0.0 { x[i].signum() } else if xi[i] != 0.0 { xi[i].signum() } else { 0.0 };
            let off = if rng.random_bool(0.2) { rng.random_range(0.05..1.0) } else { 0.0 };
            if sign != 0.0 {
                sign * mu + if rng.random_bool(0.5) { off } else { -off }
            } else if off > 0.0 {
                (mu + off) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                rng.random_range(-0.9..0.9) * mu
            }
        });
        let base = l1(mu, &x);
        let slope = (l1(mu, &(&x + &xi * t)) - base) / t;
        let mut sup = f64::NEG_INFINITY;
        for code in 0..21usize.pow(n as u32) {
            let w = Mat::from_fn(n, 1, |i, _| ((code / 21usize.pow(i as u32)) % 21) as f64 - 10.0);
            let moved = &x + &xi * t + &w * (0.5 * t * t);
            let epi = (l1(mu, &moved) - base - t * slope) / (0.5 * t * t);
            sup = sup.max(inner(&y, &w) - epi);
        }
        let psi = ConvexFunction::scaled_l1(mu).unwrap().psi_conjugate(&x, &xi, &y);
        let agrees = match psi {
            ConjugateValue::Finite(v) => sup <= 1e-6 && (v - sup).abs() <= 1e-6,
            ConjugateValue::Infinite => sup > 1e-6,
        };
        if !agrees {
            return Err(format!("psi* {psi:?} but grid sup {sup:e}"));
        }
    }
    Ok(())
}

fn epiderivatives(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..500 {
        let n = rng.random_range(1..=5);
        let mu = rng.random_range(0.1..2.0);
        let theta = ConvexFunction::scaled_l1(mu).unwrap();
        let x = separated(rng, n);
        let xi = separated(rng, n);
        let w = Mat::from_fn(n, 1, |_, _| rng.random_range(-10.0..10.0));
        let d1 = theta.directional_derivative(&x, &xi);
        let q1 = (l1(mu, &(&x + &xi * 1e-6)) - l1(mu, &x)) / 1e-6;
        let t = 1e-3;
        let moved = &x + &xi * t + &w * (0.5 * t * t);
        let q2 = (l1(mu, &moved) - l1(mu, &x) - t * d1) / (0.5 * t * t);
        let d2 = theta.second_epiderivative(&x, &xi, &w);
        if (d1 - q1).abs() > 1e-6 || (d2 - q2).abs() > 1e-6 {
            return Err(format!("epiderivative mismatch: {d1} vs {q1}, {d2} vs {q2}"));
        }
    }
    Ok(())
}

fn property_suites(ledger: &mut Ledger) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let worst_chain = ledger
        .chain
        .iter()
        .cloned()
        .fold((String::from("none"), 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    let chain = if ledger.chain.is_empty() {
        Err("no solver runs recorded".to_string())
    } else if worst_chain.1 > CHAIN_TOL {
        Err(format!("chain gap {:e} in run '{}'", worst_chain.1, worst_chain.0))
    } else {
        Ok(())
    };
    let checks: Vec<(&str, Result<(), String>)> = vec![
        ("prox", prox_identities(&mut rng)),
        ("envelope", envelope_gradient(&mut rng)),
        ("geometry", manifold_geometry(&mut rng)),
        ("aug-gradient", aug_lagrangian_gradients(&mut rng)),
        ("chain", chain),
        ("conjugate", conjugate_grid(&mut rng)),
        ("epiderivative", epiderivatives(&mut rng)),
    ];
    let pass = checks.iter().all(|c| c.1.is_ok());
    let detail = checks
        .iter()
        .map(|(name, r)| match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} FAILED ({e})"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        pass,
        format!(
            "{detail}; max chain gap {:e} over {} runs",
            worst_chain.1,
            ledger.chain.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut ledger = Ledger::default();
    ledger.record("1 (circle exactness)", secs(1), circle_exactness);
    ledger.record("2 (rate ordering)", secs(10), figure1_ordering);
    ledger.record("3 (sphere-l1 5x5)", secs(5), sphere_matrix_instance);
    ledger.record("4 (sphere-l1 msrcq 20/20)", secs(30), sphere_random_msrcq);
    ledger.record("5 (completion 5x5)", secs(5), rmc_basic_recovery);
    ledger.record("6 (completion 200x200)", secs(300), rmc_table);
    ledger.record("7 (error bound)", secs(10), error_bound);
    ledger.record("8 (calmness)", secs(60), calmness);
    ledger.record("9 (property suites)", secs(600), property_suites);
    let failed: Vec<&String> = ledger.lines.iter().filter(|l| !l.1).map(|l| &l.0).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}

#[test]
fn known_triples_are_kkt_points() {
    let problem = circle_problem();
    let t: Triple = circle_reference(&problem);
    let r = riemalm::alm::kkt_residual(&problem, &t.x, &t.y, &t.z).unwrap();
    assert!(r.sum() <= 1e-14);
}
