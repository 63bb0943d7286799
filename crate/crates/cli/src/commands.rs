//! Command-line interface.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use riemalm::alm::{alm_run_with_reference, AlmConfig, AlmResult};
use riemalm::analysis::{check_conditions, Tolerances};
use riemalm::instances::RMC_BASIC_SEED;

use crate::config::{parse_problem_file, AlmOverrides, ConfigError, ConfigFile, FamilyName, ProblemSection};
use crate::experiments::{
    analyze, figure1, figure1_config, prepare, slopes_strictly_decreasing, sphere_matrix_errors,
    AnalysisConfig, AnalysisError, InstanceSpec, Prepared, FIGURE1_RHOS, MSOSC_SAMPLES,
};
use crate::output::{self, real, OutputError, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// The solver stopped before reaching its tolerance.
pub const EXIT_PARTIAL: i32 = 2;
/// A built-in reference check failed.
pub const EXIT_CHECK: i32 = 3;

/// Tolerance of the built-in reference checks.
pub const CHECK_TOL: f64 = 1e-6;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MU: f64 = 0.25;

#[derive(Debug, Parser)]
#[command(name = "riemalm", version, about = "Riemannian augmented Lagrangian experiments")]
pub struct Cli {
    /// Problem file with [problem], [alm] and [matrix] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for independent sub-runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Keep the penalty parameter at rho0.
    #[arg(long, global = true)]
    pub fixed_rho: bool,
    /// Leave wall-time columns empty so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,
    /// Do not record distances to a known solution.
    #[arg(long, global = true)]
    pub no_reference: bool,
    #[command(flatten)]
    pub alm: AlmArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct AlmArgs {
    #[arg(long, global = true)]
    pub rho0: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub kkt_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_outer: Option<usize>,
    #[arg(long, global = true)]
    pub eps0: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct FamilyArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Dimension (sphere) or column count (completion).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub oversample: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SphereMode {
    #[value(name = "paper5x5")]
    Paper5x5,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RmcMode {
    #[value(name = "basic5x5")]
    Basic5x5,
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write history.csv and summary.txt.
    Solve(FamilyArgs),
    /// Fixed-penalty runs on the circle problem for rho in {1, 10, 100, 1000}.
    Figure1,
    /// Sparse leading eigenvector on the sphere.
    SphereL1 {
        #[arg(long, value_enum, default_value = "paper5x5")]
        mode: SphereMode,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
    },
    /// Robust low-rank matrix completion.
    Rmc {
        #[arg(long, value_enum, default_value = "basic5x5")]
        mode: RmcMode,
        #[arg(long, default_value_t = 200)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        rank: usize,
        #[arg(long, default_value_t = 3.0)]
        oversample: f64,
    },
    /// Polish a KKT point and run the condition checks and probes.
    Analyze(FamilyArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] riemalm::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{0}")]
    Usage(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(OutputError::Io {
            path: String::new(),
            source: e,
        })
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_ERROR;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

struct Context<'a> {
    cli: &'a Cli,
    file: ConfigFile,
}

impl Context<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn overrides(&self) -> AlmOverrides {
        let a = &self.cli.alm;
        let flags = AlmOverrides {
            rho0: a.rho0,
            gamma: a.gamma,
            tau: a.tau,
            kkt_tol: a.kkt_tol,
            max_outer: a.max_outer,
            eps0: a.eps0,
            fixed_rho: self.cli.fixed_rho.then_some(true),
        };
        self.file.alm.merged(&flags)
    }

    fn alm(&self, base: AlmConfig) -> Result<AlmConfig, CliError> {
        let config = self.overrides().apply(base);
        config.validate()?;
        Ok(config)
    }

    fn seed(&self, default: u64) -> u64 {
        self.cli.seed.or(self.file.problem.seed).unwrap_or(default)
    }

    fn timing(&self) -> bool {
        !self.cli.no_timing
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let file = match &cli.config {
        Some(path) => parse_problem_file(path)?,
        None => ConfigFile::default(),
    };
    for w in &file.warnings {
        warn!("{w}");
    }
    std::fs::create_dir_all(&cli.out).map_err(|source| OutputError::Io {
        path: cli.out.display().to_string(),
        source,
    })?;
    let ctx = Context { cli, file };
    match &cli.command {
        Command::Solve(args) => cmd_solve(&ctx, args),
        Command::Figure1 => cmd_figure1(&ctx),
        Command::SphereL1 { mode, n, mu } => cmd_sphere_l1(&ctx, *mode, *n, *mu),
        Command::Rmc {
            mode,
            m,
            n,
            rank,
            oversample,
        } => cmd_rmc(&ctx, *mode, *m, *n, *rank, *oversample),
        Command::Analyze(args) => cmd_analyze(&ctx, args),
    }
}

fn check_mu(mu: f64) -> Result<f64, CliError> {
    if mu >= 0.0 && mu.is_finite() {
        Ok(mu)
    } else {
        Err(CliError::Usage(format!("mu must be nonnegative, got {mu}")))
    }
}

/// Picks the instance from flags, then the problem file, then defaults.
fn resolve_instance(ctx: &Context, args: &FamilyArgs) -> Result<InstanceSpec, CliError> {
    let p: &ProblemSection = &ctx.file.problem;
    let family = args
        .family
        .or(p.family)
        .ok_or_else(|| CliError::Usage("no family given (use --family or a [problem] section)".into()))?;
    let n = args.n.or(p.n);
    let m = args.m.or(p.m);
    let r = args.rank.or(p.r);
    let random = p.instance.as_deref() == Some("random");
    Ok(match family {
        FamilyName::Circle => InstanceSpec::Circle,
        FamilyName::SphereL1 => {
            let mu = check_mu(args.mu.or(p.mu).unwrap_or(DEFAULT_MU))?;
            if let Some(a) = &ctx.file.matrix {
                InstanceSpec::SphereExplicit { a: a.clone(), mu }
            } else if random || n.is_some() {
                InstanceSpec::SphereRandom {
                    n: n.unwrap_or(20),
                    mu,
                    seed: ctx.seed(DEFAULT_SEED),
                }
            } else {
                InstanceSpec::SphereMatrix { mu }
            }
        }
        FamilyName::Rmc => {
            if let Some(a) = &ctx.file.matrix {
                let r = r.ok_or_else(|| CliError::Usage("explicit completion matrix needs a rank r".into()))?;
                InstanceSpec::RmcExplicit { a: a.clone(), r }
            } else if random || n.is_some() || m.is_some() {
                InstanceSpec::RmcRandom {
                    m: m.unwrap_or(200),
                    n: n.unwrap_or(200),
                    r: r.unwrap_or(5),
                    oversample: args.oversample.or(p.oversample).unwrap_or(3.0),
                    seed: ctx.seed(DEFAULT_SEED),
                }
            } else {
                InstanceSpec::RmcBasic {
                    seed: ctx.seed(RMC_BASIC_SEED),
                }
            }
        }
    })
}

fn summarize(ctx: &Context, prepared: &Prepared, result: &AlmResult) -> RunSummary {
    let last = result.history.last();
    RunSummary {
        family: prepared.problem.label().to_string(),
        dims: prepared.dims.clone(),
        outer_iterations: result.outer_iterations(),
        wall_time: ctx.timing().then(|| last.map_or(0.0, |r| r.wall_time)),
        max_kkt_residual: result.residual.max(),
        recovery_error: prepared
            .truth
            .as_ref()
            .map(|t| (result.triple.x.ambient() - t).norm()),
        status: result.status.as_str().to_string(),
    }
}

/// Runs a prepared instance and writes `history.csv` and `summary.txt`.
fn solve_prepared(
    ctx: &Context,
    prepared: &Prepared,
    config: &AlmConfig,
    extra: impl Fn(&AlmResult) -> Vec<(String, String)>,
) -> Result<(AlmResult, RunSummary), CliError> {
    let reference = if ctx.cli.no_reference {
        None
    } else {
        prepared.reference.as_ref()
    };
    let result = alm_run_with_reference(&prepared.problem, config, prepared.start.clone(), reference)?;
    let summary = summarize(ctx, prepared, &result);
    output::write_history(&ctx.out("history.csv"), &result.history, ctx.timing())?;
    output::write_summary(&ctx.out("summary.txt"), &summary, &extra(&result))?;
    info!(
        "{}: {} after {} outer iterations, max KKT residual {}",
        summary.family,
        summary.status,
        summary.outer_iterations,
        real(summary.max_kkt_residual)
    );
    Ok((result, summary))
}

fn status_code(result: &AlmResult) -> i32 {
    if result.status.is_converged() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn cmd_solve(ctx: &Context, args: &FamilyArgs) -> Result<i32, CliError> {
    let spec = resolve_instance(ctx, args)?;
    let prepared = prepare(&spec)?;
    let config = ctx.alm(prepared.default_config)?;
    let (result, _) = solve_prepared(ctx, &prepared, &config, |_| Vec::new())?;
    Ok(status_code(&result))
}

fn cmd_figure1(ctx: &Context) -> Result<i32, CliError> {
    let base = ctx.alm(figure1_config())?;
    let clock = Instant::now();
    let runs = figure1(&base, &FIGURE1_RHOS)?;
    output::write_figure1(&ctx.cli.out, &runs)?;
    let mut text = String::new();
    for r in &runs {
        let fit = r
            .fit
            .map(|f| format!("slope {} r2 {} points {}", real(f.slope), real(f.r2), f.points))
            .unwrap_or_else(|| "no fit".into());
        text.push_str(&format!(
            "rho {}: {} after {} outer iterations, max KKT residual {}, {fit}\n",
            r.rho,
            r.result.status.as_str(),
            r.result.outer_iterations(),
            real(r.result.residual.max())
        ));
    }
    let ordered = slopes_strictly_decreasing(&runs);
    text.push_str(&format!("slopes_strictly_decreasing: {ordered}\n"));
    if ctx.timing() {
        text.push_str(&format!("wall_time_s: {:.3}\n", clock.elapsed().as_secs_f64()));
    }
    std::fs::write(ctx.out("summary.txt"), text)?;
    if !ordered {
        eprintln!("fitted slopes are not strictly decreasing in rho");
        return Ok(EXIT_CHECK);
    }
    if runs.iter().any(|r| !r.result.status.is_converged()) {
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn write_condition_report(ctx: &Context, prepared: &Prepared, result: &AlmResult) -> Result<(), CliError> {
    let report = check_conditions(
        &prepared.problem,
        &result.triple,
        MSOSC_SAMPLES,
        ctx.seed(DEFAULT_SEED),
        &Tolerances::default(),
    )?;
    let header = format!("family: {}\ndims: {}\n", prepared.problem.label(), prepared.dims);
    output::write_conditions(&ctx.out("conditions.txt"), &header, &output::render_conditions(&report))?;
    if !report.msrcq.pass {
        warn!("msrcq_check failed at the computed point");
    }
    Ok(())
}

fn cmd_sphere_l1(ctx: &Context, mode: SphereMode, n: usize, mu: f64) -> Result<i32, CliError> {
    let mu = check_mu(mu)?;
    let spec = match mode {
        SphereMode::Paper5x5 => InstanceSpec::SphereMatrix { mu },
        SphereMode::Random => InstanceSpec::SphereRandom {
            n,
            mu,
            seed: ctx.seed(DEFAULT_SEED),
        },
    };
    let prepared = prepare(&spec)?;
    let config = ctx.alm(prepared.default_config)?;
    let builtin = mode == SphereMode::Paper5x5;
    let (result, _) = solve_prepared(ctx, &prepared, &config, |res| {
        let mut extra = vec![("objective".to_string(), real(prepared.problem.value(&res.triple.x)))];
        if builtin {
            let (x_err, y_err) = sphere_matrix_errors(res, mu);
            extra.push(("x_error".into(), real(x_err)));
            extra.push(("y_error".into(), real(y_err)));
        }
        extra
    })?;
    if result.residual.sum() <= Tolerances::default().kkt_gate {
        write_condition_report(ctx, &prepared, &result)?;
    }
    if builtin {
        let (x_err, y_err) = sphere_matrix_errors(&result, mu);
        if x_err > CHECK_TOL || y_err > CHECK_TOL {
            eprintln!(
                "reference check failed: | |x| - e2 | = {}, |y - mu sign(x2) e2| = {}",
                real(x_err),
                real(y_err)
            );
            return Ok(EXIT_CHECK);
        }
    }
    Ok(status_code(&result))
}

fn cmd_rmc(
    ctx: &Context,
    mode: RmcMode,
    m: usize,
    n: usize,
    rank: usize,
    oversample: f64,
) -> Result<i32, CliError> {
    let spec = match mode {
        RmcMode::Basic5x5 => InstanceSpec::RmcBasic {
            seed: ctx.seed(RMC_BASIC_SEED),
        },
        RmcMode::Random => InstanceSpec::RmcRandom {
            m,
            n,
            r: rank,
            oversample,
            seed: ctx.seed(DEFAULT_SEED),
        },
    };
    let prepared = prepare(&spec)?;
    let config = ctx.alm(prepared.default_config)?;
    let timing = ctx.timing();
    let (result, summary) = solve_prepared(ctx, &prepared, &config, |res| {
        let err = prepared
            .truth
            .as_ref()
            .map_or(f64::NAN, |t| (res.triple.x.ambient() - t).norm());
        let time = if timing {
            format!("{:.3}", res.history.last().map_or(0.0, |r| r.wall_time))
        } else {
            "-".into()
        };
        vec![(
            "table_row".to_string(),
            format!(
                "{} & {} & {} & {} & {} & {}",
                prepared.dims,
                res.outer_iterations(),
                time,
                real(res.residual.max()),
                real(err),
                res.status.as_str()
            ),
        )]
    })?;
    if mode == RmcMode::Basic5x5 {
        let err = summary.recovery_error.unwrap_or(f64::INFINITY);
        if err > CHECK_TOL {
            eprintln!("recovery check failed: |X - A_ex|_F = {}", real(err));
            return Ok(EXIT_CHECK);
        }
    }
    Ok(status_code(&result))
}

fn cmd_analyze(ctx: &Context, args: &FamilyArgs) -> Result<i32, CliError> {
    let spec = resolve_instance(ctx, args)?;
    let prepared = prepare(&spec)?;
    let defaults = AnalysisConfig::default();
    let mut config = AnalysisConfig {
        polish: ctx.alm(defaults.polish)?,
        seed: ctx.seed(DEFAULT_SEED),
        ..defaults
    };
    config.probe.jobs = ctx.cli.jobs.max(1);
    let outcome = match analyze(&prepared.problem, prepared.start.clone(), &config) {
        Ok(o) => o,
        Err(AnalysisError::Polish(f)) => {
            output::write_history(&ctx.out("history.csv"), &f.0.history, ctx.timing())?;
            eprintln!(
                "polishing stopped at max KKT residual {} ({})",
                real(f.0.residual.max()),
                f.0.status.as_str()
            );
            return Ok(EXIT_PARTIAL);
        }
        Err(AnalysisError::Solver(e)) => return Err(e.into()),
    };
    output::write_history(&ctx.out("history.csv"), &outcome.polished.history, ctx.timing())?;
    let header = format!("family: {}\ndims: {}\n", prepared.problem.label(), prepared.dims);
    let body = output::render_conditions(&outcome.conditions)
        + &output::render_probe(outcome.probe.as_ref(), &outcome.bound);
    output::write_conditions(&ctx.out("conditions.txt"), &header, &body)?;
    output::write_probe(&ctx.out("probe.csv"), outcome.probe.as_ref(), &outcome.bound)?;
    Ok(EXIT_OK)
}
