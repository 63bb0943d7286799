//! CSV and text artifacts. Reals are written in Rust's shortest round-trip
//! exponent form (`1.5e-3`), independent of locale.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use riemalm::alm::IterationRecord;
use riemalm::analysis::{ConditionReport, ErrorBoundFit, ProbeReport};

use crate::experiments::Figure1Run;

pub type Result<T> = std::result::Result<T, OutputError>;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn real(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub const HISTORY_HEADER: [&str; 9] = [
    "k",
    "rho",
    "R",
    "V",
    "grad_norm",
    "inner_iters",
    "eps_k",
    "wall_time",
    "dist_to_ref",
];

/// `history.csv`; `R` is the summed KKT residual. Without `timing` the
/// wall-time column is left empty so that reruns are byte-identical.
pub fn write_history(path: &Path, history: &[IterationRecord], timing: bool) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([
            r.k.to_string(),
            real(r.rho),
            real(r.residual.sum()),
            real(r.v),
            real(r.inner_grad_norm),
            r.inner_iters.to_string(),
            real(r.eps),
            if timing { real(r.wall_time) } else { String::new() },
            opt(r.dist_to_reference),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

/// Table-style summary of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub family: String,
    pub dims: String,
    pub outer_iterations: usize,
    pub wall_time: Option<f64>,
    pub max_kkt_residual: f64,
    pub recovery_error: Option<f64>,
    pub status: String,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family: {}", self.family);
        let _ = writeln!(s, "dims: {}", self.dims);
        let _ = writeln!(s, "outer_iterations: {}", self.outer_iterations);
        if let Some(t) = self.wall_time {
            let _ = writeln!(s, "wall_time_s: {t:.3}");
        }
        let _ = writeln!(s, "max_kkt_residual: {}", real(self.max_kkt_residual));
        if let Some(e) = self.recovery_error {
            let _ = writeln!(s, "recovery_error: {}", real(e));
        }
        let _ = writeln!(s, "status: {}", self.status);
        s
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary, extra: &[(String, String)]) -> Result<()> {
    let mut text = summary.render();
    for (k, v) in extra {
        let _ = writeln!(text, "{k}: {v}");
    }
    write_text(path, &text)
}

fn rho_label(rho: f64) -> String {
    format!("{rho}")
}

/// `figure1.csv` with `log10` residual and distance columns per penalty, and
/// the gnuplot script `figure1.gp` that plots them.
pub fn write_figure1(dir: &Path, runs: &[Figure1Run]) -> Result<()> {
    let path = dir.join("figure1.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["k".to_string()];
    header.extend(runs.iter().map(|r| format!("log10_R_rho{}", rho_label(r.rho))));
    header.extend(runs.iter().map(|r| format!("log10_dist_rho{}", rho_label(r.rho))));
    w.write_record(&header)?;
    let rows = runs.iter().map(|r| r.result.history.len()).max().unwrap_or(0);
    for k in 0..rows {
        let mut rec = vec![k.to_string()];
        rec.extend(runs.iter().map(|r| {
            r.result
                .history
                .get(k)
                .map(|h| real(h.residual.sum().log10()))
                .unwrap_or_default()
        }));
        rec.extend(runs.iter().map(|r| {
            r.result
                .history
                .get(k)
                .and_then(|h| h.dist_to_reference)
                .map(|d| real(d.log10()))
                .unwrap_or_default()
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;

    let n = runs.len();
    let mut gp = String::new();
    gp.push_str("set datafile separator ','\n");
    gp.push_str("set termoption noenhanced\n");
    gp.push_str("set terminal pngcairo size 900,500\n");
    gp.push_str("set output 'figure1.png'\n");
    gp.push_str("set multiplot layout 1,2\n");
    gp.push_str("set xlabel 'outer iteration k'\n");
    gp.push_str("set key top right\n");
    gp.push_str("set ylabel 'log10 KKT residual'\n");
    let _ = writeln!(
        gp,
        "plot for [i=2:{}] 'figure1.csv' using 1:i with linespoints title columnheader(i)",
        n + 1
    );
    gp.push_str("set ylabel 'log10 distance to solution'\n");
    let _ = writeln!(
        gp,
        "plot for [i={}:{}] 'figure1.csv' using 1:i with linespoints title columnheader(i)",
        n + 2,
        2 * n + 1
    );
    gp.push_str("unset multiplot\n");
    write_text(&dir.join("figure1.gp"), &gp)
}

pub fn render_conditions(report: &ConditionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kkt_residual: {}", real(report.residual));
    let m = &report.msrcq;
    let _ = writeln!(
        s,
        "msrcq: {} (rank {} of {})",
        if m.pass { "pass" } else { "fail" },
        m.rank,
        m.required
    );
    let o = &report.msosc;
    let _ = writeln!(
        s,
        "msosc: {} (samples {}, infinite {}, min {})",
        o.verdict.as_str(),
        o.samples,
        o.infinite,
        o.min_value.map(real).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(s, "critical_cone_trivial: {}", report.critical_cone_trivial());
    let t = &report.tolerances;
    let _ = writeln!(
        s,
        "tolerances: kkt_gate={} rank={} cone={}",
        real(t.kkt_gate),
        real(t.rank),
        real(t.cone)
    );
    s
}

pub fn render_probe(probe: Option<&ProbeReport>, bound: &ErrorBoundFit) -> String {
    let mut s = String::new();
    match probe {
        Some(p) => {
            for r in &p.radii {
                let _ = writeln!(
                    s,
                    "calmness: radius {} trials {} failed {} max_ratio {}",
                    real(r.radius),
                    r.trials,
                    r.failed,
                    real(r.max_ratio)
                );
            }
            let _ = writeln!(s, "kappa: {}", real(p.kappa));
            let _ = writeln!(s, "kappa_bounded: {}", p.bounded());
            s.push_str("note: the objective is perturbed by an ambient linear tilt -<a, x>\n");
        }
        None => s.push_str("calmness: skipped (msrcq fails, multipliers need not be unique)\n"),
    }
    let _ = writeln!(
        s,
        "error_bound: c1 {} c2 {} c2/c1 {} samples {} excluded {}",
        real(bound.c1),
        real(bound.c2),
        real(bound.c2 / bound.c1),
        bound.samples.len(),
        bound.excluded
    );
    s
}

pub fn write_conditions(path: &Path, header: &str, body: &str) -> Result<()> {
    write_text(path, &format!("{header}{body}"))
}

/// `probe.csv`: calmness trials and error-bound samples in one table.
pub fn write_probe(path: &Path, probe: Option<&ProbeReport>, bound: &ErrorBoundFit) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "radius", "trial", "ratio", "dist", "R"])?;
    if let Some(p) = probe {
        for t in &p.trials {
            w.write_record([
                "calmness".to_string(),
                real(t.radius),
                t.trial.to_string(),
                opt(t.ratio),
                String::new(),
                String::new(),
            ])?;
        }
    }
    for (i, b) in bound.samples.iter().enumerate() {
        w.write_record([
            "error_bound".to_string(),
            String::new(),
            i.to_string(),
            real(b.dist / b.residual),
            real(b.dist),
            real(b.residual),
        ])?;
    }
    w.flush().map_err(io_err(path))
}
