//! Line-oriented problem files.
//!
//! ```text
//! # comment
//! [problem]
//! family = sphere-l1
//! mu = 0.25
//! [alm]
//! rho0 = 10
//! [matrix]
//! 1 0
//! 0 2
//! ```
//!
//! Every key is optional. Unknown sections and keys produce warnings.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use riemalm::alm::AlmConfig;
use riemalm::Mat;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {key} {msg}")]
    Range { line: usize, key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    Circle,
    #[value(name = "sphere-l1", alias = "sphere_l1")]
    SphereL1,
    Rmc,
}

impl FamilyName {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyName::Circle => "circle",
            FamilyName::SphereL1 => "sphere-l1",
            FamilyName::Rmc => "rmc",
        }
    }
}

/// `[problem]` keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemSection {
    pub family: Option<FamilyName>,
    /// `paper5x5`, `basic5x5` or `random`.
    pub instance: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub r: Option<usize>,
    pub mu: Option<f64>,
    pub seed: Option<u64>,
    pub oversample: Option<f64>,
}

/// `[alm]` keys; `None` keeps the command default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlmOverrides {
    pub rho0: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub kkt_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub eps0: Option<f64>,
    pub fixed_rho: Option<bool>,
}

impl AlmOverrides {
    pub fn apply(&self, base: AlmConfig) -> AlmConfig {
        AlmConfig {
            rho0: self.rho0.unwrap_or(base.rho0),
            gamma: self.gamma.unwrap_or(base.gamma),
            tau: self.tau.unwrap_or(base.tau),
            kkt_tol: self.kkt_tol.unwrap_or(base.kkt_tol),
            max_outer: self.max_outer.unwrap_or(base.max_outer),
            eps0: self.eps0.unwrap_or(base.eps0),
            fixed_rho: self.fixed_rho.unwrap_or(base.fixed_rho),
            ..base
        }
    }

    /// Values set in `other` win.
    pub fn merged(self, other: &AlmOverrides) -> AlmOverrides {
        AlmOverrides {
            rho0: other.rho0.or(self.rho0),
            gamma: other.gamma.or(self.gamma),
            tau: other.tau.or(self.tau),
            kkt_tol: other.kkt_tol.or(self.kkt_tol),
            max_outer: other.max_outer.or(self.max_outer),
            eps0: other.eps0.or(self.eps0),
            fixed_rho: other.fixed_rho.or(self.fixed_rho),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    pub alm: AlmOverrides,
    pub matrix: Option<Mat>,
    pub warnings: Vec<String>,
}

pub fn parse_problem_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_problem_str(&text)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Problem,
    Alm,
    Matrix,
    Unknown,
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("cannot parse {key} = {raw:?}"),
    })
}

fn check(line: usize, key: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range {
            line,
            key: key.into(),
            msg: msg.into(),
        })
    }
}

fn positive(line: usize, key: &str, v: f64) -> Result<f64, ConfigError> {
    check(line, key, v > 0.0 && v.is_finite(), "must be positive")?;
    Ok(v)
}

pub fn parse_problem_str(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut cfg = ConfigFile::default();
    let mut section = Section::None;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "problem" => Section::Problem,
                "alm" => Section::Alm,
                "matrix" => Section::Matrix,
                other => {
                    cfg.warnings.push(format!("line {line}: unknown section [{other}] ignored"));
                    Section::Unknown
                }
            };
            continue;
        }
        if section == Section::Matrix {
            let row: Vec<f64> = content
                .split_whitespace()
                .map(|t| value(line, "matrix entry", t))
                .collect::<Result<_, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(ConfigError::Parse {
                        line,
                        msg: format!("matrix row has {} entries, expected {}", row.len(), first.len()),
                    });
                }
            }
            rows.push(row);
            continue;
        }
        let Some((key, raw_value)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                msg: format!("expected key = value, got {content:?}"),
            });
        };
        let (key, v) = (key.trim(), raw_value.trim());
        let p = &mut cfg.problem;
        let a = &mut cfg.alm;
        match (section, key) {
            (Section::Problem, "family") => {
                p.family = Some(FamilyName::from_str(v, true).map_err(|_| ConfigError::Parse {
                    line,
                    msg: format!("unknown family {v:?}"),
                })?)
            }
            (Section::Problem, "instance") => {
                check(
                    line,
                    key,
                    matches!(v, "paper5x5" | "basic5x5" | "random"),
                    "must be paper5x5, basic5x5 or random",
                )?;
                p.instance = Some(v.to_string());
            }
            (Section::Problem, "n") | (Section::Problem, "m") | (Section::Problem, "r") => {
                let d: usize = value(line, key, v)?;
                check(line, key, d >= 1, "must be at least 1")?;
                match key {
                    "n" => p.n = Some(d),
                    "m" => p.m = Some(d),
                    _ => p.r = Some(d),
                }
            }
            (Section::Problem, "mu") => {
                let mu: f64 = value(line, key, v)?;
                check(line, key, mu >= 0.0 && mu.is_finite(), "must be nonnegative")?;
                p.mu = Some(mu);
            }
            (Section::Problem, "seed") => p.seed = Some(value(line, key, v)?),
            (Section::Problem, "oversample") => p.oversample = Some(positive(line, key, value(line, key, v)?)?),
            (Section::Alm, "rho0") => a.rho0 = Some(positive(line, key, value(line, key, v)?)?),
            (Section::Alm, "gamma") => {
                let g: f64 = value(line, key, v)?;
                check(line, key, g > 1.0 && g.is_finite(), "must exceed 1")?;
                a.gamma = Some(g);
            }
            (Section::Alm, "tau") => {
                let t: f64 = value(line, key, v)?;
                check(line, key, t > 0.0 && t < 1.0, "must lie in (0, 1)")?;
                a.tau = Some(t);
            }
            (Section::Alm, "kkt_tol") => a.kkt_tol = Some(positive(line, key, value(line, key, v)?)?),
            (Section::Alm, "eps0") => a.eps0 = Some(positive(line, key, value(line, key, v)?)?),
            (Section::Alm, "max_outer") => a.max_outer = Some(value(line, key, v)?),
            (Section::Alm, "fixed_rho") => a.fixed_rho = Some(value(line, key, v)?),
            (Section::None, _) => {
                cfg.warnings.push(format!("line {line}: key {key:?} outside any section ignored"))
            }
            (Section::Unknown, _) => {}
            _ => cfg.warnings.push(format!("line {line}: unknown key {key:?} ignored")),
        }
    }
    if !rows.is_empty() {
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        cfg.matrix = Some(Mat::from_row_slice(rows.len(), cols, &flat));
    }
    Ok(cfg)
}
