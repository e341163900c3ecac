use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use freqlfdr::density::{
    LINDSEY_DEFAULT_BINS, LINDSEY_DEFAULT_DEGREE, NPMLE_DEFAULT_GRID, NPMLE_DEFAULT_TOL,
};
use freqlfdr::lfdr::STOREY_DEFAULT_LAMBDA;
use freqlfdr::model::Scale;
use freqlfdr::simulate::limits::grid_alternatives;
use freqlfdr::simulate::{Criterion, GeneratorKind, ProcedureSpec, Scorer};
use freqlfdr::verify::discrete_limit_f_star;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    P,
    Z,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::P => Scale::PValue,
            ScaleArg::Z => Scale::ZValue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerArg {
    PValue,
    QValue,
    OracleLfdr,
    EstimatedLfdr,
}

impl From<ScorerArg> for Scorer {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::PValue => Scorer::PValue,
            ScorerArg::QValue => Scorer::QValue,
            ScorerArg::OracleLfdr => Scorer::OracleLfdr,
            ScorerArg::EstimatedLfdr => Scorer::EstimatedLfdr,
        }
    }
}

/// `storey[:lambda]`, `fixed:v` or `window:c[:lambda]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pi0Method {
    Storey { lambda: f64 },
    Fixed { value: f64 },
    Window { c: f64, lambda: f64 },
}

impl Default for Pi0Method {
    fn default() -> Self {
        Pi0Method::Storey {
            lambda: STOREY_DEFAULT_LAMBDA,
        }
    }
}

fn number(field: &str, spec: &str) -> CliResult<f64> {
    field
        .parse()
        .map_err(|_| CliError::Usage(format!("'{field}' in '{spec}' is not a number")))
}

impl FromStr for Pi0Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["storey"] => Ok(Pi0Method::default()),
            ["storey", l] => Ok(Pi0Method::Storey {
                lambda: number(l, s)?,
            }),
            ["fixed", v] => Ok(Pi0Method::Fixed {
                value: number(v, s)?,
            }),
            ["window", c] => Ok(Pi0Method::Window {
                c: number(c, s)?,
                lambda: STOREY_DEFAULT_LAMBDA,
            }),
            ["window", c, l] => Ok(Pi0Method::Window {
                c: number(c, s)?,
                lambda: number(l, s)?,
            }),
            _ => Err(CliError::Usage(format!(
                "unknown pi0 method '{s}' (expected storey:L, fixed:V or window:C:L)"
            ))),
        }
    }
}

impl fmt::Display for Pi0Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pi0Method::Storey { lambda } => write!(f, "storey:{lambda}"),
            Pi0Method::Fixed { value } => write!(f, "fixed:{value}"),
            Pi0Method::Window { c, lambda } => write!(f, "window:{c}:{lambda}"),
        }
    }
}

/// `grenander`, `lindsey[:degree:bins]` or `npmle[:grid:tol]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityMethod {
    Grenander,
    Lindsey { degree: usize, bins: usize },
    Npmle { grid: usize, tol: f64 },
}

impl DensityMethod {
    pub fn default_for(scale: Scale) -> Self {
        match scale {
            Scale::PValue => DensityMethod::Grenander,
            Scale::ZValue => DensityMethod::Lindsey {
                degree: LINDSEY_DEFAULT_DEGREE,
                bins: LINDSEY_DEFAULT_BINS,
            },
        }
    }
}

fn count(field: &str, spec: &str) -> CliResult<usize> {
    field.parse().map_err(|_| {
        CliError::Usage(format!(
            "'{field}' in '{spec}' is not a nonnegative integer"
        ))
    })
}

impl FromStr for DensityMethod {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["grenander"] => Ok(DensityMethod::Grenander),
            ["lindsey"] => Ok(DensityMethod::default_for(Scale::ZValue)),
            ["lindsey", j, b] => Ok(DensityMethod::Lindsey {
                degree: count(j, s)?,
                bins: count(b, s)?,
            }),
            ["npmle"] => Ok(DensityMethod::Npmle {
                grid: NPMLE_DEFAULT_GRID,
                tol: NPMLE_DEFAULT_TOL,
            }),
            ["npmle", g, t] => Ok(DensityMethod::Npmle {
                grid: count(g, s)?,
                tol: number(t, s)?,
            }),
            _ => Err(CliError::Usage(format!(
                "unknown density method '{s}' (expected grenander, lindsey:J:BINS or npmle:GRID:TOL)"
            ))),
        }
    }
}

impl fmt::Display for DensityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityMethod::Grenander => f.write_str("grenander"),
            DensityMethod::Lindsey { degree, bins } => write!(f, "lindsey:{degree}:{bins}"),
            DensityMethod::Npmle { grid, tol } => write!(f, "npmle:{grid}:{tol:e}"),
        }
    }
}

/// A JSON configuration document; every key mirrors a command-line flag,
/// and flags given on the command line take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub input: Option<PathBuf>,
    pub scale: Option<ScaleArg>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub pi0: Option<String>,
    pub density: Option<String>,
    pub reps: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub perturb_discrete: Option<bool>,
    pub preset: Option<String>,
    pub generator: Option<GeneratorKind>,
    pub procedure: Option<ProcedureSpec>,
    pub criteria: Option<Vec<Criterion>>,
    pub scorer: Option<ScorerArg>,
    pub bin_width: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// A named simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub generator: GeneratorKind,
    pub procedure: ProcedureSpec,
    pub criteria: Vec<Criterion>,
}

pub const PRESET_NAMES: [&str; 6] = [
    "uniform-nulls-sl",
    "counterexample-superuniform",
    "counterexample-discrete",
    "discrete-grid",
    "calibration-gaussian",
    "ggm-tridiagonal",
];

pub fn preset(name: &str) -> CliResult<Preset> {
    let sl = |alpha| ProcedureSpec::SupportLine { alpha };
    let p = match name {
        "uniform-nulls-sl" => Preset {
            generator: GeneratorKind::TwoGroupsBeta {
                m: 100,
                pi0: 0.8,
                a: 0.05,
                b: 1.0,
            },
            procedure: sl(0.1),
            criteria: vec![Criterion::Bfdr, Criterion::Fdr, Criterion::Power],
        },
        "counterexample-superuniform" => Preset {
            generator: GeneratorKind::SuperUniformCE,
            procedure: sl(0.5),
            criteria: vec![Criterion::Bfdr],
        },
        "counterexample-discrete" => Preset {
            generator: GeneratorKind::DiscreteCE,
            procedure: sl(0.5),
            criteria: vec![Criterion::Bfdr],
        },
        "discrete-grid" => {
            let (m, levels, pi0) = (5000, 10, 0.9);
            Preset {
                generator: GeneratorKind::DiscreteUniformNulls {
                    m,
                    levels,
                    alt_positions: grid_alternatives(m, levels, pi0, &discrete_limit_f_star())?,
                },
                procedure: sl(0.5),
                criteria: vec![Criterion::Bfdr],
            }
        }
        "calibration-gaussian" => Preset {
            generator: GeneratorKind::GaussianMeans {
                m: 3000,
                m1: 150,
                mu: 2.0,
            },
            procedure: ProcedureSpec::Bh { alpha: 0.1 },
            criteria: vec![Criterion::Fdr, Criterion::Power],
        },
        "ggm-tridiagonal" => Preset {
            generator: GeneratorKind::Ggm {
                d: 20,
                n: 200,
                omega: freqlfdr::simulate::OmegaSpec::Tridiagonal { off: 0.3 },
            },
            procedure: ProcedureSpec::Bh { alpha: 0.1 },
            criteria: vec![Criterion::Fdr, Criterion::Power],
        },
        _ => {
            return Err(CliError::Usage(format!(
                "unknown preset '{name}' (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings_round_trip() {
        for s in ["storey:0.5", "fixed:1", "window:0.025:0.5"] {
            assert_eq!(s.parse::<Pi0Method>().unwrap().to_string(), s);
        }
        for s in ["grenander", "lindsey:7:120", "npmle:300:1e-8"] {
            assert_eq!(s.parse::<DensityMethod>().unwrap().to_string(), s);
        }
        assert!("storey:x".parse::<Pi0Method>().is_err());
        assert!("kde".parse::<DensityMethod>().is_err());
    }

    #[test]
    fn every_preset_resolves() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.generator.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"alpah": 0.1}"#).is_err());
        let c: ConfigFile = serde_json::from_str(
            r#"{"generator": {"kind": "GaussianMeans", "m": 10, "m1": 2, "mu": 1.5},
                "procedure": {"procedure": "BH", "alpha": 0.2}, "criteria": [{"criterion": "FDR"}]}"#,
        )
        .unwrap();
        assert_eq!(c.procedure, Some(ProcedureSpec::Bh { alpha: 0.2 }));
    }
}
