use freqlfdr::density::{grenander_fit, lindsey_fit, npmle_mixture_fit};
use freqlfdr::lfdr::{score_hypotheses, selection_window_pi0, storey_pi0, LfdrCurve};
use freqlfdr::model::{DensityModel, Interval, LossSpec, Scale};
use freqlfdr::testing::{
    bh_threshold, lfdr_threshold_procedure, q_values, support_line, RejectionResult,
};
use serde::{Deserialize, Serialize};

use crate::config::{DensityMethod, Pi0Method};
use crate::error::{CliError, CliResult};
use crate::input::Dataset;

pub const PROCEDURES: [&str; 4] = ["BH", "StoreyBH", "SupportLine", "LfdrThreshold"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    /// Type I to Type II cost ratio of the lfdr-threshold rule.
    pub loss_lambda: f64,
    pub pi0: Pi0Method,
    pub density: DensityMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejections {
    #[serde(rename = "BH")]
    pub bh: bool,
    #[serde(rename = "StoreyBH")]
    pub storey_bh: bool,
    #[serde(rename = "SupportLine")]
    pub support_line: bool,
    #[serde(rename = "LfdrThreshold")]
    pub lfdr_threshold: bool,
}

impl Rejections {
    pub fn flags(&self) -> [bool; 4] {
        [
            self.bh,
            self.storey_bh,
            self.support_line,
            self.lfdr_threshold,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub id: String,
    pub stat: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub lfdr_score: f64,
    /// 0 for a true null, 1 otherwise.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<u8>,
    pub rejected: Rejections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pi0Summary {
    pub method: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure: String,
    pub rejections: usize,
    /// Cutoff on the procedure's own score: a p-value for the step-up
    /// and support-line rules, an lfdr level for the threshold rule.
    pub threshold: Option<f64>,
    pub boundary_p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub false_discoveries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fdp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub m: usize,
    pub scale: String,
    pub alpha: f64,
    pub loss_lambda: f64,
    pub pi0: Pi0Summary,
    pub density: String,
    pub procedures: Vec<ProcedureSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: AnalysisSummary,
    pub hypotheses: Vec<HypothesisRow>,
}

fn estimate_pi0(data: &Dataset, method: Pi0Method) -> CliResult<f64> {
    Ok(match method {
        Pi0Method::Storey { lambda } => storey_pi0(&data.p, lambda)?.value,
        Pi0Method::Fixed { value } => {
            if !(0.0..=1.0).contains(&value) {
                return Err(CliError::Usage(format!("fixed pi0 {value} outside [0, 1]")));
            }
            value
        }
        Pi0Method::Window { c, lambda } => {
            selection_window_pi0(&data.p, Interval::new(0.0, c)?, lambda)?.value
        }
    })
}

fn lfdr_scores(data: &Dataset, pi0: f64, method: DensityMethod) -> CliResult<Vec<f64>> {
    let z_only = |name: &str| {
        if data.stats.scale() != Scale::ZValue {
            return Err(CliError::Usage(format!(
                "the {name} density needs z-values (--scale z)"
            )));
        }
        Ok(())
    };
    let scores = match method {
        DensityMethod::Grenander => {
            let curve = LfdrCurve::new(pi0, DensityModel::uniform01(), grenander_fit(&data.p)?)?;
            score_hypotheses(&curve, &data.p)?
        }
        DensityMethod::Lindsey { degree, bins } => {
            z_only("lindsey")?;
            let fit = lindsey_fit(&data.stats, degree, bins)?;
            let curve =
                LfdrCurve::new(pi0, DensityModel::standard_normal(), fit.density().clone())?;
            score_hypotheses(&curve, &data.stats)?
        }
        DensityMethod::Npmle { grid, tol } => {
            z_only("npmle")?;
            let fit = npmle_mixture_fit(&data.stats, grid, tol)?;
            let curve = LfdrCurve::new(pi0, DensityModel::standard_normal(), fit.to_density()?)?;
            score_hypotheses(&curve, &data.stats)?
        }
    };
    Ok(scores)
}

fn summarize(
    name: &str,
    result: &RejectionResult,
    threshold: Option<f64>,
    truth: Option<&[bool]>,
) -> ProcedureSummary {
    let false_discoveries = truth.map(|t| result.rejected.iter().filter(|&&i| t[i]).count());
    ProcedureSummary {
        procedure: name.to_string(),
        rejections: result.num_rejections,
        threshold,
        boundary_p_value: result.boundary_stat,
        false_discoveries,
        fdp: false_discoveries.map(|v| {
            if v == 0 {
                0.0
            } else {
                v as f64 / result.num_rejections as f64
            }
        }),
    }
}

pub fn analyze(data: &Dataset, opts: &AnalyzeOptions) -> CliResult<AnalysisReport> {
    let m = data.p.len();
    let pi0 = estimate_pi0(data, opts.pi0)?;
    let loss = LossSpec::new(opts.loss_lambda)?;
    let scores = lfdr_scores(data, pi0, opts.density)?;
    let q = q_values(&data.p, None)?.qvalues;
    let bh = bh_threshold(&data.p, opts.alpha, None)?;
    let storey = bh_threshold(&data.p, opts.alpha, Some(pi0 * m as f64))?;
    let sl = support_line(&data.p, opts.alpha)?;
    let lt = lfdr_threshold_procedure(&data.p, &scores, loss)?;
    let masks = [&bh, &storey, &sl, &lt].map(|r| r.mask(m));
    let truth = data.truth.as_deref();
    let hypotheses = (0..m)
        .map(|i| HypothesisRow {
            id: data.ids[i].clone(),
            stat: data.stats.values()[i],
            p_value: data.p.values()[i],
            q_value: q[i],
            lfdr_score: scores[i],
            truth: truth.map(|t| (!t[i]) as u8),
            rejected: Rejections {
                bh: masks[0][i],
                storey_bh: masks[1][i],
                support_line: masks[2][i],
                lfdr_threshold: masks[3][i],
            },
        })
        .collect();
    let procedures = vec![
        summarize(PROCEDURES[0], &bh, bh.boundary_stat, truth),
        summarize(PROCEDURES[1], &storey, storey.boundary_stat, truth),
        summarize(PROCEDURES[2], &sl, sl.boundary_stat, truth),
        summarize(PROCEDURES[3], &lt, Some(loss.threshold()), truth),
    ];
    Ok(AnalysisReport {
        summary: AnalysisSummary {
            m,
            scale: match data.stats.scale() {
                Scale::PValue => "p".into(),
                Scale::ZValue => "z".into(),
            },
            alpha: opts.alpha,
            loss_lambda: opts.loss_lambda,
            pi0: Pi0Summary {
                method: opts.pi0.to_string(),
                value: pi0,
            },
            density: opts.density.to_string(),
            procedures,
        },
        hypotheses,
    })
}
