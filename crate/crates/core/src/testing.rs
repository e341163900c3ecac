//! Multiple-testing procedures and error accounting: BH and Storey-BH
//! thresholds, q-values, the Support Line procedure, lfdr-threshold rules,
//! weighted classification loss and interval FDP estimates.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sorted_order, GroundTruth, LossSpec, StatVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Procedure {
    #[serde(rename = "BH")]
    Bh,
    #[serde(rename = "StoreyBH")]
    StoreyBh,
    SupportLine,
    LfdrThreshold,
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Procedure::Bh => "BH",
            Procedure::StoreyBh => "StoreyBH",
            Procedure::SupportLine => "SupportLine",
            Procedure::LfdrThreshold => "LfdrThreshold",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionResult {
    /// Rejected indices, ascending.
    pub rejected: Vec<usize>,
    pub num_rejections: usize,
    /// Largest rejected p-value.
    pub boundary_stat: Option<f64>,
    /// Index of the boundary rejection; among tied p-values, the last position.
    pub boundary_index: Option<usize>,
    pub alpha: f64,
    pub procedure: Procedure,
}

impl RejectionResult {
    fn lower_set(p: &[f64], boundary: Option<f64>, alpha: f64, procedure: Procedure) -> Self {
        let rejected: Vec<usize> = match boundary {
            Some(b) => (0..p.len()).filter(|&i| p[i] <= b).collect(),
            None => Vec::new(),
        };
        let boundary_index = boundary.map(|b| {
            (0..p.len())
                .filter(|&i| p[i] == b)
                .max()
                .expect("boundary is an observed value")
        });
        RejectionResult {
            num_rejections: rejected.len(),
            rejected,
            boundary_stat: boundary,
            boundary_index,
            alpha,
            procedure,
        }
    }

    /// Membership mask aligned to the input.
    pub fn mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &i in &self.rejected {
            mask[i] = true;
        }
        mask
    }
}

/// BH q-values aligned to the input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValueVector {
    pub qvalues: Vec<f64>,
}

fn fdp_ratio(m0: f64, t: f64, count: usize) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if count == 0 {
        return f64::INFINITY;
    }
    m0 * t / count as f64
}

fn validate_m0(stats: &StatVector, m0_hat: Option<f64>) -> Result<f64> {
    match m0_hat {
        None => Ok(stats.len() as f64),
        Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Some(v) => Err(Error::arg(format!(
            "m0 estimate must be finite and nonnegative, got {v}"
        ))),
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("alpha = {alpha} outside (0, 1]")))
    }
}

/// `m t / #{p_i <= t}` with `m` replaced by `m0_hat` when given; `+inf` for
/// an empty region and 0 at `t = 0`.
pub fn fdp_hat(stats: &StatVector, t: f64, m0_hat: Option<f64>) -> Result<f64> {
    stats.require_p_scale("fdp_hat")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg(format!("t = {t} outside [0, 1]")));
    }
    let m0 = validate_m0(stats, m0_hat)?;
    let count = stats.values().iter().filter(|&&p| p <= t).count();
    Ok(fdp_ratio(m0, t, count))
}

/// For each sorted position, `(p_(k), #{p <= p_(k)})`.
fn sorted_with_counts(p: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let order = sorted_order(p);
    let m = order.len();
    let mut counts = vec![0; m];
    let mut k = m;
    while k > 0 {
        let value = p[order[k - 1]];
        let mut j = k;
        while j > 0 && p[order[j - 1]] == value {
            counts[j - 1] = k;
            j -= 1;
        }
        k = j;
    }
    (order, counts)
}

/// BH (or Storey-BH, when `m0_hat` is given) threshold: the largest
/// candidate in `{0} ∪ {p_i}` whose estimated FDP is at most `alpha`.
pub fn bh_threshold(
    stats: &StatVector,
    alpha: f64,
    m0_hat: Option<f64>,
) -> Result<RejectionResult> {
    stats.require_p_scale("bh_threshold")?;
    validate_alpha(alpha)?;
    let m0 = validate_m0(stats, m0_hat)?;
    let p = stats.values();
    let (order, counts) = sorted_with_counts(p);
    let boundary = (0..order.len())
        .rev()
        .find(|&k| fdp_ratio(m0, p[order[k]], counts[k]) <= alpha)
        .map(|k| p[order[k]]);
    let procedure = if m0_hat.is_some() {
        Procedure::StoreyBh
    } else {
        Procedure::Bh
    };
    Ok(RejectionResult::lower_set(p, boundary, alpha, procedure))
}

/// Backward-recursion q-values: `q_(m) = FDP(p_(m))`,
/// `q_(i) = min(FDP(p_(i)), q_(i+1))`, capped at 1.
pub fn q_values(stats: &StatVector, m0_hat: Option<f64>) -> Result<QValueVector> {
    stats.require_p_scale("q_values")?;
    let m0 = validate_m0(stats, m0_hat)?;
    let p = stats.values();
    let (order, counts) = sorted_with_counts(p);
    let mut q = vec![0.0; p.len()];
    let mut running = f64::INFINITY;
    for k in (0..order.len()).rev() {
        running = running.min(fdp_ratio(m0, p[order[k]], counts[k]));
        q[order[k]] = running.min(1.0);
    }
    Ok(QValueVector { qvalues: q })
}

/// Support Line: reject the `R` smallest p-values, `R` the largest maximizer
/// of `alpha k / m - p_(k)` over `k = 0..=m` with `p_(0) = 0`.
pub fn support_line(stats: &StatVector, alpha: f64) -> Result<RejectionResult> {
    stats.require_p_scale("support_line")?;
    validate_alpha(alpha)?;
    let p = stats.values();
    let order = sorted_order(p);
    let (r, _) = support_line_count(&order.iter().map(|&i| p[i]).collect::<Vec<_>>(), alpha);
    let boundary = (r > 0).then(|| p[order[r - 1]]);
    Ok(RejectionResult::lower_set(
        p,
        boundary,
        alpha,
        Procedure::SupportLine,
    ))
}

/// `(R_alpha, objective)` on already sorted p-values.
pub(crate) fn support_line_count(sorted: &[f64], alpha: f64) -> (usize, f64) {
    let m = sorted.len() as f64;
    let mut best_k = 0;
    let mut best = 0.0;
    for (k0, &pk) in sorted.iter().enumerate() {
        let value = alpha * (k0 + 1) as f64 / m - pk;
        if value >= best {
            best = value;
            best_k = k0 + 1;
        }
    }
    (best_k, best)
}

/// Reject `i` iff `score_i <= 1 / (1 + lambda)`.
pub fn lfdr_threshold_rule(scores: &[f64], loss: LossSpec) -> Vec<bool> {
    let threshold = loss.threshold();
    scores.iter().map(|&s| s <= threshold).collect()
}

/// An lfdr-threshold rule packaged as a rejection result over `stats`.
pub fn lfdr_threshold_procedure(
    stats: &StatVector,
    scores: &[f64],
    loss: LossSpec,
) -> Result<RejectionResult> {
    if scores.len() != stats.len() {
        return Err(Error::arg("one score per statistic is required"));
    }
    let decisions = lfdr_threshold_rule(scores, loss);
    let p = stats.values();
    let rejected: Vec<usize> = (0..p.len()).filter(|&i| decisions[i]).collect();
    let boundary_index = rejected
        .iter()
        .copied()
        .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    Ok(RejectionResult {
        num_rejections: rejected.len(),
        boundary_stat: boundary_index.map(|i| p[i]),
        boundary_index,
        rejected,
        alpha: loss.threshold(),
        procedure: Procedure::LfdrThreshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `lambda * FP + FN`.
    pub canonical: f64,
    /// `lambda V - (R - V)`.
    pub net: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub rejections: usize,
}

pub fn weighted_loss(
    truth: &GroundTruth,
    decisions: &[bool],
    loss: LossSpec,
) -> Result<LossBreakdown> {
    if truth.len() != decisions.len() {
        return Err(Error::arg(format!(
            "{} decisions for {} hypotheses",
            decisions.len(),
            truth.len()
        )));
    }
    let mut fp = 0;
    let mut fneg = 0;
    let mut r = 0;
    for (&null, &reject) in truth.null_flags().iter().zip(decisions) {
        if reject {
            r += 1;
        }
        match (null, reject) {
            (true, true) => fp += 1,
            (false, false) => fneg += 1,
            _ => {}
        }
    }
    let lambda = loss.lambda();
    Ok(LossBreakdown {
        canonical: lambda * fp as f64 + fneg as f64,
        net: lambda * fp as f64 - (r - fp) as f64,
        false_positives: fp,
        false_negatives: fneg,
        rejections: r,
    })
}

/// Secant-slope FDP estimate `m0_hat (t - s) / #{p_i in [s, t]}`.
pub fn interval_fdp_estimate(stats: &StatVector, m0_hat: f64, s: f64, t: f64) -> Result<f64> {
    stats.require_p_scale("interval_fdp_estimate")?;
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::arg(format!("need 0 <= s < t <= 1, got [{s}, {t}]")));
    }
    let count = stats.values().iter().filter(|&&p| p >= s && p <= t).count();
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(m0_hat * (t - s) / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub fdp: f64,
    pub boundary_is_null: bool,
    pub v: usize,
}

/// FDP `V / max(1, R)` and whether the boundary rejection is a true null.
pub fn empirical_error_rates(result: &RejectionResult, truth: &GroundTruth) -> Result<ErrorRates> {
    if result.rejected.iter().any(|&i| i >= truth.len()) {
        return Err(Error::arg(
            "rejection index out of range for the ground truth",
        ));
    }
    let v = result
        .rejected
        .iter()
        .filter(|&&i| truth.is_null(i))
        .count();
    let r = result.num_rejections;
    let boundary_is_null = r > 0 && result.boundary_index.is_some_and(|i| truth.is_null(i));
    Ok(ErrorRates {
        fdp: v as f64 / r.max(1) as f64,
        boundary_is_null,
        v,
    })
}

/// Replace each grid value `l/L` by a uniform draw on `((l-1)/L, l/L)`.
pub fn perturb_discrete<R: Rng + ?Sized>(
    stats: &StatVector,
    levels: u32,
    rng: &mut R,
) -> Result<StatVector> {
    stats.require_p_scale("perturb_discrete")?;
    if levels == 0 {
        return Err(Error::arg("grid needs L >= 1"));
    }
    let l = levels as f64;
    let values = stats
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let cell = (p * l).round();
            if (p * l - cell).abs() > 1e-9 * l || cell < 1.0 {
                return Err(Error::arg(format!(
                    "p-value {} = {p} is not on the 1/{levels} grid",
                    stats.label(i)
                )));
            }
            let u: f64 = rng.random();
            Ok((cell - u) / l)
        })
        .collect::<Result<Vec<f64>>>()?;
    match stats.ids() {
        Some(ids) => StatVector::with_ids(values, stats.scale(), ids.to_vec()),
        None => StatVector::p_values(values),
    }
}
