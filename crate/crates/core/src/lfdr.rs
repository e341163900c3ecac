//! Oracle and plug-in local false discovery rate curves, null-proportion
//! estimators and per-hypothesis scores.

use serde::{Deserialize, Serialize};

use crate::density::MonotoneDensityFit;
use crate::error::{Error, Result};
use crate::model::{DensityModel, GroundTruth, Interval, StatVector};

pub const STOREY_DEFAULT_LAMBDA: f64 = 0.5;

/// The denominator of a plug-in lfdr: a closed-form model or a Grenander fit.
#[derive(Debug, Clone, PartialEq)]
pub enum AverageDensity {
    Model(DensityModel),
    Monotone(MonotoneDensityFit),
}

impl AverageDensity {
    pub fn density(&self, t: f64) -> Result<f64> {
        match self {
            AverageDensity::Model(m) => m.density(t),
            AverageDensity::Monotone(fit) => fit.eval(t),
        }
    }
}

impl From<DensityModel> for AverageDensity {
    fn from(m: DensityModel) -> Self {
        AverageDensity::Model(m)
    }
}

impl From<MonotoneDensityFit> for AverageDensity {
    fn from(fit: MonotoneDensityFit) -> Self {
        AverageDensity::Monotone(fit)
    }
}

/// `t -> pi0 f0(t) / fbar(t)`, optionally clipped at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LfdrCurve {
    pi0: f64,
    null_density: DensityModel,
    avg_density: AverageDensity,
    clip: bool,
}

impl LfdrCurve {
    pub fn new(
        pi0: f64,
        null_density: DensityModel,
        avg_density: impl Into<AverageDensity>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi0) {
            return Err(Error::arg(format!("pi0 = {pi0} outside [0, 1]")));
        }
        Ok(LfdrCurve {
            pi0,
            null_density,
            avg_density: avg_density.into(),
            clip: true,
        })
    }

    pub fn unclipped(mut self) -> Self {
        self.clip = false;
        self
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn clip(&self) -> bool {
        self.clip
    }

    pub fn null_density(&self) -> &DensityModel {
        &self.null_density
    }

    pub fn avg_density(&self) -> &AverageDensity {
        &self.avg_density
    }

    /// The ratio before clipping.
    pub fn raw(&self, t: f64) -> Result<f64> {
        let avg = self.avg_density.density(t)?;
        let null = self.null_density.density(t)?;
        if avg == 0.0 {
            return Err(Error::domain(format!("average density is zero at t = {t}")));
        }
        if avg.is_infinite() && null.is_infinite() {
            return Err(Error::domain(format!(
                "null and average densities both infinite at t = {t}"
            )));
        }
        if self.pi0 == 0.0 || null == 0.0 {
            return Ok(0.0);
        }
        Ok(self.pi0 * null / avg)
    }
}

pub fn lfdr_curve_eval(curve: &LfdrCurve, t: f64) -> Result<f64> {
    let raw = curve.raw(t)?;
    Ok(if curve.clip { raw.min(1.0) } else { raw })
}

/// Frequentist lfdr `sum_{i null} f_i(t) / sum_i f_i(t)` from per-hypothesis
/// densities.
pub fn oracle_lfdr(truth: &GroundTruth, models: &[DensityModel], t: f64) -> Result<f64> {
    if models.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} models for {} hypotheses",
            models.len(),
            truth.len()
        )));
    }
    let mut null = 0.0;
    let mut total = 0.0;
    for (i, model) in models.iter().enumerate() {
        let f = model.density(t).map_err(|e| e.at(i))?;
        total += f;
        if truth.is_null(i) {
            null += f;
        }
    }
    if total == 0.0 {
        return Err(Error::domain(format!("total density is zero at t = {t}")));
    }
    if total.is_infinite() {
        return Err(Error::domain(format!(
            "total density is infinite at t = {t}"
        )));
    }
    Ok(null / total)
}

/// `oracle_lfdr` at every statistic. Identical models are evaluated once per
/// statistic, weighted by how many nulls and non-nulls share them.
pub fn oracle_lfdr_scores(
    truth: &GroundTruth,
    models: &[DensityModel],
    stats: &StatVector,
) -> Result<Vec<f64>> {
    if models.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} models for {} hypotheses",
            models.len(),
            truth.len()
        )));
    }
    // (model, null count, total count)
    let mut groups: Vec<(&DensityModel, f64, f64)> = Vec::new();
    for (i, model) in models.iter().enumerate() {
        let null = truth.is_null(i) as u8 as f64;
        match groups.iter_mut().find(|g| g.0 == model) {
            Some(g) => {
                g.1 += null;
                g.2 += 1.0;
            }
            None => groups.push((model, null, 1.0)),
        }
    }
    stats
        .values()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut null = 0.0;
            let mut total = 0.0;
            for (model, n0, n) in &groups {
                let f = model.density(t).map_err(|e| e.at(i))?;
                null += n0 * f;
                total += n * f;
            }
            if total == 0.0 || total.is_infinite() {
                return Err(Error::domain(format!("total density is {total} at t = {t}")).at(i));
            }
            Ok(null / total)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pi0Estimate {
    pub value: f64,
    pub lambda: f64,
    pub raw: f64,
    pub window: Option<Interval>,
}

/// Storey's estimator `#{p > lambda} / (m (1 - lambda))`, clipped at 1.
pub fn storey_pi0(stats: &StatVector, lambda: f64) -> Result<Pi0Estimate> {
    stats.require_p_scale("storey_pi0")?;
    storey_from_slice(stats.values(), lambda, None)
}

fn storey_from_slice(p: &[f64], lambda: f64, window: Option<Interval>) -> Result<Pi0Estimate> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::arg(format!("lambda = {lambda} outside (0, 1)")));
    }
    let above = p.iter().filter(|&&v| v > lambda).count();
    let raw = above as f64 / (p.len() as f64 * (1.0 - lambda));
    Ok(Pi0Estimate {
        value: raw.min(1.0),
        lambda,
        raw,
        window,
    })
}

/// Storey's estimator on the p-values inside `[0, c]`, rescaled by `1/c`.
pub fn selection_window_pi0(
    stats: &StatVector,
    window: Interval,
    lambda: f64,
) -> Result<Pi0Estimate> {
    stats.require_p_scale("selection_window_pi0")?;
    if window.lo != 0.0 || !(window.hi > 0.0 && window.hi <= 1.0) {
        return Err(Error::arg(format!(
            "selection window must be [0, c] with c in (0, 1], got [{}, {}]",
            window.lo, window.hi
        )));
    }
    let c = window.hi;
    let rescaled: Vec<f64> = stats
        .values()
        .iter()
        .filter(|&&p| p <= c)
        .map(|&p| (p / c).min(1.0))
        .collect();
    if rescaled.is_empty() {
        return Err(Error::Estimate(format!(
            "no p-values in the selection window [0, {c}]"
        )));
    }
    storey_from_slice(&rescaled, lambda, Some(window))
}

/// `lfdr(z_i)` for every statistic, in input order.
pub fn score_hypotheses(curve: &LfdrCurve, stats: &StatVector) -> Result<Vec<f64>> {
    stats
        .values()
        .iter()
        .enumerate()
        .map(|(i, &t)| lfdr_curve_eval(curve, t).map_err(|e| e.at(i)))
        .collect()
}
