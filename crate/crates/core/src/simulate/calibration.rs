use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::GeneratorSpec;
use super::harness::{replicate_data, replicate_rng, with_threads};
use crate::density::grenander_fit;
use crate::error::{Error, Result};
use crate::lfdr::{
    oracle_lfdr_scores, score_hypotheses, storey_pi0, LfdrCurve, STOREY_DEFAULT_LAMBDA,
};
use crate::model::DensityModel;
use crate::testing::q_values;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scorer {
    PValue,
    /// Storey-BH q-values.
    QValue,
    OracleLfdr,
    /// Grenander density with Storey's null proportion.
    EstimatedLfdr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub scorer: Scorer,
    pub replicates: u64,
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<u64>,
    pub bin_null_counts: Vec<u64>,
    /// `None` for empty bins.
    pub bin_null_fraction: Vec<Option<f64>>,
}

impl CalibrationCurve {
    pub fn num_bins(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])
    }
}

fn bin_of(score: f64, width: f64, bins: usize) -> usize {
    ((score / width).floor() as usize).min(bins - 1)
}

/// Null fraction per score bin over the pooled `(score, is_null)` pairs of
/// replicates `0..reps`.
pub fn calibration_experiment(
    spec: &GeneratorSpec,
    scorer: Scorer,
    reps: u64,
    bin_width: f64,
    threads: Option<usize>,
) -> Result<CalibrationCurve> {
    if !(bin_width > 0.0 && bin_width < 1.0) {
        return Err(Error::arg(format!("bin width {bin_width} outside (0, 1)")));
    }
    if reps == 0 {
        return Err(Error::arg("the number of replicates must be at least 1"));
    }
    spec.kind.validate()?;
    let bins = (1.0 / bin_width - 1e-9).ceil() as usize;
    let null_density = spec.kind.null_density()?;
    let tally = |index: u64| -> Result<(Vec<u64>, Vec<u64>)> {
        let mut rng = replicate_rng(spec.seed, index);
        let (native, p, truth) = replicate_data(spec, false, &mut rng)?;
        let scores = score_replicate(scorer, &native, &p, &truth, &null_density)?;
        let mut counts = vec![0; bins];
        let mut nulls = vec![0; bins];
        for (i, &s) in scores.iter().enumerate() {
            let b = bin_of(s, bin_width, bins);
            counts[b] += 1;
            nulls[b] += truth.is_null(i) as u64;
        }
        Ok((counts, nulls))
    };
    let add = |mut a: (Vec<u64>, Vec<u64>), b: (Vec<u64>, Vec<u64>)| {
        for k in 0..bins {
            a.0[k] += b.0[k];
            a.1[k] += b.1[k];
        }
        a
    };
    let (counts, nulls) = with_threads(threads, || {
        (0..reps)
            .into_par_iter()
            .map(tally)
            .try_reduce(|| (vec![0; bins], vec![0; bins]), |a, b| Ok(add(a, b)))
    })??;
    let mut bin_edges: Vec<f64> = (0..bins).map(|k| k as f64 * bin_width).collect();
    bin_edges.push(1.0);
    let bin_null_fraction = counts
        .iter()
        .zip(&nulls)
        .map(|(&c, &n)| (c > 0).then(|| n as f64 / c as f64))
        .collect();
    Ok(CalibrationCurve {
        scorer,
        replicates: reps,
        bin_edges,
        bin_counts: counts,
        bin_null_counts: nulls,
        bin_null_fraction,
    })
}

fn score_replicate(
    scorer: Scorer,
    native: &crate::model::StatVector,
    p: &crate::model::StatVector,
    truth: &crate::model::GroundTruth,
    null_density: &DensityModel,
) -> Result<Vec<f64>> {
    match scorer {
        Scorer::PValue => Ok(p.values().to_vec()),
        Scorer::QValue => {
            let pi0 = storey_pi0(p, STOREY_DEFAULT_LAMBDA)?;
            Ok(q_values(p, Some(pi0.value * p.len() as f64))?.qvalues)
        }
        Scorer::OracleLfdr => {
            let models = truth.per_hypothesis_models(null_density)?;
            oracle_lfdr_scores(truth, &models, native)
        }
        Scorer::EstimatedLfdr => {
            let pi0 = storey_pi0(p, STOREY_DEFAULT_LAMBDA)?;
            let curve = LfdrCurve::new(pi0.value, DensityModel::uniform01(), grenander_fit(p)?)?;
            score_hypotheses(&curve, p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::generate::GeneratorKind;

    #[test]
    fn all_null_oracle_lands_in_last_bin() {
        let spec = GeneratorSpec::new(
            GeneratorKind::GaussianMeans {
                m: 100,
                m1: 0,
                mu: 2.0,
            },
            4,
        )
        .unwrap();
        let c = calibration_experiment(&spec, Scorer::OracleLfdr, 5, 0.025, None).unwrap();
        assert_eq!(c.num_bins(), 40);
        assert_eq!(c.bin_counts[39], 500);
        assert_eq!(c.bin_null_fraction[39], Some(1.0));
        assert!(c.bin_counts[..39].iter().all(|&n| n == 0));
        assert!(c.bin_null_fraction[..39].iter().all(Option::is_none));
    }

    #[test]
    fn p_value_scorer_is_anti_calibrated() {
        let spec = GeneratorSpec::new(
            GeneratorKind::GaussianMeans {
                m: 3000,
                m1: 150,
                mu: 2.0,
            },
            1,
        )
        .unwrap();
        let c = calibration_experiment(&spec, Scorer::PValue, 20, 0.025, None).unwrap();
        assert!(c.bin_null_fraction[0].unwrap() > 0.4);
        assert_eq!(c.bin_counts.iter().sum::<u64>(), 60_000);
    }

    #[test]
    fn estimated_lfdr_runs() {
        let spec = GeneratorSpec::new(
            GeneratorKind::TwoGroupsBeta {
                m: 500,
                pi0: 0.8,
                a: 0.2,
                b: 1.0,
            },
            2,
        )
        .unwrap();
        let c = calibration_experiment(&spec, Scorer::EstimatedLfdr, 4, 0.1, Some(2)).unwrap();
        assert_eq!(c.bin_counts.iter().sum::<u64>(), 2000);
        assert!(calibration_experiment(&spec, Scorer::QValue, 1, 1.5, None).is_err());
    }
}
