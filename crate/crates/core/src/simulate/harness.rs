//! Seeded Monte Carlo estimation of error rates.
//!
//! Replicate `r` of a run draws from its own ChaCha8 stream keyed by
//! `(seed, r)`, and every accumulated quantity is an integer (counts, or
//! `[0, 1]`-valued terms in 64.64 fixed point). Sums therefore do not depend
//! on evaluation order, and disjoint replicate ranges merge exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::GeneratorSpec;
use crate::error::{Error, Result};
use crate::lfdr::{oracle_lfdr_scores, storey_pi0, STOREY_DEFAULT_LAMBDA};
use crate::model::{GroundTruth, LossSpec, StatVector};
use crate::testing::{
    bh_threshold, empirical_error_rates, lfdr_threshold_procedure, perturb_discrete, support_line,
    RejectionResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "procedure")]
pub enum ProcedureSpec {
    #[serde(rename = "BH")]
    Bh {
        alpha: f64,
    },
    #[serde(rename = "StoreyBH")]
    StoreyBh {
        alpha: f64,
        lambda: f64,
    },
    SupportLine {
        alpha: f64,
    },
    /// Reject where the oracle lfdr is at most `1 / (1 + loss_lambda)`.
    OracleLfdr {
        loss_lambda: f64,
    },
}

impl ProcedureSpec {
    fn validate(&self) -> Result<()> {
        let alpha_ok = |a: f64| a > 0.0 && a <= 1.0;
        match *self {
            ProcedureSpec::Bh { alpha } | ProcedureSpec::SupportLine { alpha }
                if !alpha_ok(alpha) =>
            {
                Err(Error::arg(format!("alpha = {alpha} outside (0, 1]")))
            }
            ProcedureSpec::StoreyBh { alpha, lambda }
                if !alpha_ok(alpha) || !(lambda > 0.0 && lambda < 1.0) =>
            {
                Err(Error::arg(
                    "Storey-BH needs alpha in (0, 1] and lambda in (0, 1)",
                ))
            }
            ProcedureSpec::OracleLfdr { loss_lambda } => LossSpec::new(loss_lambda).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn run(
        &self,
        p: &StatVector,
        native: &StatVector,
        truth: &GroundTruth,
        spec: &GeneratorSpec,
    ) -> Result<RejectionResult> {
        match *self {
            ProcedureSpec::Bh { alpha } => bh_threshold(p, alpha, None),
            ProcedureSpec::StoreyBh { alpha, lambda } => {
                let pi0 = storey_pi0(p, lambda)?;
                bh_threshold(p, alpha, Some(pi0.value * p.len() as f64))
            }
            ProcedureSpec::SupportLine { alpha } => support_line(p, alpha),
            ProcedureSpec::OracleLfdr { loss_lambda } => {
                let models = truth.per_hypothesis_models(&spec.kind.null_density()?)?;
                let scores = oracle_lfdr_scores(truth, &models, native)?;
                lfdr_threshold_procedure(p, &scores, LossSpec::new(loss_lambda)?)
            }
        }
    }
}

impl Default for ProcedureSpec {
    fn default() -> Self {
        ProcedureSpec::StoreyBh {
            alpha: 0.1,
            lambda: STOREY_DEFAULT_LAMBDA,
        }
    }
}

/// Error criteria. Interval criteria count statistics inside `[lo, hi]` on
/// the generated scale, independently of the procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion")]
pub enum Criterion {
    #[serde(rename = "FDR")]
    Fdr,
    #[serde(rename = "bFDR")]
    Bfdr,
    #[serde(rename = "mFDR")]
    Mfdr { lo: f64, hi: f64 },
    #[serde(rename = "pFDR")]
    Pfdr { lo: f64, hi: f64 },
    #[serde(rename = "power")]
    Power,
}

impl Criterion {
    pub fn key(&self) -> String {
        match self {
            Criterion::Fdr => "FDR".into(),
            Criterion::Bfdr => "bFDR".into(),
            Criterion::Mfdr { lo, hi } => format!("mFDR[{lo},{hi}]"),
            Criterion::Pfdr { lo, hi } => format!("pFDR[{lo},{hi}]"),
            Criterion::Power => "power".into(),
        }
    }

    fn interval(&self) -> Option<(f64, f64)> {
        match *self {
            Criterion::Mfdr { lo, hi } | Criterion::Pfdr { lo, hi } => Some((lo, hi)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub procedure: ProcedureSpec,
    pub criteria: Vec<Criterion>,
    /// Replace grid p-values by uniform draws within their cells first.
    #[serde(default)]
    pub perturb_discrete: bool,
}

impl McConfig {
    pub fn new(procedure: ProcedureSpec, criteria: Vec<Criterion>) -> Self {
        McConfig {
            procedure,
            criteria,
            perturb_discrete: false,
        }
    }

    pub fn perturbed(mut self, on: bool) -> Self {
        self.perturb_discrete = on;
        self
    }

    fn validate(&self) -> Result<()> {
        self.procedure.validate()?;
        if self.criteria.is_empty() {
            return Err(Error::arg("at least one criterion is required"));
        }
        for c in &self.criteria {
            if let Some((lo, hi)) = c.interval() {
                if !(lo < hi) {
                    return Err(Error::arg(format!("interval [{lo}, {hi}] is empty")));
                }
            }
        }
        Ok(())
    }
}

const FIXED_ONE: f64 = 18_446_744_073_709_551_616.0; // 2^64

fn to_fixed(x: f64) -> i128 {
    (x * FIXED_ONE).round() as i128
}

fn from_fixed(x: i128) -> f64 {
    x as f64 / FIXED_ONE
}

/// Exact sufficient statistics for every criterion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accumulators {
    pub fdp_sum: i128,
    pub fdp_sq_sum: i128,
    pub boundary_null: u64,
    pub power_sum: i128,
    pub power_sq_sum: i128,
    /// One entry per criterion; only interval criteria use theirs.
    pub intervals: Vec<IntervalAccumulator>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalAccumulator {
    pub v: u128,
    pub r: u128,
    pub v_sq: u128,
    pub r_sq: u128,
    pub vr: u128,
    /// Replicates with `R > 0`.
    pub positive: u64,
    pub ratio_sum: i128,
    pub ratio_sq_sum: i128,
}

impl Accumulators {
    fn empty(criteria: usize) -> Self {
        Accumulators {
            intervals: vec![IntervalAccumulator::default(); criteria],
            ..Default::default()
        }
    }

    fn add(&mut self, o: &ReplicateOutcome) {
        let fdp = to_fixed(o.fdp);
        self.fdp_sum += fdp;
        self.fdp_sq_sum += to_fixed(o.fdp * o.fdp);
        self.boundary_null += o.boundary_null as u64;
        self.power_sum += to_fixed(o.power);
        self.power_sq_sum += to_fixed(o.power * o.power);
        for (acc, &(v, r)) in self.intervals.iter_mut().zip(&o.interval_counts) {
            let (v, r) = (v as u128, r as u128);
            acc.v += v;
            acc.r += r;
            acc.v_sq += v * v;
            acc.r_sq += r * r;
            acc.vr += v * r;
            if r > 0 {
                let ratio = v as f64 / r as f64;
                acc.positive += 1;
                acc.ratio_sum += to_fixed(ratio);
                acc.ratio_sq_sum += to_fixed(ratio * ratio);
            }
        }
    }

    fn merge(mut self, other: &Accumulators) -> Self {
        self.fdp_sum += other.fdp_sum;
        self.fdp_sq_sum += other.fdp_sq_sum;
        self.boundary_null += other.boundary_null;
        self.power_sum += other.power_sum;
        self.power_sq_sum += other.power_sq_sum;
        for (a, b) in self.intervals.iter_mut().zip(&other.intervals) {
            a.v += b.v;
            a.r += b.r;
            a.v_sq += b.v_sq;
            a.r_sq += b.r_sq;
            a.vr += b.vr;
            a.positive += b.positive;
            a.ratio_sum += b.ratio_sum;
            a.ratio_sq_sum += b.ratio_sq_sum;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

fn mean_estimate(sum: f64, sq_sum: f64, n: f64) -> Estimate {
    let mean = sum / n;
    let var = if n > 1.0 {
        ((sq_sum - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub spec: GeneratorSpec,
    pub config: McConfig,
    pub first_replicate: u64,
    pub replicates: u64,
    /// Keyed by criterion; a pFDR entry is absent when no replicate had a
    /// positive count in its interval.
    pub estimates: BTreeMap<String, Estimate>,
    /// Share of replicates with `R > 0`, per pFDR criterion.
    pub pfdr_conditioning_fraction: BTreeMap<String, f64>,
    pub accumulators: Accumulators,
}

impl MonteCarloReport {
    fn finalize(
        spec: GeneratorSpec,
        config: McConfig,
        first: u64,
        n: u64,
        acc: Accumulators,
    ) -> Self {
        let nf = n as f64;
        let mut estimates = BTreeMap::new();
        let mut conditioning = BTreeMap::new();
        for (c, ia) in config.criteria.iter().zip(&acc.intervals) {
            let est = match c {
                Criterion::Fdr => Some(mean_estimate(
                    from_fixed(acc.fdp_sum),
                    from_fixed(acc.fdp_sq_sum),
                    nf,
                )),
                Criterion::Power => Some(mean_estimate(
                    from_fixed(acc.power_sum),
                    from_fixed(acc.power_sq_sum),
                    nf,
                )),
                Criterion::Bfdr => {
                    let k = acc.boundary_null as f64;
                    Some(mean_estimate(k, k, nf))
                }
                Criterion::Mfdr { .. } => ratio_of_means(ia, nf),
                Criterion::Pfdr { .. } => {
                    conditioning.insert(c.key(), ia.positive as f64 / nf);
                    (ia.positive > 0).then(|| {
                        mean_estimate(
                            from_fixed(ia.ratio_sum),
                            from_fixed(ia.ratio_sq_sum),
                            ia.positive as f64,
                        )
                    })
                }
            };
            if let Some(e) = est {
                estimates.insert(c.key(), e);
            }
        }
        MonteCarloReport {
            spec,
            config,
            first_replicate: first,
            replicates: n,
            estimates,
            pfdr_conditioning_fraction: conditioning,
            accumulators: acc,
        }
    }

    pub fn estimate(&self, criterion: &Criterion) -> Option<Estimate> {
        self.estimates.get(&criterion.key()).copied()
    }

    /// Combine runs over adjacent replicate ranges of the same design.
    pub fn merge(&self, other: &MonteCarloReport) -> Result<MonteCarloReport> {
        if self.spec != other.spec || self.config != other.config {
            return Err(Error::arg(
                "only reports of the same design and seed can be merged",
            ));
        }
        let (a, b) = if self.first_replicate <= other.first_replicate {
            (self, other)
        } else {
            (other, self)
        };
        if a.first_replicate + a.replicates != b.first_replicate {
            return Err(Error::arg(format!(
                "replicate ranges [{}, {}) and [{}, {}) are not adjacent",
                a.first_replicate,
                a.first_replicate + a.replicates,
                b.first_replicate,
                b.first_replicate + b.replicates
            )));
        }
        Ok(MonteCarloReport::finalize(
            a.spec.clone(),
            a.config.clone(),
            a.first_replicate,
            a.replicates + b.replicates,
            a.accumulators.clone().merge(&b.accumulators),
        ))
    }
}

/// `E V / E R` with a delta-method standard error; undefined if `E R = 0`.
fn ratio_of_means(ia: &IntervalAccumulator, n: f64) -> Option<Estimate> {
    if ia.r == 0 {
        return None;
    }
    let mv = ia.v as f64 / n;
    let mr = ia.r as f64 / n;
    let ratio = mv / mr;
    let std_error = if n > 1.0 {
        let var_v = (ia.v_sq as f64 - n * mv * mv) / (n - 1.0);
        let var_r = (ia.r_sq as f64 - n * mr * mr) / (n - 1.0);
        let cov = (ia.vr as f64 - n * mv * mr) / (n - 1.0);
        let var = (var_v - 2.0 * ratio * cov + ratio * ratio * var_r) / (mr * mr);
        (var.max(0.0) / n).sqrt()
    } else {
        0.0
    };
    Some(Estimate {
        mean: ratio,
        std_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct ReplicateOutcome {
    fdp: f64,
    boundary_null: bool,
    power: f64,
    interval_counts: Vec<(u64, u64)>,
}

/// The generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw replicate `index`, apply the optional perturbation, and return the
/// generated statistics (perturbed if requested), their p-values and truth.
pub fn replicate_data(
    spec: &GeneratorSpec,
    perturb: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(StatVector, StatVector, GroundTruth)> {
    let (mut native, truth) = spec.kind.draw(rng)?;
    if perturb {
        let levels = spec
            .kind
            .grid_levels()
            .ok_or_else(|| Error::arg("perturbation applies only to discrete grid designs"))?;
        native = perturb_discrete(&native, levels, rng)?;
    }
    let p = spec.kind.to_p_values(&native)?;
    Ok((native, p, truth))
}

/// Boundary hypothesis with ties among equal boundary p-values broken
/// uniformly at random.
pub fn random_tie_boundary<R: Rng + ?Sized>(
    result: &RejectionResult,
    p: &StatVector,
    rng: &mut R,
) -> Option<usize> {
    let b = result.boundary_stat?;
    let tied: Vec<usize> = result
        .rejected
        .iter()
        .copied()
        .filter(|&i| p.values()[i] == b)
        .collect();
    match tied.len() {
        0 => result.boundary_index,
        1 => Some(tied[0]),
        k => Some(tied[rng.random_range(0..k)]),
    }
}

fn run_replicate(spec: &GeneratorSpec, config: &McConfig, index: u64) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(spec.seed, index);
    let (native, p, truth) = replicate_data(spec, config.perturb_discrete, &mut rng)?;
    let result = config.procedure.run(&p, &native, &truth, spec)?;
    let rates = empirical_error_rates(&result, &truth)?;
    let boundary_null =
        random_tie_boundary(&result, &p, &mut rng).is_some_and(|i| truth.is_null(i));
    let m1 = truth.len() - truth.m0();
    let power = if m1 == 0 {
        0.0
    } else {
        (result.num_rejections - rates.v) as f64 / m1 as f64
    };
    let interval_counts = config
        .criteria
        .iter()
        .map(|c| match c.interval() {
            Some((lo, hi)) => {
                let mut v = 0;
                let mut r = 0;
                for (i, &x) in native.values().iter().enumerate() {
                    if x >= lo && x <= hi {
                        r += 1;
                        v += truth.is_null(i) as u64;
                    }
                }
                (v, r)
            }
            None => (0, 0),
        })
        .collect();
    Ok(ReplicateOutcome {
        fdp: rates.fdp,
        boundary_null,
        power,
        interval_counts,
    })
}

pub(crate) fn with_threads<T: Send>(
    threads: Option<usize>,
    job: impl FnOnce() -> T + Send,
) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(Error::arg("thread count must be positive")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::arg(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Estimate the configured criteria over replicates `0..n`.
pub fn mc_error_rates(spec: &GeneratorSpec, config: &McConfig, n: u64) -> Result<MonteCarloReport> {
    mc_error_rates_range(spec, config, 0, n, None)
}

/// Replicates `first..first + n`, optionally on a bounded thread pool.
pub fn mc_error_rates_range(
    spec: &GeneratorSpec,
    config: &McConfig,
    first: u64,
    n: u64,
    threads: Option<usize>,
) -> Result<MonteCarloReport> {
    if n == 0 {
        return Err(Error::arg("the number of replicates must be at least 1"));
    }
    spec.kind.validate()?;
    config.validate()?;
    let k = config.criteria.len();
    let acc = with_threads(threads, || {
        (first..first + n)
            .into_par_iter()
            .try_fold(
                || Accumulators::empty(k),
                |mut acc, i| {
                    acc.add(&run_replicate(spec, config, i)?);
                    Ok::<_, Error>(acc)
                },
            )
            .try_reduce(|| Accumulators::empty(k), |a, b| Ok(a.merge(&b)))
    })??;
    Ok(MonteCarloReport::finalize(
        spec.clone(),
        config.clone(),
        first,
        n,
        acc,
    ))
}
