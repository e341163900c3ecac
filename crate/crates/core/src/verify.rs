//! Self-checks against exact values and slow reference implementations.
//!
//! Each check returns one or more [`CheckOutcome`] lines with the observed
//! value, the expected value and the tolerance it was judged against.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compound::{clfdr_exact, clfdr_generic, clfdr_two_groups};
use crate::density::grenander_fit;
use crate::error::{Error, Result};
use crate::model::{DensityModel, GroundTruth, StatVector, TwoGroupsSpec};
use crate::oracle::{brute_force_hull_density, clfdr_by_permutations};
use crate::simulate::harness::mc_error_rates_range;
use crate::simulate::{
    calibration_experiment, discrete_ce_boundary_probability, discrete_limit_check,
    exp_family_null_density_check, mfdr_pfdr_limit_check, superuniform_boundary_probability,
    Criterion, DiscreteLimitDesign, ExpFamily, GeneratorKind, GeneratorSpec, McConfig,
    ProcedureSpec, Scorer,
};
use crate::testing::{bh_threshold, q_values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Theorems,
    Counterexamples,
    Oracles,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Theorems, Suite::Counterexamples, Suite::Oracles];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Theorems => "theorems",
            Suite::Counterexamples => "counterexamples",
            Suite::Oracles => "oracles",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown suite '{s}' (expected theorems, counterexamples or oracles)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|observed - expected| <= tolerance`
    Within,
    /// `observed > expected`
    Above,
    /// `observed <= expected + tolerance`
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn within(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        Self::judge(name, observed, expected, tolerance, Relation::Within)
    }

    pub fn above(name: impl Into<String>, observed: f64, expected: f64) -> Self {
        Self::judge(name, observed, expected, 0.0, Relation::Above)
    }

    pub fn at_most(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        Self::judge(name, observed, expected, tolerance, Relation::AtMost)
    }

    fn judge(
        name: impl Into<String>,
        observed: f64,
        expected: f64,
        tolerance: f64,
        relation: Relation,
    ) -> Self {
        let passed = match relation {
            Relation::Within => (observed - expected).abs() <= tolerance,
            Relation::Above => observed > expected,
            Relation::AtMost => observed <= expected + tolerance,
        };
        CheckOutcome {
            name: name.into(),
            observed,
            expected,
            tolerance,
            relation,
            passed,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let rel = match self.relation {
            Relation::Within => "|obs-exp|<=tol",
            Relation::Above => "obs>exp",
            Relation::AtMost => "obs<=exp+tol",
        };
        write!(
            f,
            "{verdict} {}: observed={:.6e} expected={:.6e} tolerance={:.3e} ({rel})",
            self.name, self.observed, self.expected, self.tolerance
        )
    }
}

/// Shared knobs; `reps` overrides every Monte Carlo replicate count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifySettings {
    pub reps: Option<u64>,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl VerifySettings {
    fn reps_or(&self, default: u64) -> u64 {
        self.reps.unwrap_or(default)
    }
}

pub fn run_suite(suite: Suite, settings: &VerifySettings) -> Result<Vec<CheckOutcome>> {
    let s = settings;
    let mut out = Vec::new();
    match suite {
        Suite::Theorems => {
            for alpha in [0.1, 0.3] {
                out.push(exact_bfdr_check(
                    alpha,
                    s.reps_or(100_000),
                    s.seed,
                    s.threads,
                )?);
            }
            out.extend(calibration_checks(s.reps_or(500), s.seed, s.threads)?);
            out.extend(interval_limit_checks()?);
            out.extend(discrete_limit_checks(s.reps_or(20_000), s.seed, s.threads)?);
            out.extend(null_density_checks()?);
            out.extend(determinism_checks(s.reps_or(2_000).max(2), s.seed)?);
        }
        Suite::Counterexamples => {
            out.extend(superuniform_checks(s.reps_or(100_000), s.seed, s.threads)?);
            out.extend(discrete_counterexample_checks(
                s.reps_or(100_000),
                s.seed,
                s.threads,
            )?);
        }
        Suite::Oracles => {
            out.extend(grenander_oracle_checks(1000, s.seed)?);
            out.extend(clfdr_identity_checks(s.seed)?);
            out.push(q_bh_duality_check(1000, s.seed)?);
        }
    }
    Ok(out)
}

fn mc_bfdr(
    kind: GeneratorKind,
    alpha: f64,
    perturb: bool,
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<(f64, f64)> {
    let spec = GeneratorSpec::new(kind, seed)?;
    let config = McConfig::new(ProcedureSpec::SupportLine { alpha }, vec![Criterion::Bfdr])
        .perturbed(perturb);
    let e = mc_error_rates_range(&spec, &config, 0, reps, threads)?
        .estimate(&Criterion::Bfdr)
        .expect("bFDR requested");
    Ok((e.mean, e.std_error))
}

/// SL on independent uniform nulls: bFDR equals `pi0 alpha`.
pub fn exact_bfdr_check(
    alpha: f64,
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<CheckOutcome> {
    let pi0 = 0.8;
    let kind = GeneratorKind::TwoGroupsBeta {
        m: 100,
        pi0,
        a: 0.05,
        b: 1.0,
    };
    let (mean, se) = mc_bfdr(kind, alpha, false, reps, seed, threads)?;
    Ok(CheckOutcome::within(
        format!("bfdr/two-groups-beta alpha={alpha}"),
        mean,
        pi0 * alpha,
        3.0 * se,
    ))
}

pub fn superuniform_checks(
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CheckOutcome>> {
    let exact = superuniform_boundary_probability(0.5)?;
    let (mean, se) = mc_bfdr(
        GeneratorKind::SuperUniformCE,
        0.5,
        false,
        reps,
        seed,
        threads,
    )?;
    Ok(vec![
        CheckOutcome::within("counterexample/superuniform exact", exact, 3.0 / 8.0, 1e-10),
        CheckOutcome::within(
            "counterexample/superuniform monte-carlo",
            mean,
            exact,
            3.0 * se,
        ),
        CheckOutcome::above("counterexample/superuniform exceeds pi0*alpha", mean, 0.25),
    ])
}

pub fn discrete_counterexample_checks(
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CheckOutcome>> {
    let enumerated = discrete_ce_boundary_probability(0.5)?;
    let closed_form = (1.0 / 3.0 + 0.5 + 0.5 + 0.5) / 9.0;
    let (mean, se) = mc_bfdr(GeneratorKind::DiscreteCE, 0.5, false, reps, seed, threads)?;
    Ok(vec![
        CheckOutcome::within(
            "counterexample/discrete enumeration",
            enumerated,
            11.0 / 54.0,
            1e-12,
        ),
        CheckOutcome::within(
            "counterexample/discrete closed form",
            closed_form,
            enumerated,
            1e-12,
        ),
        CheckOutcome::above(
            "counterexample/discrete exceeds 2*alpha/m",
            enumerated,
            1.0 / 6.0,
        ),
        CheckOutcome::within(
            "counterexample/discrete monte-carlo",
            mean,
            enumerated,
            3.0 * se,
        ),
    ])
}

/// Oracle lfdr bins within 0.05 of their midpoint; q-value bins at or below
/// 0.3 hold a larger null share than their score.
pub fn calibration_checks(
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CheckOutcome>> {
    let spec = GeneratorSpec::new(
        GeneratorKind::GaussianMeans {
            m: 3000,
            m1: 150,
            mu: 2.0,
        },
        seed,
    )?;
    let min_count = 500;
    let oracle = calibration_experiment(&spec, Scorer::OracleLfdr, reps, 0.025, threads)?;
    let worst = (0..oracle.num_bins())
        .filter(|&k| oracle.bin_counts[k] >= min_count)
        .map(|k| (oracle.bin_null_fraction[k].unwrap() - oracle.midpoint(k)).abs())
        .fold(f64::NAN, f64::max);
    let q = calibration_experiment(&spec, Scorer::QValue, reps, 0.025, threads)?;
    let margin = (0..q.num_bins())
        .filter(|&k| q.bin_edges[k + 1] <= 0.3 + 1e-12 && q.bin_counts[k] >= min_count)
        .map(|k| q.bin_null_fraction[k].unwrap() - q.midpoint(k))
        .fold(f64::NAN, f64::min);
    Ok(vec![
        CheckOutcome::at_most(
            "calibration/oracle-lfdr max bin deviation",
            worst,
            0.0,
            0.05,
        ),
        CheckOutcome::above(
            "calibration/q-value min null excess (score <= 0.3)",
            margin,
            0.0,
        ),
    ])
}

/// The two-groups density pair used for the interval limit and calibration.
pub fn gaussian_two_groups() -> TwoGroupsSpec {
    TwoGroupsSpec::new(
        0.95,
        DensityModel::standard_normal(),
        DensityModel::gaussian(2.0),
    )
    .expect("valid spec")
}

pub const INTERVAL_EPS: [f64; 3] = [0.5, 0.1, 0.02];

pub fn interval_limit_checks() -> Result<Vec<CheckOutcome>> {
    let records = mfdr_pfdr_limit_check(&gaussian_two_groups(), 0.0, &INTERVAL_EPS, None)?;
    let worst_step = records
        .windows(2)
        .map(|w| w[1].mfdr_deviation - w[0].mfdr_deviation)
        .fold(f64::NEG_INFINITY, f64::max);
    let last = records.last().expect("nonempty").mfdr_deviation;
    Ok(vec![
        CheckOutcome::above(
            "interval-limit/mfdr deviation decrease (min step)",
            -worst_step,
            0.0,
        ),
        CheckOutcome::at_most("interval-limit/mfdr deviation at eps=0.02", last, 0.0, 0.01),
    ])
}

/// Limiting average pmf on the 10-point grid: uniform nulls at
/// `pi0* = 0.9` plus alternatives spread 0.5/0.3/0.2 over the three lowest
/// levels.
pub fn discrete_limit_f_star() -> DensityModel {
    let (levels, pi0) = (10usize, 0.9);
    let g = [0.5, 0.3, 0.2];
    let pmf = (0..levels)
        .map(|k| pi0 / levels as f64 + (1.0 - pi0) * g.get(k).copied().unwrap_or(0.0))
        .collect();
    DensityModel::grid_pmf(pmf).expect("valid pmf")
}

pub fn discrete_limit_design(reps: u64, seed: u64, perturb: bool) -> DiscreteLimitDesign {
    DiscreteLimitDesign {
        levels: 10,
        alpha: 0.5,
        pi0_star: 0.9,
        f_star: discrete_limit_f_star(),
        m_sequence: vec![5000],
        reps,
        seed,
        perturb,
    }
}

pub fn discrete_limit_checks(
    reps: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for perturb in [false, true] {
        let report = discrete_limit_check(&discrete_limit_design(reps, seed, perturb), threads)?;
        for r in &report.records {
            let label = if perturb { "perturbed" } else { "raw" };
            out.push(CheckOutcome::within(
                format!("discrete-limit/{label} m={} (l*={})", r.m, report.ell_star),
                r.bfdr.mean,
                r.target,
                3.0 * r.bfdr.std_error,
            ));
        }
    }
    Ok(out)
}

pub fn null_density_checks() -> Result<Vec<CheckOutcome>> {
    let theta0 = 0.0;
    let grid: Vec<f64> = (0..10_000).map(|k| 0.5 * k as f64 / 9_999.0).collect();
    [0.0, -0.5, -2.0]
        .into_iter()
        .map(|shift| {
            let check = exp_family_null_density_check(
                ExpFamily::GaussianLocation,
                theta0 + shift,
                theta0,
                &grid,
            )?;
            Ok(CheckOutcome::at_most(
                format!("null-density/gaussian theta=theta0{shift:+}"),
                check.max_density_on_window,
                1.0,
                1e-9,
            ))
        })
        .collect()
}

/// A repeated run and a run on more threads must reproduce the report, as
/// must the merge of its two halves.
pub fn determinism_checks(reps: u64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let (spec, config) = determinism_design(seed)?;
    let base = mc_error_rates_range(&spec, &config, 0, reps, Some(1))?;
    let again = mc_error_rates_range(&spec, &config, 0, reps, Some(1))?;
    let wide = mc_error_rates_range(&spec, &config, 0, reps, Some(4))?;
    let half = reps / 2;
    let merged = mc_error_rates_range(&spec, &config, 0, half, None)?.merge(
        &mc_error_rates_range(&spec, &config, half, reps - half, None)?,
    )?;
    let mismatch = |r: &crate::simulate::MonteCarloReport| (r != &base) as u8 as f64;
    Ok(vec![
        CheckOutcome::within("determinism/repeat", mismatch(&again), 0.0, 0.0),
        CheckOutcome::within("determinism/thread count", mismatch(&wide), 0.0, 0.0),
        CheckOutcome::within("determinism/merge law", mismatch(&merged), 0.0, 0.0),
    ])
}

pub fn determinism_design(seed: u64) -> Result<(GeneratorSpec, McConfig)> {
    let spec = GeneratorSpec::new(
        GeneratorKind::TwoGroupsBeta {
            m: 100,
            pi0: 0.8,
            a: 0.1,
            b: 1.0,
        },
        seed,
    )?;
    let config = McConfig::new(
        ProcedureSpec::SupportLine { alpha: 0.3 },
        vec![
            Criterion::Fdr,
            Criterion::Bfdr,
            Criterion::Mfdr { lo: 0.0, hi: 0.01 },
            Criterion::Pfdr { lo: 0.0, hi: 0.01 },
            Criterion::Power,
        ],
    );
    Ok((spec, config))
}

fn random_p_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let alt = DensityModel::beta(rng.random_range(0.1..0.9), 1.0).expect("valid beta");
    let share: f64 = rng.random();
    let tied = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            let x = if rng.random_bool(share) {
                alt.sample(rng)
            } else {
                rng.random::<f64>()
            };
            let x = if tied { (x * 100.0).ceil() / 100.0 } else { x };
            x.clamp(1e-12, 1.0)
        })
        .collect()
}

/// Fast Grenander fit against the brute-force hull at every data point,
/// every gap midpoint and 1.
pub fn grenander_oracle_checks(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_dev, mut worst_mass, mut bad_shape) = (0.0f64, 0.0f64, 0u32);
    for _ in 0..instances {
        let n = rng.random_range(1..=50);
        let sample = random_p_sample(&mut rng, n);
        let fit = grenander_fit(&StatVector::p_values(sample.clone())?)?;
        let mut probes = sample.clone();
        probes.sort_by(f64::total_cmp);
        probes.dedup();
        let mids: Vec<f64> = std::iter::once(0.0)
            .chain(probes.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        probes.extend(mids);
        probes.push(1.0);
        for &t in &probes {
            let dev = (fit.eval(t)? - brute_force_hull_density(&sample, t)).abs();
            worst_dev = worst_dev.max(if dev.is_nan() { f64::INFINITY } else { dev });
        }
        worst_mass = worst_mass.max((fit.total_mass() - 1.0).abs());
        if fit.heights().windows(2).any(|w| w[1] > w[0]) {
            bad_shape += 1;
        }
    }
    Ok(vec![
        CheckOutcome::at_most(
            "grenander/max deviation from hull oracle",
            worst_dev,
            0.0,
            1e-10,
        ),
        CheckOutcome::at_most("grenander/max unit-mass error", worst_mass, 0.0, 1e-10),
        CheckOutcome::within(
            "grenander/instances not nonincreasing",
            bad_shape as f64,
            0.0,
            0.0,
        ),
    ])
}

fn two_groups_instance(
    rng: &mut ChaCha8Rng,
    max_m: usize,
) -> Result<(StatVector, GroundTruth, DensityModel)> {
    let m = rng.random_range(1..=max_m);
    let f1 = DensityModel::beta(rng.random_range(0.1..0.9), 1.0)?;
    let flags: Vec<bool> = (0..m).map(|_| rng.random_bool(0.6)).collect();
    let stats = flags
        .iter()
        .map(|&null| {
            if null {
                rng.random::<f64>()
            } else {
                f1.sample(rng)
            }
        })
        .map(|x| x.clamp(1e-12, 1.0))
        .collect();
    Ok((StatVector::p_values(stats)?, GroundTruth::new(flags), f1))
}

pub fn clfdr_identity_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1fd);
    let null = DensityModel::uniform01();
    let (mut sum_dev, mut path_dev) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let (stats, truth, f1) = two_groups_instance(&mut rng, 15)?;
        let models: Vec<DensityModel> = truth
            .null_flags()
            .iter()
            .map(|&h| if h { null.clone() } else { f1.clone() })
            .collect();
        let fast = clfdr_two_groups(&stats, &truth, &null, &f1)?;
        let slow = clfdr_generic(&stats, &truth, &models)?;
        let exact = clfdr_exact(&stats, &truth, &models)?;
        sum_dev = sum_dev.max((exact.scores.iter().sum::<f64>() - truth.m0() as f64).abs());
        for (a, b) in fast.scores.iter().zip(&slow.scores) {
            path_dev = path_dev.max((a - b).abs());
        }
    }
    let mut enum_dev = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(1..=7);
        let flags: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let models: Vec<DensityModel> = flags
            .iter()
            .map(|&h| {
                if h {
                    Ok(null.clone())
                } else {
                    DensityModel::beta(rng.random_range(0.1..0.9), rng.random_range(1.0..3.0))
                }
            })
            .collect::<Result<_>>()?;
        let stats: Vec<f64> = models
            .iter()
            .map(|d| d.sample(&mut rng).clamp(1e-12, 1.0 - 1e-12))
            .collect();
        let want = clfdr_by_permutations(&stats, &flags, &models)?;
        let got = clfdr_generic(
            &StatVector::p_values(stats)?,
            &GroundTruth::new(flags),
            &models,
        )?;
        for (g, w) in got.scores.iter().zip(&want) {
            enum_dev = enum_dev.max((g - w).abs());
        }
    }
    Ok(vec![
        CheckOutcome::at_most("clfdr/sum equals m0", sum_dev, 0.0, 1e-8),
        CheckOutcome::at_most(
            "clfdr/subset DP vs permutation enumeration",
            enum_dev,
            0.0,
            1e-10,
        ),
        CheckOutcome::at_most(
            "clfdr/symmetric-function path vs subset DP",
            path_dev,
            0.0,
            1e-10,
        ),
    ])
}

/// BH at `alpha = q_i` rejects `H_i`; at `q_i - 1e-9` it does not.
pub fn q_bh_duality_check(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb4);
    let mut violations = 0u64;
    for _ in 0..instances {
        let m = rng.random_range(1..=200);
        let p = StatVector::p_values(random_p_sample(&mut rng, m))?;
        let q = q_values(&p, None)?.qvalues;
        for (i, &qi) in q.iter().enumerate() {
            if !bh_threshold(&p, qi, None)?.rejected.contains(&i) {
                violations += 1;
            }
            let below = qi - 1e-9;
            if below > 0.0 && bh_threshold(&p, below, None)?.rejected.contains(&i) {
                violations += 1;
            }
        }
    }
    Ok(CheckOutcome::within(
        "q-value/BH duality violations",
        violations as f64,
        0.0,
        0.0,
    ))
}
