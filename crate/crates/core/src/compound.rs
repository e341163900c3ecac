//! Exact compound lfdr: the null probability of each hypothesis under a
//! uniformly random assignment of the fixed densities to the observed
//! statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfdr::{lfdr_curve_eval, LfdrCurve};
use crate::model::{DensityModel, GroundTruth, LossSpec, StatVector};

/// Largest `m` accepted by the generic subset DP.
pub const GENERIC_MAX_M: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfdrResult {
    pub scores: Vec<f64>,
    pub m0: usize,
    /// Log of the sum over all `m!` assignments of the likelihood product.
    pub log_permanent_total: f64,
}

/// One row of the likelihood table, scaled so its largest entry is 1.
/// Infinite entries dominate: they become 1 and every finite entry 0.
fn scale_row(row: &mut [f64], j: usize) -> Result<f64> {
    if row.iter().any(|v| v.is_infinite()) {
        for v in row.iter_mut() {
            *v = if v.is_infinite() { 1.0 } else { 0.0 };
        }
        return Ok(f64::INFINITY);
    }
    let max = row.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::Degenerate(format!(
            "statistic {} has zero density under every model",
            j + 1
        )));
    }
    for v in row.iter_mut() {
        *v /= max;
    }
    Ok(max.ln())
}

fn check_inputs(stats: &StatVector, truth: &GroundTruth, models: usize) -> Result<()> {
    if truth.len() != stats.len() {
        return Err(Error::arg(format!(
            "{} labels for {} statistics",
            truth.len(),
            stats.len()
        )));
    }
    if models != stats.len() {
        return Err(Error::arg(format!(
            "{models} models for {} statistics",
            stats.len()
        )));
    }
    Ok(())
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Exact compound lfdr. Uses the two-groups symmetric-function path when all
/// nulls share one density and all non-nulls share another, and the generic
/// subset DP (m <= 20) otherwise.
pub fn clfdr_exact(
    stats: &StatVector,
    truth: &GroundTruth,
    models: &[DensityModel],
) -> Result<ClfdrResult> {
    check_inputs(stats, truth, models.len())?;
    let flags = truth.null_flags();
    let shared = |want: bool| -> Option<&DensityModel> {
        let mut it = models
            .iter()
            .zip(flags)
            .filter(|(_, &h)| h == want)
            .map(|(d, _)| d);
        let first = it.next()?;
        it.all(|d| d == first).then_some(first)
    };
    let m0 = truth.m0();
    let f0 = if m0 == 0 {
        Some(&models[0])
    } else {
        shared(true)
    };
    let f1 = if m0 == stats.len() {
        Some(&models[0])
    } else {
        shared(false)
    };
    match (f0, f1) {
        (Some(f0), Some(f1)) => clfdr_two_groups(stats, truth, f0, f1),
        _ => clfdr_generic(stats, truth, models),
    }
}

/// Two-groups path: with `a_j = f0(t_j)`, `b_j = f1(t_j)`, the permutation
/// sums reduce to coefficients of `prod_j (a_j x + b_j)`, giving
/// `clfdr_i = a_i [x^(m0-1)] prod_{j != i} / [x^m0] prod_j`. O(m^2).
pub fn clfdr_two_groups(
    stats: &StatVector,
    truth: &GroundTruth,
    f0: &DensityModel,
    f1: &DensityModel,
) -> Result<ClfdrResult> {
    check_inputs(stats, truth, stats.len())?;
    let m = stats.len();
    let m0 = truth.m0();
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut log_scale = 0.0;
    for (j, &t) in stats.values().iter().enumerate() {
        let mut row = [
            f0.density(t).map_err(|e| e.at(j))?,
            f1.density(t).map_err(|e| e.at(j))?,
        ];
        let s = scale_row(&mut row, j)?;
        if s.is_finite() {
            log_scale += s;
        }
        a.push(row[0]);
        b.push(row[1]);
    }

    // prefix[k] = coefficients of prod_{j<k}, suffix[k] = prod_{j>=k}, each
    // renormalized to max 1 with its log scale carried alongside
    let mut prefix = vec![(vec![1.0], 0.0)];
    for j in 0..m {
        let next = multiply_linear(&prefix[j], a[j], b[j]);
        prefix.push(next);
    }
    let mut suffix = vec![(vec![1.0], 0.0); m + 1];
    for j in (0..m).rev() {
        suffix[j] = multiply_linear(&suffix[j + 1], a[j], b[j]);
    }

    let (full, full_log) = &prefix[m];
    let total = full[m0];
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "every assignment has zero likelihood".into(),
        ));
    }
    let mut scores = vec![0.0; m];
    if m0 > 0 {
        for i in 0..m {
            if a[i] == 0.0 {
                continue;
            }
            let (p, p_log) = &prefix[i];
            let (s, s_log) = &suffix[i + 1];
            let target = m0 - 1;
            let lo = target.saturating_sub(s.len() - 1);
            let hi = target.min(p.len() - 1);
            let mut acc = 0.0;
            for c in lo..=hi {
                acc += p[c] * s[target - c];
            }
            let log_ratio = p_log + s_log - full_log;
            scores[i] = (a[i] * acc / total * log_ratio.exp()).clamp(0.0, 1.0);
        }
    }
    let log_permanent_total =
        full_log + total.ln() + log_scale + ln_factorial(m0) + ln_factorial(m - m0);
    Ok(ClfdrResult {
        scores,
        m0,
        log_permanent_total,
    })
}

fn multiply_linear((coef, log): &(Vec<f64>, f64), a: f64, b: f64) -> (Vec<f64>, f64) {
    let mut out = vec![0.0; coef.len() + 1];
    for (k, &c) in coef.iter().enumerate() {
        out[k] += b * c;
        out[k + 1] += a * c;
    }
    let max = out.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut out {
            *v /= max;
        }
        (out, log + max.ln())
    } else {
        (out, *log)
    }
}

/// Generic path over arbitrary per-hypothesis densities: forward and
/// backward sums over sets of already-assigned hypotheses, O(2^m m).
pub fn clfdr_generic(
    stats: &StatVector,
    truth: &GroundTruth,
    models: &[DensityModel],
) -> Result<ClfdrResult> {
    check_inputs(stats, truth, models.len())?;
    let m = stats.len();
    if m > GENERIC_MAX_M {
        return Err(Error::Capacity(format!(
            "exact compound lfdr for distinct densities supports m <= {GENERIC_MAX_M}, got {m}"
        )));
    }
    // w[j][k] = density of hypothesis k at statistic j
    let mut w = vec![vec![0.0; m]; m];
    let mut log_scale = 0.0;
    for (j, &t) in stats.values().iter().enumerate() {
        for (k, model) in models.iter().enumerate() {
            w[j][k] = model.density(t).map_err(|e| e.at(j))?;
        }
        let s = scale_row(&mut w[j], j)?;
        if s.is_finite() {
            log_scale += s;
        }
    }

    let size = 1usize << m;
    // fwd[mask]: statistics 0..|mask| assigned to exactly the hypotheses in mask
    let mut fwd = vec![0.0; size];
    fwd[0] = 1.0;
    for mask in 0..size {
        let v = fwd[mask];
        if v == 0.0 {
            continue;
        }
        let j = mask.count_ones() as usize;
        if j == m {
            continue;
        }
        for (k, &wk) in w[j].iter().enumerate() {
            if mask & (1 << k) == 0 {
                fwd[mask | (1 << k)] += v * wk;
            }
        }
    }
    // bwd[mask]: statistics |mask|..m assigned to the complement of mask
    let full = size - 1;
    let mut bwd = vec![0.0; size];
    bwd[full] = 1.0;
    for mask in (0..size).rev() {
        let v = bwd[mask];
        if v == 0.0 || mask == 0 {
            continue;
        }
        let j = mask.count_ones() as usize - 1;
        for (k, &wk) in w[j].iter().enumerate() {
            if mask & (1 << k) != 0 {
                bwd[mask ^ (1 << k)] += v * wk;
            }
        }
    }
    let total = fwd[full];
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "every assignment has zero likelihood".into(),
        ));
    }

    let flags = truth.null_flags();
    let mut numer = vec![0.0; m];
    for mask in 0..size {
        let f = fwd[mask];
        if f == 0.0 {
            continue;
        }
        let i = mask.count_ones() as usize;
        if i == m {
            continue;
        }
        for k in 0..m {
            if flags[k] && mask & (1 << k) == 0 {
                numer[i] += f * w[i][k] * bwd[mask | (1 << k)];
            }
        }
    }
    Ok(ClfdrResult {
        scores: numer.iter().map(|n| (n / total).clamp(0.0, 1.0)).collect(),
        m0: truth.m0(),
        log_permanent_total: total.ln() + log_scale,
    })
}

/// Reject iff `clfdr_i <= 1 / (1 + lambda)`.
pub fn best_pe_rule(clfdr: &ClfdrResult, loss: LossSpec) -> Vec<bool> {
    crate::testing::lfdr_threshold_rule(&clfdr.scores, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfdrGap {
    pub max_ratio_dev: f64,
}

/// `max_i |clfdr_i / lfdr(t_i) - 1|`.
pub fn clfdr_vs_lfdr_gap(
    stats: &StatVector,
    truth: &GroundTruth,
    models: &[DensityModel],
    lfdr_curve: &LfdrCurve,
) -> Result<ClfdrGap> {
    let clfdr = clfdr_exact(stats, truth, models)?;
    let mut max_ratio_dev: f64 = 0.0;
    for (i, (&t, &c)) in stats.values().iter().zip(&clfdr.scores).enumerate() {
        let l = lfdr_curve_eval(lfdr_curve, t).map_err(|e| e.at(i))?;
        let dev = if l == 0.0 {
            if c == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (c / l - 1.0).abs()
        };
        max_ratio_dev = max_ratio_dev.max(dev);
    }
    Ok(ClfdrGap { max_ratio_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::clfdr_by_permutations;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn beta_alt() -> DensityModel {
        DensityModel::beta(0.25, 1.0).unwrap()
    }

    fn two_group_models(flags: &[bool]) -> Vec<DensityModel> {
        flags
            .iter()
            .map(|&h| {
                if h {
                    DensityModel::uniform01()
                } else {
                    beta_alt()
                }
            })
            .collect()
    }

    fn draw(rng: &mut ChaCha8Rng, models: &[DensityModel]) -> StatVector {
        StatVector::p_values(models.iter().map(|d| d.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn single_null_scores_one() {
        let stats = StatVector::p_values(vec![0.4]).unwrap();
        let truth = GroundTruth::new(vec![true]);
        let r = clfdr_exact(&stats, &truth, &[DensityModel::uniform01()]).unwrap();
        assert_eq!(r.scores, vec![1.0]);
        let g = clfdr_generic(&stats, &truth, &[DensityModel::uniform01()]).unwrap();
        assert_eq!(g.scores, vec![1.0]);
    }

    #[test]
    fn two_hypotheses_by_hand() {
        let (t1, t2) = (0.1, 0.6);
        let f1 = beta_alt();
        let stats = StatVector::p_values(vec![t1, t2]).unwrap();
        let truth = GroundTruth::new(vec![true, false]);
        let models = two_group_models(&[true, false]);
        let want = f1.density(t2).unwrap() / (f1.density(t1).unwrap() + f1.density(t2).unwrap());
        let fast = clfdr_exact(&stats, &truth, &models).unwrap();
        let slow = clfdr_generic(&stats, &truth, &models).unwrap();
        assert!((fast.scores[0] - want).abs() < 1e-14);
        assert!((slow.scores[0] - want).abs() < 1e-14);
        assert!((fast.scores[1] - (1.0 - want)).abs() < 1e-14);
    }

    #[test]
    fn scores_sum_to_m0() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let flags = [true, true, false, true, false, true];
        let models = two_group_models(&flags);
        let truth = GroundTruth::new(flags.to_vec());
        for _ in 0..50 {
            let stats = draw(&mut rng, &models);
            let r = clfdr_exact(&stats, &truth, &models).unwrap();
            assert!((r.scores.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_factorial_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let m = rng.random_range(1..=7);
            let flags: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
            // distinct alternative shapes exercise the generic path
            let models: Vec<DensityModel> = flags
                .iter()
                .map(|&h| {
                    if h {
                        DensityModel::uniform01()
                    } else {
                        DensityModel::beta(rng.random_range(0.1..0.9), 1.0).unwrap()
                    }
                })
                .collect();
            let stats = draw(&mut rng, &models);
            let truth = GroundTruth::new(flags.clone());
            let want = clfdr_by_permutations(stats.values(), &flags, &models).unwrap();
            let got = clfdr_exact(&stats, &truth, &models).unwrap();
            for (g, w) in got.scores.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn fast_path_equals_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let m = rng.random_range(1..=12);
            let flags: Vec<bool> = (0..m).map(|_| rng.random_bool(0.6)).collect();
            let models = two_group_models(&flags);
            let stats = draw(&mut rng, &models);
            let truth = GroundTruth::new(flags);
            let fast =
                clfdr_two_groups(&stats, &truth, &DensityModel::uniform01(), &beta_alt()).unwrap();
            let slow = clfdr_generic(&stats, &truth, &models).unwrap();
            for (a, b) in fast.scores.iter().zip(&slow.scores) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((fast.log_permanent_total - slow.log_permanent_total).abs() < 1e-9);
        }
    }

    #[test]
    fn log_permanent_matches_enumeration() {
        let stats = StatVector::p_values(vec![0.2, 0.7, 0.05]).unwrap();
        let flags = vec![true, false, false];
        let models = two_group_models(&flags);
        let mut total = 0.0;
        for perm in [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ] {
            total += perm
                .iter()
                .enumerate()
                .map(|(j, &k)| models[k].density(stats.values()[j]).unwrap())
                .product::<f64>();
        }
        let r = clfdr_exact(&stats, &GroundTruth::new(flags), &models).unwrap();
        assert!((r.log_permanent_total - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flags = vec![true, false, true, true, false, false, true];
        let models: Vec<DensityModel> = flags
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                if h {
                    DensityModel::uniform01()
                } else {
                    DensityModel::beta(0.2 + 0.1 * i as f64, 1.0).unwrap()
                }
            })
            .collect();
        let stats = draw(&mut rng, &models);
        let base = clfdr_exact(&stats, &GroundTruth::new(flags.clone()), &models).unwrap();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let p_stats =
            StatVector::p_values(perm.iter().map(|&i| stats.values()[i]).collect()).unwrap();
        let p_flags: Vec<bool> = perm.iter().map(|&i| flags[i]).collect();
        let p_models: Vec<DensityModel> = perm.iter().map(|&i| models[i].clone()).collect();
        let got = clfdr_exact(&p_stats, &GroundTruth::new(p_flags), &p_models).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((got.scores[k] - base.scores[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn common_density_scale_cancels() {
        // densities scaled by 3 on a support of length 1/3
        let narrow = |a: f64| {
            DensityModel::piecewise_linear(vec![0.0, 1.0 / 3.0], vec![3.0 * a, 3.0 * (2.0 - a)])
                .unwrap()
        };
        let wide =
            |a: f64| DensityModel::piecewise_linear(vec![0.0, 1.0], vec![a, 2.0 - a]).unwrap();
        let flags = vec![true, false, false, true];
        let t = [0.1, 0.5, 0.8, 0.3];
        let wide_models: Vec<_> = flags
            .iter()
            .map(|&h| wide(if h { 1.0 } else { 1.7 }))
            .collect();
        let narrow_models: Vec<_> = flags
            .iter()
            .map(|&h| narrow(if h { 1.0 } else { 1.7 }))
            .collect();
        let a = clfdr_exact(
            &StatVector::p_values(t.to_vec()).unwrap(),
            &GroundTruth::new(flags.clone()),
            &wide_models,
        )
        .unwrap();
        let narrow_t: Vec<f64> = t.iter().map(|x| x / 3.0).collect();
        let b = clfdr_exact(
            &StatVector::p_values(narrow_t).unwrap(),
            &GroundTruth::new(flags),
            &narrow_models,
        )
        .unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_statistics_do_not_underflow() {
        let flags = vec![true; 40]
            .into_iter()
            .chain(vec![false; 40])
            .collect::<Vec<_>>();
        let f1 = DensityModel::beta(0.05, 1.0).unwrap();
        let t: Vec<f64> = (0..80)
            .map(|i| if i % 2 == 0 { 1e-300 } else { 0.9 })
            .collect();
        let r = clfdr_two_groups(
            &StatVector::p_values(t).unwrap(),
            &GroundTruth::new(flags),
            &DensityModel::uniform01(),
            &f1,
        )
        .unwrap();
        assert!(r.scores.iter().all(|s| s.is_finite()));
        assert!((r.scores.iter().sum::<f64>() - 40.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_and_capacity_errors() {
        let stats = StatVector::p_values(vec![0.9, 0.1]).unwrap();
        let pc = DensityModel::piecewise_linear(vec![0.0, 0.5], vec![2.0, 2.0]).unwrap();
        let models = vec![pc.clone(), pc];
        let err = clfdr_exact(&stats, &GroundTruth::new(vec![true, false]), &models);
        assert!(err.is_err());

        let m = 21;
        let stats = StatVector::p_values(vec![0.5; m]).unwrap();
        let models: Vec<_> = (0..m)
            .map(|i| DensityModel::beta(1.0 + i as f64 * 0.01, 1.0).unwrap())
            .collect();
        let err = clfdr_exact(&stats, &GroundTruth::new(vec![true; m]), &models).unwrap_err();
        assert_eq!(err.code(), "capacity_exceeded");
    }

    #[test]
    fn best_pe_rule_thresholds() {
        let loss = LossSpec::new(4.0).unwrap();
        let r = ClfdrResult {
            scores: vec![0.1, 0.2, 0.3],
            m0: 1,
            log_permanent_total: 0.0,
        };
        assert_eq!(best_pe_rule(&r, loss), vec![true, true, false]);
        let all_null = ClfdrResult {
            scores: vec![1.0; 3],
            m0: 3,
            log_permanent_total: 0.0,
        };
        assert!(best_pe_rule(&all_null, loss).iter().all(|d| !d));
    }

    #[test]
    fn gap_is_zero_for_identical_models() {
        let stats = StatVector::p_values(vec![0.2, 0.5, 0.9]).unwrap();
        let truth = GroundTruth::new(vec![true, false, true]);
        let models = vec![DensityModel::uniform01(); 3];
        let curve = LfdrCurve::new(
            2.0 / 3.0,
            DensityModel::uniform01(),
            DensityModel::uniform01(),
        )
        .unwrap();
        let g = clfdr_vs_lfdr_gap(&stats, &truth, &models, &curve).unwrap();
        assert!(g.max_ratio_dev < 1e-12);

        let one = StatVector::p_values(vec![0.3]).unwrap();
        let curve =
            LfdrCurve::new(1.0, DensityModel::uniform01(), DensityModel::uniform01()).unwrap();
        let g = clfdr_vs_lfdr_gap(
            &one,
            &GroundTruth::new(vec![true]),
            &[DensityModel::uniform01()],
            &curve,
        )
        .unwrap();
        assert_eq!(g.max_ratio_dev, 0.0);
    }
}
