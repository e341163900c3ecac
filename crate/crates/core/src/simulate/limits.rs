//! Exact boundary probabilities for the small counterexamples, and limit
//! checks for interval error rates, discrete grids and one-sided Gaussian
//! null p-values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generate::{
    superuniform_null_density, GeneratorKind, GeneratorSpec, DISCRETE_CE_ALTERNATIVES,
    DISCRETE_CE_LEVELS, SUPERUNIFORM_CE_FIXED,
};
use super::harness::{
    mc_error_rates_range, replicate_rng, Criterion, Estimate, McConfig, ProcedureSpec,
};
use crate::error::{Error, Result};
use crate::model::{DensityModel, StatVector, TwoGroupsSpec};
use crate::quad::std_normal_quantile;
use crate::testing::support_line;

/// `P(boundary of SL(alpha) is p_1)` for the super-uniform design, by
/// splitting `[0, 1]` at every point where the SL objective ordering or the
/// density can change and integrating the piecewise-constant density over
/// the cells where the event holds.
pub fn superuniform_boundary_probability(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("alpha = {alpha} outside (0, 1]")));
    }
    let f = superuniform_null_density();
    let p2 = SUPERUNIFORM_CE_FIXED;
    let mut cuts = vec![
        0.0,
        0.25,
        0.5,
        1.0,
        p2,
        alpha / 2.0,
        alpha,
        p2 - alpha / 2.0,
        p2 + alpha / 2.0,
    ];
    cuts.retain(|c| (0.0..=1.0).contains(c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let r = support_line(&StatVector::p_values(vec![mid, p2])?, alpha)?;
        if r.boundary_index == Some(0) {
            total += f.cdf(w[1]) - f.cdf(w[0]);
        }
    }
    Ok(total)
}

/// `P(boundary of SL(alpha) is the last hypothesis)` when the first `m - 1`
/// p-values are fixed and the last is uniform on the `1/L` grid, with ties
/// at the boundary value broken uniformly.
pub fn grid_boundary_probability(fixed: &[f64], levels: u32, alpha: f64) -> Result<f64> {
    if levels == 0 {
        return Err(Error::arg("grid needs L >= 1"));
    }
    let l = levels as f64;
    let mut total = 0.0;
    for k in 1..=levels {
        let mut p = fixed.to_vec();
        p.push(k as f64 / l);
        let r = support_line(&StatVector::p_values(p.clone())?, alpha)?;
        if r.boundary_stat == Some(k as f64 / l) {
            let tied = p.iter().filter(|&&x| x == k as f64 / l).count();
            total += 1.0 / (l * tied as f64);
        }
    }
    Ok(total)
}

/// The discrete counterexample's boundary probability.
pub fn discrete_ce_boundary_probability(alpha: f64) -> Result<f64> {
    let l = DISCRETE_CE_LEVELS as f64;
    let fixed: Vec<f64> = DISCRETE_CE_ALTERNATIVES
        .iter()
        .map(|&k| k as f64 / l)
        .collect();
    grid_boundary_probability(&fixed, DISCRETE_CE_LEVELS, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub m: usize,
    pub reps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalLimitRecord {
    pub eps: f64,
    pub mfdr: f64,
    pub mfdr_deviation: f64,
    pub pfdr: Option<Estimate>,
    pub pfdr_deviation: Option<f64>,
    pub conditioning_fraction: Option<f64>,
}

/// Deviation from the two-groups lfdr at `t` of `mFDR([t - eps, t + eps])`,
/// computed from the component CDFs, and optionally of a Monte Carlo `pFDR`
/// over i.i.d. two-groups samples.
pub fn mfdr_pfdr_limit_check(
    spec: &TwoGroupsSpec,
    t: f64,
    eps_sequence: &[f64],
    mc: Option<McSettings>,
) -> Result<Vec<IntervalLimitRecord>> {
    let target = spec.lfdr(t)?;
    let f0 = spec.f0();
    let f1 = spec.f1();
    let pi0 = spec.pi0();
    eps_sequence
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::arg(format!("eps = {eps} must be positive")));
            }
            let support = f0.support();
            let (a, b) = ((t - eps).max(support.lo), (t + eps).min(support.hi));
            let null_mass = pi0 * (f0.cdf(b) - f0.cdf(a));
            let alt_mass = (1.0 - pi0) * (f1.cdf(b) - f1.cdf(a));
            let mfdr = if pi0 == 1.0 {
                1.0
            } else {
                null_mass / (null_mass + alt_mass)
            };
            let (pfdr, conditioning_fraction) = match mc {
                Some(s) => {
                    let (est, frac) = interval_pfdr(spec, a, b, s)?;
                    (est, Some(frac))
                }
                None => (None, None),
            };
            Ok(IntervalLimitRecord {
                eps,
                mfdr,
                mfdr_deviation: (mfdr - target).abs(),
                pfdr,
                pfdr_deviation: pfdr.map(|e| (e.mean - target).abs()),
                conditioning_fraction,
            })
        })
        .collect()
}

fn interval_pfdr(
    spec: &TwoGroupsSpec,
    a: f64,
    b: f64,
    s: McSettings,
) -> Result<(Option<Estimate>, f64)> {
    if s.m == 0 || s.reps == 0 {
        return Err(Error::arg("Monte Carlo settings need m >= 1 and reps >= 1"));
    }
    let mut positive = 0u64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for r in 0..s.reps {
        let mut rng = replicate_rng(s.seed, r);
        let mut v = 0u64;
        let mut n = 0u64;
        for _ in 0..s.m {
            let null = rng.random::<f64>() < spec.pi0();
            let x = if null {
                spec.f0().sample(&mut rng)
            } else {
                spec.f1().sample(&mut rng)
            };
            if x >= a && x <= b {
                n += 1;
                v += null as u64;
            }
        }
        if n > 0 {
            let q = v as f64 / n as f64;
            positive += 1;
            sum += q;
            sq += q * q;
        }
    }
    let frac = positive as f64 / s.reps as f64;
    if positive == 0 {
        return Ok((None, frac));
    }
    let k = positive as f64;
    let mean = sum / k;
    let var = if positive > 1 {
        ((sq - k * mean * mean) / (k - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((
        Some(Estimate {
            mean,
            std_error: (var / k).sqrt(),
        }),
        frac,
    ))
}

/// `l* = argmax_l alpha sum_{k<=l} f*(k/L) - l/L` over `l = 0..=L`, with the
/// gap to the runner-up.
pub fn population_maximizer(levels: u32, alpha: f64, f_star: &DensityModel) -> Result<(u32, f64)> {
    let l = levels as f64;
    let mut objective = vec![0.0];
    let mut cum = 0.0;
    for k in 1..=levels {
        cum += f_star.density(k as f64 / l)?;
        objective.push(alpha * cum - k as f64 / l);
    }
    let best = (0..objective.len())
        .max_by(|&a, &b| objective[a].total_cmp(&objective[b]))
        .unwrap();
    let runner_up = (0..objective.len())
        .filter(|&k| k != best)
        .map(|k| objective[k])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((best as u32, objective[best] - runner_up))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLimitDesign {
    pub levels: u32,
    pub alpha: f64,
    pub pi0_star: f64,
    /// Limiting average pmf on the grid.
    pub f_star: DensityModel,
    pub m_sequence: Vec<usize>,
    pub reps: u64,
    pub seed: u64,
    pub perturb: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLimitRecord {
    pub m: usize,
    pub bfdr: Estimate,
    /// `pi0_bar alpha` with perturbation, the grid limit otherwise.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLimitReport {
    pub ell_star: u32,
    pub limit: f64,
    pub records: Vec<DiscreteLimitRecord>,
}

/// Non-null grid positions for `m` hypotheses whose average pmf matches
/// `f_star`: `m1 = m - round(pi0 m)` alternatives allocated to the grid in
/// proportion to `(f* - pi0/L) / (1 - pi0)` by largest remainder.
pub fn grid_alternatives(
    m: usize,
    levels: u32,
    pi0_star: f64,
    f_star: &DensityModel,
) -> Result<Vec<u32>> {
    let m1 = m - (pi0_star * m as f64).round() as usize;
    if m1 == 0 {
        return Ok(Vec::new());
    }
    let l = levels as f64;
    let mut g = Vec::with_capacity(levels as usize);
    for k in 1..=levels {
        let share = (f_star.density(k as f64 / l)? - pi0_star / l) / (1.0 - pi0_star);
        if share < -1e-12 {
            return Err(Error::arg(format!(
                "f* puts less than pi0/L mass at {k}/{levels}; no nonnegative alternative pmf exists"
            )));
        }
        g.push(share.max(0.0));
    }
    let raw: Vec<f64> = g.iter().map(|s| s * m1 as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = m1.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle().take(raw.len() * 2) {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k as u32 + 1, c))
        .collect())
}

/// Monte Carlo bFDR of SL at each `m` for a fixed grid, against the grid
/// limit `pi0* / (L f*(l*/L)) 1{l* > 0}` (or `pi0_bar alpha` after
/// perturbation).
pub fn discrete_limit_check(
    design: &DiscreteLimitDesign,
    threads: Option<usize>,
) -> Result<DiscreteLimitReport> {
    if design.levels == 0 || !(design.pi0_star > 0.0 && design.pi0_star <= 1.0) {
        return Err(Error::arg("need L >= 1 and pi0* in (0, 1]"));
    }
    if !design.f_star.is_discrete() {
        return Err(Error::arg("f* must be a pmf on the grid"));
    }
    let (ell_star, gap) = population_maximizer(design.levels, design.alpha, &design.f_star)?;
    if gap < 1e-9 {
        return Err(Error::Assumption(format!(
            "population objective has no unique maximizer (gap {gap:.3e})"
        )));
    }
    let limit = if ell_star > 0 {
        design.pi0_star
            / (design.levels as f64
                * design
                    .f_star
                    .density(ell_star as f64 / design.levels as f64)?)
    } else {
        0.0
    };
    let config = McConfig::new(
        ProcedureSpec::SupportLine {
            alpha: design.alpha,
        },
        vec![Criterion::Bfdr],
    )
    .perturbed(design.perturb);
    let records = design
        .m_sequence
        .iter()
        .map(|&m| {
            let alt = grid_alternatives(m, design.levels, design.pi0_star, &design.f_star)?;
            let pi0_bar = (m - alt.len()) as f64 / m as f64;
            let spec = GeneratorSpec::new(
                GeneratorKind::DiscreteUniformNulls {
                    m,
                    levels: design.levels,
                    alt_positions: alt,
                },
                design.seed,
            )?;
            let report = mc_error_rates_range(&spec, &config, 0, design.reps, threads)?;
            Ok(DiscreteLimitRecord {
                m,
                bfdr: report.estimate(&Criterion::Bfdr).expect("bFDR requested"),
                target: if design.perturb {
                    pi0_bar * design.alpha
                } else {
                    limit
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteLimitReport {
        ell_star,
        limit,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpFamily {
    GaussianLocation,
}

/// Density at `t` of the one-sided p-value `1 - Phi(Z - theta0)` when
/// `Z ~ N(theta, 1)`: the likelihood ratio `g_theta / g_theta0` at
/// `z = theta0 + Phi^{-1}(1 - t)`.
pub fn one_sided_null_p_density(theta: f64, theta0: f64, t: f64) -> f64 {
    let delta = theta - theta0;
    if delta == 0.0 {
        return 1.0;
    }
    let u = std_normal_quantile(1.0 - t);
    (delta * u - 0.5 * delta * delta).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullDensityCheck {
    pub max_density_on_window: f64,
    pub alpha_star: f64,
    /// Whether the density is nondecreasing along the grid on `[0, alpha*]`.
    pub nondecreasing_on_window: bool,
}

/// Evaluate the null p-value density on the grid points inside
/// `[0, alpha*]`, `alpha* = 1 - G_theta0(E_theta0 Z)`.
pub fn exp_family_null_density_check(
    family: ExpFamily,
    theta: f64,
    theta0: f64,
    grid: &[f64],
) -> Result<NullDensityCheck> {
    if theta > theta0 {
        return Err(Error::arg(format!(
            "need theta <= theta0, got {theta} > {theta0}"
        )));
    }
    let alpha_star = match family {
        // the mean of N(theta0, 1) is its median
        ExpFamily::GaussianLocation => 0.5,
    };
    let mut points: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|t| (0.0..=alpha_star).contains(t))
        .collect();
    points.sort_by(f64::total_cmp);
    let values: Vec<f64> = points
        .iter()
        .map(|&t| one_sided_null_p_density(theta, theta0, t))
        .collect();
    Ok(NullDensityCheck {
        max_density_on_window: values.iter().copied().fold(0.0, f64::max),
        alpha_star,
        nondecreasing_on_window: values.windows(2).all(|w| w[1] >= w[0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DensityModel;
    use crate::quad::std_normal_sf;

    #[test]
    fn superuniform_exact_is_three_eighths() {
        assert!((superuniform_boundary_probability(0.5).unwrap() - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn superuniform_exact_matches_fine_grid() {
        for alpha in [0.2, 0.5, 0.8] {
            let f = superuniform_null_density();
            let n = 20_000;
            let mut brute = 0.0;
            for k in 0..n {
                let x = (k as f64 + 0.5) / n as f64;
                let r = support_line(&StatVector::p_values(vec![x, 0.25]).unwrap(), alpha).unwrap();
                if r.boundary_index == Some(0) {
                    brute += f.density(x).unwrap() / n as f64;
                }
            }
            let exact = superuniform_boundary_probability(alpha).unwrap();
            assert!(
                (exact - brute).abs() < 1e-3,
                "alpha {alpha}: {exact} vs {brute}"
            );
        }
    }

    #[test]
    fn discrete_exact_is_eleven_over_fifty_four() {
        let p = discrete_ce_boundary_probability(0.5).unwrap();
        assert!((p - 11.0 / 54.0).abs() < 1e-14);
        assert!(p > 1.0 / 6.0);
    }

    #[test]
    fn full_null_grid_probability_is_one_over_l_times_ties() {
        // lone hypothesis: boundary iff SL rejects it
        let p = grid_boundary_probability(&[], 4, 1.0).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mfdr_full_support_and_pure_null() {
        let spec = TwoGroupsSpec::new(
            0.7,
            DensityModel::uniform01(),
            DensityModel::beta(0.3, 1.0).unwrap(),
        )
        .unwrap();
        let rec = mfdr_pfdr_limit_check(&spec, 0.5, &[0.5], None).unwrap();
        assert!((rec[0].mfdr - 0.7).abs() < 1e-10);

        let null = TwoGroupsSpec::new(
            1.0,
            DensityModel::standard_normal(),
            DensityModel::gaussian(2.0),
        )
        .unwrap();
        for r in mfdr_pfdr_limit_check(&null, 0.0, &[0.5, 0.1], None).unwrap() {
            assert_eq!(r.mfdr, 1.0);
        }
    }

    #[test]
    fn mfdr_converges_to_lfdr() {
        let spec = TwoGroupsSpec::new(
            0.95,
            DensityModel::standard_normal(),
            DensityModel::gaussian(2.0),
        )
        .unwrap();
        let recs = mfdr_pfdr_limit_check(
            &spec,
            0.0,
            &[0.5, 0.1, 0.02],
            Some(McSettings {
                m: 2000,
                reps: 200,
                seed: 1,
            }),
        )
        .unwrap();
        assert!(recs
            .windows(2)
            .all(|w| w[1].mfdr_deviation < w[0].mfdr_deviation));
        assert!(recs[2].mfdr_deviation < 1e-3);
        // quadrature of the component densities
        let mass = |mu: f64| {
            crate::quad::integrate(|x| crate::quad::std_normal_pdf(x - mu), -0.1, 0.1, 1e-14)
        };
        let want = 0.95 * mass(0.0) / (0.95 * mass(0.0) + 0.05 * mass(2.0));
        assert!((recs[1].mfdr - want).abs() < 1e-10);
        for r in &recs {
            let p = r.pfdr.unwrap();
            assert!(r.pfdr_deviation.unwrap() < 4.0 * p.std_error + r.mfdr_deviation + 0.01);
        }
    }

    #[test]
    fn maximizer_and_allocation() {
        let f = DensityModel::discrete_uniform_grid(10).unwrap();
        let (ell, gap) = population_maximizer(10, 0.5, &f).unwrap();
        assert_eq!(ell, 0);
        assert!(gap > 0.0);

        let pmf = vec![0.55, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05];
        let f = DensityModel::grid_pmf(pmf).unwrap();
        assert_eq!(population_maximizer(10, 0.5, &f).unwrap().0, 1);
        let alt = grid_alternatives(100, 10, 0.5, &f).unwrap();
        assert_eq!(alt, vec![1; 50]);

        let uniform_alt = grid_alternatives(
            7,
            10,
            0.5,
            &DensityModel::discrete_uniform_grid(10).unwrap(),
        )
        .unwrap();
        assert_eq!(uniform_alt.len(), 3);
    }

    #[test]
    fn tied_maximizer_is_an_assumption_error() {
        // alpha f*(1) = 1/L exactly: objective ties at l = 0 and l = 1
        let mut pmf = vec![0.8 / 9.0; 10];
        pmf[0] = 0.2;
        let design = DiscreteLimitDesign {
            levels: 10,
            alpha: 0.5,
            pi0_star: 0.5,
            f_star: DensityModel::grid_pmf(pmf).unwrap(),
            m_sequence: vec![10],
            reps: 10,
            seed: 0,
            perturb: false,
        };
        let err = discrete_limit_check(&design, None).unwrap_err();
        assert_eq!(err.code(), "assumption_violated");
    }

    #[test]
    fn grid_limit_with_positive_maximizer() {
        let mut pmf = vec![0.05; 10];
        pmf[0] = 0.55;
        let design = DiscreteLimitDesign {
            levels: 10,
            alpha: 0.5,
            pi0_star: 0.5,
            f_star: DensityModel::grid_pmf(pmf).unwrap(),
            m_sequence: vec![2000],
            reps: 2000,
            seed: 12,
            perturb: false,
        };
        let report = discrete_limit_check(&design, None).unwrap();
        assert_eq!(report.ell_star, 1);
        assert!((report.limit - 0.5 / 5.5).abs() < 1e-12);
        let rec = report.records[0];
        assert!((rec.bfdr.mean - rec.target).abs() <= 3.0 * rec.bfdr.std_error + 1e-3);
    }

    #[test]
    fn gaussian_null_density_bound() {
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64 / 2000.0).collect();
        let same =
            exp_family_null_density_check(ExpFamily::GaussianLocation, 1.0, 1.0, &grid).unwrap();
        assert_eq!(same.max_density_on_window, 1.0);
        assert_eq!(same.alpha_star, 0.5);
        let lower =
            exp_family_null_density_check(ExpFamily::GaussianLocation, 0.0, 1.0, &grid).unwrap();
        assert!(lower.max_density_on_window <= 1.0 + 1e-9);
        assert!(lower.nondecreasing_on_window);
        assert!(
            exp_family_null_density_check(ExpFamily::GaussianLocation, 2.0, 1.0, &grid).is_err()
        );
    }

    #[test]
    fn null_p_density_matches_finite_difference() {
        // P(p <= t) = P(Z >= theta0 + u) = 1 - Phi(theta0 + u - theta), u = Phi^{-1}(1 - t)
        let (theta, theta0) = (-0.7, 0.3);
        let cdf = |t: f64| std_normal_sf(theta0 + std_normal_quantile(1.0 - t) - theta);
        for t in [0.05, 0.2, 0.45] {
            let h = 1e-6;
            let fd = (cdf(t + h) - cdf(t - h)) / (2.0 * h);
            assert!((fd - one_sided_null_p_density(theta, theta0, t)).abs() < 1e-6);
        }
    }
}
