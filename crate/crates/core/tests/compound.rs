use freqlfdr::compound::{
    best_pe_rule, clfdr_exact, clfdr_generic, clfdr_two_groups, clfdr_vs_lfdr_gap,
};
use freqlfdr::lfdr::LfdrCurve;
use freqlfdr::model::{DensityModel, GroundTruth, LossSpec, StatVector, TwoGroupsSpec};
use freqlfdr::simulate::harness::replicate_rng;
use freqlfdr::testing::weighted_loss;

fn models(flags: &[bool], f1: &DensityModel) -> Vec<DensityModel> {
    flags
        .iter()
        .map(|&h| {
            if h {
                DensityModel::uniform01()
            } else {
                f1.clone()
            }
        })
        .collect()
}

fn draw(models: &[DensityModel], seed: u64, index: u64) -> StatVector {
    let mut rng = replicate_rng(seed, index);
    StatVector::p_values(models.iter().map(|d| d.sample(&mut rng)).collect()).unwrap()
}

#[test]
fn four_of_six_nulls_sum_to_m0() {
    let f1 = DensityModel::beta(0.25, 1.0).unwrap();
    let flags = vec![true, true, true, true, false, false];
    let ms = models(&flags, &f1);
    let truth = GroundTruth::new(flags);
    for r in 0..200 {
        let stats = draw(&ms, 6, r);
        let res = clfdr_exact(&stats, &truth, &ms).unwrap();
        assert!((res.scores.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(res.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}

#[test]
fn fast_and_generic_paths_agree_up_to_fifteen() {
    let f1 = DensityModel::beta(0.25, 1.0).unwrap();
    for r in 0..60u64 {
        let m = 1 + (r as usize % 15);
        let flags: Vec<bool> = (0..m).map(|i| (i * 7 + r as usize) % 3 != 0).collect();
        let ms = models(&flags, &f1);
        let stats = draw(&ms, 15, r);
        let truth = GroundTruth::new(flags);
        let fast = clfdr_two_groups(&stats, &truth, &DensityModel::uniform01(), &f1).unwrap();
        let slow = clfdr_generic(&stats, &truth, &ms).unwrap();
        for (a, b) in fast.scores.iter().zip(&slow.scores) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

/// Among permutation-equivariant rules the clfdr threshold minimizes expected
/// weighted loss; p-value cutoffs are such rules.
#[test]
fn best_pe_rule_beats_every_cutoff() {
    let f1 = DensityModel::beta(0.25, 1.0).unwrap();
    let flags = vec![true, true, true, true, false, false];
    let ms = models(&flags, &f1);
    let truth = GroundTruth::new(flags.clone());
    let cutoffs: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
    for lambda in [1.0, 4.0] {
        let loss = LossSpec::new(lambda).unwrap();
        let n = 100_000u64;
        // per cutoff: sum and sum of squares of (cutoff loss - PE loss)
        let mut diff = vec![(0.0f64, 0.0f64); cutoffs.len()];
        for r in 0..n {
            let stats = draw(&ms, 88, r);
            let clfdr = clfdr_exact(&stats, &truth, &ms).unwrap();
            let pe = weighted_loss(&truth, &best_pe_rule(&clfdr, loss), loss)
                .unwrap()
                .canonical;
            for (k, &c) in cutoffs.iter().enumerate() {
                let dec: Vec<bool> = stats.values().iter().map(|&p| p <= c).collect();
                let d = weighted_loss(&truth, &dec, loss).unwrap().canonical - pe;
                diff[k].0 += d;
                diff[k].1 += d * d;
            }
        }
        let nf = n as f64;
        for (k, &(s, sq)) in diff.iter().enumerate() {
            let mean = s / nf;
            let se = ((sq / nf - mean * mean) / (nf - 1.0)).sqrt();
            assert!(
                mean >= -3.0 * se,
                "lambda {lambda}, cutoff {}: {mean} (se {se})",
                cutoffs[k]
            );
        }
    }
}

#[test]
fn clfdr_approaches_lfdr_as_m_grows() {
    let f1 = DensityModel::beta(0.25, 1.0).unwrap();
    let curve = LfdrCurve::new(
        0.5,
        DensityModel::uniform01(),
        TwoGroupsSpec::new(0.5, DensityModel::uniform01(), f1.clone())
            .unwrap()
            .marginal(),
    )
    .unwrap();
    let mut medians = Vec::new();
    for m in [6usize, 10, 14] {
        let flags: Vec<bool> = (0..m).map(|i| i < m / 2).collect();
        let ms = models(&flags, &f1);
        let truth = GroundTruth::new(flags);
        let mut devs: Vec<f64> = (0..200)
            .map(|r| {
                let stats = draw(&ms, m as u64, r);
                clfdr_vs_lfdr_gap(&stats, &truth, &ms, &curve)
                    .unwrap()
                    .max_ratio_dev
            })
            .collect();
        devs.sort_by(f64::total_cmp);
        medians.push(0.5 * (devs[99] + devs[100]));
    }
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
