//! Slow reference implementations used to cross-check the fast paths.
//!
//! Each routine here follows the textbook definition as literally as
//! possible and shares no code with the algorithm it checks.

use crate::error::{Error, Result};
use crate::model::DensityModel;

/// Left derivative at `t` of the upper concave hull of `{(0,0)} ∪ {(x, F(x))}`,
/// with `F` the empirical CDF of `sample`, found by testing every point
/// against all chords through it (`O(n^2)`).
pub fn brute_force_hull_density(sample: &[f64], t: f64) -> f64 {
    let m = sample.len() as f64;
    let mut xs: Vec<f64> = sample.to_vec();
    xs.push(0.0);
    xs.push(1.0);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let points: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| (x, sample.iter().filter(|&&p| p <= x).count() as f64 / m))
        .collect();
    if t == 0.0 && points[0].1 > 0.0 {
        return f64::INFINITY;
    }
    let n = points.len();
    let slope = |a: usize, b: usize| (points[b].1 - points[a].1) / (points[b].0 - points[a].0);
    // j lies on or above every chord (a, b) with a < j < b
    let on_hull = |j: usize| {
        if j == 0 || j == n - 1 {
            return true;
        }
        let min_left = (0..j).map(|a| slope(a, j)).fold(f64::INFINITY, f64::min);
        let max_right = (j + 1..n)
            .map(|b| slope(j, b))
            .fold(f64::NEG_INFINITY, f64::max);
        min_left >= max_right
    };
    let vertices: Vec<usize> = (0..n).filter(|&j| on_hull(j)).collect();
    for w in vertices.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t <= points[b].0 {
            return slope(a, b);
        }
    }
    let k = vertices.len();
    slope(vertices[k - 2], vertices[k - 1])
}

/// Classic step-up Benjamini-Hochberg: reject the `k` smallest p-values for
/// the largest `k` with `p_(k) <= k * alpha / m0`.
pub fn step_up_bh(p: &[f64], alpha: f64, m0: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut cutoff = None;
    for (rank0, &i) in order.iter().enumerate() {
        let k = (rank0 + 1) as f64;
        if p[i] * m0 <= alpha * k {
            cutoff = Some(p[i]);
        }
    }
    match cutoff {
        Some(c) => {
            let mut out: Vec<usize> = (0..p.len()).filter(|&i| p[i] <= c).collect();
            out.sort_unstable();
            out
        }
        None => Vec::new(),
    }
}

/// Compound lfdr by summing over all `m!` assignments of the hypotheses'
/// densities to the observed statistics.
pub fn clfdr_by_permutations(
    stats: &[f64],
    null_flags: &[bool],
    models: &[DensityModel],
) -> Result<Vec<f64>> {
    let m = stats.len();
    if m > 9 {
        return Err(Error::Capacity(
            "permutation oracle is limited to m <= 9".into(),
        ));
    }
    if null_flags.len() != m || models.len() != m {
        return Err(Error::arg("lengths must agree"));
    }
    // table[j][k] = density of hypothesis k at statistic j
    let mut table = vec![vec![0.0; m]; m];
    for (j, &t) in stats.iter().enumerate() {
        for (k, model) in models.iter().enumerate() {
            table[j][k] = model.density(t)?;
        }
    }
    let mut numer = vec![0.0; m];
    let mut denom = 0.0;
    let mut perm: Vec<usize> = (0..m).collect();
    permute(&mut perm, 0, &mut |pi: &[usize]| {
        let w: f64 = pi.iter().enumerate().map(|(j, &k)| table[j][k]).product();
        denom += w;
        for (i, &k) in pi.iter().enumerate() {
            if null_flags[k] {
                numer[i] += w;
            }
        }
    });
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "every permutation has zero likelihood".into(),
        ));
    }
    Ok(numer.into_iter().map(|n| n / denom).collect())
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Support-line objective `alpha k / m - p_(k)` for `k = 0..=m`.
pub fn support_line_objective(p: &[f64], alpha: f64) -> Vec<f64> {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    std::iter::once(0.0)
        .chain(
            sorted
                .iter()
                .enumerate()
                .map(|(k0, &pk)| alpha * (k0 + 1) as f64 / m - pk),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_single_point() {
        assert_eq!(brute_force_hull_density(&[0.5], 0.3), 2.0);
        assert_eq!(brute_force_hull_density(&[0.5], 0.9), 0.0);
    }

    #[test]
    fn step_up_examples() {
        assert_eq!(
            step_up_bh(&[0.01, 0.02, 0.03, 0.04], 0.05, 4.0),
            vec![0, 1, 2, 3]
        );
        assert!(step_up_bh(&[1.0, 1.0], 0.1, 2.0).is_empty());
    }

    #[test]
    fn permutation_oracle_single_null() {
        let r = clfdr_by_permutations(&[0.3], &[true], &[DensityModel::uniform01()]).unwrap();
        assert_eq!(r, vec![1.0]);
    }
}
