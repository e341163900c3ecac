//! Estimating the average density from observed statistics by maximum
//! likelihood over three candidate families: nonincreasing densities on
//! `[0, 1]` (Grenander), polynomial exponential families fit to a histogram
//! (Lindsey), and Gaussian location mixtures on a fixed grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Continuity, DensityModel, PiecewiseConstant, StatVector};
use crate::quad;

/// Grenander estimate: the left derivative of the least concave majorant of
/// the empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneDensityFit {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
    /// Mass of observations exactly at 0. The likelihood is unbounded there,
    /// so the estimate carries a point mass at the origin.
    zero_mass: f64,
    loglik: f64,
}

impl MonotoneDensityFit {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn zero_mass(&self) -> f64 {
        self.zero_mass
    }

    /// Mean log-density of the sample under the fit.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Density at `t`. Pieces are `(b_k, b_{k+1}]`; the value at 0 is the
    /// first slope (or `+inf` when the sample contains zeros).
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("t = {t} outside [0, 1]")));
        }
        if t == 0.0 && self.zero_mass > 0.0 {
            return Ok(f64::INFINITY);
        }
        let b = &self.breakpoints;
        let k = b[1..]
            .partition_point(|&x| x < t)
            .min(self.heights.len() - 1);
        Ok(self.heights[k])
    }

    /// Total mass of the absolutely continuous part plus the origin atom.
    pub fn total_mass(&self) -> f64 {
        self.zero_mass
            + self
                .heights
                .iter()
                .zip(self.breakpoints.windows(2))
                .map(|(h, w)| h * (w[1] - w[0]))
                .sum::<f64>()
    }

    /// The fit as a step density model (left-continuous pieces).
    pub fn to_density(&self) -> Result<DensityModel> {
        if self.zero_mass > 0.0 {
            return Err(Error::Degenerate(
                "Grenander fit has a point mass at 0 and is not a density".into(),
            ));
        }
        let pc = PiecewiseConstant::new(
            self.breakpoints.clone(),
            self.heights.clone(),
            Continuity::Left,
        )?;
        DensityModel::piecewise_constant(pc)
    }
}

/// Least concave majorant of the ECDF of `stats`, differentiated from the left.
pub fn grenander_fit(stats: &StatVector) -> Result<MonotoneDensityFit> {
    stats.require_p_scale("grenander_fit")?;
    let mut sorted = stats.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;

    // distinct x with cumulative proportion; ties merge into one jump
    let mut points: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut zero_count = 0usize;
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / m;
        if x == 0.0 {
            zero_count += 1;
            continue;
        }
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => points.push((x, f)),
        }
    }
    let zero_mass = zero_count as f64 / m;
    if zero_mass > 0.0 {
        points[0].1 = zero_mass;
    }
    if points.last().unwrap().0 < 1.0 {
        points.push((1.0, 1.0));
    }
    if points.len() == 1 {
        // every observation is exactly 0
        return Ok(MonotoneDensityFit {
            breakpoints: vec![0.0, 1.0],
            heights: vec![0.0],
            zero_mass: 1.0,
            loglik: f64::INFINITY,
        });
    }

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in &points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b unless a -> b -> p turns strictly clockwise
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }

    let breakpoints: Vec<f64> = hull.iter().map(|p| p.0).collect();
    let heights: Vec<f64> = hull
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let mut fit = MonotoneDensityFit {
        breakpoints,
        heights,
        zero_mass,
        loglik: 0.0,
    };
    let total: f64 = stats
        .values()
        .iter()
        .map(|&p| fit.eval(p).unwrap().ln())
        .sum();
    fit.loglik = total / m;
    Ok(fit)
}

/// Lindsey's method: a polynomial exponential family fit by Poisson
/// regression of histogram counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFamilyFit {
    degree: usize,
    coefficients: Vec<f64>,
    bin_edges: Vec<f64>,
    bin_counts: Vec<u64>,
    converged: bool,
    iterations: usize,
    density: DensityModel,
}

impl ExpFamilyFit {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `beta_0..beta_J` such that `exp(sum_j beta_j z^j)` integrates to 1
    /// over the histogram range.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn bin_counts(&self) -> &[u64] {
        &self.bin_counts
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn density(&self) -> &DensityModel {
        &self.density
    }
}

pub const LINDSEY_DEFAULT_DEGREE: usize = 7;
pub const LINDSEY_DEFAULT_BINS: usize = 120;
const LINDSEY_MAX_ITER: usize = 200;
const LINDSEY_GRAD_TOL: f64 = 1e-8;

pub fn lindsey_fit(stats: &StatVector, degree: usize, bins: usize) -> Result<ExpFamilyFit> {
    stats.require_z_scale("lindsey_fit")?;
    let z = stats.values();
    if z.len() < degree + 2 {
        return Err(Error::arg(format!(
            "need at least {} statistics for degree {degree}",
            degree + 2
        )));
    }
    if bins < degree + 2 {
        return Err(Error::arg(format!(
            "need at least {} bins for degree {degree}",
            degree + 2
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("z-values must be finite"));
    }
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    bin_edges[bins] = hi;
    let mut bin_counts = vec![0u64; bins];
    for &v in z {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        bin_counts[k] += 1;
    }
    if bin_counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Fit("histogram has all its mass in one bin".into()));
    }

    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let cols = degree + 1;
    let design = DMatrix::from_fn(bins, cols, |k, j| {
        let u = (bin_edges[k] + 0.5 * width - center) / half;
        u.powi(j as i32)
    });
    let y = DVector::from_iterator(bins, bin_counts.iter().map(|&c| c as f64));
    let m = z.len() as f64;

    let poisson_loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &design * beta;
        eta.iter()
            .zip(y.iter())
            .map(|(e, yk)| yk * e - e.exp())
            .sum()
    };

    let mut beta = DVector::zeros(cols);
    beta[0] = (m / bins as f64).ln();
    let mut current = poisson_loglik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LINDSEY_MAX_ITER {
        let mu = (&design * &beta).map(f64::exp);
        let grad = design.transpose() * (&y - &mu);
        if grad.amax() / m <= LINDSEY_GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let weighted = DMatrix::from_fn(bins, cols, |k, j| design[(k, j)] * mu[k]);
        let hessian = design.transpose() * weighted;
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hessian.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &beta + &step * scale;
            let value = poisson_loglik(&candidate);
            if value.is_finite() && value >= current {
                beta = candidate;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let scaled: Vec<f64> = beta.iter().cloned().collect();
    let density = DensityModel::exp_family_poly(scaled.clone(), center, half, lo, hi)?;
    let log_normalizer = match density.kind() {
        crate::model::DensityKind::ExpFamilyPoly { log_normalizer, .. } => *log_normalizer,
        _ => unreachable!(),
    };
    let mut coefficients = unscale_polynomial(&scaled, center, half);
    coefficients[0] -= log_normalizer;
    Ok(ExpFamilyFit {
        degree,
        coefficients,
        bin_edges,
        bin_counts,
        converged,
        iterations,
        density,
    })
}

/// Rewrite `sum_j c_j ((z - center)/scale)^j` as `sum_k a_k z^k`.
fn unscale_polynomial(scaled: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let n = scaled.len();
    let mut out = vec![0.0; n];
    for (j, &c) in scaled.iter().enumerate() {
        let factor = c / scale.powi(j as i32);
        let mut binom = 1.0;
        for k in 0..=j {
            if k > 0 {
                binom = binom * (j - k + 1) as f64 / k as f64;
            }
            out[k] += factor * binom * (-center).powi((j - k) as i32);
        }
    }
    out
}

/// Grid NPMLE of a Gaussian location mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    grid: Vec<f64>,
    weights: Vec<f64>,
    loglik: f64,
    iterations: usize,
    loglik_trace: Vec<f64>,
}

impl MixtureFit {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Mean log-likelihood before the first and after each EM step.
    pub fn loglik_trace(&self) -> &[f64] {
        &self.loglik_trace
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(mu, w)| w * quad::std_normal_pdf(z - mu))
            .sum()
    }

    pub fn to_density(&self) -> Result<DensityModel> {
        DensityModel::location_mixture(self.grid.clone(), self.weights.clone())
    }
}

pub const NPMLE_DEFAULT_GRID: usize = 300;
pub const NPMLE_DEFAULT_TOL: f64 = 1e-8;
const NPMLE_MAX_ITER: usize = 5000;

/// Kiefer-Wolfowitz NPMLE on `grid_size` equally spaced atoms spanning
/// `[min z - 1, max z + 1]`, fit by EM.
pub fn npmle_mixture_fit(stats: &StatVector, grid_size: usize, tol: f64) -> Result<MixtureFit> {
    stats.require_z_scale("npmle_mixture_fit")?;
    if grid_size < 2 {
        return Err(Error::arg("grid needs at least two atoms"));
    }
    if !(tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let z = stats.values();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("z-values must be finite"));
    }
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|g| lo + g as f64 * step).collect();
    let em = em_on_grid(z, &grid, tol, NPMLE_MAX_ITER);
    Ok(MixtureFit {
        grid,
        weights: em.weights,
        loglik: em.loglik,
        iterations: em.iterations,
        loglik_trace: em.trace,
    })
}

struct EmOutcome {
    weights: Vec<f64>,
    loglik: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// EM for the mixing weights with SQUAREM extrapolation. Each accepted step
/// is checked against a plain double EM step, so the likelihood never drops.
fn em_on_grid(z: &[f64], grid: &[f64], tol: f64, max_iter: usize) -> EmOutcome {
    let em = GridEm::new(z, grid);
    let mut weights = vec![1.0 / grid.len() as f64; grid.len()];
    let mut loglik = em.loglik(&weights);
    let mut trace = vec![loglik];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let w1 = em.step(&weights);
        let w2 = em.step(&w1);
        let plain = em.loglik(&w2);
        let (mut best, mut best_ll) = (w2, plain);

        let r: Vec<f64> = w1.iter().zip(&weights).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = best
            .iter()
            .zip(&w1)
            .zip(&r)
            .map(|((c, b), r)| c - b - r)
            .collect();
        let r_norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_norm > 0.0 && r_norm > 0.0 {
            let a = -r_norm / v_norm;
            let mut jump: Vec<f64> = weights
                .iter()
                .zip(&r)
                .zip(&v)
                .map(|((w, r), v)| (w - 2.0 * a * r + a * a * v).max(0.0))
                .collect();
            let total: f64 = jump.iter().sum();
            if total > 0.0 {
                jump.iter_mut().for_each(|w| *w /= total);
                let stabilized = em.step(&jump);
                let ll = em.loglik(&stabilized);
                if ll.is_finite() && ll > best_ll {
                    best = stabilized;
                    best_ll = ll;
                }
            }
        }
        let gain = best_ll - loglik;
        weights = best;
        loglik = best_ll;
        trace.push(loglik);
        if gain < tol {
            break;
        }
    }
    EmOutcome {
        weights,
        loglik,
        iterations,
        trace,
    }
}

struct GridEm {
    lik: Vec<f64>,
    m: usize,
    g: usize,
}

impl GridEm {
    fn new(z: &[f64], grid: &[f64]) -> Self {
        let lik = z
            .iter()
            .flat_map(|&zi| grid.iter().map(move |&mu| quad::std_normal_pdf(zi - mu)))
            .collect();
        GridEm {
            lik,
            m: z.len(),
            g: grid.len(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.lik[i * self.g..(i + 1) * self.g]
    }

    fn marginal(&self, i: usize, weights: &[f64]) -> f64 {
        self.row(i).iter().zip(weights).map(|(l, w)| l * w).sum()
    }

    fn loglik(&self, weights: &[f64]) -> f64 {
        (0..self.m)
            .map(|i| self.marginal(i, weights).ln())
            .sum::<f64>()
            / self.m as f64
    }

    fn step(&self, weights: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.g];
        for i in 0..self.m {
            let inv = 1.0 / self.marginal(i, weights);
            for (a, l) in acc.iter_mut().zip(self.row(i)) {
                *a += l * inv;
            }
        }
        let mut next: Vec<f64> = weights
            .iter()
            .zip(&acc)
            .map(|(w, a)| w * a / self.m as f64)
            .collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|w| *w /= total);
        next
    }
}

/// Mean log-density `(1/m) sum_i log f(z_i)`; a statistic outside the support
/// or at zero density contributes `-inf`.
pub fn density_loglik(model: &DensityModel, stats: &StatVector) -> f64 {
    let total: f64 = stats
        .values()
        .iter()
        .map(|&z| match model.density(z) {
            Ok(f) if f > 0.0 => f.ln(),
            _ => f64::NEG_INFINITY,
        })
        .sum();
    total / stats.len() as f64
}
