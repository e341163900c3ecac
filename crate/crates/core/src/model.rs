//! Shared data model: observed statistics, ground truth, densities and the
//! two-groups specification.
//!
//! Every type here is immutable after construction; validation happens in the
//! constructors so downstream code can rely on the documented invariants.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, Continuous, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::quad;

/// Tolerance for the normalization check performed at construction.
pub const NORMALIZATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    PValue,
    ZValue,
}

/// Observed statistics `z_1..z_m`, optionally labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatVector {
    values: Vec<f64>,
    scale: Scale,
    ids: Option<Vec<String>>,
}

impl StatVector {
    pub fn new(values: Vec<f64>, scale: Scale) -> Result<Self> {
        Self::build(values, scale, None)
    }

    pub fn p_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Scale::PValue)
    }

    pub fn z_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Scale::ZValue)
    }

    pub fn with_ids(values: Vec<f64>, scale: Scale, ids: Vec<String>) -> Result<Self> {
        Self::build(values, scale, Some(ids))
    }

    fn build(values: Vec<f64>, scale: Scale, ids: Option<Vec<String>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("a statistic vector needs at least one value"));
        }
        let label = |i: usize| match &ids {
            Some(ids) if i < ids.len() => ids[i].clone(),
            _ => (i + 1).to_string(),
        };
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::arg(format!("statistic {} is NaN", label(i))));
            }
            if scale == Scale::PValue && !(0.0..=1.0).contains(&v) {
                return Err(Error::arg(format!(
                    "p-value for {} is {v}, outside [0, 1]",
                    label(i)
                )));
            }
        }
        if let Some(ids) = &ids {
            if ids.len() != values.len() {
                return Err(Error::arg(format!(
                    "{} ids for {} statistics",
                    ids.len(),
                    values.len()
                )));
            }
            let mut seen = HashSet::with_capacity(ids.len());
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::arg(format!("duplicate id {id:?}")));
                }
            }
        }
        Ok(StatVector { values, scale, ids })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; a `StatVector` holds at least one statistic.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Label of the `i`th statistic: its id, or the 1-based position.
    pub fn label(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => (i + 1).to_string(),
        }
    }

    pub(crate) fn require_p_scale(&self, op: &str) -> Result<()> {
        match self.scale {
            Scale::PValue => Ok(()),
            Scale::ZValue => Err(Error::arg(format!("{op} requires p-values"))),
        }
    }

    pub(crate) fn require_z_scale(&self, op: &str) -> Result<()> {
        match self.scale {
            Scale::ZValue => Ok(()),
            Scale::PValue => Err(Error::arg(format!("{op} requires z-values"))),
        }
    }

    /// Indices that sort the statistics ascending, ties broken by position.
    pub fn sorted_order(&self) -> Vec<usize> {
        sorted_order(&self.values)
    }
}

pub(crate) fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Which hypotheses are true nulls, with optional alternative densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    null_flags: Vec<bool>,
    alt_density: Option<Vec<Option<DensityModel>>>,
}

impl GroundTruth {
    pub fn new(null_flags: Vec<bool>) -> Self {
        GroundTruth {
            null_flags,
            alt_density: None,
        }
    }

    /// Attach per-hypothesis alternative densities; entries at null indices
    /// must be `None`.
    pub fn with_alternatives(
        null_flags: Vec<bool>,
        alt: Vec<Option<DensityModel>>,
    ) -> Result<Self> {
        if alt.len() != null_flags.len() {
            return Err(Error::arg(
                "alternative densities must align with null flags",
            ));
        }
        for (i, (&null, d)) in null_flags.iter().zip(&alt).enumerate() {
            if null && d.is_some() {
                return Err(Error::arg(format!(
                    "hypothesis {} is null but has an alternative density",
                    i + 1
                )));
            }
        }
        Ok(GroundTruth {
            null_flags,
            alt_density: Some(alt),
        })
    }

    pub fn null_flags(&self) -> &[bool] {
        &self.null_flags
    }

    pub fn is_null(&self, i: usize) -> bool {
        self.null_flags[i]
    }

    pub fn len(&self) -> usize {
        self.null_flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.null_flags.is_empty()
    }

    pub fn m0(&self) -> usize {
        self.null_flags.iter().filter(|&&h| h).count()
    }

    /// True null proportion `m0 / m`.
    pub fn pi0_bar(&self) -> f64 {
        if self.null_flags.is_empty() {
            return 1.0;
        }
        self.m0() as f64 / self.null_flags.len() as f64
    }

    pub fn alt_density(&self, i: usize) -> Option<&DensityModel> {
        self.alt_density.as_ref().and_then(|v| v[i].as_ref())
    }

    /// Per-hypothesis densities: `null_density` for nulls, the attached
    /// alternative otherwise.
    pub fn per_hypothesis_models(&self, null_density: &DensityModel) -> Result<Vec<DensityModel>> {
        self.null_flags
            .iter()
            .enumerate()
            .map(|(i, &null)| {
                if null {
                    Ok(null_density.clone())
                } else {
                    self.alt_density(i).cloned().ok_or_else(|| {
                        Error::arg(format!("no alternative density for hypothesis {}", i + 1))
                    })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::arg(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }
}

/// Which endpoint a piece of a step density owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Continuity {
    /// Pieces are `[b_k, b_{k+1})`; the final piece also owns the right end.
    Right,
    /// Pieces are `(b_k, b_{k+1}]`; the first piece also owns the left end.
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
    continuity: Continuity,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, heights: Vec<f64>, continuity: Continuity) -> Result<Self> {
        if breakpoints.len() != heights.len() + 1 || heights.is_empty() {
            return Err(Error::arg("need one more breakpoint than heights"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("breakpoints must be strictly increasing"));
        }
        if heights.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::arg("heights must be finite and nonnegative"));
        }
        Ok(PiecewiseConstant {
            breakpoints,
            heights,
            continuity,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn support(&self) -> Interval {
        Interval {
            lo: self.breakpoints[0],
            hi: *self.breakpoints.last().unwrap(),
        }
    }

    pub fn mass(&self) -> f64 {
        self.heights
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(h, w)| h * (w[1] - w[0]))
            .sum()
    }

    fn piece(&self, t: f64) -> usize {
        let n = self.heights.len();
        let b = &self.breakpoints;
        match self.continuity {
            // first k with b[k+1] > t
            Continuity::Right => b[1..].partition_point(|&x| x <= t).min(n - 1),
            // first k with b[k+1] >= t
            Continuity::Left => b[1..].partition_point(|&x| x < t).min(n - 1),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.heights[self.piece(t)]
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let b = &self.breakpoints;
        if t <= b[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, h) in self.heights.iter().enumerate() {
            if t >= b[k + 1] {
                acc += h * (b[k + 1] - b[k]);
            } else {
                acc += h * (t - b[k]);
                break;
            }
        }
        acc
    }

    fn quantile(&self, u: f64) -> f64 {
        let b = &self.breakpoints;
        let mut acc = 0.0;
        for (k, &h) in self.heights.iter().enumerate() {
            let piece = h * (b[k + 1] - b[k]);
            if h > 0.0 && acc + piece >= u {
                return (b[k] + (u - acc) / h).min(b[k + 1]);
            }
            acc += piece;
        }
        // u beyond rounding of the total mass: last piece with positive height
        let k = self.heights.iter().rposition(|&h| h > 0.0).unwrap_or(0);
        b[k + 1]
    }
}

/// The closed set of density families this crate evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DensityKind {
    Uniform01,
    /// `N(mean, 1)`.
    GaussianLocation {
        mean: f64,
    },
    StudentT {
        dof: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    PiecewiseConstant(PiecewiseConstant),
    /// `exp(sum_j beta_j u^j - log_normalizer)` with `u = (z - center) / scale`,
    /// restricted to `[lo, hi]`.
    ExpFamilyPoly {
        coefficients: Vec<f64>,
        center: f64,
        scale: f64,
        log_normalizer: f64,
        lo: f64,
        hi: f64,
    },
    /// Gaussian location mixture `sum_g w_g phi(z - atom_g)`.
    LocationMixture {
        atoms: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Mass `1/L` at each of `1/L, 2/L, ..., L/L`.
    DiscreteUniformGrid {
        levels: u32,
    },
    /// Arbitrary pmf on `1/L, ..., L/L`; `pmf[k-1]` is the mass at `k/L`.
    GridPmf {
        pmf: Vec<f64>,
    },
    /// Linear interpolation of `values` at `knots`, zero outside.
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
    /// Finite mixture of other densities sharing a support.
    Mixture {
        weights: Vec<f64>,
        components: Vec<DensityModel>,
    },
}

/// An evaluable density (or pmf, for the grid kinds) with a known support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    kind: DensityKind,
    support: Interval,
}

const GRID_TOL: f64 = 1e-9;

impl DensityModel {
    pub fn uniform01() -> Self {
        DensityModel {
            kind: DensityKind::Uniform01,
            support: Interval::UNIT,
        }
    }

    pub fn standard_normal() -> Self {
        Self::gaussian(0.0)
    }

    pub fn gaussian(mean: f64) -> Self {
        DensityModel {
            kind: DensityKind::GaussianLocation { mean },
            support: Interval::REAL_LINE,
        }
    }

    pub fn student_t(dof: f64) -> Result<Self> {
        if !(dof > 0.0) {
            return Err(Error::arg("Student t needs positive degrees of freedom"));
        }
        Ok(DensityModel {
            kind: DensityKind::StudentT { dof },
            support: Interval::REAL_LINE,
        })
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::arg("Beta shape parameters must be positive"));
        }
        Ok(DensityModel {
            kind: DensityKind::Beta { a, b },
            support: Interval::UNIT,
        })
    }

    pub fn piecewise_constant(pc: PiecewiseConstant) -> Result<Self> {
        let mass = pc.mass();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::arg(format!("step density has mass {mass}, not 1")));
        }
        let support = pc.support();
        Ok(DensityModel {
            kind: DensityKind::PiecewiseConstant(pc),
            support,
        })
    }

    /// Builds the exponential-family density and computes its normalizer by
    /// quadrature over `[lo, hi]`.
    pub fn exp_family_poly(
        coefficients: Vec<f64>,
        center: f64,
        scale: f64,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if coefficients.is_empty()
            || !(scale > 0.0)
            || !(lo < hi)
            || !lo.is_finite()
            || !hi.is_finite()
        {
            return Err(Error::arg("invalid exponential-family parameters"));
        }
        let unnormalized = |z: f64| poly_exp(&coefficients, center, scale, 0.0, z);
        let mass = quad::integrate(unnormalized, lo, hi, 1e-12);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Fit(format!("exponential family has mass {mass}")));
        }
        Ok(DensityModel {
            kind: DensityKind::ExpFamilyPoly {
                coefficients,
                center,
                scale,
                log_normalizer: mass.ln(),
                lo,
                hi,
            },
            support: Interval { lo, hi },
        })
    }

    pub fn location_mixture(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(Error::arg("mixture needs one weight per atom"));
        }
        check_weights(&weights)?;
        Ok(DensityModel {
            kind: DensityKind::LocationMixture { atoms, weights },
            support: Interval::REAL_LINE,
        })
    }

    pub fn discrete_uniform_grid(levels: u32) -> Result<Self> {
        if levels == 0 {
            return Err(Error::arg("grid needs L >= 1"));
        }
        Ok(DensityModel {
            kind: DensityKind::DiscreteUniformGrid { levels },
            support: Interval::UNIT,
        })
    }

    pub fn grid_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::arg("grid pmf needs L >= 1 cells"));
        }
        check_weights(&pmf)?;
        Ok(DensityModel {
            kind: DensityKind::GridPmf { pmf },
            support: Interval::UNIT,
        })
    }

    pub fn piecewise_linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::arg(
                "piecewise linear density needs >= 2 matching knots and values",
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::arg("knots must increase and values be nonnegative"));
        }
        let mass: f64 = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| 0.5 * (v[0] + v[1]) * (k[1] - k[0]))
            .sum();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::arg(format!(
                "piecewise linear density has mass {mass}, not 1"
            )));
        }
        let support = Interval {
            lo: knots[0],
            hi: *knots.last().unwrap(),
        };
        Ok(DensityModel {
            kind: DensityKind::PiecewiseLinear { knots, values },
            support,
        })
    }

    /// Finite mixture; components must share a support and all be continuous
    /// or all be discrete.
    pub fn mixture(weights: Vec<f64>, components: Vec<DensityModel>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(Error::arg("mixture needs one weight per component"));
        }
        check_weights(&weights)?;
        let support = components[0].support;
        let discrete = components[0].is_discrete();
        if components
            .iter()
            .any(|c| c.support != support || c.is_discrete() != discrete)
        {
            return Err(Error::arg("mixture components must share support and type"));
        }
        Ok(DensityModel {
            kind: DensityKind::Mixture {
                weights,
                components,
            },
            support,
        })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    /// Whether evaluation returns point masses on the grid `k/L`.
    pub fn is_discrete(&self) -> bool {
        match &self.kind {
            DensityKind::DiscreteUniformGrid { .. } | DensityKind::GridPmf { .. } => true,
            DensityKind::Mixture { components, .. } => components[0].is_discrete(),
            _ => false,
        }
    }

    /// Density (or pmf) at `t`; a domain error outside the support.
    ///
    /// At the endpoints of the unit interval the one-sided limit is returned,
    /// which may be `+inf` (e.g. `Beta(a, 1)` with `a < 1` at 0).
    pub fn density(&self, t: f64) -> Result<f64> {
        if t.is_nan() || !self.support.contains(t) {
            return Err(Error::domain(format!(
                "t = {t} outside support [{}, {}]",
                self.support.lo, self.support.hi
            )));
        }
        Ok(self.eval(t))
    }

    fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            DensityKind::Uniform01 => 1.0,
            DensityKind::GaussianLocation { mean } => quad::std_normal_pdf(t - mean),
            DensityKind::StudentT { dof } => StudentsT::new(0.0, 1.0, *dof).unwrap().pdf(t),
            DensityKind::Beta { a, b } => beta_pdf(*a, *b, t),
            DensityKind::PiecewiseConstant(pc) => pc.eval(t),
            DensityKind::ExpFamilyPoly {
                coefficients,
                center,
                scale,
                log_normalizer,
                ..
            } => poly_exp(coefficients, *center, *scale, *log_normalizer, t),
            DensityKind::LocationMixture { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .map(|(mu, w)| w * quad::std_normal_pdf(t - mu))
                .sum(),
            DensityKind::DiscreteUniformGrid { levels } => match grid_cell(t, *levels as usize) {
                Some(_) => 1.0 / *levels as f64,
                None => 0.0,
            },
            DensityKind::GridPmf { pmf } => match grid_cell(t, pmf.len()) {
                Some(k) => pmf[k - 1],
                None => 0.0,
            },
            DensityKind::PiecewiseLinear { knots, values } => {
                let j = knots[1..].partition_point(|&k| k < t).min(knots.len() - 2);
                let (k0, k1) = (knots[j], knots[j + 1]);
                let w = ((t - k0) / (k1 - k0)).clamp(0.0, 1.0);
                values[j] * (1.0 - w) + values[j + 1] * w
            }
            DensityKind::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.eval(t))
                .sum(),
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < self.support.lo {
            return 0.0;
        }
        if t >= self.support.hi {
            return 1.0;
        }
        match &self.kind {
            DensityKind::Uniform01 => t,
            DensityKind::GaussianLocation { mean } => quad::std_normal_cdf(t - mean),
            DensityKind::StudentT { dof } => StudentsT::new(0.0, 1.0, *dof).unwrap().cdf(t),
            DensityKind::Beta { a, b } => {
                if *b == 1.0 {
                    t.powf(*a)
                } else {
                    BetaDist::new(*a, *b).unwrap().cdf(t)
                }
            }
            DensityKind::PiecewiseConstant(pc) => pc.cdf(t),
            DensityKind::ExpFamilyPoly { lo, .. } => {
                quad::integrate(|z| self.eval(z), *lo, t, 1e-12).min(1.0)
            }
            DensityKind::LocationMixture { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .map(|(mu, w)| w * quad::std_normal_cdf(t - mu))
                .sum(),
            DensityKind::DiscreteUniformGrid { levels } => {
                let l = *levels as f64;
                ((t * l + GRID_TOL).floor() / l).clamp(0.0, 1.0)
            }
            DensityKind::GridPmf { pmf } => {
                let cells = ((t * pmf.len() as f64 + GRID_TOL).floor() as usize).min(pmf.len());
                pmf[..cells].iter().sum()
            }
            DensityKind::PiecewiseLinear { knots, .. } => {
                quad::integrate(|z| self.eval(z), knots[0], t, 1e-12).min(1.0)
            }
            DensityKind::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.cdf(t))
                .sum(),
        }
    }

    /// Draw one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            DensityKind::Uniform01 => rng.random::<f64>(),
            DensityKind::GaussianLocation { mean } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + z
            }
            DensityKind::StudentT { dof } => rand_distr::StudentT::new(*dof).unwrap().sample(rng),
            DensityKind::Beta { a, b } => {
                if *b == 1.0 {
                    // inverse CDF of t^a; 1 - U keeps the draw in (0, 1]
                    (1.0 - rng.random::<f64>()).powf(1.0 / a)
                } else {
                    rand_distr::Beta::new(*a, *b).unwrap().sample(rng)
                }
            }
            DensityKind::PiecewiseConstant(pc) => pc.quantile(rng.random::<f64>()),
            DensityKind::LocationMixture { atoms, weights } => {
                let g = pick(weights, rng.random::<f64>());
                let z: f64 = StandardNormal.sample(rng);
                atoms[g] + z
            }
            DensityKind::DiscreteUniformGrid { levels } => {
                rng.random_range(1..=*levels) as f64 / *levels as f64
            }
            DensityKind::GridPmf { pmf } => {
                (pick(pmf, rng.random::<f64>()) + 1) as f64 / pmf.len() as f64
            }
            DensityKind::Mixture {
                weights,
                components,
            } => {
                let g = pick(weights, rng.random::<f64>());
                components[g].sample(rng)
            }
            DensityKind::ExpFamilyPoly { lo, hi, .. } => {
                let u = rng.random::<f64>();
                quad::bisect_increasing(|t| self.cdf(t), u, *lo, *hi)
            }
            DensityKind::PiecewiseLinear { knots, .. } => {
                let u = rng.random::<f64>();
                quad::bisect_increasing(|t| self.cdf(t), u, knots[0], *knots.last().unwrap())
            }
        }
    }

    /// Total mass: a sum over the grid for discrete kinds, quadrature otherwise.
    pub fn total_mass(&self) -> f64 {
        match &self.kind {
            DensityKind::DiscreteUniformGrid { levels } => (1..=*levels)
                .map(|k| self.eval(k as f64 / *levels as f64))
                .sum(),
            DensityKind::GridPmf { pmf } => {
                let l = pmf.len();
                (1..=l).map(|k| self.eval(k as f64 / l as f64)).sum()
            }
            DensityKind::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.total_mass())
                .sum(),
            DensityKind::Beta { a, b } if *a < 1.0 || *b < 1.0 => {
                // integrable endpoint singularity: integrate away from it and add the tails from the CDF
                let eps = 1e-6;
                let inner = quad::integrate(|t| self.eval(t), eps, 1.0 - eps, 1e-12);
                inner + self.cdf(eps) + (1.0 - self.cdf(1.0 - eps))
            }
            DensityKind::PiecewiseConstant(pc) => {
                let b = pc.breakpoints();
                b.windows(2)
                    .map(|w| quad::integrate(|t| self.eval(t), w[0], w[1], 1e-13))
                    .sum()
            }
            _ => {
                let (lo, hi) = finite_range(self.support, self);
                quad::integrate(|t| self.eval(t), lo, hi, 1e-13)
            }
        }
    }
}

fn finite_range(support: Interval, model: &DensityModel) -> (f64, f64) {
    let (mut lo, mut hi) = (support.lo, support.hi);
    let (center, spread) = match model.kind() {
        DensityKind::LocationMixture { atoms, .. } => {
            let min = atoms.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = atoms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (0.5 * (min + max), 0.5 * (max - min))
        }
        DensityKind::GaussianLocation { mean } => (*mean, 0.0),
        DensityKind::StudentT { dof } => (0.0, if *dof < 5.0 { 1e5 } else { 200.0 }),
        _ => (0.0, 0.0),
    };
    if lo == f64::NEG_INFINITY {
        lo = center - spread - 40.0;
    }
    if hi == f64::INFINITY {
        hi = center + spread + 40.0;
    }
    (lo, hi)
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::arg("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::arg(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// 1-based grid cell `k` with `t = k/L`, if `t` is a grid point.
fn grid_cell(t: f64, levels: usize) -> Option<usize> {
    let scaled = t * levels as f64;
    let k = scaled.round();
    if (scaled - k).abs() <= GRID_TOL * levels as f64 && k >= 1.0 && k <= levels as f64 {
        Some(k as usize)
    } else {
        None
    }
}

fn beta_pdf(a: f64, b: f64, t: f64) -> f64 {
    if b == 1.0 {
        // a t^(a-1): exact and well-defined at the endpoints
        return if t == 0.0 {
            if a < 1.0 {
                f64::INFINITY
            } else if a == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            a * t.powf(a - 1.0)
        };
    }
    if (t == 0.0 && a < 1.0) || (t == 1.0 && b < 1.0) {
        return f64::INFINITY;
    }
    BetaDist::new(a, b).unwrap().pdf(t)
}

fn poly_exp(coefficients: &[f64], center: f64, scale: f64, log_normalizer: f64, z: f64) -> f64 {
    let u = (z - center) / scale;
    let exponent = coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c);
    (exponent - log_normalizer).exp()
}

/// Bayesian two-groups model `pi0 f0 + (1 - pi0) f1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupsSpec {
    pi0: f64,
    f0: DensityModel,
    f1: DensityModel,
}

impl TwoGroupsSpec {
    pub fn new(pi0: f64, f0: DensityModel, f1: DensityModel) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi0) {
            return Err(Error::arg(format!("pi0 = {pi0} outside [0, 1]")));
        }
        if f0.support() != f1.support() || f0.is_discrete() != f1.is_discrete() {
            return Err(Error::arg(
                "null and alternative densities must share a support",
            ));
        }
        Ok(TwoGroupsSpec { pi0, f0, f1 })
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn f0(&self) -> &DensityModel {
        &self.f0
    }

    pub fn f1(&self) -> &DensityModel {
        &self.f1
    }

    /// The marginal density as a standalone model.
    pub fn marginal(&self) -> DensityModel {
        DensityModel::mixture(
            vec![self.pi0, 1.0 - self.pi0],
            vec![self.f0.clone(), self.f1.clone()],
        )
        .expect("validated in constructor")
    }

    /// Bayesian lfdr `pi0 f0(t) / f(t)`.
    pub fn lfdr(&self, t: f64) -> Result<f64> {
        let null = self.pi0 * self.f0.density(t)?;
        let total = mixture_density(self, t)?;
        if total == 0.0 {
            return Err(Error::domain(format!(
                "marginal density vanishes at t = {t}"
            )));
        }
        Ok(null / total)
    }
}

/// Cost ratio `lambda` of a Type I to a Type II error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    lambda: f64,
}

impl LossSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::arg(format!(
                "loss ratio must be positive, got {lambda}"
            )));
        }
        Ok(LossSpec { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Rejection threshold `1 / (1 + lambda)` for lfdr-type scores.
    pub fn threshold(&self) -> f64 {
        1.0 / (1.0 + self.lambda)
    }
}

/// `pi0 f0(t) + (1 - pi0) f1(t)`.
pub fn mixture_density(spec: &TwoGroupsSpec, t: f64) -> Result<f64> {
    let f0 = spec.f0.density(t)?;
    let f1 = spec.f1.density(t)?;
    // skip the zero-weight side so 0 * inf does not poison the sum
    let a = if spec.pi0 > 0.0 { spec.pi0 * f0 } else { 0.0 };
    let b = if spec.pi0 < 1.0 {
        (1.0 - spec.pi0) * f1
    } else {
        0.0
    };
    Ok(a + b)
}

/// Average density `(1/m) sum_i f_i(t)`.
pub fn average_density(models: &[DensityModel], t: f64) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::arg("average density of an empty model set"));
    }
    let mut total = 0.0;
    for (i, model) in models.iter().enumerate() {
        total += model.density(t).map_err(|e| e.at(i))?;
    }
    Ok(total / models.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn stat_vector_rejects_bad_input() {
        assert!(StatVector::p_values(vec![]).is_err());
        assert!(StatVector::p_values(vec![0.2, 1.2]).is_err());
        assert!(StatVector::z_values(vec![f64::NAN]).is_err());
        assert!(
            StatVector::with_ids(vec![0.1, 0.2], Scale::PValue, vec!["a".into(), "a".into()])
                .is_err()
        );
        assert!(StatVector::with_ids(vec![0.1], Scale::PValue, vec![]).is_err());
        let ok = StatVector::p_values(vec![0.0, 1.0]).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.label(1), "2");
    }

    #[test]
    fn ground_truth_counts() {
        let gt = GroundTruth::new(vec![true, false, true, true]);
        assert_eq!(gt.m0(), 3);
        close(gt.pi0_bar(), 0.75, 0.0);
    }

    #[test]
    fn mixture_density_examples() {
        let degenerate = TwoGroupsSpec::new(
            1.0,
            DensityModel::uniform01(),
            DensityModel::beta(0.05, 1.0).unwrap(),
        )
        .unwrap();
        close(mixture_density(&degenerate, 0.3).unwrap(), 1.0, 0.0);

        let beta = TwoGroupsSpec::new(
            0.5,
            DensityModel::uniform01(),
            DensityModel::beta(0.05, 1.0).unwrap(),
        )
        .unwrap();
        close(mixture_density(&beta, 1.0).unwrap(), 0.525, 1e-15);

        let gauss = TwoGroupsSpec::new(
            0.95,
            DensityModel::standard_normal(),
            DensityModel::gaussian(2.0),
        )
        .unwrap();
        let expected = 0.95 * quad::std_normal_pdf(0.0) + 0.05 * quad::std_normal_pdf(-2.0);
        close(mixture_density(&gauss, 0.0).unwrap(), expected, 1e-15);
        let mass = quad::integrate(|t| mixture_density(&gauss, t).unwrap(), -40.0, 42.0, 1e-13);
        close(mass, 1.0, 1e-10);
        close(gauss.marginal().total_mass(), 1.0, 1e-8);

        assert!(matches!(mixture_density(&beta, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn average_density_examples() {
        let u = DensityModel::uniform01();
        let b = DensityModel::beta(0.05, 1.0).unwrap();
        close(
            average_density(std::slice::from_ref(&b), 0.4).unwrap(),
            b.density(0.4).unwrap(),
            0.0,
        );
        close(
            average_density(&[u.clone(), u.clone()], 0.7).unwrap(),
            1.0,
            0.0,
        );
        let expected = (1.0 + 0.05 * 0.25f64.powf(-0.95)) / 2.0;
        close(average_density(&[u, b], 0.25).unwrap(), expected, 1e-15);
        assert!(matches!(average_density(&[], 0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn every_kind_normalizes() {
        let pc = PiecewiseConstant::new(
            vec![0.0, 0.25, 0.5, 1.0],
            vec![0.5, 1.5, 1.0],
            Continuity::Left,
        )
        .unwrap();
        let models = vec![
            DensityModel::uniform01(),
            DensityModel::gaussian(1.3),
            DensityModel::student_t(180.0).unwrap(),
            DensityModel::beta(0.05, 1.0).unwrap(),
            DensityModel::beta(2.0, 5.0).unwrap(),
            DensityModel::beta(0.5, 0.5).unwrap(),
            DensityModel::piecewise_constant(pc).unwrap(),
            DensityModel::exp_family_poly(vec![0.3, -0.2, -0.5], 0.1, 1.5, -3.0, 4.0).unwrap(),
            DensityModel::location_mixture(vec![-1.0, 0.0, 4.0], vec![0.2, 0.5, 0.3]).unwrap(),
            DensityModel::discrete_uniform_grid(9).unwrap(),
            DensityModel::grid_pmf(vec![0.5, 0.25, 0.25]).unwrap(),
            DensityModel::piecewise_linear(vec![0.0, 0.5, 1.0], vec![2.0, 1.0, 0.0]).unwrap(),
        ];
        for m in &models {
            close(m.total_mass(), 1.0, 1e-8);
        }
    }

    #[test]
    fn step_density_continuity_conventions() {
        let right =
            PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![1.5, 0.5], Continuity::Right).unwrap();
        let left =
            PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![1.5, 0.5], Continuity::Left).unwrap();
        assert_eq!(right.eval(0.5), 0.5);
        assert_eq!(left.eval(0.5), 1.5);
        assert_eq!(right.eval(0.0), 1.5);
        assert_eq!(left.eval(0.0), 1.5);
        assert_eq!(right.eval(1.0), 0.5);
        assert_eq!(left.eval(1.0), 0.5);
        close(left.cdf(0.75), 0.875, 1e-15);
    }

    #[test]
    fn grid_kinds_put_mass_on_grid_points() {
        let g = DensityModel::discrete_uniform_grid(9).unwrap();
        close(g.density(2.0 / 9.0).unwrap(), 1.0 / 9.0, 1e-15);
        assert_eq!(g.density(0.0).unwrap(), 0.0);
        assert_eq!(g.density(0.1).unwrap(), 0.0);
        close(g.cdf(3.0 / 9.0), 3.0 / 9.0, 1e-15);
    }

    #[test]
    fn sampling_matches_cdf() {
        let pc = PiecewiseConstant::new(
            vec![0.0, 0.25, 0.5, 1.0],
            vec![0.5, 1.5, 1.0],
            Continuity::Left,
        )
        .unwrap();
        let models = vec![
            DensityModel::beta(0.25, 1.0).unwrap(),
            DensityModel::piecewise_constant(pc).unwrap(),
            DensityModel::gaussian(2.0),
            DensityModel::grid_pmf(vec![0.5, 0.25, 0.25]).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20000;
        for m in &models {
            let probe = match m.kind() {
                DensityKind::GaussianLocation { .. } => 2.3,
                DensityKind::GridPmf { .. } => 1.0 / 3.0,
                _ => 0.4,
            };
            let hits = (0..n).filter(|_| m.sample(&mut rng) <= probe).count();
            let p = m.cdf(probe);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            close(hits as f64 / n as f64, p, 4.0 * se);
        }
    }

    #[test]
    fn loss_threshold() {
        close(LossSpec::new(4.0).unwrap().threshold(), 0.2, 1e-15);
        assert!(LossSpec::new(0.0).is_err());
    }
}
