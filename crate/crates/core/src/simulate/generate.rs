use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ggm::{pairwise_t_statistics, sample_ggm, OmegaSpec};
use crate::error::{Error, Result};
use crate::model::{Continuity, DensityModel, GroundTruth, PiecewiseConstant, Scale, StatVector};
use crate::quad::std_normal_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GeneratorKind {
    /// `z_i ~ N(mu_i, 1)` with `mu_i = mu` for the first `m1` hypotheses
    /// and 0 otherwise.
    GaussianMeans { m: usize, m1: usize, mu: f64 },
    /// Independent labels, null with probability `pi0`; nulls `Uniform(0,1)`,
    /// non-nulls `Beta(a, b)`.
    TwoGroupsBeta { m: usize, pi0: f64, a: f64, b: f64 },
    /// Non-nulls fixed at grid values `l/L` for each `l` in `alt_positions`,
    /// followed by `m - |alt_positions|` nulls uniform on the grid.
    DiscreteUniformNulls {
        m: usize,
        levels: u32,
        alt_positions: Vec<u32>,
    },
    /// `m = 2`: a super-uniform null `p_1` and a non-null `p_2 = 1/4`.
    SuperUniformCE,
    /// `m = 6, L = 9`: non-nulls at `1/9, 1/9, 2/9, 3/9, 4/9`, then one
    /// null uniform on the grid.
    DiscreteCE,
    /// Pairwise regression t-statistics from `n` draws of `N(0, Omega^{-1})`;
    /// pair `{i, j}` is null iff `Omega_ij = 0`.
    #[serde(rename = "GGM")]
    Ggm {
        d: usize,
        n: usize,
        omega: OmegaSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(GeneratorSpec { kind, seed })
    }
}

/// Density of the super-uniform null: 1/2 on `[0, 1/4]`, 3/2 on
/// `(1/4, 1/2]`, 1 on `(1/2, 1]`.
pub fn superuniform_null_density() -> DensityModel {
    let pc = PiecewiseConstant::new(
        vec![0.0, 0.25, 0.5, 1.0],
        vec![0.5, 1.5, 1.0],
        Continuity::Left,
    )
    .expect("valid pieces");
    DensityModel::piecewise_constant(pc).expect("unit mass")
}

pub const DISCRETE_CE_LEVELS: u32 = 9;
pub const DISCRETE_CE_ALTERNATIVES: [u32; 5] = [1, 1, 2, 3, 4];
pub const SUPERUNIFORM_CE_FIXED: f64 = 0.25;

impl GeneratorKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorKind::GaussianMeans { m, m1, mu } => {
                if *m == 0 || m1 > m || !mu.is_finite() {
                    return Err(Error::arg(
                        "GaussianMeans needs m >= 1, 0 <= m1 <= m and finite mu",
                    ));
                }
            }
            GeneratorKind::TwoGroupsBeta { m, pi0, a, b } => {
                if *m == 0 || !(0.0..=1.0).contains(pi0) || !(*a > 0.0 && *b > 0.0) {
                    return Err(Error::arg(
                        "TwoGroupsBeta needs m >= 1, pi0 in [0, 1] and a, b > 0",
                    ));
                }
            }
            GeneratorKind::DiscreteUniformNulls {
                m,
                levels,
                alt_positions,
            } => {
                if *m == 0 || *levels == 0 || alt_positions.len() > *m {
                    return Err(Error::arg(
                        "DiscreteUniformNulls needs m >= 1, L >= 1 and at most m alternatives",
                    ));
                }
                if alt_positions.iter().any(|&l| l == 0 || l > *levels) {
                    return Err(Error::arg("alternative grid positions must lie in 1..=L"));
                }
            }
            GeneratorKind::SuperUniformCE | GeneratorKind::DiscreteCE => {}
            GeneratorKind::Ggm { d, n, omega } => {
                if *d < 2 || d >= n {
                    return Err(Error::arg("GGM needs 2 <= d < n"));
                }
                omega.matrix(*d)?;
            }
        }
        Ok(())
    }

    pub fn num_hypotheses(&self) -> usize {
        match self {
            GeneratorKind::GaussianMeans { m, .. }
            | GeneratorKind::TwoGroupsBeta { m, .. }
            | GeneratorKind::DiscreteUniformNulls { m, .. } => *m,
            GeneratorKind::SuperUniformCE => 2,
            GeneratorKind::DiscreteCE => 6,
            GeneratorKind::Ggm { d, .. } => d * (d - 1) / 2,
        }
    }

    /// Grid size for the discrete designs.
    pub fn grid_levels(&self) -> Option<u32> {
        match self {
            GeneratorKind::DiscreteUniformNulls { levels, .. } => Some(*levels),
            GeneratorKind::DiscreteCE => Some(DISCRETE_CE_LEVELS),
            _ => None,
        }
    }

    /// Null density on the scale of the generated statistics, when every
    /// null shares one.
    pub fn null_density(&self) -> Result<DensityModel> {
        match self {
            GeneratorKind::GaussianMeans { .. } => Ok(DensityModel::standard_normal()),
            GeneratorKind::TwoGroupsBeta { .. } => Ok(DensityModel::uniform01()),
            GeneratorKind::DiscreteUniformNulls { levels, .. } => {
                DensityModel::discrete_uniform_grid(*levels)
            }
            GeneratorKind::DiscreteCE => DensityModel::discrete_uniform_grid(DISCRETE_CE_LEVELS),
            GeneratorKind::SuperUniformCE => Ok(superuniform_null_density()),
            GeneratorKind::Ggm { d, n, .. } => DensityModel::student_t((n - d) as f64),
        }
    }

    fn alt_density(&self) -> Option<DensityModel> {
        match self {
            GeneratorKind::GaussianMeans { mu, .. } => Some(DensityModel::gaussian(*mu)),
            GeneratorKind::TwoGroupsBeta { a, b, .. } => DensityModel::beta(*a, *b).ok(),
            _ => None,
        }
    }

    /// Convert generated statistics to p-values: one-sided upper for
    /// Gaussian means, two-sided `t_{n-d}` for the GGM design, identity for
    /// designs already on the p-scale.
    pub fn to_p_values(&self, stats: &StatVector) -> Result<StatVector> {
        match self {
            GeneratorKind::GaussianMeans { .. } => {
                StatVector::p_values(stats.values().iter().map(|&z| std_normal_sf(z)).collect())
            }
            GeneratorKind::Ggm { .. } => {
                let t = self.null_density()?;
                StatVector::p_values(
                    stats
                        .values()
                        .iter()
                        .map(|&x| (2.0 * (1.0 - t.cdf(x.abs()))).clamp(0.0, 1.0))
                        .collect(),
                )
            }
            _ => Ok(stats.clone()),
        }
    }

    /// Draw one data set.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(StatVector, GroundTruth)> {
        self.validate()?;
        match self {
            GeneratorKind::GaussianMeans { m, m1, .. } => {
                let f0 = DensityModel::standard_normal();
                let f1 = self.alt_density().unwrap();
                let flags: Vec<bool> = (0..*m).map(|i| i >= *m1).collect();
                let z = flags
                    .iter()
                    .map(|&null| if null { f0.sample(rng) } else { f1.sample(rng) })
                    .collect();
                Ok((
                    StatVector::z_values(z)?,
                    with_shared_alternative(flags, f1)?,
                ))
            }
            GeneratorKind::TwoGroupsBeta { m, pi0, .. } => {
                let f0 = DensityModel::uniform01();
                let f1 = self.alt_density().unwrap();
                let flags: Vec<bool> = (0..*m).map(|_| rng.random::<f64>() < *pi0).collect();
                let p = flags
                    .iter()
                    .map(|&null| if null { f0.sample(rng) } else { f1.sample(rng) })
                    .collect();
                Ok((
                    StatVector::p_values(p)?,
                    with_shared_alternative(flags, f1)?,
                ))
            }
            GeneratorKind::DiscreteUniformNulls {
                m,
                levels,
                alt_positions,
            } => Ok(draw_grid(*m, *levels, alt_positions, rng)?),
            GeneratorKind::DiscreteCE => Ok(draw_grid(
                6,
                DISCRETE_CE_LEVELS,
                &DISCRETE_CE_ALTERNATIVES,
                rng,
            )?),
            GeneratorKind::SuperUniformCE => {
                let p1 = superuniform_null_density().sample(rng);
                Ok((
                    StatVector::p_values(vec![p1, SUPERUNIFORM_CE_FIXED])?,
                    GroundTruth::new(vec![true, false]),
                ))
            }
            GeneratorKind::Ggm { d, n, omega } => {
                let omega = omega.matrix(*d)?;
                let x = sample_ggm(&omega, *n, rng)?;
                let pairs = pairwise_t_statistics(&x)?;
                let flags = pairs
                    .iter()
                    .map(|&(i, j, _)| omega[(i, j)] == 0.0)
                    .collect();
                let ids = pairs
                    .iter()
                    .map(|&(i, j, _)| format!("{}-{}", i + 1, j + 1))
                    .collect();
                let t = pairs.into_iter().map(|(_, _, t)| t).collect();
                Ok((
                    StatVector::with_ids(t, Scale::ZValue, ids)?,
                    GroundTruth::new(flags),
                ))
            }
        }
    }
}

fn with_shared_alternative(flags: Vec<bool>, f1: DensityModel) -> Result<GroundTruth> {
    let alt = flags.iter().map(|&h| (!h).then(|| f1.clone())).collect();
    GroundTruth::with_alternatives(flags, alt)
}

fn draw_grid<R: Rng + ?Sized>(
    m: usize,
    levels: u32,
    alt_positions: &[u32],
    rng: &mut R,
) -> Result<(StatVector, GroundTruth)> {
    let l = levels as f64;
    let mut p: Vec<f64> = alt_positions.iter().map(|&k| k as f64 / l).collect();
    p.extend((alt_positions.len()..m).map(|_| rng.random_range(1..=levels) as f64 / l));
    let flags = (0..m).map(|i| i >= alt_positions.len()).collect();
    Ok((StatVector::p_values(p)?, GroundTruth::new(flags)))
}

/// One data set from `spec.seed`.
pub fn generate(spec: &GeneratorSpec) -> Result<(StatVector, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.kind.draw(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_means_layout() {
        let spec = GeneratorSpec::new(
            GeneratorKind::GaussianMeans {
                m: 3000,
                m1: 150,
                mu: 2.0,
            },
            1,
        )
        .unwrap();
        let (stats, truth) = generate(&spec).unwrap();
        assert_eq!(stats.len(), 3000);
        assert_eq!(truth.m0(), 2850);
        assert!((truth.pi0_bar() - 0.95).abs() < 1e-15);
        assert_eq!(stats.scale(), Scale::ZValue);
        let alt_mean: f64 = stats.values()[..150].iter().sum::<f64>() / 150.0;
        assert!((alt_mean - 2.0).abs() < 0.3);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::new(
            GeneratorKind::TwoGroupsBeta {
                m: 50,
                pi0: 0.8,
                a: 0.05,
                b: 1.0,
            },
            7,
        )
        .unwrap();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GeneratorSpec {
            seed: 8,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn discrete_counterexample_layout() {
        let (stats, truth) =
            generate(&GeneratorSpec::new(GeneratorKind::DiscreteCE, 3).unwrap()).unwrap();
        assert_eq!(
            &stats.values()[..5],
            &[1.0 / 9.0, 1.0 / 9.0, 2.0 / 9.0, 3.0 / 9.0, 4.0 / 9.0]
        );
        assert_eq!(
            truth.null_flags(),
            &[false, false, false, false, false, true]
        );
        let p6 = stats.values()[5] * 9.0;
        assert!((p6 - p6.round()).abs() < 1e-12);
    }

    #[test]
    fn superuniform_layout() {
        let d = superuniform_null_density();
        for t in [0.1, 0.25, 0.3, 0.5, 0.7, 1.0] {
            assert!(d.cdf(t) <= t + 1e-15);
        }
        let (stats, truth) =
            generate(&GeneratorSpec::new(GeneratorKind::SuperUniformCE, 3).unwrap()).unwrap();
        assert_eq!(stats.values()[1], 0.25);
        assert_eq!(truth.null_flags(), &[true, false]);
    }

    #[test]
    fn ggm_identity_is_all_null() {
        let spec = GeneratorSpec::new(
            GeneratorKind::Ggm {
                d: 6,
                n: 30,
                omega: OmegaSpec::Identity,
            },
            5,
        )
        .unwrap();
        let (stats, truth) = generate(&spec).unwrap();
        assert_eq!(stats.len(), 15);
        assert_eq!(truth.m0(), 15);
        assert_eq!(stats.label(0), "1-2");

        let tri = GeneratorKind::Ggm {
            d: 4,
            n: 30,
            omega: OmegaSpec::Tridiagonal { off: 0.3 },
        };
        let (_, truth) = tri.draw(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // pairs 1-2, 2-3, 3-4 are the only edges
        assert_eq!(truth.null_flags(), &[false, true, true, false, true, false]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(GeneratorSpec::new(
            GeneratorKind::GaussianMeans {
                m: 10,
                m1: 11,
                mu: 1.0
            },
            0
        )
        .is_err());
        assert!(GeneratorSpec::new(
            GeneratorKind::TwoGroupsBeta {
                m: 0,
                pi0: 0.5,
                a: 1.0,
                b: 1.0
            },
            0
        )
        .is_err());
        assert!(GeneratorSpec::new(
            GeneratorKind::TwoGroupsBeta {
                m: 5,
                pi0: 0.5,
                a: 0.0,
                b: 1.0
            },
            0
        )
        .is_err());
        let bad_grid = GeneratorKind::DiscreteUniformNulls {
            m: 3,
            levels: 4,
            alt_positions: vec![5],
        };
        assert!(GeneratorSpec::new(bad_grid, 0).is_err());
        let bad_ggm = GeneratorKind::Ggm {
            d: 5,
            n: 5,
            omega: OmegaSpec::Identity,
        };
        assert!(GeneratorSpec::new(bad_ggm, 0).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = GeneratorSpec::new(
            GeneratorKind::Ggm {
                d: 3,
                n: 10,
                omega: OmegaSpec::Tridiagonal { off: 0.2 },
            },
            11,
        )
        .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<GeneratorSpec>(&text).unwrap(), spec);
    }
}
