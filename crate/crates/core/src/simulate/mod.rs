//! Data generators for the experimental designs and a seeded Monte Carlo
//! harness for error rates, calibration curves and limit checks.

pub mod calibration;
pub mod generate;
pub mod ggm;
pub mod harness;
pub mod limits;

pub use calibration::{calibration_experiment, CalibrationCurve, Scorer};
pub use generate::{generate, GeneratorKind, GeneratorSpec};
pub use ggm::OmegaSpec;
pub use harness::{
    mc_error_rates, mc_error_rates_range, Criterion, Estimate, McConfig, MonteCarloReport,
    ProcedureSpec,
};
pub use limits::{
    discrete_ce_boundary_probability, discrete_limit_check, exp_family_null_density_check,
    mfdr_pfdr_limit_check, superuniform_boundary_probability, DiscreteLimitDesign, ExpFamily,
    McSettings,
};
