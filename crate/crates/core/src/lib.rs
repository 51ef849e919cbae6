//! Multilevel Monte Carlo for multi-dimensional SDEs.
//!
//! Coupled level estimators for Euler, Milstein, the antithetic coupling with an
//! arbitrary refinement factor `M`, and the approximate-Milstein scheme driven by
//! quadrature Lévy areas. A smooth payoff can be folded into the dynamics through Ito's
//! lemma ([`augment`]), which makes the base level exact.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*F64` aliases
//! below name the double-precision instantiations.

pub mod brownian;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod heston;
pub mod ito;
pub mod model;
pub mod payoff;
pub mod real;
pub mod schemes;
pub mod stats;

pub use brownian::{
    coarse_increment, levy_quadrature, reverse_substeps, sample_increments, standard_normal_from_bits,
    Correlation, IncrementGrid, PathSeed,
};
pub use engine::{
    converged, initial_samples, level_statistics, optimal_sample_sizes, run, run_with_counts, step_size, total_cost,
    LevelSampler, MlmcConfig, MlmcResult,
};
pub use error::{MlmcError, Result};
pub use heston::{gbm_system, heston_default, heston_system, Gbm, Heston, HestonParams};
pub use ito::{augment, base_level_expectation, ItoAugmented};
pub use model::{ClosureSystem, SdeSystem, SdeSystemExt};
pub use payoff::{
    builtin_payoff, european_call, linear, quadratic, sin_of_component, BuiltinPayoff, Payoff,
    Smoothness,
};
pub use real::Real;
pub use schemes::{
    evolve_antithetic_coupled, evolve_approx_milstein_coupled, evolve_base_level,
    evolve_euler_coupled, evolve_milstein_coupled, CostRule, CoupledSample, PathSampler, Scheme,
    SchemeDescriptor,
};
pub use stats::LevelStats;

pub type Grid = IncrementGrid<f64>;
pub type CorrelationF64 = Correlation<f64>;
pub type HestonF64 = Heston<f64>;
pub type GbmF64 = Gbm<f64>;
pub type PayoffF64 = BuiltinPayoff<f64>;
pub type LevelStatsF64 = LevelStats<f64>;
pub type MlmcConfigF64 = MlmcConfig<f64>;
pub type MlmcResultF64 = MlmcResult<f64>;
pub type CoupledSampleF64 = CoupledSample<f64>;
