//! Long-term innovation dynamics.
//!
//! An individual-based birth, death, competition, migration and mutation
//! process over a finite catalog of traits, together with the limits it
//! approaches as the population scale `K` grows:
//!
//! * [`deterministic`]: logistic and Lotka-Volterra systems, fixed points and
//!   their Jacobian stability.
//! * [`stochastic`]: exact event-driven simulation of the rescaled population
//!   `X_t = nu_t / K` and seeded, reproducible ensembles.
//! * [`jump`]: the monomorphic trait substitution sequence and the trait
//!   substitution tree, whose states alternate presence along the fitness
//!   ladder.
//! * [`analysis`]: timescale checks, fixation-time bounds and distances that
//!   compare the stochastic runs with their limits.
//!
//! [`model`] holds the shared parameter types.

pub mod analysis;
pub mod deterministic;
pub mod io;
pub mod jump;
pub mod model;
pub mod numeric;
pub mod stochastic;

pub use model::{
    AssumptionReport, Configuration, Landscape, ModelError, MutantPolicy, ScalingRegime,
    SquareMatrix, TraitCatalog, TraitParams,
};
pub use numeric::NumericPolicy;
pub use stochastic::{EnsembleStats, PopulationState, SimOptions, Trajectory};
