//! Branching Brownian motion among Poissonian traps.
//!
//! The crate is split along the lines of the model:
//!
//! * [`branching`]: offspring laws, extinction, skeleton decomposition and the
//!   space-free population process.
//! * [`traps`]: Poisson trap fields (uniform and radially decaying intensity),
//!   clearing probabilities and collision queries.
//! * [`sim`]: event-driven BBM trees with range tracking and first trapping time.
//! * [`rate`]: the `g_d` ball integral, the two-variable variational rate and
//!   the closed-form rates and bounds.
//! * [`estimate`]: replicate-parallel Monte Carlo estimators of annealed
//!   survival and of statistics conditioned on survival.
//!
//! Replicates are data-parallel through rayon when the `parallel` feature is
//! enabled (the default); without it every fan-out runs sequentially and gives
//! bit-identical results.

pub mod branching;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod parallel;
pub mod quadrature;
pub mod rate;
pub mod rng;
pub mod sim;
pub mod traps;

pub use branching::{BranchingParams, OffspringLaw, SkeletonParams};
pub use error::{Error, Result};
pub use estimate::{Conditioning, EstimateResult, MCConfig};
pub use rate::RateResult;


pub use sim::{Label, Mode, ParticleTree, SimulationConfig};
pub use traps::{ClearMode, TrapField, TrapFieldSpec, TrapKind};
