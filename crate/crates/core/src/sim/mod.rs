//! Event-driven simulation of branching Brownian motion.
//!
//! Every particle owns two random streams derived from its genealogical key:
//! one for its lifetime and offspring, one for its Brownian increments. The
//! key of a child depends only on its parent's key and its rank among the
//! siblings, so any part of a tree can be regenerated on its own. This is what
//! lets a run that stops at the first trap contact reproduce exactly the
//! trapping time of a full simulation followed by a scan.

mod engine;
mod tree;

pub use engine::{
    first_trapping_time, simulate, simulate_until_trapped, simulate_with_key, trapping_run_with_key, TrappingRun,
};
pub use tree::{LineSelection, Particle, ParticleTree};

use serde::{Deserialize, Serialize};

use crate::branching::{extinction_probability, BranchingParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Plain,
    /// Skeleton/doomed decomposition of the process conditioned on non-extinction.
    TwoType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Unlabeled,
    Skeleton,
    Doomed,
}

pub const DEFAULT_MAX_PARTICLES: usize = 1_000_000;

/// `min(0.01, a²/(8d))`.
pub fn default_dt(a: f64, d: usize) -> f64 {
    (a * a / (8.0 * d as f64)).min(0.01)
}

/// Lookahead used as the non-extinction proxy: `20/(βα)`.
pub fn default_lookahead(params: &BranchingParams) -> f64 {
    let q = extinction_probability(&params.law, 1e-14);
    let alpha = 1.0 - params.law.pgf_derivative(q);
    let rate = params.beta * alpha;
    if rate > 0.0 {
        20.0 / rate
    } else if params.beta > 0.0 {
        20.0 / params.beta
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub params: BranchingParams,
    pub d: usize,
    pub horizon: f64,
    pub dt: f64,
    pub max_particles: usize,
    pub mode: Mode,
    /// Non-extinction proxy horizon; `None` uses [`default_lookahead`].
    pub lookahead: Option<f64>,
}

impl SimulationConfig {
    pub fn new(params: BranchingParams, d: usize, horizon: f64, dt: f64) -> Self {
        Self { params, d, horizon, dt, max_particles: DEFAULT_MAX_PARTICLES, mode: Mode::Plain, lookahead: None }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_particles(mut self, cap: usize) -> Self {
        self.max_particles = cap;
        self
    }

    pub fn with_lookahead(mut self, lookahead: f64) -> Self {
        self.lookahead = Some(lookahead);
        self
    }

    pub fn lookahead(&self) -> f64 {
        self.lookahead.unwrap_or_else(|| default_lookahead(&self.params))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if self.max_particles == 0 {
            return Err(Error::config("max_particles must be at least 1"));
        }
        if let Some(l) = self.lookahead {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(format!("lookahead must be finite and >= 0, got {l}")));
            }
        }
        if !(self.params.beta >= 0.0 && self.params.beta.is_finite()) {
            return Err(Error::config("branching rate must be finite and >= 0"));
        }
        Ok(())
    }
}
