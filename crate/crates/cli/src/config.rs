//! Experiment configuration files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bbmtraps::estimate::RadiusRule;
use bbmtraps::sim::{default_dt, default_lookahead, DEFAULT_MAX_PARTICLES};
use bbmtraps::traps::default_window;
use bbmtraps::{BranchingParams, Error, Mode, OffspringLaw, Result, SimulationConfig, TrapFieldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub offspring: OffspringLaw,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traps: Option<TrapFieldSpec>,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub d: usize,
    /// Horizon.
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "plain")]
    pub mode: Mode,
    #[serde(default = "default_cap")]
    pub max_particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<f64>,
}

fn plain() -> Mode {
    Mode::Plain
}

fn default_cap() -> usize {
    DEFAULT_MAX_PARTICLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub statistics: Vec<Statistic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<f64>,
}

/// One requested statistic. Conditional statistics are conditioned on
/// survival up to their own `t` unless `conditioned` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Statistic {
    Survival {
        t: f64,
    },
    Population {
        t: f64,
        s_fraction: f64,
        #[serde(default = "yes")]
        conditioned: bool,
    },
    Range {
        t: f64,
        epsilon: f64,
        #[serde(default = "yes")]
        conditioned: bool,
    },
    TrapPresence {
        t: f64,
        epsilon: f64,
        rule: RadiusRule,
        #[serde(default = "yes")]
        conditioned: bool,
    },
}

impl Statistic {
    pub fn conditioned(&self) -> bool {
        match *self {
            Statistic::Survival { .. } => true,
            Statistic::Population { conditioned, .. }
            | Statistic::Range { conditioned, .. }
            | Statistic::TrapPresence { conditioned, .. } => conditioned,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Write tree and trajectory CSVs from `simulate` (same as `--dump`).
    #[serde(default)]
    pub dump: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sim = self.simulation_config()?;
        sim.validate()?;
        if let Some(traps) = &self.traps {
            if traps.d != self.simulation.d {
                return Err(Error::Config(format!(
                    "traps.d = {} does not match simulation.d = {}",
                    traps.d, self.simulation.d
                )));
            }
        }
        if let Some(est) = &self.estimation {
            if est.n == 0 {
                return Err(Error::Config("estimation.n must be at least 1".into()));
            }
            if self.traps.is_none() {
                return Err(Error::Config("estimation needs a `traps` section".into()));
            }
            if let Some(w) = est.window_radius {
                if !(w > 0.0) {
                    return Err(Error::Config(format!("window_radius must be positive, got {w}")));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<BranchingParams> {
        BranchingParams::new(self.offspring.clone(), self.beta)
    }

    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let s = &self.simulation;
        let dt = s.dt.unwrap_or_else(|| match &self.traps {
            Some(traps) => default_dt(traps.a, s.d.max(1)),
            None => 0.01,
        });
        let mut cfg = SimulationConfig::new(self.params()?, s.d, s.t, dt)
            .with_mode(s.mode)
            .with_max_particles(s.max_particles);
        cfg.lookahead = s.lookahead;
        Ok(cfg)
    }

    /// Fill in every default so the result reproduces this run on its own.
    pub fn resolved(&self, seed_override: Option<u64>) -> Result<Self> {
        let mut out = self.clone();
        let sim = self.simulation_config()?;
        out.simulation.dt = Some(sim.dt);
        out.simulation.lookahead = Some(sim.lookahead.unwrap_or_else(|| default_lookahead(&sim.params)));
        if let Some(est) = out.estimation.as_mut() {
            if let Some(seed) = seed_override {
                est.seed = seed;
            }
            if est.window_radius.is_none() {
                if let Some(traps) = &self.traps {
                    est.window_radius = Some(default_window(&sim.params, sim.d, sim.horizon, traps.a));
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
        "offspring": {"2": 1.0},
        "beta": 1.0,
        "traps": {"d": 2, "kind": "uniform", "v": 0.5, "a": 0.5},
        "simulation": {"d": 2, "t": 2.0},
        "estimation": {"n": 10, "seed": 3, "statistics": [
            {"kind": "survival", "t": 1.0},
            {"kind": "trap_presence", "t": 1.0, "epsilon": 0.5, "rule": "eps_t_root_d"}
        ]}
    }"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_json(BASIC).unwrap();
        let r = cfg.resolved(Some(9)).unwrap();
        assert_eq!(r.simulation.dt, Some(default_dt(0.5, 2)));
        assert_eq!(r.estimation.as_ref().unwrap().seed, 9);
        assert!(r.estimation.as_ref().unwrap().window_radius.is_some());
        let again = ExperimentConfig::from_json(&r.to_canonical_json()).unwrap();
        assert_eq!(again.resolved(None).unwrap(), r);
        assert_eq!(again.resolved(None).unwrap().hash(), r.hash());
        assert_ne!(cfg.hash(), r.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASIC.replace("\"beta\"", "\"betta\": 1, \"beta\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))));
        let bad = BASIC.replace("\"t\": 2.0", "\"t\": 2.0, \"seed\": 1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = BASIC.replace("\"kind\": \"survival\", \"t\": 1.0", "\"kind\": \"survival\", \"t\": 1.0, \"eps\": 1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn mismatched_dimension_is_rejected() {
        let bad = BASIC.replace("\"d\": 2, \"t\"", "\"d\": 3, \"t\"");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }
}
