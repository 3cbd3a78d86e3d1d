//! Replicate-parallel Monte Carlo estimators.
//!
//! Replicate `i` draws its trap field from stream `(seed, i, FIELD)` and its
//! tree from `(seed, i, TREE)`, so results depend only on the seed and the
//! replicate range, never on how replicates are spread over workers.
//! Conditioning is by rejection: simulate, then keep the replicates on which
//! the conditioning event holds.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{replicate_key, tag};
use crate::sim::{first_trapping_time, simulate_with_key, trapping_run_with_key, Mode, SimulationConfig, TrappingRun};
use crate::traps::{default_window, sample_field_nested, shell_radii, ClearMode, TrapField, TrapFieldSpec};

/// Acceptance rates below this trigger a warning.
pub const ACCEPTANCE_FLOOR: f64 = 1e-4;
/// Largest tolerated fraction of capped replicates.
pub const MAX_TRUNCATED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    None,
    /// Keep replicates on the survival event `S_t`.
    SurvivalTo(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub replicates: usize,
    pub seed: u64,
    pub sim: SimulationConfig,
    pub traps: TrapFieldSpec,
    #[serde(default)]
    pub conditioning: Conditioning,
    /// Sampling window; `None` uses [`default_window`] for the simulation horizon.
    #[serde(default)]
    pub window_radius: Option<f64>,
}

impl MCConfig {
    pub fn new(replicates: usize, seed: u64, sim: SimulationConfig, traps: TrapFieldSpec) -> Self {
        Self { replicates, seed, sim, traps, conditioning: Conditioning::None, window_radius: None }
    }

    pub fn conditioned_on_survival(mut self, t: f64) -> Self {
        self.conditioning = Conditioning::SurvivalTo(t);
        self
    }

    pub fn window(&self) -> f64 {
        self.window_radius
            .unwrap_or_else(|| default_window(&self.sim.params, self.sim.d, self.sim.horizon, self.traps.a))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.replicates == 0 {
            return Err(Error::config("need at least one replicate"));
        }
        if self.traps.d != self.sim.d {
            return Err(Error::config(format!(
                "trap field is {}-dimensional but the simulation is {}-dimensional",
                self.traps.d, self.sim.d
            )));
        }
        if let Conditioning::SurvivalTo(t) = self.conditioning {
            self.check_time(t)?;
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.sim.horizon) {
            return Err(Error::domain(format!("time {t} outside [0, horizon = {}]", self.sim.horizon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub statistic: String,
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Replicates that were not capped.
    pub n_total: usize,
    /// Replicates counted in the estimate (survivors, or those passing the conditioning).
    pub n_accepted: usize,
    pub n_truncated: usize,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

fn proportion(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// One replicate: its trap field and the BBM run against it.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    /// The field out to the radius the run needed; see [`Replicate::complete_field`].
    pub field: TrapField,
    pub run: TrappingRun,
}

impl Replicate {
    /// Extend `field` to the configured window (a no-op when it already is).
    pub fn complete_field(&mut self, cfg: &MCConfig) -> Result<()> {
        let window = cfg.window();
        if self.field.window_radius() < window {
            let key = replicate_key(cfg.seed, self.index as u64, tag::FIELD);
            self.field = sample_field_nested(&cfg.traps, window, key, usize::MAX)?;
        }
        Ok(())
    }
}

/// Simulate replicate `index`. With `full_tree` the tree is simulated to the
/// horizon regardless of trap contacts (the trapping time is still reported)
/// and the field covers the whole window. Otherwise the run stops at the
/// first contact and the field is sampled shell by shell, only as far out
/// as the run reaches.
pub fn run_replicate(cfg: &MCConfig, index: usize, full_tree: bool) -> Result<Replicate> {
    let window = cfg.window();
    let field_key = replicate_key(cfg.seed, index as u64, tag::FIELD);
    let key = replicate_key(cfg.seed, index as u64, tag::TREE);
    if full_tree {
        let field = sample_field_nested(&cfg.traps, window, field_key, usize::MAX)?;
        let tree = simulate_with_key(&cfg.sim, key)?;
        let trap_time = first_trapping_time(&tree, &field)?;
        return Ok(Replicate { index, field, run: TrappingRun { tree, trap_time } });
    }
    let shells = shell_radii(&cfg.traps, window).len();
    let mut used = 1;
    loop {
        let field = sample_field_nested(&cfg.traps, window, field_key, used)?;
        match trapping_run_with_key(&cfg.sim, &field, key) {
            Err(Error::Window { .. }) if used < shells => used += 1,
            run => return Ok(Replicate { index, field, run: run? }),
        }
    }
}

const CHUNK: usize = 1 << 16;

struct Outcome<T> {
    truncated: bool,
    accepted: Option<T>,
}

struct Collected<T> {
    values: Vec<T>,
    n_total: usize,
    n_truncated: usize,
    started: Instant,
}

fn collect<T, F>(cfg: &MCConfig, stat: F) -> Result<Collected<T>>
where
    T: Send,
    F: Fn(&Replicate) -> Result<T> + Sync + Send,
{
    cfg.validate()?;
    let started = Instant::now();
    let full_tree = cfg.conditioning == Conditioning::None;
    let mut values = Vec::new();
    let mut n_truncated = 0;
    // bounded memory for large runs; the order of the values is unchanged
    for first in (0..cfg.replicates).step_by(CHUNK) {
        let len = CHUNK.min(cfg.replicates - first);
        let outcomes: Vec<Result<Outcome<T>>> = map_indexed(len, |k| {
            let mut rep = run_replicate(cfg, first + k, full_tree)?;
            if rep.run.tree.truncated() {
                return Ok(Outcome { truncated: true, accepted: None });
            }
            let keep = match cfg.conditioning {
                Conditioning::None => true,
                Conditioning::SurvivalTo(t) => rep.run.survives(t),
            };
            if !keep {
                return Ok(Outcome { truncated: false, accepted: None });
            }
            rep.complete_field(cfg)?;
            Ok(Outcome { truncated: false, accepted: Some(stat(&rep)?) })
        });
        for o in outcomes {
            let o = o?;
            n_truncated += o.truncated as usize;
            values.extend(o.accepted);
        }
    }
    check_truncation(n_truncated, cfg.replicates)?;
    Ok(Collected { values, n_total: cfg.replicates - n_truncated, n_truncated, started })
}

fn check_truncation(truncated: usize, total: usize) -> Result<()> {
    if truncated as f64 > MAX_TRUNCATED_FRACTION * total as f64 {
        return Err(Error::Truncation { truncated, total });
    }
    Ok(())
}

fn acceptance_warnings(accepted: usize, total: usize) -> Vec<String> {
    let rate = accepted as f64 / total.max(1) as f64;
    if rate < ACCEPTANCE_FLOOR {
        let msg = format!("acceptance rate {rate:.3e} ({accepted}/{total}) is below the floor {ACCEPTANCE_FLOOR:.0e}");
        log::warn!("{msg}");
        vec![msg]
    } else {
        Vec::new()
    }
}

impl<T> Collected<T> {
    fn result(&self, cfg: &MCConfig, statistic: &str, t: f64, hits: usize) -> EstimateResult {
        let n = self.values.len();
        let (estimate, std_error) = proportion(hits, n);
        EstimateResult {
            statistic: statistic.to_string(),
            t,
            estimate,
            std_error,
            n_total: self.n_total,
            n_accepted: n,
            n_truncated: self.n_truncated,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            seed: cfg.seed,
            warnings: acceptance_warnings(n, self.n_total),
        }
    }

    fn require_accepted(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Acceptance { total: self.n_total });
        }
        Ok(())
    }
}

/// Annealed survival frequency `P(S_t)` with a fresh field and tree per replicate.
pub fn estimate_annealed_survival(cfg: &MCConfig, t: f64) -> Result<EstimateResult> {
    Ok(estimate_survival_curve(cfg, &[t])?.remove(0))
}

/// Survival frequencies at several times from one shared set of replicates.
pub fn estimate_survival_curve(cfg: &MCConfig, times: &[f64]) -> Result<Vec<EstimateResult>> {
    for &t in times {
        cfg.check_time(t)?;
    }
    let unconditioned = MCConfig { conditioning: Conditioning::None, ..cfg.clone() };
    unconditioned.validate()?;
    let started = Instant::now();
    let rows = survival_indicators(&unconditioned, times)?;
    let mut truncated = 0;
    let mut kept: Vec<Vec<bool>> = Vec::with_capacity(rows.len());
    for r in rows {
        match r {
            Some(v) => kept.push(v),
            None => truncated += 1,
        }
    }
    check_truncation(truncated, cfg.replicates)?;
    let n = kept.len();
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let hits = kept.iter().filter(|row| row[k]).count();
            let (estimate, std_error) = proportion(hits, n);
            let mut warnings = acceptance_warnings(hits, n);
            if n == 0 {
                warnings.push("every replicate was capped".into());
            }
            EstimateResult {
                statistic: "survival".into(),
                t,
                estimate,
                std_error,
                n_total: n,
                n_accepted: hits,
                n_truncated: truncated,
                wall_clock_secs: started.elapsed().as_secs_f64(),
                seed: cfg.seed,
                warnings,
            }
        })
        .collect())
}

/// Per-replicate survival indicators at each time (`None` for capped
/// replicates). All times share one run per replicate.
pub fn survival_indicators(cfg: &MCConfig, times: &[f64]) -> Result<Vec<Option<Vec<bool>>>> {
    cfg.validate()?;
    map_indexed(cfg.replicates, |i| {
        let rep = run_replicate(cfg, i, false)?;
        if rep.run.tree.truncated() {
            return Ok(None);
        }
        Ok(Some(times.iter().map(|&t| rep.run.survives(t)).collect()))
    })
    .into_iter()
    .collect()
}

/// Empirical law of the population at `s_fraction · t` among accepted replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalPopulation {
    /// `|Z(s)|` → count, or, in two-type mode, total population → count.
    pub histogram: BTreeMap<u64, usize>,
    /// `(|Z¹(s)|, |Z²(s)|)` → count, two-type mode only.
    pub two_type_histogram: Option<BTreeMap<(u64, u64), usize>>,
    /// `P(|Z(s)| = 1)`.
    pub single: EstimateResult,
    /// `P(|Z¹(s)| = 1)`, two-type mode only.
    pub skeleton_single: Option<EstimateResult>,
    /// `P(|Z²(s)| <= log t)`, two-type mode only.
    pub doomed_small: Option<EstimateResult>,
}

fn check_statistic_time(cfg: &MCConfig, s: f64) -> Result<()> {
    cfg.check_time(s)?;
    if let Conditioning::SurvivalTo(tc) = cfg.conditioning {
        if s > tc {
            return Err(Error::domain(format!("statistic time {s} lies beyond the conditioning time {tc}")));
        }
    }
    Ok(())
}

pub fn estimate_conditional_population(cfg: &MCConfig, t: f64, s_fraction: f64) -> Result<ConditionalPopulation> {
    if !(0.0..=1.0).contains(&s_fraction) {
        return Err(Error::domain(format!("s_fraction must lie in [0, 1], got {s_fraction}")));
    }
    let s = s_fraction * t;
    check_statistic_time(cfg, s)?;
    let c = collect(cfg, |rep| Ok(rep.run.tree.population_at(s)))?;
    c.require_accepted()?;
    let mut histogram = BTreeMap::new();
    for v in &c.values {
        *histogram.entry(v.0).or_insert(0) += 1;
    }
    let single = c.result(cfg, "population_single", t, c.values.iter().filter(|v| v.0 == 1).count());
    let (two_type_histogram, skeleton_single, doomed_small) = if cfg.sim.mode == Mode::TwoType {
        let mut h = BTreeMap::new();
        for v in &c.values {
            *h.entry((v.1, v.2)).or_insert(0) += 1;
        }
        let log_t = t.ln();
        let sk = c.result(cfg, "skeleton_single", t, c.values.iter().filter(|v| v.1 == 1).count());
        let dm = c.result(cfg, "doomed_small", t, c.values.iter().filter(|v| (v.2 as f64) <= log_t).count());
        (Some(h), Some(sk), Some(dm))
    } else {
        (None, None, None)
    };
    Ok(ConditionalPopulation { histogram, two_type_histogram, single, skeleton_single, doomed_small })
}

/// Frequency of `{R(t) ⊆ B(0, εt)}` among accepted replicates.
pub fn estimate_conditional_range(cfg: &MCConfig, t: f64, epsilon: f64) -> Result<EstimateResult> {
    check_statistic_time(cfg, t)?;
    let c = collect(cfg, |rep| Ok(rep.run.tree.range_radius(t) <= epsilon * t))?;
    c.require_accepted()?;
    Ok(c.result(cfg, "range_within", t, c.values.iter().filter(|&&b| b).count()))
}

/// Radius of the query ball in [`estimate_trap_presence_given_survival`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusRule {
    /// `ε t`
    EpsT,
    /// `ε t^{1/d}`
    EpsTRootD,
}

impl RadiusRule {
    pub fn radius(self, epsilon: f64, t: f64, d: usize) -> f64 {
        match self {
            RadiusRule::EpsT => epsilon * t,
            RadiusRule::EpsTRootD => epsilon * t.powf(1.0 / d as f64),
        }
    }
}

/// Frequency, among accepted replicates, that the ball around the origin
/// given by `rule` meets the trap set.
pub fn estimate_trap_presence_given_survival(
    cfg: &MCConfig,
    t: f64,
    epsilon: f64,
    rule: RadiusRule,
) -> Result<EstimateResult> {
    cfg.check_time(t)?;
    let radius = rule.radius(epsilon, t, cfg.sim.d);
    let origin = vec![0.0; cfg.sim.d];
    let c = collect(cfg, |rep| Ok(!rep.field.is_trap_free(&origin, radius, ClearMode::TrapSetFree)?))?;
    c.require_accepted()?;
    Ok(c.result(cfg, "trap_in_ball", t, c.values.iter().filter(|&&b| b).count()))
}
