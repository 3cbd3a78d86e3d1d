use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tree::{Particle, ParticleTree};
use super::{Label, Mode, SimulationConfig};
use crate::branching::{extinction_probability, skeleton_decomposition, SkeletonParams};
use crate::error::Result;
use crate::rng::{derive, hashed_uniform, stream, tag, StreamRng};
use crate::traps::{SegmentHit, TrapField};

/// A particle waiting to be born, ordered by birth time.
struct Pending {
    birth: f64,
    parent: Option<usize>,
    rank: u32,
    key: u64,
    label: Label,
    origin: Vec<f64>,
}

impl Pending {
    fn order_key(&self) -> (f64, usize, u32) {
        (self.birth, self.parent.map_or(0, |p| p + 1), self.rank)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest birth first
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.order_key(), other.order_key());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
    }
}

fn child_key(parent: u64, rank: u32) -> u64 {
    derive(parent, rank as u64)
}

/// Lifetime and offspring of one particle, drawn from its genealogy stream.
/// The offspring are `(skeleton, other)` counts.
struct Fate {
    death: f64,
    children: (usize, usize),
}

struct Laws<'a> {
    cfg: &'a SimulationConfig,
    skeleton: Option<SkeletonParams>,
}

impl Laws<'_> {
    fn fate(&self, key: u64, birth: f64, label: Label) -> Fate {
        let mut g: StreamRng = stream(derive(key, tag::GENEALOGY));
        let death = match self.cfg.params.lifetime() {
            Some(exp) => birth + exp.sample(&mut g),
            None => f64::INFINITY,
        };
        let children = match label {
            Label::Unlabeled => (0, self.cfg.params.law.sample(&mut g)),
            Label::Skeleton => self.skeleton.as_ref().expect("two-type laws").sample_branch(&mut g),
            Label::Doomed => (0, self.skeleton.as_ref().expect("two-type laws").doomed_law.sample(&mut g)),
        };
        Fate { death, children }
    }

    fn child_label(&self, parent: Label, rank: usize, skeleton_children: usize) -> Label {
        match parent {
            Label::Unlabeled => Label::Unlabeled,
            Label::Doomed => Label::Doomed,
            Label::Skeleton if rank < skeleton_children => Label::Skeleton,
            Label::Skeleton => Label::Doomed,
        }
    }
}

/// Result of a run that stops at the first trap contact.
#[derive(Debug, Clone)]
pub struct TrappingRun {
    /// Complete up to `min(trap_time, horizon)`.
    pub tree: ParticleTree,
    /// First trapping time within the horizon.
    pub trap_time: Option<f64>,
}

impl TrappingRun {
    /// `{T > t}` intersected with the non-extinction proxy, for a run that was
    /// not truncated.
    pub fn survives(&self, t: f64) -> bool {
        !self.tree.truncated && self.trap_time.is_none_or(|tt| tt > t) && self.tree.survives_lookahead(t)
    }
}

fn grow(cfg: &SimulationConfig, root_key: u64, field: Option<&TrapField>) -> Result<(ParticleTree, Option<f64>)> {
    cfg.validate()?;
    let skeleton = match cfg.mode {
        Mode::TwoType => Some(skeleton_decomposition(&cfg.params)?),
        Mode::Plain => None,
    };
    let laws = Laws { cfg, skeleton };
    let d = cfg.d;
    let horizon = cfg.horizon;
    let collision_key = derive(root_key, tag::COLLISION);

    let mut particles: Vec<Particle> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut coords: Vec<f64> = Vec::new();
    let mut heap = BinaryHeap::new();
    heap.push(Pending {
        birth: 0.0,
        parent: None,
        rank: 0,
        key: root_key,
        label: if cfg.mode == Mode::TwoType { Label::Skeleton } else { Label::Unlabeled },
        origin: vec![0.0; d],
    });

    let mut best = f64::INFINITY;
    if let Some(f) = field {
        if f.contains(&vec![0.0; d]) {
            best = 0.0;
        }
    }
    let mut truncated = false;
    let mut stopped_at = horizon;
    let mut next = vec![0.0; d];

    while let Some(p) = heap.pop() {
        if field.is_some() && p.birth > best {
            heap.push(p);
            break;
        }
        if particles.len() >= cfg.max_particles {
            truncated = true;
            stopped_at = p.birth;
            heap.push(p);
            break;
        }
        let id = particles.len();
        let fate = laws.fate(p.key, p.birth, p.label);
        let end = fate.death.min(horizon);

        let start = times.len();
        times.push(p.birth);
        coords.extend_from_slice(&p.origin);
        let mut path_rng: StreamRng = stream(derive(p.key, tag::PATH));
        let mut k = (p.birth / cfg.dt).floor() as u64 + 1;
        let mut seg = 0u64;
        let mut complete = true;
        loop {
            let t_prev = *times.last().expect("path has a start");
            if t_prev >= end {
                break;
            }
            if field.is_some() && t_prev >= best {
                complete = false;
                break;
            }
            let grid_t = k as f64 * cfg.dt;
            let t_next = if grid_t < end { grid_t } else { end };
            k += 1;
            let step = t_next - t_prev;
            let sd = step.sqrt();
            let base = coords.len() - d;
            for (j, x) in next.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut path_rng);
                *x = coords[base + j] + sd * z;
            }
            coords.extend_from_slice(&next);
            times.push(t_next);

            if let Some(f) = field {
                let (from, to) = coords[base..].split_at(d);
                let hit = f.segment_hit_with(from, to, step, |c| hashed_uniform(collision_key, p.key, seg, c as u64))?;
                if let Some(kind) = hit {
                    let at = match kind {
                        SegmentHit::AtStart => t_prev,
                        SegmentHit::Along => 0.5 * (t_prev + t_next),
                    };
                    if at < best {
                        best = at;
                    }
                    complete = false;
                    break;
                }
            }
            seg += 1;
        }
        let branched = fate.death <= horizon;
        particles.push(Particle {
            id,
            parent: p.parent,
            birth: p.birth,
            death: fate.death,
            offspring: branched.then_some((fate.children.0 + fate.children.1) as u32),
            label: p.label,
            key: p.key,
            path: (start, times.len()),
        });
        if branched && complete {
            let origin = coords[coords.len() - d..].to_vec();
            let (sk, other) = fate.children;
            for rank in 0..sk + other {
                heap.push(Pending {
                    birth: fate.death,
                    parent: Some(id),
                    rank: rank as u32,
                    key: child_key(p.key, rank as u32),
                    label: laws.child_label(p.label, rank, sk),
                    origin: origin.clone(),
                });
            }
        }
    }

    let trap_time = (best <= horizon).then_some(best);
    let observed_until = stopped_at.min(best).min(horizon);
    let lookahead = cfg.lookahead();
    let mut tree = ParticleTree {
        d,
        horizon,
        mode: cfg.mode,
        particles,
        times,
        coords,
        truncated,
        observed_until,
        extinction_time: None,
        lookahead,
        root_key,
    };
    if !truncated {
        tree.extinction_time = extinction_time(&laws, &tree, heap.into_vec());
    }
    Ok((tree, trap_time))
}

/// Continue the genealogy (without space) from the particles alive at the end
/// of the observed window until extinction, `horizon + lookahead`, or a
/// population large enough that later extinction has probability < 1e-15.
fn extinction_time(laws: &Laws, tree: &ParticleTree, unborn: Vec<Pending>) -> Option<f64> {
    let cfg = laws.cfg;
    if cfg.mode == Mode::TwoType || cfg.params.law.p(0) == 0.0 || cfg.params.beta == 0.0 {
        return None;
    }
    let now = tree.observed_until;
    let limit = tree.horizon + tree.lookahead;
    let q = extinction_probability(&cfg.params.law, 1e-14);
    let safe = if q < 1.0 { ((1e-15f64).ln() / q.ln()).ceil().max(1.0) as usize } else { usize::MAX };
    let safe = safe.min(cfg.max_particles);

    // (death time, key) of every particle alive at `now`
    let mut alive: BinaryHeap<Event> = tree
        .particles
        .iter()
        .filter(|p| p.alive_at(now))
        .map(|p| Event { death: p.death, key: p.key })
        .collect();
    for p in unborn.into_iter().filter(|p| p.birth <= now) {
        alive.push(Event { death: laws.fate(p.key, p.birth, p.label).death, key: p.key });
    }
    if alive.is_empty() {
        let last = tree.particles.iter().map(|p| p.death).fold(0.0, f64::max);
        return Some(last);
    }
    while let Some(ev) = alive.pop() {
        if ev.death > limit {
            return None;
        }
        let fate = laws.fate(ev.key, 0.0, Label::Unlabeled);
        let k = fate.children.1;
        for rank in 0..k {
            let key = child_key(ev.key, rank as u32);
            let child = laws.fate(key, ev.death, Label::Unlabeled);
            alive.push(Event { death: child.death, key });
        }
        if alive.is_empty() {
            return Some(ev.death);
        }
        if ev.death >= tree.horizon && alive.len() >= safe {
            return None;
        }
    }
    None
}

struct Event {
    death: f64,
    key: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.death.total_cmp(&self.death).then(other.key.cmp(&self.key))
    }
}

/// Simulate one tree; the root key is drawn from `rng`.
pub fn simulate<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Result<ParticleTree> {
    simulate_with_key(cfg, rng.random())
}

pub fn simulate_with_key(cfg: &SimulationConfig, root_key: u64) -> Result<ParticleTree> {
    Ok(grow(cfg, root_key, None)?.0)
}

/// Simulate while checking `field`, skipping every part of the tree that
/// cannot produce a contact earlier than the earliest one found so far.
/// With the same `rng` state the trapping time equals that of
/// [`simulate`] followed by [`first_trapping_time`].
pub fn simulate_until_trapped<R: Rng + ?Sized>(
    cfg: &SimulationConfig,
    field: &TrapField,
    rng: &mut R,
) -> Result<TrappingRun> {
    trapping_run_with_key(cfg, field, rng.random())
}

pub fn trapping_run_with_key(cfg: &SimulationConfig, field: &TrapField, root_key: u64) -> Result<TrappingRun> {
    let (tree, trap_time) = grow(cfg, root_key, Some(field))?;
    Ok(TrappingRun { tree, trap_time })
}

/// Earliest time at which the sampled range meets the trap set: the start of
/// the first hit segment when it begins inside a trap ball, its midpoint
/// otherwise. Bridge tests draw from the tree's own collision stream.
pub fn first_trapping_time(tree: &ParticleTree, field: &TrapField) -> Result<Option<f64>> {
    let d = tree.d;
    let collision_key = derive(tree.root_key, tag::COLLISION);
    let mut best = f64::INFINITY;
    if field.contains(&vec![0.0; d]) {
        return Ok(Some(0.0));
    }
    for p in &tree.particles {
        if p.birth >= best {
            continue;
        }
        let (s, e) = p.path;
        for (seg, i) in (s..e.saturating_sub(1)).enumerate() {
            let (t0, t1) = (tree.times[i], tree.times[i + 1]);
            if t0 >= best {
                break;
            }
            let from = &tree.coords[i * d..(i + 1) * d];
            let to = &tree.coords[(i + 1) * d..(i + 2) * d];
            let hit =
                field.segment_hit_with(from, to, t1 - t0, |c| hashed_uniform(collision_key, p.key, seg as u64, c as u64))?;
            if let Some(kind) = hit {
                let at = match kind {
                    SegmentHit::AtStart => t0,
                    SegmentHit::Along => 0.5 * (t0 + t1),
                };
                best = best.min(at);
                break;
            }
        }
    }
    Ok((best <= tree.horizon).then_some(best))
}
