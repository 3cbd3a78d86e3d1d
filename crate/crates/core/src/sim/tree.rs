use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Label, Mode};
use crate::error::{Error, Result};
use crate::geometry::norm;

/// One particle of a simulated tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub id: usize,
    pub parent: Option<usize>,
    pub birth: f64,
    /// Scheduled end of life; may lie beyond the horizon (infinite when β = 0).
    pub death: f64,
    /// Number of children, when the branch event happened within the horizon.
    pub offspring: Option<u32>,
    pub label: Label,
    pub(crate) key: u64,
    pub(crate) path: (usize, usize),
}

impl Particle {
    /// Alive on `[birth, death)`.
    pub fn alive_at(&self, s: f64) -> bool {
        self.birth <= s && s < self.death
    }
}

/// How `doomed_alive_along_line` picks the skeletal line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LineSelection {
    /// Uniform over skeleton particles alive at the query time.
    #[default]
    Uniform,
    /// Follow the first skeleton child from the root.
    RootLine,
}

/// Event log of one BBM run: genealogy plus sampled trajectories.
#[derive(Debug, Clone)]
pub struct ParticleTree {
    pub(crate) d: usize,
    pub(crate) horizon: f64,
    pub(crate) mode: Mode,
    pub(crate) particles: Vec<Particle>,
    pub(crate) times: Vec<f64>,
    pub(crate) coords: Vec<f64>,
    pub(crate) truncated: bool,
    pub(crate) observed_until: f64,
    pub(crate) extinction_time: Option<f64>,
    pub(crate) lookahead: f64,
    pub(crate) root_key: u64,
}

impl ParticleTree {
    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Set when the particle cap stopped the run.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Time up to which the tree is complete. Equals the horizon unless the
    /// run was stopped early (first trap contact or particle cap).
    pub fn observed_until(&self) -> f64 {
        self.observed_until
    }

    /// Time at which the population died out, as far as the lookahead rule can
    /// tell; `None` when it is alive at `horizon + lookahead`.
    pub fn extinction_time(&self) -> Option<f64> {
        self.extinction_time
    }

    pub fn lookahead(&self) -> f64 {
        self.lookahead
    }

    /// Non-extinction proxy for survival up to `t`: still alive at `t + lookahead`.
    pub fn survives_lookahead(&self, t: f64) -> bool {
        self.extinction_time.is_none_or(|e| e > t + self.lookahead)
    }

    /// Sampled times and positions of particle `id`.
    pub fn trajectory(&self, id: usize) -> impl Iterator<Item = (f64, &[f64])> {
        let (s, e) = self.particles[id].path;
        let d = self.d;
        (s..e).map(move |i| (self.times[i], &self.coords[i * d..(i + 1) * d]))
    }

    /// `(total, skeleton, doomed)` counts of particles alive at `s`.
    pub fn population_at(&self, s: f64) -> (u64, u64, u64) {
        let mut out = (0, 0, 0);
        for p in self.particles.iter().filter(|p| p.alive_at(s)) {
            out.0 += 1;
            match p.label {
                Label::Skeleton => out.1 += 1,
                Label::Doomed => out.2 += 1,
                Label::Unlabeled => {}
            }
        }
        out
    }

    /// `max |x|` over every sampled position up to time `s`.
    pub fn range_radius(&self, s: f64) -> f64 {
        let d = self.d;
        self.times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t <= s)
            .map(|(i, _)| norm(&self.coords[i * d..(i + 1) * d]))
            .fold(0.0, f64::max)
    }

    /// Number of doomed particles alive at `s` that descend directly (through
    /// doomed particles only) from the chosen skeletal ancestral line.
    pub fn doomed_alive_along_line<R: Rng + ?Sized>(
        &self,
        s: f64,
        selection: LineSelection,
        rng: &mut R,
    ) -> Result<u64> {
        if self.mode != Mode::TwoType {
            return Err(Error::domain("skeletal lines exist only in two-type trees"));
        }
        let chosen = match selection {
            LineSelection::Uniform => {
                let alive: Vec<usize> = self
                    .particles
                    .iter()
                    .filter(|p| p.label == Label::Skeleton && p.alive_at(s))
                    .map(|p| p.id)
                    .collect();
                if alive.is_empty() {
                    return Ok(0);
                }
                alive[rng.random_range(0..alive.len())]
            }
            LineSelection::RootLine => {
                let mut cur = 0;
                while !self.particles[cur].alive_at(s) {
                    match self
                        .particles
                        .iter()
                        .skip(cur + 1)
                        .find(|p| p.parent == Some(cur) && p.label == Label::Skeleton)
                    {
                        Some(child) => cur = child.id,
                        None => return Ok(0),
                    }
                }
                cur
            }
        };
        let mut on_line = vec![false; self.particles.len()];
        let mut cur = Some(chosen);
        while let Some(id) = cur {
            on_line[id] = true;
            cur = self.particles[id].parent;
        }
        let count = self
            .particles
            .iter()
            .filter(|p| p.label == Label::Doomed && p.alive_at(s))
            .filter(|p| {
                let mut up = p.parent;
                while let Some(id) = up {
                    if self.particles[id].label == Label::Skeleton {
                        return on_line[id];
                    }
                    up = self.particles[id].parent;
                }
                false
            })
            .count();
        Ok(count as u64)
    }

    /// `id,parent,birth,death,offspring,label`; `death` is empty for particles
    /// alive at the end of the run, `parent` for the root.
    pub fn write_tree_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "id,parent,birth,death,offspring,label")?;
        for p in &self.particles {
            let parent = p.parent.map(|x| x.to_string()).unwrap_or_default();
            let (death, offspring) = match p.offspring {
                Some(k) => (format!("{}", p.death), k.to_string()),
                None => (String::new(), String::new()),
            };
            let label = match p.label {
                Label::Unlabeled => "unlabeled",
                Label::Skeleton => "skeleton",
                Label::Doomed => "doomed",
            };
            writeln!(w, "{},{},{},{},{},{}", p.id, parent, p.birth, death, offspring, label)?;
        }
        Ok(())
    }

    /// `id,time,x0,...`
    pub fn write_trajectories_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let coords: Vec<String> = (0..self.d).map(|k| format!("x{k}")).collect();
        writeln!(w, "id,time,{}", coords.join(","))?;
        for p in &self.particles {
            for (t, x) in self.trajectory(p.id) {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{}", p.id, t, xs.join(","))?;
            }
        }
        Ok(())
    }
}
