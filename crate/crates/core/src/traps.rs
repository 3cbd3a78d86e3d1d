//! Poisson trap fields.
//!
//! A field is a Poisson point process with intensity either uniform (`v` per
//! unit volume) or radially decaying, `l / max(|x|, x0)^(d-1)`. Each point
//! carries a closed trap ball of radius `a`; their union is the trap set `K`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::branching::BranchingParams;
use crate::error::{Error, Result};
use crate::geometry::{dist, norm, sphere_fraction_in_ball, unit_ball_volume, unit_sphere_area};
use crate::quadrature::integrate;
use crate::rng::{derive, stream};

/// Intensity profile of the trap field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrapKind {
    Uniform { v: f64 },
    /// `l / max(|x|, x0)^(d-1)`.
    Radial { l: f64, x0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct TrapFieldSpec {
    pub d: usize,
    pub kind: TrapKind,
    /// Trap ball radius.
    pub a: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    d: usize,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    a: f64,
}

impl TryFrom<RawSpec> for TrapFieldSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let kind = match raw.kind.as_str() {
            "uniform" => {
                if raw.l.is_some() || raw.x0.is_some() {
                    return Err(Error::config("uniform trap field takes only `v`"));
                }
                TrapKind::Uniform { v: raw.v.ok_or_else(|| Error::config("uniform trap field needs `v`"))? }
            }
            "radial" => {
                if raw.v.is_some() {
                    return Err(Error::config("radial trap field takes `l` and `x0`, not `v`"));
                }
                let l = raw.l.ok_or_else(|| Error::config("radial trap field needs `l`"))?;
                TrapKind::Radial { l, x0: raw.x0.unwrap_or(1e-2 * raw.a) }
            }
            other => return Err(Error::config(format!("unknown trap field kind {other:?}"))),
        };
        TrapFieldSpec::new(raw.d, kind, raw.a)
    }
}

impl From<TrapFieldSpec> for RawSpec {
    fn from(spec: TrapFieldSpec) -> Self {
        match spec.kind {
            TrapKind::Uniform { v } => RawSpec { d: spec.d, kind: "uniform".into(), v: Some(v), l: None, x0: None, a: spec.a },
            TrapKind::Radial { l, x0 } => {
                RawSpec { d: spec.d, kind: "radial".into(), v: None, l: Some(l), x0: Some(x0), a: spec.a }
            }
        }
    }
}

impl TrapFieldSpec {
    pub fn new(d: usize, kind: TrapKind, a: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::config(format!("trap radius must be positive, got {a}")));
        }
        match kind {
            // v = 0 is the degenerate empty field
            TrapKind::Uniform { v } if !(v >= 0.0 && v.is_finite()) => {
                return Err(Error::config(format!("uniform intensity must be >= 0, got {v}")))
            }
            TrapKind::Radial { l, x0 } if !(l > 0.0 && x0 > 0.0 && l.is_finite() && x0.is_finite()) => {
                return Err(Error::config(format!("radial field needs l > 0 and x0 > 0, got l = {l}, x0 = {x0}")))
            }
            _ => {}
        }
        Ok(Self { d, kind, a })
    }

    pub fn uniform(d: usize, v: f64, a: f64) -> Result<Self> {
        Self::new(d, TrapKind::Uniform { v }, a)
    }

    /// Radial field with the default cutoff `x0 = a/100`.
    pub fn radial(d: usize, l: f64, a: f64) -> Result<Self> {
        Self::new(d, TrapKind::Radial { l, x0: 1e-2 * a }, a)
    }

    /// Intensity `dν/dx` at distance `r` from the origin.
    pub fn intensity(&self, r: f64) -> f64 {
        match self.kind {
            TrapKind::Uniform { v } => v,
            TrapKind::Radial { l, x0 } => l / r.max(x0).powi(self.d as i32 - 1),
        }
    }

    /// `ν(B(0, r))`.
    fn centered_measure(&self, r: f64) -> f64 {
        let d = self.d as i32;
        match self.kind {
            TrapKind::Uniform { v } => v * unit_ball_volume(self.d) * r.powi(d),
            TrapKind::Radial { l, x0 } => {
                if r <= x0 {
                    l * unit_ball_volume(self.d) * r.powi(d) / x0.powi(d - 1)
                } else {
                    l * unit_ball_volume(self.d) * x0 + l * unit_sphere_area(self.d) * (r - x0)
                }
            }
        }
    }

    /// Radius `r` with `ν(B(0, r)) = m`, for `0 <= m` and positive intensity.
    fn centered_radius(&self, m: f64) -> f64 {
        let inv_d = 1.0 / self.d as f64;
        match self.kind {
            TrapKind::Uniform { v } => (m / (v * unit_ball_volume(self.d))).powf(inv_d),
            TrapKind::Radial { l, x0 } => {
                let core = l * unit_ball_volume(self.d) * x0;
                if m <= core {
                    x0 * (m / core).powf(inv_d)
                } else {
                    x0 + (m - core) / (l * unit_sphere_area(self.d))
                }
            }
        }
    }
}

/// Window radius covering every trap that can interact with a BBM up to
/// `horizon`: linear spread `√(2βm)·t` with safety 1.5, plus a diffusive
/// margin `6√(d·t)` and the trap radius.
pub fn default_window(params: &BranchingParams, d: usize, horizon: f64, a: f64) -> f64 {
    let speed = (2.0 * params.beta * params.law.m().max(0.0)).sqrt();
    1.5 * speed * horizon + 6.0 * (d as f64 * horizon).sqrt() + a
}

/// `ν(B(center, radius))`.
pub fn field_measure(spec: &TrapFieldSpec, center: &[f64], radius: f64) -> f64 {
    if !(radius > 0.0) {
        return 0.0;
    }
    let c = norm(center);
    match spec.kind {
        TrapKind::Uniform { .. } => spec.centered_measure(radius),
        TrapKind::Radial { .. } if c == 0.0 => spec.centered_measure(radius),
        TrapKind::Radial { l, x0 } => {
            // ν = l s_d ∫ min(1, (ρ/x0)^(d-1)) · (fraction of the ρ-sphere inside the ball) dρ
            let d = spec.d;
            let weight = |rho: f64| (rho / x0).min(1.0).powi(d as i32 - 1);
            // spheres of radius < radius - c lie entirely inside the ball
            let core = if c < radius { annulus_weight(d, 0.0, radius - c, x0) } else { 0.0 };
            let lo = (c - radius).abs();
            let q = integrate(
                |rho| weight(rho) * sphere_fraction_in_ball(d, rho, c, radius),
                lo,
                c + radius,
                &[x0],
                1e-13 * (c + radius),
                1e-12,
            );
            l * unit_sphere_area(d) * (core + q.value)
        }
    }
}

/// `∫_lo^hi min(1, (ρ/x0)^(d-1)) dρ`.
fn annulus_weight(d: usize, lo: f64, hi: f64, x0: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let k = d as i32;
    let core = |r: f64| r.min(x0).powi(k) / (k as f64 * x0.powi(k - 1));
    let shell = |r: f64| (r - x0).max(0.0);
    (core(hi) + shell(hi)) - (core(lo) + shell(lo))
}

/// Mass of the annulus `{r_in <= |x| < r_out}`, by radial quadrature of the
/// intensity (independent of the closed forms used by [`field_measure`]).
pub fn annulus_measure(spec: &TrapFieldSpec, r_in: f64, r_out: f64) -> f64 {
    let d = spec.d;
    let breaks = match spec.kind {
        TrapKind::Radial { x0, .. } => vec![x0],
        TrapKind::Uniform { .. } => vec![],
    };
    integrate(
        |r| spec.intensity(r) * unit_sphere_area(d) * r.powi(d as i32 - 1),
        r_in,
        r_out,
        &breaks,
        1e-14,
        1e-13,
    )
    .value
}

/// Which set has to avoid the query ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearMode {
    /// No Poisson point in the ball.
    PointFree,
    /// The ball does not meet the trap set `K`.
    TrapSetFree,
}

impl ClearMode {
    fn inflation(self, a: f64) -> f64 {
        match self {
            ClearMode::PointFree => 0.0,
            ClearMode::TrapSetFree => a,
        }
    }
}

/// Probability that the ball is clear, `exp(-ν(B(center, radius [+ a])))`.
pub fn clearing_probability(spec: &TrapFieldSpec, center: &[f64], radius: f64, mode: ClearMode) -> f64 {
    if radius <= 0.0 && mode == ClearMode::PointFree {
        return 1.0;
    }
    (-field_measure(spec, center, radius + mode.inflation(spec.a))).exp()
}

/// Uniform bucket grid over the bounding box of the trap centers.
#[derive(Debug, Clone)]
struct Grid {
    lo: Vec<f64>,
    cell: f64,
    dims: Vec<usize>,
    starts: Vec<u32>,
    items: Vec<u32>,
}

const MAX_CELLS: usize = 1 << 22;

impl Grid {
    fn build(d: usize, centers: &[f64], a: f64) -> Self {
        let n = centers.len() / d;
        if n == 0 {
            return Grid { lo: vec![0.0; d], cell: 1.0, dims: vec![1; d], starts: vec![0, 0], items: vec![] };
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in centers.chunks_exact(d) {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        let budget = (4 * n).clamp(64, MAX_CELLS) as f64;
        let per_axis = budget.powf(1.0 / d as f64).floor().max(1.0);
        let cell = (3.5 * a).max(extent / per_axis).max(1e-12);
        let dims: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| ((h - l) / cell).floor() as usize + 1).collect();
        let total: usize = dims.iter().product();

        let index = |p: &[f64]| -> usize {
            let mut idx = 0;
            for k in (0..d).rev() {
                let i = (((p[k] - lo[k]) / cell).floor() as usize).min(dims[k] - 1);
                idx = idx * dims[k] + i;
            }
            idx
        };
        let mut counts = vec![0u32; total + 1];
        for p in centers.chunks_exact(d) {
            counts[index(p) + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; n];
        for (j, p) in centers.chunks_exact(d).enumerate() {
            let c = index(p);
            items[fill[c] as usize] = j as u32;
            fill[c] += 1;
        }
        Grid { lo, cell, dims, starts: counts, items }
    }

    /// Calls `visit` with every center index whose cell meets the cube around
    /// `p` of half-width `r`; stops early when `visit` returns `true`.
    fn visit_near(&self, p: &[f64], r: f64, mut visit: impl FnMut(usize) -> bool) -> bool {
        if self.items.is_empty() {
            return false;
        }
        let d = self.lo.len();
        let mut first = [0usize; 8];
        let mut last = [0usize; 8];
        let mut first_v;
        let mut last_v;
        let (first, last): (&mut [usize], &mut [usize]) = if d <= 8 {
            (&mut first[..d], &mut last[..d])
        } else {
            first_v = vec![0; d];
            last_v = vec![0; d];
            (&mut first_v[..], &mut last_v[..])
        };
        for k in 0..d {
            let a = ((p[k] - r - self.lo[k]) / self.cell).floor();
            let b = ((p[k] + r - self.lo[k]) / self.cell).floor();
            if b < 0.0 || a > (self.dims[k] - 1) as f64 {
                return false;
            }
            first[k] = a.max(0.0) as usize;
            last[k] = (b as usize).min(self.dims[k] - 1);
        }
        let mut cur: Vec<usize> = first.to_vec();
        loop {
            let mut idx = 0;
            for k in (0..d).rev() {
                idx = idx * self.dims[k] + cur[k];
            }
            let (s, e) = (self.starts[idx] as usize, self.starts[idx + 1] as usize);
            for &j in &self.items[s..e] {
                if visit(j as usize) {
                    return true;
                }
            }
            // odometer
            let mut k = 0;
            loop {
                if k == d {
                    return false;
                }
                if cur[k] < last[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = first[k];
                k += 1;
            }
        }
    }
}

/// A realized trap configuration.
#[derive(Debug, Clone)]
pub struct TrapField {
    spec: TrapFieldSpec,
    centers: Vec<f64>,
    window_radius: f64,
    grid: Grid,
}

/// Where a segment meets the trap set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentHit {
    /// The segment starts inside a trap ball.
    AtStart,
    /// Hit somewhere along the segment.
    Along,
}

impl TrapField {
    /// Field with the given centers (flat or nested), all within `window_radius`
    /// of the origin. An infinite window is allowed for hand-built fields.
    pub fn from_centers(spec: TrapFieldSpec, centers: &[Vec<f64>], window_radius: f64) -> Result<Self> {
        let mut flat = Vec::with_capacity(centers.len() * spec.d);
        for c in centers {
            if c.len() != spec.d {
                return Err(Error::config(format!("center {c:?} is not {}-dimensional", spec.d)));
            }
            if norm(c) > window_radius {
                return Err(Error::Window { needed: norm(c), window: window_radius });
            }
            flat.extend_from_slice(c);
        }
        Ok(Self::from_flat(spec, flat, window_radius))
    }

    fn from_flat(spec: TrapFieldSpec, centers: Vec<f64>, window_radius: f64) -> Self {
        let grid = Grid::build(spec.d, &centers, spec.a);
        Self { spec, centers, window_radius, grid }
    }

    pub fn spec(&self) -> &TrapFieldSpec {
        &self.spec
    }

    pub fn window_radius(&self) -> f64 {
        self.window_radius
    }

    pub fn len(&self) -> usize {
        self.centers.len() / self.spec.d
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        let d = self.spec.d;
        &self.centers[i * d..(i + 1) * d]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.spec.d)
    }

    /// True iff `x` lies in the trap set.
    pub fn contains(&self, x: &[f64]) -> bool {
        let a = self.spec.a;
        self.grid.visit_near(x, a, |j| dist(x, self.center(j)) <= a)
    }

    fn check_window(&self, x: &[f64], reach: f64) -> Result<()> {
        let needed = norm(x) + reach;
        if needed > self.window_radius {
            return Err(Error::Window { needed, window: self.window_radius });
        }
        Ok(())
    }

    pub fn is_trap_free(&self, center: &[f64], radius: f64, mode: ClearMode) -> Result<bool> {
        let reach = radius.max(0.0) + mode.inflation(self.spec.a);
        self.check_window(center, reach)?;
        Ok(!self.grid.visit_near(center, reach, |j| dist(center, self.center(j)) <= reach))
    }

    /// Collision test for one straight trajectory segment of duration `dt`,
    /// with a Brownian-bridge correction. `uniform(j)` supplies the uniform
    /// used for the bridge test against center `j`.
    pub fn segment_hit_with(
        &self,
        from: &[f64],
        to: &[f64],
        dt: f64,
        mut uniform: impl FnMut(usize) -> f64,
    ) -> Result<Option<SegmentHit>> {
        let a = self.spec.a;
        let d = self.spec.d;
        let mut mid = [0.0f64; 8];
        let mut mid_v;
        let mid: &mut [f64] = if d <= 8 {
            &mut mid[..d]
        } else {
            mid_v = vec![0.0; d];
            &mut mid_v
        };
        for k in 0..d {
            mid[k] = 0.5 * (from[k] + to[k]);
        }
        let screen = dist(from, to) + a + 6.0 * dt.max(0.0).sqrt();
        // every center that can be tested lies in the screened ball, so a run
        // that passes this check sees the same hits in any larger window
        self.check_window(mid, screen)?;
        let mut along = false;
        let mut at_start = false;
        self.grid.visit_near(mid, screen, |j| {
            let c = self.center(j);
            let d_from = dist(from, c) - a;
            if d_from <= 0.0 {
                at_start = true;
                return true;
            }
            if along {
                return false;
            }
            let d_to = dist(to, c) - a;
            if d_to <= 0.0 {
                along = true;
                return false;
            }
            if dist(mid, c) > screen {
                return false;
            }
            if d == 1 && (from[0] - c[0]) * (to[0] - c[0]) < 0.0 {
                along = true;
                return false;
            }
            if dt > 0.0 {
                let crossing = (-2.0 * d_from * d_to / dt).exp();
                if crossing > 0.0 && uniform(j) < crossing {
                    along = true;
                }
            }
            false
        });
        Ok(if at_start {
            Some(SegmentHit::AtStart)
        } else if along {
            Some(SegmentHit::Along)
        } else {
            None
        })
    }

    /// Write one center per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.spec.d).map(|k| format!("x{k}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for c in self.centers() {
            let row: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Collision test drawing bridge uniforms from `rng`.
pub fn segment_hits_trap<R: Rng + ?Sized>(
    field: &TrapField,
    from: &[f64],
    to: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<bool> {
    Ok(field.segment_hit_with(from, to, dt, |_| rng.random::<f64>())?.is_some())
}

pub fn is_trap_free(field: &TrapField, center: &[f64], radius: f64, mode: ClearMode) -> Result<bool> {
    field.is_trap_free(center, radius, mode)
}

fn uniform_direction<R: Rng + ?Sized>(d: usize, rng: &mut R, out: &mut [f64]) {
    if d == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut s = 0.0;
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
            s += *x * *x;
        }
        if s > 1e-300 {
            let inv = 1.0 / s.sqrt();
            out.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// Append the Poisson points of the annulus `r_in <= |x| < r_out`.
fn sample_shell<R: Rng + ?Sized>(spec: &TrapFieldSpec, r_in: f64, r_out: f64, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
    let d = spec.d;
    let inner = spec.centered_measure(r_in);
    let mass = spec.centered_measure(r_out) - inner;
    if !(mass > 0.0) {
        return Ok(());
    }
    let count = Poisson::new(mass).map_err(|e| Error::domain(e.to_string()))?.sample(rng) as usize;
    let start = out.len();
    out.resize(start + count * d, 0.0);
    for p in out[start..].chunks_exact_mut(d) {
        let r = spec.centered_radius(inner + rng.random::<f64>() * mass).clamp(r_in, r_out);
        uniform_direction(d, rng, p);
        p.iter_mut().for_each(|x| *x *= r);
    }
    Ok(())
}

fn check_window_radius(window_radius: f64) -> Result<()> {
    if !(window_radius > 0.0) || !window_radius.is_finite() {
        return Err(Error::domain(format!("window radius must be positive and finite, got {window_radius}")));
    }
    Ok(())
}

/// Poisson field restricted to `B(0, window_radius)`.
pub fn sample_field<R: Rng + ?Sized>(spec: &TrapFieldSpec, window_radius: f64, rng: &mut R) -> Result<TrapField> {
    check_window_radius(window_radius)?;
    let mut centers = Vec::new();
    sample_shell(spec, 0.0, window_radius, rng, &mut centers)?;
    Ok(TrapField::from_flat(*spec, centers, window_radius))
}

/// Outer radii of the shells used by [`sample_field_nested`]: doubling from
/// `max(1, 4a)` and capped at the window.
pub fn shell_radii(spec: &TrapFieldSpec, window_radius: f64) -> Vec<f64> {
    let mut radii = Vec::new();
    let mut r = (4.0 * spec.a).max(1.0);
    while r < window_radius {
        radii.push(r);
        r *= 2.0;
    }
    radii.push(window_radius);
    radii
}

/// Poisson field on `B(0, window_radius)` sampled shell by shell, each shell
/// from its own stream under `key`, and truncated to the first `shells`
/// shells of [`shell_radii`]. The truncated field is exactly the restriction
/// of the complete one, so runs can start small and grow on demand.
pub fn sample_field_nested(spec: &TrapFieldSpec, window_radius: f64, key: u64, shells: usize) -> Result<TrapField> {
    check_window_radius(window_radius)?;
    let radii = shell_radii(spec, window_radius);
    let shells = shells.clamp(1, radii.len());
    let mut centers = Vec::new();
    let mut r_in = 0.0;
    for (k, &r_out) in radii[..shells].iter().enumerate() {
        sample_shell(spec, r_in, r_out, &mut stream(derive(key, k as u64)), &mut centers)?;
        r_in = r_out;
    }
    Ok(TrapField::from_flat(*spec, centers, radii[shells - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn uniform2() -> TrapFieldSpec {
        TrapFieldSpec::uniform(2, 1.0, 0.5).unwrap()
    }

    #[test]
    fn spec_json_forms() {
        let s: TrapFieldSpec = serde_json::from_str(r#"{"d":2,"kind":"uniform","v":1.0,"a":0.5}"#).unwrap();
        assert_eq!(s, uniform2());
        let r: TrapFieldSpec = serde_json::from_str(r#"{"d":1,"kind":"radial","l":0.5,"x0":0.005,"a":0.5}"#).unwrap();
        assert_eq!(r.kind, TrapKind::Radial { l: 0.5, x0: 0.005 });
        let r: TrapFieldSpec = serde_json::from_str(r#"{"d":1,"kind":"radial","l":0.5,"a":0.5}"#).unwrap();
        assert_eq!(r.kind, TrapKind::Radial { l: 0.5, x0: 0.005 });
        assert!(serde_json::from_str::<TrapFieldSpec>(r#"{"d":2,"kind":"uniform","v":1.0,"a":0.5,"w":1}"#).is_err());
        assert!(serde_json::from_str::<TrapFieldSpec>(r#"{"d":2,"kind":"radial","v":1.0,"a":0.5}"#).is_err());
        assert!(serde_json::from_str::<TrapFieldSpec>(r#"{"d":2,"kind":"uniform","v":1.0,"a":0.0}"#).is_err());
        let back: TrapFieldSpec = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn measure_examples() {
        assert!((field_measure(&uniform2(), &[0.0, 0.0], 1.0) - PI).abs() < 1e-14);
        assert_eq!(field_measure(&uniform2(), &[0.0, 0.0], 0.0), 0.0);
        // x0 -> 0 limit of the radial field: ∫_0^2 (1/ρ) 2πρ dρ = 4π
        let spec = TrapFieldSpec::new(2, TrapKind::Radial { l: 1.0, x0: 1e-12 }, 0.5).unwrap();
        assert!((field_measure(&spec, &[0.0, 0.0], 2.0) - 4.0 * PI).abs() < 1e-9);
        let spec = TrapFieldSpec::new(1, TrapKind::Radial { l: 1.0, x0: 0.01 }, 0.5).unwrap();
        assert!((field_measure(&spec, &[0.0], 5.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn off_center_radial_measure_matches_annuli() {
        // a ball that contains the origin: compare with a 2d polar sum
        let spec = TrapFieldSpec::new(2, TrapKind::Radial { l: 0.7, x0: 0.1 }, 0.5).unwrap();
        let c = [0.3, 0.4];
        let got = field_measure(&spec, &c, 1.2);
        // brute-force polar grid around the ball center
        let (nr, nt) = (4000, 4000);
        let mut acc = 0.0;
        for i in 0..nr {
            let r = (i as f64 + 0.5) * 1.2 / nr as f64;
            for j in 0..nt {
                let th = (j as f64 + 0.5) * 2.0 * PI / nt as f64;
                let x = [c[0] + r * th.cos(), c[1] + r * th.sin()];
                acc += spec.intensity(norm(&x)) * r;
            }
        }
        acc *= (1.2 / nr as f64) * (2.0 * PI / nt as f64);
        assert!((got - acc).abs() / acc < 1e-4, "{got} vs {acc}");
        // far ball in d=3
        let spec3 = TrapFieldSpec::new(3, TrapKind::Radial { l: 1.0, x0: 0.01 }, 0.5).unwrap();
        let m = field_measure(&spec3, &[5.0, 0.0, 0.0], 0.1);
        let approx = unit_ball_volume(3) * 0.001 / 25.0;
        assert!((m - approx).abs() / approx < 1e-3);
    }

    #[test]
    fn annuli_add_up() {
        for spec in [
            TrapFieldSpec::new(3, TrapKind::Radial { l: 0.3, x0: 0.2 }, 0.5).unwrap(),
            TrapFieldSpec::new(2, TrapKind::Radial { l: 2.0, x0: 0.05 }, 0.5).unwrap(),
            TrapFieldSpec::uniform(3, 0.4, 0.5).unwrap(),
        ] {
            let edges = [0.0, 0.1, 0.2, 0.7, 1.5, 4.0];
            let sum: f64 = edges.windows(2).map(|w| annulus_measure(&spec, w[0], w[1])).sum();
            let ball = field_measure(&spec, &vec![0.0; spec.d], 4.0);
            assert!((sum - ball).abs() <= 1e-9 * ball, "{sum} vs {ball}");
        }
    }

    #[test]
    fn clearing_examples() {
        let s = uniform2();
        assert_eq!(clearing_probability(&s, &[0.0, 0.0], 0.0, ClearMode::PointFree), 1.0);
        assert!((clearing_probability(&s, &[0.0, 0.0], 1.0, ClearMode::PointFree) - 0.043_213_918).abs() < 1e-8);
        let p = clearing_probability(&s, &[0.0, 0.0], 1.0, ClearMode::TrapSetFree);
        assert!((p - (-2.25 * PI).exp()).abs() < 1e-15);
    }

    #[test]
    fn trap_free_queries() {
        let spec = TrapFieldSpec::uniform(2, 1.0, 0.1).unwrap();
        let empty = TrapField::from_centers(spec, &[], 10.0).unwrap();
        assert!(empty.is_trap_free(&[0.0, 0.0], 1.0, ClearMode::TrapSetFree).unwrap());
        let near = TrapField::from_centers(spec, &[vec![1.05, 0.0]], 10.0).unwrap();
        let far = TrapField::from_centers(spec, &[vec![0.0, 1.2]], 10.0).unwrap();
        assert!(!near.is_trap_free(&[0.0, 0.0], 1.0, ClearMode::TrapSetFree).unwrap());
        assert!(near.is_trap_free(&[0.0, 0.0], 1.0, ClearMode::PointFree).unwrap());
        assert!(far.is_trap_free(&[0.0, 0.0], 1.0, ClearMode::TrapSetFree).unwrap());
        assert!(matches!(far.is_trap_free(&[9.5, 0.0], 1.0, ClearMode::TrapSetFree), Err(Error::Window { .. })));
    }

    #[test]
    fn segment_examples() {
        let spec1 = TrapFieldSpec::uniform(1, 1.0, 0.25).unwrap();
        let field = TrapField::from_centers(spec1, &[vec![1.0]], 10.0).unwrap();
        let mut rng = stream(3);
        // starts inside
        assert_eq!(field.segment_hit_with(&[0.9], &[0.0], 0.01, |_| 1.0).unwrap(), Some(SegmentHit::AtStart));
        // jumps across the trap in 1d
        assert!(segment_hits_trap(&field, &[0.5], &[1.5], 0.01, &mut rng).unwrap());
        // far away
        assert!(!segment_hits_trap(&field, &[-1.0], &[-0.9], 0.01, &mut rng).unwrap());
        let empty = TrapField::from_centers(spec1, &[], 10.0).unwrap();
        assert!(!segment_hits_trap(&empty, &[0.5], &[1.5], 0.01, &mut rng).unwrap());
        assert!(matches!(segment_hits_trap(&field, &[9.9], &[9.8], 0.01, &mut rng), Err(Error::Window { .. })));
    }

    #[test]
    fn straight_path_refinement_converges_to_geometry() {
        let spec = TrapFieldSpec::uniform(2, 1.0, 0.3).unwrap();
        let field = TrapField::from_centers(spec, &[vec![1.0, 0.5]], 10.0).unwrap();
        // path along the x-axis: misses when 0.5 > 0.3 ... and hits when shifted
        for (offset, expect) in [(0.0, false), (0.35, true)] {
            let n = 20_000;
            let dt = 1.0 / n as f64;
            let mut rng = stream(5);
            let hit = (0..n).any(|i| {
                let x0 = [-1.0 + 3.0 * i as f64 / n as f64, offset];
                let x1 = [-1.0 + 3.0 * (i + 1) as f64 / n as f64, offset];
                segment_hits_trap(&field, &x0, &x1, dt, &mut rng).unwrap()
            });
            assert_eq!(hit, expect);
        }
    }

    #[test]
    fn sampled_fields_are_in_window_and_poisson() {
        let mut rng = stream(11);
        let spec = TrapFieldSpec::uniform(2, 1.0, 0.5).unwrap();
        let n = 10_000;
        let counts: Vec<f64> = (0..n).map(|_| sample_field(&spec, 3.0, &mut rng).unwrap().len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = 9.0 * PI;
        assert!((mean - expect).abs() < 3.0 * (expect / n as f64).sqrt(), "{mean}");
        assert!((0.9..1.1).contains(&(var / mean)));
        let f = sample_field(&spec, 3.0, &mut rng).unwrap();
        assert!(f.centers().all(|c| norm(c) <= 3.0));
        let zero = TrapFieldSpec::uniform(2, 0.0, 0.5).unwrap();
        assert!(sample_field(&zero, 3.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn grid_finds_everything_brute_force_does() {
        let mut rng = stream(2);
        for d in 1..=4 {
            let spec = TrapFieldSpec::uniform(d, 2.0, 0.2).unwrap();
            let f = sample_field(&spec, 2.0, &mut rng).unwrap();
            for _ in 0..200 {
                let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                let r = rng.random_range(0.0..0.4);
                let brute = f.centers().any(|c| dist(&p, c) <= r);
                let grid = f.grid.visit_near(&p, r, |j| dist(&p, f.center(j)) <= r);
                assert_eq!(brute, grid);
            }
        }
    }
}
