//! Deterministic numerics for the decay rates.
//!
//! The central object is
//!
//! ```text
//! I = min_{η∈[0,1], c∈[0,√(2β)]}  βαη + c²/(2η) + l·g_d(√(2βm)(1−η), c)
//! g_d(r, b) = ∫_{B(0,r)} |x + b e|^{1−d} dx
//! ```
//!
//! with `c²/(2η)` read as 0 at `(0, 0)` and as `+∞` at `(0, c > 0)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{sphere_fraction_in_ball, unit_sphere_area};
use crate::quadrature::integrate;

/// `∫_{B(0,r)} |x + b e|^{1−d} dx` to absolute accuracy `tol`.
///
/// In polar coordinates around the singular point `-be` the weight `ρ^{1−d}`
/// cancels the surface element, leaving `s_d ∫ A(ρ) dρ` where `A(ρ)` is the
/// fraction of the `ρ`-sphere that lies in the ball. Spheres with
/// `ρ < r − b` are entirely inside; the rest is a smooth 1d integral once the
/// square-root behaviour at both ends is removed by `ρ = lo + w(1 − cos φ)/2`.
pub fn g_d(d: usize, r: f64, b: f64, tol: f64) -> f64 {
    if !(r > 0.0) {
        return 0.0;
    }
    if d == 1 {
        return 2.0 * r;
    }
    let b = b.abs();
    let s = unit_sphere_area(d);
    let full = (r - b).max(0.0);
    if b == 0.0 {
        return s * r;
    }
    let lo = (r - b).abs();
    let hi = r + b;
    let w = hi - lo;
    let q = integrate(
        |phi: f64| {
            let rho = lo + 0.5 * w * (1.0 - phi.cos());
            sphere_fraction_in_ball(d, rho, b, r) * 0.5 * w * phi.sin()
        },
        0.0,
        std::f64::consts::PI,
        &[],
        (tol / s).max(1e-15 * w),
        0.0,
    );
    s * (full + q.value)
}

/// Parameters of the variational problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateProblem {
    pub l: f64,
    pub beta: f64,
    pub m: f64,
    pub alpha: f64,
    pub d: usize,
}

const G_TOL: f64 = 1e-12;

impl RateProblem {
    pub fn new(l: f64, beta: f64, m: f64, alpha: f64, d: usize) -> Result<Self> {
        let p = Self { l, beta, m, alpha, d };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        if !(self.l > 0.0 && self.beta > 0.0 && self.m > 0.0 && self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::domain(format!(
                "need l > 0, beta > 0, m > 0, 0 < alpha <= 1; got l = {}, beta = {}, m = {}, alpha = {}",
                self.l, self.beta, self.m, self.alpha
            )));
        }
        Ok(())
    }

    /// Upper end of the speed interval, `√(2β)`.
    pub fn c_max(&self) -> f64 {
        (2.0 * self.beta).sqrt()
    }

    /// Linear spread `√(2βm)`.
    pub fn spread(&self) -> f64 {
        (2.0 * self.beta * self.m).sqrt()
    }

    pub fn objective(&self, eta: f64, c: f64) -> f64 {
        if !(0.0..=1.0).contains(&eta) {
            return f64::INFINITY;
        }
        let drift = if eta == 0.0 {
            if c == 0.0 {
                0.0
            } else {
                return f64::INFINITY;
            }
        } else {
            c * c / (2.0 * eta)
        };
        self.beta * self.alpha * eta + drift + self.l * g_d(self.d, self.spread() * (1.0 - eta), c, G_TOL)
    }
}

/// Objective of the variational problem at `(eta, c)`.
pub fn objective(eta: f64, c: f64, l: f64, beta: f64, m: f64, alpha: f64, d: usize) -> f64 {
    RateProblem { l, beta, m, alpha, d }.objective(eta, c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    #[serde(rename = "I")]
    pub value: f64,
    pub eta_star: f64,
    pub c_star: f64,
    /// Coordinate-refinement passes used.
    pub refinement_passes: usize,
    /// Best value on the coarse grid.
    pub grid_value: f64,
    /// `grid_value - value`, the improvement certified by refinement.
    pub certified_gap: f64,
}

const GRID: usize = 64;
const STARTS: usize = 3;
const MAX_PASSES: usize = 500;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of `f` on `[lo, hi]`, finished by comparing
/// with both ends (ties go to the lower end).
fn golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > xtol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [hi, lo] {
        let v = f(x);
        if v <= best.1 {
            best = (x, v);
        }
    }
    best
}

fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    // (value, eta, c): smaller value, then smaller η, then smaller c
    let scale = 1e-14 * a.0.abs().max(b.0.abs()).max(1.0);
    if (a.0 - b.0).abs() > scale {
        return a.0 < b.0;
    }
    (a.1, a.2) < (b.1, b.2)
}

pub fn minimize_variational(problem: &RateProblem, tol: f64) -> Result<RateResult> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let c_max = problem.c_max();
    let eta_at = |i: usize| i as f64 / (GRID - 1) as f64;
    let c_at = |j: usize| c_max * j as f64 / (GRID - 1) as f64;

    let mut grid = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            grid.push((problem.objective(eta_at(i), c_at(j)), i, j));
        }
    }
    // stable sort keeps the (η, c) order among equal values
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&x, &y| grid[x].0.total_cmp(&grid[y].0));
    let grid_value = grid[order[0]].0;

    let xtol = (tol * 1e-2).max(1e-12);
    // objective noise of order G_TOL blurs the minimizer's position by ~√G_TOL
    let settled = tol.sqrt().max(G_TOL.sqrt());
    let mut best: Option<(f64, f64, f64)> = None;
    let mut passes_used = 0;
    for &start in order.iter().take(STARTS) {
        let (_, i0, j0) = grid[start];
        let (mut eta, mut c) = (eta_at(i0), c_at(j0));
        let mut value = grid[start].0;
        let cell_eta = 1.0 / (GRID - 1) as f64;
        let cell_c = c_max / (GRID - 1) as f64;
        let mut eta_box = ((eta - cell_eta).max(0.0), (eta + cell_eta).min(1.0));
        let mut c_box = ((c - cell_c).max(0.0), (c + cell_c).min(c_max));
        let mut converged = false;
        let recenter = |e: f64, c: f64| {
            (
                ((e - cell_eta).max(0.0), (e + cell_eta).min(1.0)),
                ((c - cell_c).max(0.0), (c + cell_c).min(c_max)),
            )
        };
        for pass in 1..=MAX_PASSES {
            let (e_new, _) = golden(|e| problem.objective(e, c), eta_box.0, eta_box.1, xtol);
            let (c_new, mut v_new) = golden(|x| problem.objective(e_new, x), c_box.0, c_box.1, xtol);
            let (mut e_next, mut c_next) = (e_new, c_new);
            // line search along the net move of this pass
            let (de, dc) = (e_new - eta, c_new - c);
            if de != 0.0 || dc != 0.0 {
                let reach = |x: f64, dx: f64, hi: f64| {
                    if dx > 0.0 {
                        (hi - x) / dx
                    } else if dx < 0.0 {
                        -x / dx
                    } else {
                        f64::INFINITY
                    }
                };
                let s_max = reach(eta, de, 1.0).min(reach(c, dc, c_max));
                if s_max > 1.0 {
                    let along = |s: f64| {
                        problem.objective((eta + s * de).clamp(0.0, 1.0), (c + s * dc).clamp(0.0, c_max))
                    };
                    let (s, v) = golden(along, 0.0, s_max, xtol / de.abs().max(dc.abs()));
                    if v < v_new {
                        e_next = (eta + s * de).clamp(0.0, 1.0);
                        c_next = (c + s * dc).clamp(0.0, c_max);
                        v_new = v;
                    }
                }
            }
            let moved = (e_next - eta).abs().max((c_next - c).abs());
            let improved = value - v_new;
            if v_new <= value {
                eta = e_next;
                c = c_next;
                value = v_new;
            }
            // slide the search box when the iterate sits on (or beyond) an interior edge
            let on_edge = |x: f64, bx: (f64, f64), lo: f64, hi: f64| {
                (x <= bx.0 + xtol && bx.0 > lo) || (x >= bx.1 - xtol && bx.1 < hi)
            };
            let slide = on_edge(eta, eta_box, 0.0, 1.0) || on_edge(c, c_box, 0.0, c_max);
            if slide {
                (eta_box, c_box) = recenter(eta, c);
            }
            passes_used = passes_used.max(pass);
            if !slide && improved.abs() <= tol * 1e-3 && moved <= settled {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "coordinate refinement did not settle within {MAX_PASSES} passes (l = {})",
                problem.l
            )));
        }
        let cand = (value, eta, c);
        if best.is_none_or(|b| better(cand, b)) {
            best = Some(cand);
        }
    }
    let (value, eta_star, c_star) = best.expect("at least one start");
    Ok(RateResult {
        value,
        eta_star,
        c_star,
        refinement_passes: passes_used,
        grid_value,
        certified_gap: grid_value - value,
    })
}

/// Crossover intensity. In `d = 1` the closed form `(α/2)·√(β/(2m))`; in
/// higher dimension the bisection point where `η*` leaves zero.
pub fn critical_intensity(beta: f64, m: f64, alpha: f64, d: usize, tol: f64) -> Result<f64> {
    if d == 1 {
        RateProblem::new(1.0, beta, m, alpha, d)?;
        return Ok(0.5 * alpha * (beta / (2.0 * m)).sqrt());
    }
    critical_intensity_bisect(beta, m, alpha, d, tol)
}

/// Operational crossover: smallest `l` (to within `tol`) at which the
/// minimizing `η*` exceeds `10·tol`.
pub fn critical_intensity_bisect(beta: f64, m: f64, alpha: f64, d: usize, tol: f64) -> Result<f64> {
    let suppressed = |l: f64| -> Result<bool> {
        let r = minimize_variational(&RateProblem::new(l, beta, m, alpha, d)?, tol)?;
        Ok(r.eta_star > 10.0 * tol)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while !suppressed(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Convergence("no branching suppression for l up to 1e6".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if suppressed(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Decay exponent `βα` in a uniform field.
pub fn uniform_rate(beta: f64, alpha: f64) -> f64 {
    beta * alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma1Bound {
    /// `βε(√(m²+m) − m)`.
    pub bound: f64,
    /// `m + √(m²+m)`.
    pub optimal_k: f64,
}

/// Survival-exponent bound for clearing a ball of radius `√(2βm)εt` in a uniform field.
pub fn lemma1_bound(beta: f64, m: f64, epsilon: f64) -> Result<Lemma1Bound> {
    if !(beta > 0.0 && m > 0.0 && epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::domain(format!("need beta > 0, m > 0, 0 < epsilon <= 1; got {beta}, {m}, {epsilon}")));
    }
    let root = (m * m + m).sqrt();
    // √(m²+m) − m without cancellation
    let gap = m / (root + m);
    Ok(Lemma1Bound { bound: beta * epsilon * gap, optimal_k: m + root })
}
