//! Euclidean helpers shared by the trap field and the rate numerics.

use std::f64::consts::PI;

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// Surface measure of the unit sphere in R^d (`s_1 = 2`, `s_2 = 2π`, `s_3 = 4π`).
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// Fraction of the unit sphere in R^d on which the first coordinate is at least `t`.
fn polar_cap_fraction(d: usize, t: f64) -> f64 {
    if t <= -1.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    match d {
        1 => 0.5,
        2 => t.acos() / PI,
        3 => 0.5 * (1.0 - t),
        _ => {
            let upper = 0.5 * statrs::function::beta::beta_reg((d as f64 - 1.0) / 2.0, 0.5, 1.0 - t * t);
            if t >= 0.0 {
                upper
            } else {
                1.0 - upper
            }
        }
    }
}

/// Fraction of the sphere `|y| = rho` (centered at the origin) lying inside
/// the closed ball of radius `r` whose center is at distance `b` from the origin.
pub fn sphere_fraction_in_ball(d: usize, rho: f64, b: f64, r: f64) -> f64 {
    if rho <= 0.0 || b <= 0.0 {
        return if rho <= r - b.max(0.0) { 1.0 } else { 0.0 };
    }
    if d == 1 {
        // the "sphere" is {+rho, -rho}; the ball is [b - r, b + r]
        let plus = (rho - b).abs() <= r;
        let minus = rho + b <= r;
        return 0.5 * (plus as u8 + minus as u8) as f64;
    }
    let t = (rho * rho + b * b - r * r) / (2.0 * rho * b);
    polar_cap_fraction(d, t)
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for k in 0..p.len() {
        let ab = b[k] - a[k];
        ab2 += ab * ab;
        ap_ab += (p[k] - a[k]) * ab;
    }
    let s = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    p.iter()
        .zip(a.iter().zip(b))
        .map(|(pk, (ak, bk))| {
            let q = ak + s * (bk - ak);
            (pk - q) * (pk - q)
        })
        .sum::<f64>()
        .sqrt()
}
