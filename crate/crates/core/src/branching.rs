//! Offspring laws, extinction, the skeleton/doomed decomposition and the
//! space-free population process.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// A finitely supported offspring distribution `(p_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct OffspringLaw {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl OffspringLaw {
    /// Build a law from `(k, p_k)` pairs. Rejects `p_1 > 0`.
    pub fn new<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Result<Self> {
        let law = Self::build(pairs)?;
        if law.p(1) > 0.0 {
            return Err(Error::InvalidLaw(format!("p_1 = {} must be zero", law.p(1))));
        }
        Ok(law)
    }

    /// Like [`OffspringLaw::new`] but admits `p_1 > 0`; used for the derived
    /// skeleton and doomed laws.
    pub fn with_unit_offspring<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Result<Self> {
        Self::build(pairs)
    }

    /// Strict binary splitting, `p_2 = 1`.
    pub fn dyadic() -> Self {
        Self::new([(2, 1.0)]).expect("valid law")
    }

    fn build<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Result<Self> {
        let mut probs: Vec<f64> = Vec::new();
        for (k, p) in pairs {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidLaw(format!("p_{k} = {p} is not a probability")));
            }
            let k = k as usize;
            if probs.len() <= k {
                probs.resize(k + 1, 0.0);
            }
            probs[k] += p;
        }
        while probs.len() > 1 && probs.last() == Some(&0.0) {
            probs.pop();
        }
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}, expected 1")));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("non-empty") = 1.0;
        Ok(Self { probs, cdf })
    }

    pub fn p(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_offspring(&self) -> usize {
        self.probs.len() - 1
    }

    /// `(k, p_k)` for every `k` with `p_k > 0`.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().copied().enumerate().filter(|&(_, p)| p > 0.0)
    }

    /// Generating function `f(s) = Σ p_k s^k`.
    pub fn pgf(&self, s: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, &p| acc * s + p)
    }

    /// `f'(s)`.
    pub fn pgf_derivative(&self, s: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &p)| acc * s + k as f64 * p)
    }

    /// `μ = f'(1)`.
    pub fn mean(&self) -> f64 {
        self.pgf_derivative(1.0)
    }

    /// `m = μ - 1`.
    pub fn m(&self) -> f64 {
        self.mean() - 1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }
}

impl TryFrom<BTreeMap<String, f64>> for OffspringLaw {
    type Error = Error;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self> {
        let pairs = map
            .into_iter()
            .map(|(k, p)| {
                k.trim()
                    .parse::<u32>()
                    .map(|k| (k, p))
                    .map_err(|_| Error::InvalidLaw(format!("offspring count {k:?} is not a non-negative integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs)
    }
}

impl From<OffspringLaw> for BTreeMap<String, f64> {
    fn from(law: OffspringLaw) -> Self {
        law.support().map(|(k, p)| (k.to_string(), p)).collect()
    }
}

/// Offspring law together with the branching rate β. `beta == 0` gives a
/// single Brownian particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingParams {
    pub law: OffspringLaw,
    pub beta: f64,
}

impl BranchingParams {
    pub fn new(law: OffspringLaw, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::domain(format!("branching rate must be finite and >= 0, got {beta}")));
        }
        Ok(Self { law, beta })
    }

    pub fn dyadic(beta: f64) -> Self {
        Self::new(OffspringLaw::dyadic(), beta).expect("valid rate")
    }

    pub fn lifetime(&self) -> Option<Exp<f64>> {
        (self.beta > 0.0).then(|| Exp::new(self.beta).expect("positive rate"))
    }
}

/// Smallest fixed point of the generating function on `[0, 1]`.
pub fn extinction_probability(law: &OffspringLaw, tol: f64) -> f64 {
    let tol = tol.max(f64::EPSILON);
    if law.p(0) == 0.0 {
        return 0.0;
    }
    if law.mean() <= 1.0 {
        return 1.0;
    }
    let gap = |s: f64| law.pgf(s) - s;
    // f is convex with f(0) > 0 and f'(1) > 1: f(s) - s changes sign once below 1
    let mut eps = 0.5;
    while gap(1.0 - eps) >= 0.0 && eps > 1e-15 {
        eps *= 0.5;
    }
    let (mut lo, mut hi) = (0.0, 1.0 - eps);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol * 1e-3 && gap(0.5 * (lo + hi)).abs() <= tol {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Parameters of the skeleton/doomed decomposition of a supercritical BBM.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonParams {
    pub q: f64,
    pub alpha: f64,
    pub effective_rate: f64,
    pub rho: f64,
    /// Number of skeleton children of a skeleton particle; p.g.f. `[f(q+(1-q)s) - q]/(1-q)`.
    pub skeleton_law: OffspringLaw,
    /// Offspring law inside doomed subtrees; p.g.f. `f(qs)/q`.
    pub doomed_law: OffspringLaw,
    /// Joint law of `(skeleton children, doomed children)` at a skeleton branch.
    joint: Vec<(u32, u32, f64)>,
}

impl SkeletonParams {
    /// Draw `(skeleton, doomed)` children for a branching skeleton particle.
    pub fn sample_branch<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(s, d, p) in &self.joint {
            acc += p;
            if u < acc {
                return (s as usize, d as usize);
            }
        }
        let &(s, d, _) = self.joint.last().expect("non-empty joint law");
        (s as usize, d as usize)
    }

    pub fn joint_law(&self) -> &[(u32, u32, f64)] {
        &self.joint
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn skeleton_decomposition(params: &BranchingParams) -> Result<SkeletonParams> {
    let law = &params.law;
    let mean = law.mean();
    if mean <= 1.0 {
        return Err(Error::Subcritical { mean });
    }
    let q = extinction_probability(law, 1e-14);
    let fq = law.pgf_derivative(q);
    let alpha = 1.0 - fq;
    let rho = (mean - fq) * q / (1.0 - q);

    // P(k children, j of them skeleton | skeleton parent) = p_k C(k,j) (1-q)^j q^(k-j) / (1-q), j >= 1
    let mut joint = Vec::new();
    let mut skeleton_counts = vec![0.0; law.max_offspring() + 1];
    for (k, pk) in law.support() {
        for j in 1..=k {
            let p = pk * binomial(k, j) * (1.0 - q).powi(j as i32) * q.powi((k - j) as i32) / (1.0 - q);
            if p > 0.0 {
                joint.push((j as u32, (k - j) as u32, p));
                skeleton_counts[j] += p;
            }
        }
    }
    let total: f64 = joint.iter().map(|e| e.2).sum();
    for e in &mut joint {
        e.2 /= total;
    }
    let skeleton_law =
        OffspringLaw::with_unit_offspring(skeleton_counts.iter().enumerate().map(|(j, &p)| (j as u32, p / total)))?;

    let doomed_law = if q > 0.0 {
        let raw: Vec<(u32, f64)> = law.support().map(|(k, pk)| (k as u32, pk * q.powi(k as i32 - 1))).collect();
        let z: f64 = raw.iter().map(|e| e.1).sum();
        OffspringLaw::with_unit_offspring(raw.into_iter().map(|(k, p)| (k, p / z)))?
    } else {
        OffspringLaw::with_unit_offspring([(0, 1.0)])?
    };

    Ok(SkeletonParams {
        q,
        alpha,
        effective_rate: params.beta * alpha,
        rho,
        skeleton_law,
        doomed_law,
        joint,
    })
}

/// `P(Ñ(t) > k) = (1 - e^{-βt})^k` for the Yule process.
pub fn yule_tail(beta: f64, t: f64, k: u32) -> f64 {
    (-(-beta * t).exp_m1()).powi(k as i32)
}

/// `P(N(t) = k) = e^{-βt}(1 - e^{-βt})^{k-1}` for the Yule process, `k >= 1`.
pub fn yule_pmf(beta: f64, t: f64, k: u32) -> f64 {
    if k == 0 {
        return 0.0;
    }
    (-beta * t).exp() * yule_tail(beta, t, k - 1)
}

/// `e^{βmt}`, an upper bound on the survival probability of a subcritical BBM.
pub fn subcritical_survival_bound(beta: f64, m: f64, t: f64) -> Result<f64> {
    if m >= 0.0 {
        return Err(Error::domain(format!("subcritical law required, got m = {m}")));
    }
    if !(beta > 0.0 && t >= 0.0) {
        return Err(Error::domain("need beta > 0 and t >= 0"));
    }
    Ok((beta * m * t).exp())
}

/// `k(z) = 1 - (1 + log z)/z`.
pub fn poisson_tail_exponent(z: f64) -> f64 {
    1.0 - (1.0 + z.ln()) / z
}

/// Upper bound `e^{-λ k(λ/x)}` on `P(Y >= x)` for `Y ~ Poisson(λ)`.
pub fn poisson_tail_bound(lambda: f64, x: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(x > lambda) {
        return Err(Error::domain(format!("need x > lambda, got x = {x}, lambda = {lambda}")));
    }
    Ok((-lambda * poisson_tail_exponent(lambda / x)).exp())
}

/// Population sizes `|Z(t)|` of one continuous-time Galton–Watson path at
/// each of the nondecreasing `times`.
pub fn sample_population_path<R: Rng + ?Sized>(params: &BranchingParams, times: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = Vec::with_capacity(times.len());
    let mut n: u64 = 1;
    let mut now = 0.0;
    let mut next = next_event(params.beta, n, now, rng);
    for &t in times {
        while next <= t {
            now = next;
            let k = params.law.sample(rng) as u64;
            n = n - 1 + k;
            next = next_event(params.beta, n, now, rng);
        }
        out.push(n);
    }
    out
}

fn next_event<R: Rng + ?Sized>(beta: f64, n: u64, now: f64, rng: &mut R) -> f64 {
    if n == 0 || beta == 0.0 {
        return f64::INFINITY;
    }
    now + Exp::new(beta * n as f64).expect("positive rate").sample(rng)
}

/// One draw of `|Z(t)|`.
pub fn sample_population<R: Rng + ?Sized>(params: &BranchingParams, t: f64, rng: &mut R) -> u64 {
    sample_population_path(params, &[t.max(0.0)], rng)[0]
}

/// Discrete-generation check used as an extinction oracle: `true` when the
/// Galton–Watson tree dies within `generations`. Populations reaching
/// `survive_at` are counted as surviving.
pub fn extinct_within_generations<R: Rng + ?Sized>(
    law: &OffspringLaw,
    generations: usize,
    survive_at: u64,
    rng: &mut R,
) -> bool {
    let mut n: u64 = 1;
    for _ in 0..generations {
        if n == 0 {
            return true;
        }
        if n >= survive_at {
            return false;
        }
        n = (0..n).map(|_| law.sample(rng) as u64).sum();
    }
    n == 0
}
