use bbmtraps::branching::{
    extinct_within_generations, extinction_probability, poisson_tail_bound, sample_population,
    sample_population_path, skeleton_decomposition, yule_pmf, yule_tail,
};
use bbmtraps::rng::stream;
use bbmtraps::{BranchingParams, OffspringLaw};
use proptest::prelude::*;
use rand::Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Finite law on {0, .., weights.len()-1} from unnormalized weights, with no mass at 1.
fn law_from(weights: &[f64]) -> OffspringLaw {
    let total: f64 = weights.iter().enumerate().filter(|(k, _)| *k != 1).map(|(_, w)| w).sum();
    OffspringLaw::new(
        weights.iter().enumerate().filter(|(k, _)| *k != 1).map(|(k, w)| (k as u32, w / total)),
    )
    .unwrap()
}

fn arb_law() -> impl Strategy<Value = OffspringLaw> {
    proptest::collection::vec(0.0f64..1.0, 3..7)
        .prop_filter("needs mass", |w| w.iter().enumerate().any(|(k, &x)| k != 1 && x > 1e-3))
        .prop_map(|w| law_from(&w))
}

fn arb_supercritical() -> impl Strategy<Value = OffspringLaw> {
    arb_law().prop_filter("supercritical", |l| l.mean() > 1.05)
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn extinction_is_a_fixed_point(law in arb_law()) {
        let tol = 1e-12;
        let q = extinction_probability(&law, tol);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!(law.pgf(q) <= q + tol);
        if law.mean() <= 1.0 {
            prop_assert_eq!(q, 1.0);
        } else {
            // smallest root: f(s) > s on [0, q)
            prop_assert!(law.pgf(0.5 * q) > 0.5 * q || q == 0.0);
        }
    }

    #[test]
    fn skeleton_law_is_supercritical_and_doomed_law_subcritical(law in arb_supercritical(), beta in 0.1f64..5.0) {
        let p = BranchingParams::new(law, beta).unwrap();
        let s = skeleton_decomposition(&p).unwrap();
        prop_assert!(s.skeleton_law.mean() > 1.0);
        prop_assert_eq!(s.skeleton_law.p(0), 0.0);
        prop_assert_eq!(extinction_probability(&s.skeleton_law, 1e-12), 0.0);
        if s.q > 0.0 {
            prop_assert!(s.doomed_law.mean() < 1.0);
        }
        let total: f64 = s.joint_law().iter().map(|&(_, _, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((s.alpha - (1.0 - p.law.pgf_derivative(s.q))).abs() < 1e-12);
        prop_assert!(s.alpha > 0.0 && s.alpha <= 1.0);
    }

    #[test]
    fn population_never_shrinks_without_deaths(w in proptest::collection::vec(0.0f64..1.0, 2..6), seed in any::<u64>()) {
        let mut weights = vec![0.0, 0.0];
        weights.extend(w.iter().map(|x| x + 1e-3));
        let p = BranchingParams::new(law_from(&weights), 1.0).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| 0.1 * k as f64).collect();
        let path = sample_population_path(&p, &times, &mut stream(seed));
        prop_assert_eq!(path[0], 1);
        prop_assert!(path.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn extinction_matches_galton_watson_frequency() {
    let mut gen = stream(0xe47);
    let runs = 1000;
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 1000 {
        let k = gen.random_range(3..7);
        let w: Vec<f64> = (0..k).map(|_| gen.random::<f64>()).collect();
        if !w.iter().enumerate().any(|(k, &x)| k != 1 && x > 1e-3) {
            continue;
        }
        let law = law_from(&w);
        if law.mean() < 1.3 {
            continue;
        }
        tested += 1;
        let q = extinction_probability(&law, 1e-12);
        let mut rng = stream(gen.random());
        let dead = (0..runs).filter(|_| extinct_within_generations(&law, 80, 150, &mut rng)).count();
        let freq = dead as f64 / runs as f64;
        let se = (q * (1.0 - q) / runs as f64).sqrt();
        let z = if se > 0.0 { (freq - q).abs() / se } else { (freq - q).abs() * f64::INFINITY };
        assert!(z <= 4.0 || freq == q, "law {law:?}: q = {q}, frequency = {freq}, z = {z}");
        worst = worst.max(if z.is_nan() { 0.0 } else { z });
    }
    println!("largest deviation over {tested} laws: {worst:.2} standard errors");
}

#[test]
fn dyadic_population_follows_the_yule_law() {
    let p = BranchingParams::dyadic(1.0);
    let mut rng = stream(2024);
    let n = 100_000;
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        *counts.entry(sample_population(&p, 1.0, &mut rng) as u32).or_insert(0usize) += 1;
    }
    let kmax = *counts.keys().max().unwrap() + 50;
    let mut tv = 0.0;
    let mut mass = 0.0;
    for k in 1..=kmax {
        let emp = *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
        let exact = yule_pmf(1.0, 1.0, k);
        mass += exact;
        tv += (emp - exact).abs();
    }
    tv = 0.5 * (tv + (1.0 - mass));
    assert!(tv <= 0.02, "total variation {tv}");
    // tail of the same sample
    let above3 = counts.range(4..).map(|(_, c)| *c).sum::<usize>() as f64 / n as f64;
    assert!((above3 - yule_tail(1.0, 1.0, 3)).abs() < 0.01);
}

#[test]
fn poisson_tail_bound_dominates_exact_tail() {
    for lambda in [1.0f64, 2.0, 5.0, 10.0] {
        for step in 1..=60 {
            let x = lambda * (1.0 + 3.0 * step as f64 / 60.0);
            // P(Y >= x) = 1 - sum_{k < x} e^{-λ} λ^k / k!
            let mut term = (-lambda).exp();
            let mut below = 0.0;
            let mut k = 0u32;
            while (k as f64) < x {
                below += term;
                k += 1;
                term *= lambda / k as f64;
            }
            let exact = (1.0 - below).max(0.0);
            let bound = poisson_tail_bound(lambda, x).unwrap();
            assert!(bound + 1e-12 >= exact, "λ = {lambda}, x = {x}: bound {bound} < tail {exact}");
        }
    }
}

#[test]
fn quarter_three_quarters_law_closed_forms() {
    let p = BranchingParams::new(OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap(), 1.0).unwrap();
    let s = skeleton_decomposition(&p).unwrap();
    assert!((s.q - 1.0 / 3.0).abs() < 1e-10);
    assert!((s.alpha - 0.5).abs() < 1e-10);
    assert!((s.rho - 0.5).abs() < 1e-10);
}
