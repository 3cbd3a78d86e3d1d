use bbmtraps::estimate::{
    estimate_annealed_survival, estimate_conditional_population, estimate_conditional_range,
    estimate_survival_curve, estimate_trap_presence_given_survival, EstimateResult, RadiusRule,
};
use bbmtraps::parallel::with_workers;
use bbmtraps::traps::clearing_probability;
use bbmtraps::{BranchingParams, ClearMode, MCConfig, OffspringLaw, SimulationConfig, TrapFieldSpec, TrapKind};

fn dyadic_cfg(d: usize, horizon: f64, dt: f64, traps: TrapFieldSpec, n: usize, seed: u64) -> MCConfig {
    MCConfig::new(n, seed, SimulationConfig::new(BranchingParams::dyadic(1.0), d, horizon, dt), traps)
}

fn same(a: &EstimateResult, b: &EstimateResult) -> bool {
    (a.estimate.to_bits(), a.std_error.to_bits(), a.n_total, a.n_accepted, a.n_truncated)
        == (b.estimate.to_bits(), b.std_error.to_bits(), b.n_total, b.n_accepted, b.n_truncated)
}

#[test]
fn nearly_empty_field_survives_at_time_zero() {
    let cfg = dyadic_cfg(2, 1.0, 0.02, TrapFieldSpec::uniform(2, 1e-4, 0.5).unwrap(), 2000, 1);
    let r = estimate_annealed_survival(&cfg, 0.0).unwrap();
    assert!(r.estimate >= 0.995, "{r:?}");
}

#[test]
fn no_traps_and_no_deaths_survive_exactly() {
    let cfg = dyadic_cfg(3, 2.0, 0.05, TrapFieldSpec::uniform(3, 0.0, 0.5).unwrap(), 500, 2);
    let r = estimate_annealed_survival(&cfg, 2.0).unwrap();
    assert_eq!(r.estimate, 1.0);
    assert_eq!(r.n_accepted, 500);
}

#[test]
fn survival_rates_agree_with_a_refined_reference_run() {
    let traps = TrapFieldSpec::uniform(2, 0.5, 0.5).unwrap();
    let dt = bbmtraps::sim::default_dt(0.5, 2);
    let times = [1.0, 2.0, 3.0, 4.0];
    let coarse = estimate_survival_curve(&dyadic_cfg(2, 4.0, dt, traps, 20_000, 11), &times).unwrap();
    let fine = estimate_survival_curve(&dyadic_cfg(2, 4.0, dt / 2.0, traps, 80_000, 12), &times).unwrap();
    for (c, f) in coarse.iter().zip(&fine) {
        let se = (c.std_error.powi(2) + f.std_error.powi(2)).sqrt();
        println!("t = {}: -log(P)/t = {:.4} (reference {:.4})", c.t, -c.estimate.ln() / c.t, -f.estimate.ln() / f.t);
        assert!((c.estimate - f.estimate).abs() <= 3.0 * se, "t = {}: {} vs {}", c.t, c.estimate, f.estimate);
    }
    assert!(coarse.windows(2).all(|w| w[1].estimate <= w[0].estimate));
    // the empirical rate moves toward βα = 1, here from above
    let rate = |r: &EstimateResult| -r.estimate.ln() / r.t;
    assert!(fine.windows(2).all(|w| rate(&w[1]) < rate(&w[0]) && rate(&w[1]) > 1.0));
}

#[test]
fn vacuous_conditioning_gives_the_yule_single_particle_probability() {
    let cfg = dyadic_cfg(2, 2.0, 0.05, TrapFieldSpec::uniform(2, 0.0, 0.5).unwrap(), 8000, 3).conditioned_on_survival(2.0);
    let p = estimate_conditional_population(&cfg, 2.0, 0.5).unwrap();
    let exact = (-1f64).exp();
    assert!((p.single.estimate - exact).abs() <= 3.0 * p.single.std_error, "{:?}", p.single);
    assert_eq!(p.single.n_accepted, 8000);
}

#[test]
fn range_is_certain_beyond_the_window() {
    let traps = TrapFieldSpec::uniform(2, 0.2, 0.3).unwrap();
    let cfg = dyadic_cfg(2, 2.0, 0.02, traps, 300, 4).conditioned_on_survival(2.0);
    let eps = cfg.window() / 2.0;
    let r = estimate_conditional_range(&cfg, 2.0, eps).unwrap();
    assert_eq!(r.estimate, 1.0);
}

/// `P(sup_{s<=1} |B_s| <= x)`.
fn brownian_sup_cdf(x: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (0..50)
        .map(|k| {
            let j = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * 4.0 / (pi * j) * (-(j * j) * pi * pi / (8.0 * x * x)).exp()
        })
        .sum()
}

#[test]
fn single_brownian_range_matches_the_sup_norm_law() {
    let t = 4.0;
    let traps = TrapFieldSpec::uniform(1, 0.0, 0.1).unwrap();
    let cfg = |dt: f64, seed: u64| {
        let sim = SimulationConfig::new(BranchingParams::new(OffspringLaw::dyadic(), 0.0).unwrap(), 1, t, dt);
        MCConfig::new(20_000, seed, sim, traps)
    };
    let eps = 3.0 / t.sqrt();
    let coarse = estimate_conditional_range(&cfg(0.004, 5), t, eps).unwrap();
    let fine = estimate_conditional_range(&cfg(0.001, 6), t, eps).unwrap();
    let se = (coarse.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
    assert!((coarse.estimate - fine.estimate).abs() <= 3.0 * se, "{} vs {}", coarse.estimate, fine.estimate);
    // the discrete maximum only undershoots the true supremum
    let exact = brownian_sup_cdf(3.0);
    assert!(fine.estimate + 3.0 * fine.std_error >= exact, "{} vs {exact}", fine.estimate);
    assert!(fine.estimate - exact < 0.004);
}

#[test]
fn empty_field_never_meets_the_query_ball() {
    let cfg = dyadic_cfg(2, 2.0, 0.05, TrapFieldSpec::uniform(2, 0.0, 0.5).unwrap(), 200, 7).conditioned_on_survival(2.0);
    for rule in [RadiusRule::EpsT, RadiusRule::EpsTRootD] {
        assert_eq!(estimate_trap_presence_given_survival(&cfg, 2.0, 0.5, rule).unwrap().estimate, 0.0);
    }
}

#[test]
fn unconditioned_trap_presence_matches_clearing_probability() {
    let traps = TrapFieldSpec::uniform(2, 0.4, 0.3).unwrap();
    let cfg = dyadic_cfg(2, 2.0, 0.05, traps, 10_000, 8);
    let t = 2.0;
    let eps = 0.4;
    let r = estimate_trap_presence_given_survival(&cfg, t, eps, RadiusRule::EpsT).unwrap();
    let exact = 1.0 - clearing_probability(&traps, &[0.0, 0.0], eps * t, ClearMode::TrapSetFree);
    let se = (exact * (1.0 - exact) / 10_000.0).sqrt();
    assert!((r.estimate - exact).abs() <= 3.0 * se, "{} vs {exact}", r.estimate);
}

/// Survival is decreasing in the trap configuration and trap presence is
/// increasing, so by the Harris inequality conditioning can only lower it.
#[test]
fn survival_conditioning_never_favours_nearby_traps() {
    let traps = TrapFieldSpec::new(1, TrapKind::Radial { l: 0.5, x0: 0.0025 }, 0.25).unwrap();
    let t = 4.0;
    let base = dyadic_cfg(1, t, 0.005, traps, 20_000, 9);
    for eps in [0.25, 0.5, 1.0] {
        let uncond = estimate_trap_presence_given_survival(&base, t, eps, RadiusRule::EpsT).unwrap();
        let cond = estimate_trap_presence_given_survival(&base.clone().conditioned_on_survival(t), t, eps, RadiusRule::EpsT).unwrap();
        let se = (cond.std_error.powi(2) + uncond.std_error.powi(2)).sqrt();
        assert!(cond.estimate <= uncond.estimate + 3.0 * se, "eps {eps}: {} vs {}", cond.estimate, uncond.estimate);
    }
}

/// Directional form of "survival does not empty distant space" at t = 4.
/// The Harris inequality above forces the opposite sign at any finite time.
#[test]
#[ignore = "contradicted at finite t by the Harris inequality; the effect it probes is a t -> infinity limit"]
fn survival_does_not_clear_distant_space_in_one_dimension() {
    let traps = TrapFieldSpec::new(1, TrapKind::Radial { l: 0.5, x0: 0.0025 }, 0.25).unwrap();
    let t = 4.0;
    let base = dyadic_cfg(1, t, 0.005, traps, 20_000, 9);
    let uncond = estimate_trap_presence_given_survival(&base, t, 0.5, RadiusRule::EpsT).unwrap();
    let cond = estimate_trap_presence_given_survival(&base.clone().conditioned_on_survival(t), t, 0.5, RadiusRule::EpsT).unwrap();
    let se = (cond.std_error.powi(2) + uncond.std_error.powi(2)).sqrt();
    assert!(cond.estimate >= uncond.estimate - 3.0 * se, "{} vs {}", cond.estimate, uncond.estimate);
}

#[test]
fn survivors_stay_closer_to_the_origin() {
    let t = 3.0;
    let traps = TrapFieldSpec::uniform(2, 1.0, 0.5).unwrap();
    let base = dyadic_cfg(2, t, bbmtraps::sim::default_dt(0.5, 2), traps, 500_000, 14);
    let uncond = estimate_conditional_range(&MCConfig { replicates: 20_000, ..base.clone() }, t, 1.0).unwrap();
    let cond = estimate_conditional_range(&base.conditioned_on_survival(t), t, 1.0).unwrap();
    println!("conditional {:.4} ({} survivors), unconditioned {:.4}", cond.estimate, cond.n_accepted, uncond.estimate);
    let se = (cond.std_error.powi(2) + uncond.std_error.powi(2)).sqrt();
    assert!(cond.estimate - uncond.estimate > 3.0 * se);
}

#[test]
fn standard_error_shrinks_like_root_n() {
    let traps = TrapFieldSpec::uniform(2, 0.5, 0.5).unwrap();
    let small = estimate_annealed_survival(&dyadic_cfg(2, 1.0, 0.05, traps, 500, 13), 1.0).unwrap();
    let big = estimate_annealed_survival(&dyadic_cfg(2, 1.0, 0.05, traps, 8000, 13), 1.0).unwrap();
    let ratio = small.std_error / big.std_error;
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let law = OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap();
    let sim = SimulationConfig::new(BranchingParams::new(law, 1.0).unwrap(), 2, 2.0, 0.05);
    let cfg = MCConfig::new(600, 14, sim, TrapFieldSpec::uniform(2, 0.3, 0.4).unwrap());
    let run = |jobs| {
        with_workers(jobs, || {
            let s = estimate_survival_curve(&cfg, &[1.0, 2.0]).unwrap();
            let c = cfg.clone().conditioned_on_survival(2.0);
            let p = estimate_conditional_population(&c, 2.0, 0.5).unwrap();
            let r = estimate_conditional_range(&c, 2.0, 1.0).unwrap();
            (s, p, r)
        })
    };
    let (s1, p1, r1) = run(1);
    let (s3, p3, r3) = run(3);
    assert!(s1.iter().zip(&s3).all(|(a, b)| same(a, b)));
    assert_eq!(p1.histogram, p3.histogram);
    assert!(same(&p1.single, &p3.single) && same(&r1, &r3));
}

#[test]
fn coupled_survival_estimates_never_increase() {
    let law = OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap();
    let sim = SimulationConfig::new(BranchingParams::new(law, 1.0).unwrap(), 2, 3.0, 0.05);
    let cfg = MCConfig::new(2000, 15, sim, TrapFieldSpec::uniform(2, 0.3, 0.4).unwrap());
    let times: Vec<f64> = (0..=12).map(|k| 0.25 * k as f64).collect();
    let curve = estimate_survival_curve(&cfg, &times).unwrap();
    assert!(curve.windows(2).all(|w| w[1].n_accepted <= w[0].n_accepted));
}

#[test]
fn vacuous_conditioning_is_an_identity() {
    let cfg = dyadic_cfg(2, 1.5, 0.05, TrapFieldSpec::uniform(2, 0.0, 0.4).unwrap(), 400, 16);
    let cond = cfg.clone().conditioned_on_survival(1.5);
    let a = estimate_conditional_population(&cfg, 1.5, 0.5).unwrap();
    let b = estimate_conditional_population(&cond, 1.5, 0.5).unwrap();
    assert_eq!(a.histogram, b.histogram);
    assert!(same(&a.single, &b.single));
    assert!(same(&estimate_conditional_range(&cfg, 1.5, 0.8).unwrap(), &estimate_conditional_range(&cond, 1.5, 0.8).unwrap()));
    assert!(same(
        &estimate_trap_presence_given_survival(&cfg, 1.5, 0.3, RadiusRule::EpsT).unwrap(),
        &estimate_trap_presence_given_survival(&cond, 1.5, 0.3, RadiusRule::EpsT).unwrap()
    ));
}
