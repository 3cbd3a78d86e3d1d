//! Subcommand implementations.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use bbmtraps::branching::skeleton_decomposition;
use bbmtraps::estimate::{
    estimate_conditional_population, estimate_conditional_range, estimate_survival_curve,
    estimate_trap_presence_given_survival, run_replicate, Conditioning, EstimateResult, MCConfig,
};
use bbmtraps::rate::{critical_intensity, g_d, lemma1_bound, minimize_variational, uniform_rate, RateProblem};
use bbmtraps::rng::{replicate_key, tag};
use bbmtraps::sim::simulate_with_key;
use bbmtraps::{Error, TrapKind};

use crate::config::{ExperimentConfig, Statistic};
use crate::{Command, Failure, GdArgs, LcrArgs, ModelArgs, RateArgs, RunArgs, EXIT_ACCEPTANCE};

pub const RESULTS_HEADER: &str = "config_hash,t,statistic,estimate,stderr,n_total,n_accepted,seed";

pub fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Rate(a) => rate(a),
        Command::Gd(a) => gd(a),
        Command::Lcr(a) => lcr(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(crate::EXIT_CONFIG, "config", format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn emit(value: &Value, out: Option<&Path>, name: &str) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), text + "\n")?;
    }
    Ok(())
}

struct Model {
    d: usize,
    beta: f64,
    m: f64,
    alpha: f64,
    l: Option<f64>,
}

fn model(args: &ModelArgs, l_flag: Option<f64>) -> Result<Model, Failure> {
    let mut model = Model { d: 1, beta: 1.0, m: 1.0, alpha: 1.0, l: None };
    let mut have = (false, false, false);
    if let Some(path) = &args.config {
        let cfg = load(path)?;
        model.d = cfg.simulation.d;
        model.beta = cfg.beta;
        model.m = cfg.offspring.m();
        model.alpha = skeleton_decomposition(&cfg.params()?)?.alpha;
        if let Some(TrapKind::Radial { l, .. }) = cfg.traps.map(|t| t.kind) {
            model.l = Some(l);
        }
        have = (true, true, true);
    }
    if let Some(d) = args.d {
        model.d = d;
        have.0 = true;
    }
    if let Some(beta) = args.beta {
        model.beta = beta;
        have.1 = true;
    }
    if let Some(m) = args.m {
        model.m = m;
        have.2 = true;
    }
    if let Some(alpha) = args.alpha {
        model.alpha = alpha;
    }
    if l_flag.is_some() {
        model.l = l_flag;
    }
    let missing: Vec<&str> = [(have.0, "--d"), (have.1, "--beta"), (have.2, "--m")]
        .into_iter()
        .filter_map(|(ok, name)| (!ok).then_some(name))
        .collect();
    if !missing.is_empty() {
        return Err(Failure::new(crate::EXIT_CONFIG, "usage", format!("missing {} (or --config)", missing.join(", "))));
    }
    Ok(model)
}

fn rate(args: RateArgs) -> Result<(), Failure> {
    if !args.sweep.is_empty() {
        return sweep(&args);
    }
    let m = model(&args.model, args.l)?;
    let l = m.l.ok_or_else(|| Failure::new(crate::EXIT_CONFIG, "usage", "missing --l (or a radial field in --config)"))?;
    let problem = RateProblem::new(l, m.beta, m.m, m.alpha, m.d)?;
    let tol = args.model.tol;
    let r = minimize_variational(&problem, tol)?;
    let mut out = serde_json::to_value(r).expect("rate result serializes");
    let extra = json!({
        "l_cr": critical_intensity(m.beta, m.m, m.alpha, m.d, tol)?,
        "uniform_rate": uniform_rate(m.beta, m.alpha),
        "params": {"d": m.d, "beta": m.beta, "m": m.m, "alpha": m.alpha, "l": l},
    });
    merge(&mut out, extra);
    if let Some(eps) = args.epsilon {
        let b = lemma1_bound(m.beta, m.m, eps)?;
        merge(&mut out, json!({"lemma1": {"epsilon": eps, "bound": b.bound, "optimal_k": b.optimal_k}}));
    }
    emit(&out, args.model.out.as_deref(), "rate.json")
}

/// One CSV row `l,I,eta_star,c_star` per intensity.
fn sweep(args: &RateArgs) -> Result<(), Failure> {
    let m = model(&args.model, None)?;
    let mut text = String::from("l,I,eta_star,c_star\n");
    for &l in &args.sweep {
        let r = minimize_variational(&RateProblem::new(l, m.beta, m.m, m.alpha, m.d)?, args.model.tol)?;
        text.push_str(&format!("{l},{},{},{}\n", r.value, r.eta_star, r.c_star));
    }
    if let Err(e) = std::io::stdout().lock().write_all(text.as_bytes()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if let Some(dir) = &args.model.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rate_sweep.csv"), text)?;
    }
    Ok(())
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn gd(args: GdArgs) -> Result<(), Failure> {
    if args.d == 0 || !(args.r >= 0.0 && args.r.is_finite()) || !args.b.is_finite() || !(args.tol > 0.0) {
        return Err(Error::Domain(format!("need d >= 1, finite r >= 0, finite b, tol > 0; got d = {}, r = {}, b = {}", args.d, args.r, args.b)).into());
    }
    let g = g_d(args.d, args.r, args.b, args.tol);
    emit(&json!({"d": args.d, "r": args.r, "b": args.b, "g": g}), args.out.as_deref(), "gd.json")
}

fn lcr(args: LcrArgs) -> Result<(), Failure> {
    let m = model(&args.model, None)?;
    let l_cr = critical_intensity(m.beta, m.m, m.alpha, m.d, args.model.tol)?;
    let out = json!({"l_cr": l_cr, "d": m.d, "beta": m.beta, "m": m.m, "alpha": m.alpha});
    emit(&out, args.model.out.as_deref(), "lcr.json")
}

struct Prepared {
    cfg: ExperimentConfig,
    hash: String,
    seed: u64,
    dir: PathBuf,
}

fn prepare(args: &RunArgs) -> Result<Prepared, Failure> {
    let raw = load(&args.config)?;
    let cfg = raw.resolved(args.seed)?;
    let hash = cfg.hash();
    let seed = args.seed.or(cfg.estimation.as_ref().map(|e| e.seed)).unwrap_or(0);
    let dir = args.out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("resolved_config.json"), serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n")?;
    Ok(Prepared { cfg, hash, seed, dir })
}

fn mc_config(p: &Prepared) -> Result<MCConfig, Failure> {
    let traps = p.cfg.traps.ok_or_else(|| Error::Config("a `traps` section is required".into()))?;
    let (n, window) = match &p.cfg.estimation {
        Some(e) => (e.n, e.window_radius),
        None => (1, None),
    };
    let mut mc = MCConfig::new(n, p.seed, p.cfg.simulation_config()?, traps);
    mc.window_radius = window;
    Ok(mc)
}

fn create(path: PathBuf) -> Result<BufWriter<fs::File>, Failure> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn simulate(args: RunArgs) -> Result<(), Failure> {
    let p = prepare(&args)?;
    let sim = p.cfg.simulation_config()?;
    let (tree, trap_time, field) = if p.cfg.traps.is_some() {
        let rep = run_replicate(&mc_config(&p)?, 0, true)?;
        (rep.run.tree, rep.run.trap_time, Some(rep.field))
    } else {
        (simulate_with_key(&sim, replicate_key(p.seed, 0, tag::TREE))?, None, None)
    };
    if args.strict && tree.truncated() {
        return Err(Error::Capacity { cap: sim.max_particles }.into());
    }
    if tree.truncated() {
        log::warn!("tree capped at {} particles", sim.max_particles);
    }
    let (total, skeleton, doomed) = tree.population_at(sim.horizon);
    let summary = json!({
        "config_hash": p.hash,
        "seed": p.seed,
        "horizon": sim.horizon,
        "particles": tree.particles().len(),
        "truncated": tree.truncated(),
        "observed_until": tree.observed_until(),
        "extinction_time": tree.extinction_time(),
        "survives_lookahead": tree.survives_lookahead(sim.horizon),
        "population": {"total": total, "skeleton": skeleton, "doomed": doomed},
        "range_radius": tree.range_radius(sim.horizon),
        "trap_time": trap_time,
        "traps": field.as_ref().map(|f| f.len()),
    });
    if args.dump || p.cfg.output.dump {
        let mut w = create(p.dir.join("tree.csv"))?;
        tree.write_tree_csv(&mut w)?;
        w.flush()?;
        let mut w = create(p.dir.join("trajectories.csv"))?;
        tree.write_trajectories_csv(&mut w)?;
        w.flush()?;
        if let Some(f) = &field {
            let mut w = create(p.dir.join("traps.csv"))?;
            f.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    emit(&summary, Some(&p.dir), "summary.json")
}

struct Row {
    result: EstimateResult,
    extra: Option<Value>,
}

fn estimate(args: RunArgs) -> Result<(), Failure> {
    let p = prepare(&args)?;
    let est = p.cfg.estimation.clone().ok_or_else(|| Error::Config("an `estimation` section is required".into()))?;
    let base = mc_config(&p)?;
    let conditioned = |t: f64, on: bool| MCConfig {
        conditioning: if on { Conditioning::SurvivalTo(t) } else { Conditioning::None },
        ..base.clone()
    };

    let survival_times: Vec<f64> = est
        .statistics
        .iter()
        .filter_map(|s| match s {
            Statistic::Survival { t } => Some(*t),
            _ => None,
        })
        .collect();
    let mut curve = if survival_times.is_empty() {
        Vec::new()
    } else {
        estimate_survival_curve(&base, &survival_times)?
    }
    .into_iter();

    let mut rows: Vec<Row> = Vec::new();
    for stat in &est.statistics {
        let start = rows.len();
        match *stat {
            Statistic::Survival { .. } => {
                rows.push(Row { result: curve.next().expect("one result per survival time"), extra: None })
            }
            Statistic::Population { t, s_fraction, conditioned: on } => {
                let pop = estimate_conditional_population(&conditioned(t, on), t, s_fraction)?;
                let histogram: Vec<Value> = pop.histogram.iter().map(|(k, c)| json!([k, c])).collect();
                let two_type: Option<Vec<Value>> = pop
                    .two_type_histogram
                    .as_ref()
                    .map(|h| h.iter().map(|((a, b), c)| json!([a, b, c])).collect());
                let extra = json!({"s_fraction": s_fraction, "histogram": histogram, "two_type_histogram": two_type});
                rows.push(Row { result: pop.single, extra: Some(extra) });
                for r in [pop.skeleton_single, pop.doomed_small].into_iter().flatten() {
                    rows.push(Row { result: r, extra: None });
                }
            }
            Statistic::Range { t, epsilon, conditioned: on } => {
                let r = estimate_conditional_range(&conditioned(t, on), t, epsilon)?;
                rows.push(Row { result: r, extra: Some(json!({"epsilon": epsilon})) });
            }
            Statistic::TrapPresence { t, epsilon, rule, conditioned: on } => {
                let r = estimate_trap_presence_given_survival(&conditioned(t, on), t, epsilon, rule)?;
                rows.push(Row { result: r, extra: Some(json!({"epsilon": epsilon, "rule": rule})) });
            }
        }
        if !stat.conditioned() {
            for r in &mut rows[start..] {
                r.result.statistic.push_str("_unconditioned");
            }
        }
    }

    let warnings: Vec<&String> = rows.iter().flat_map(|r| &r.result.warnings).collect();
    if args.strict && !warnings.is_empty() {
        let msg = warnings.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ");
        return Err(Failure::new(EXIT_ACCEPTANCE, "acceptance", msg));
    }

    append_results(&p.dir.join("results.csv"), &p.hash, &rows)?;
    let records: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(&r.result).expect("result serializes");
            merge(&mut v, json!({"config_hash": p.hash}));
            if let Some(extra) = &r.extra {
                merge(&mut v, extra.clone());
            }
            v
        })
        .collect();
    emit(&Value::Array(records), Some(&p.dir), "results.json")
}

/// Append one CSV row per result; writes the header when the file is new.
fn append_results(path: &Path, hash: &str, rows: &[Row]) -> Result<(), Failure> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(w, "{RESULTS_HEADER}")?;
    }
    for Row { result: r, .. } in rows {
        writeln!(
            w,
            "{hash},{},{},{},{},{},{},{}",
            r.t, r.statistic, r.estimate, r.std_error, r.n_total, r.n_accepted, r.seed
        )?;
    }
    w.flush()?;
    Ok(())
}
