//! Subcommand bodies. Each returns the process exit code on success.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use swcert::certify::{
    certify_with_lp, extract_attack, optimal_j_from_tables, plan_for_schedule, AttackPlan,
    LpChoice, StabilityCertificate, Verdict, DEFAULT_EPSILON,
};
use swcert::lifting::{build_gamma_tables, variable_counts, GammaTables};
use swcert::lpcore::{solve, verify_certificate};
use swcert::signals::{empirical_frequencies, limit_oracle, sample_signal, HiddenMarkovSpec, SignalSource};
use swcert::NormKind;

use crate::config::{self, NormField, ScenarioConfig};
use crate::{
    AnalysisFlags, AttackArgs, BenchArgs, CertifyArgs, LpDebugArgs, OracleArgs, SimulateArgs, SweepArgs,
    DEFAULT_SEED,
};

const DEFAULT_STEPS: usize = 10_000;

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::CertifiedStable => "certified_stable",
        Verdict::Inconclusive => "inconclusive",
    }
}

struct Settings {
    norm: NormKind,
    epsilon: f64,
    lp: LpChoice,
}

fn settings(flags: &AnalysisFlags, cfg: &ScenarioConfig) -> Result<Settings> {
    let norm = match (&flags.norm, &cfg.analysis.norm) {
        (Some(name), _) => NormField::Name(name.clone()).resolve()?,
        (None, Some(f)) => f.resolve()?,
        (None, None) => NormKind::Spectral,
    };
    let epsilon = flags.epsilon.or(cfg.analysis.epsilon).unwrap_or(DEFAULT_EPSILON);
    let lp = match flags.lp.or(cfg.analysis.lp).unwrap_or(2) {
        1 => LpChoice::Lp1,
        2 => LpChoice::Lp2,
        other => bail!("lp must be 1 or 2, got {other}"),
    };
    Ok(Settings { norm, epsilon, lp })
}

fn single_h(flags: &AnalysisFlags, cfg: &ScenarioConfig) -> Result<usize> {
    flags
        .h
        .or(cfg.analysis.h)
        .context("no horizon given: pass --h or set analysis.h")
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn certify(args: CertifyArgs) -> Result<u8> {
    let cfg = config::load(&args.analysis.config)?;
    let s = settings(&args.analysis, &cfg)?;
    let h = single_h(&args.analysis, &cfg)?;
    let (system, bounds) = cfg.scenario()?.build(&[])?;
    let cert = with_workers(args.analysis.workers, || -> Result<StabilityCertificate> {
        let tables = build_gamma_tables(&system, h, &s.norm, s.epsilon, s.lp == LpChoice::Lp1)?;
        Ok(certify_with_lp(&tables, &bounds, s.lp)?)
    })??;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&cert)?);
    } else {
        print_certificate(&cert, s.lp);
    }
    if let Some(p) = &args.out {
        write_json(p, &cert)?;
    }
    Ok(if cert.is_stable() { 0 } else { 2 })
}

fn print_certificate(c: &StabilityCertificate, lp: LpChoice) {
    let verdict = match c.verdict {
        Verdict::CertifiedStable => "certified stable",
        Verdict::Inconclusive => "inconclusive",
    };
    println!("verdict: {verdict}");
    println!(
        "J = {} (h = {}, norm = {}, epsilon = {:e}, lp = {})",
        num(c.j),
        c.h,
        c.norm.name(),
        c.epsilon,
        if lp == LpChoice::Lp1 { 1 } else { 2 }
    );
    println!("worst occupancy:");
    for (z, w) in &c.worst_occupancy {
        println!("  {z}  weight {}", num(*w));
    }
    println!("witness sequences:");
    for (q, w) in &c.witness_schedule {
        println!("  {q}  weight {}", num(*w));
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<f64>)> {
    let (name, values) = spec
        .split_once('=')
        .with_context(|| format!("grid axis `{spec}` is not of the form name=v1,v2,..."))?;
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().with_context(|| format!("bad value `{v}` for `{name}`")))
        .collect::<Result<Vec<_>>>()?;
    Ok((name.trim().to_string(), values))
}

/// Cartesian product in axis order, last axis fastest.
fn grid(axes: &[(String, Vec<f64>)]) -> Vec<Vec<(String, f64)>> {
    let mut cells = vec![Vec::new()];
    for (name, values) in axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for c in &cells {
            for &v in values {
                let mut c = c.clone();
                c.push((name.clone(), v));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

struct SweepRow {
    h: usize,
    params: Vec<f64>,
    j: Option<f64>,
    verdict: Option<Verdict>,
    status: String,
    wall_ms: f64,
}

pub fn sweep(args: SweepArgs) -> Result<u8> {
    let cfg = config::load(&args.analysis.config)?;
    let s = settings(&args.analysis, &cfg)?;
    let scenario = cfg.scenario()?;
    let axes: Vec<(String, Vec<f64>)> = if args.params.is_empty() {
        cfg.analysis.sweep.iter().map(|a| (a.param.clone(), a.values.clone())).collect()
    } else {
        args.params.iter().map(|p| parse_axis(p)).collect::<Result<_>>()?
    };
    let known = scenario.parameters();
    for (name, _) in &axes {
        if !known.contains(name) {
            bail!("unknown sweep parameter `{name}`; this scenario accepts {}", known.join(", "));
        }
    }
    let an = &cfg.analysis;
    let h_min = args.h_min.or(args.analysis.h).or(an.h_min).or(an.h).unwrap_or(1);
    let h_max = args
        .h_max
        .or(args.analysis.h)
        .or(an.h_max)
        .or(an.h)
        .context("no horizon range: pass --h-max or set analysis.h_max")?;
    let cells = grid(&axes);
    let (system, _) = scenario.build(&[])?;
    let materialize = s.lp == LpChoice::Lp1;

    let rows = with_workers(args.analysis.workers, || {
        let mut rows = Vec::new();
        if cells.is_empty() {
            return rows;
        }
        for h in h_min..=h_max {
            let t0 = Instant::now();
            // every sweepable parameter only moves the bounds, so one table serves the row
            let tables = build_gamma_tables(&system, h, &s.norm, s.epsilon, materialize);
            let build_ms = t0.elapsed().as_secs_f64() * 1e3;
            let row: Vec<SweepRow> = cells
                .par_iter()
                .map(|cell| sweep_cell(scenario, &tables, h, cell, s.lp, build_ms))
                .collect();
            rows.extend(row);
        }
        rows
    })?;

    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    let mut header = vec!["h".to_string()];
    header.extend(axes.iter().map(|(n, _)| n.clone()));
    header.extend(["j", "verdict", "status", "wall_ms"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.h.to_string()];
        rec.extend(r.params.iter().map(|v| v.to_string()));
        rec.push(r.j.map(num).unwrap_or_default());
        rec.push(r.verdict.map(verdict_name).unwrap_or_default().to_string());
        rec.push(r.status);
        rec.push(if args.no_timing { "0".into() } else { format!("{:.3}", r.wall_ms) });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(0)
}

fn sweep_cell(
    scenario: &config::Scenario,
    tables: &swcert::Result<GammaTables>,
    h: usize,
    cell: &[(String, f64)],
    lp: LpChoice,
    build_ms: f64,
) -> SweepRow {
    let t0 = Instant::now();
    let result = (|| -> Result<StabilityCertificate> {
        let tables = tables.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?;
        let (_, bounds) = scenario.build(cell)?;
        Ok(certify_with_lp(tables, &bounds, lp)?)
    })();
    let wall_ms = build_ms + t0.elapsed().as_secs_f64() * 1e3;
    let params = cell.iter().map(|(_, v)| *v).collect();
    match result {
        Ok(c) => SweepRow {
            h,
            params,
            j: Some(c.j),
            verdict: Some(c.verdict),
            status: "ok".into(),
            wall_ms,
        },
        Err(e) => SweepRow {
            h,
            params,
            j: None,
            verdict: None,
            status: format!("error: {e:#}"),
            wall_ms,
        },
    }
}

fn parse_pattern(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad mode `{v}`")))
        .collect()
}

#[derive(Serialize)]
struct AttackReport {
    plan: AttackPlan,
    periods: usize,
    growth: f64,
}

pub fn attack(args: AttackArgs) -> Result<u8> {
    let cfg = config::load(&args.analysis.config)?;
    let (system, bounds) = cfg.scenario()?.build(&[])?;
    let plan = match &args.pattern {
        Some(p) => plan_for_schedule(&system, parse_pattern(p)?)?,
        None => {
            let s = settings(&args.analysis, &cfg)?;
            let h = single_h(&args.analysis, &cfg)?;
            with_workers(args.analysis.workers, || -> Result<AttackPlan> {
                let tables = build_gamma_tables(&system, h, &s.norm, s.epsilon, false)?;
                let (_, sol) = optimal_j_from_tables(&tables, &bounds, LpChoice::Lp2)?;
                Ok(extract_attack(&system, &tables, &sol, args.max_denominator)?)
            })??
        }
    };
    let x0 = initial_state(&cfg, system.dim(), false)?;
    let signal: Vec<usize> = plan.schedule.iter().copied().cycle().take(plan.period * args.periods).collect();
    let x = system.simulate(&x0, &signal)?;
    let growth = norm2(&x) / norm2(&x0);
    println!("period: {}", plan.period);
    println!("mode frequencies: {:?}", plan.mode_frequencies);
    println!("monodromy spectral radius: {}", num(plan.monodromy_radius));
    println!("growth over {} periods: {}", args.periods, num(growth));
    if plan.denominator > 1 || !plan.blocks.is_empty() {
        println!("rounded to denominator {} (deviation {:e})", plan.denominator, plan.deviation);
    }
    let report = AttackReport {
        plan,
        periods: args.periods,
        growth,
    };
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    Ok(0)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Configured `x0`, else the first unit vector (attacks) or all ones.
fn initial_state(cfg: &ScenarioConfig, dim: usize, ones: bool) -> Result<Vec<f64>> {
    match &cfg.analysis.x0 {
        Some(x) if x.len() != dim => bail!("x0 has {} entries, system dimension is {dim}", x.len()),
        Some(x) if norm2(x) == 0.0 => bail!("x0 must be nonzero"),
        Some(x) => Ok(x.clone()),
        None if ones => Ok(vec![1.0; dim]),
        None => {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            Ok(e)
        }
    }
}

fn signal_source(cfg: &ScenarioConfig) -> Result<&SignalSource> {
    cfg.analysis
        .signal
        .as_ref()
        .context("this command needs analysis.signal in the config")
}

pub fn simulate(args: SimulateArgs) -> Result<u8> {
    let cfg = config::load(&args.config)?;
    let (system, _) = cfg.scenario()?.build(&[])?;
    let source = signal_source(&cfg)?;
    let steps = args.steps.or(cfg.analysis.steps).unwrap_or(DEFAULT_STEPS);
    let seed = args.seed.or(cfg.analysis.seed).unwrap_or(DEFAULT_SEED);
    let x0 = initial_state(&cfg, system.dim(), true)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    if args.trace {
        w.write_record(["run", "seed", "t", "norm"])?;
    } else {
        w.write_record(["run", "seed", "steps", "norm_x0", "norm_final", "ratio"])?;
    }
    for run in 0..args.runs {
        let run_seed = seed.wrapping_add(run as u64);
        let signal = sample_signal(source, steps, run_seed)?;
        let norms = system.simulate_norms(&x0, &signal)?;
        if args.trace {
            for (t, n) in norms.iter().enumerate() {
                w.write_record([run.to_string(), run_seed.to_string(), t.to_string(), num(*n)])?;
            }
        } else {
            let (first, last) = (norms[0], norms[norms.len() - 1]);
            w.write_record([
                run.to_string(),
                run_seed.to_string(),
                steps.to_string(),
                num(first),
                num(last),
                num(last / first),
            ])?;
        }
    }
    w.flush()?;
    Ok(0)
}

pub fn oracle(args: OracleArgs) -> Result<u8> {
    let cfg = config::load(&args.config)?;
    let spec = match signal_source(&cfg)? {
        SignalSource::HiddenMarkov { spec } => spec.clone(),
        SignalSource::Periodic { pattern } => {
            let m = pattern.iter().copied().max().unwrap_or(1);
            HiddenMarkovSpec::periodic(pattern, m)?
        }
        SignalSource::Explicit { .. } => bail!("an explicit schedule has no limit frequencies"),
    };
    let h = args.h.or(cfg.analysis.h).unwrap_or(1);
    let table = limit_oracle(&spec, h)?;
    eprintln!(
        "period {}, path length {}, {} lifted states",
        table.tau, table.d, table.lifted_state_count
    );
    let empirical = match args.steps {
        Some(t) => {
            let seed = args.seed.or(cfg.analysis.seed).unwrap_or(DEFAULT_SEED);
            let signal = sample_signal(&SignalSource::HiddenMarkov { spec: spec.clone() }, t, seed)?;
            Some(empirical_frequencies(&signal, h, spec.modes())?)
        }
        None => None,
    };
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    match &empirical {
        Some(_) => w.write_record(["sequence", "limit", "empirical", "abs_diff"])?,
        None => w.write_record(["sequence", "limit"])?,
    }
    let mut keys: Vec<_> = table.entries.keys().cloned().collect();
    if let Some(st) = &empirical {
        keys.extend(st.per_sequence.keys().cloned());
        keys.sort();
        keys.dedup();
    }
    for q in keys {
        let limit = table.get(&q);
        match &empirical {
            Some(st) => {
                let e = st.get(&q);
                w.write_record([q.to_string(), num(limit), num(e), num((limit - e).abs())])?;
            }
            None => w.write_record([q.to_string(), num(limit)])?,
        }
    }
    w.flush()?;
    Ok(0)
}

pub fn bench(args: BenchArgs) -> Result<u8> {
    if args.m_max < 2 || args.h_max < 1 {
        bail!("need h_max >= 1 and m_max >= 2");
    }
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["h", "modes", "sequences", "count_vectors"])?;
    for h in 1..=args.h_max {
        for m in 2..=args.m_max {
            let (f, g) = variable_counts(h, m);
            w.write_record([h.to_string(), m.to_string(), f.to_string(), g.to_string()])?;
        }
    }
    w.flush()?;
    Ok(0)
}

pub fn lp_debug(args: LpDebugArgs) -> Result<u8> {
    let cfg = config::load(&args.analysis.config)?;
    let s = settings(&args.analysis, &cfg)?;
    let h = single_h(&args.analysis, &cfg)?;
    let (system, bounds) = cfg.scenario()?.build(&[])?;
    let tables = with_workers(args.analysis.workers, || {
        build_gamma_tables(&system, h, &s.norm, s.epsilon, s.lp == LpChoice::Lp1)
    })??;
    let model = match s.lp {
        LpChoice::Lp1 => swcert::certify::build_lp1(&tables, &bounds)?,
        LpChoice::Lp2 => swcert::certify::build_lp2(&tables, &bounds)?,
    };
    println!("{model}");
    let sol = solve(&model)?;
    println!("solution:\n{}", serde_json::to_string_pretty(&sol)?);
    let report = verify_certificate(&model, &sol);
    println!("certificate check:\n{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.valid { 0 } else { 1 })
}
