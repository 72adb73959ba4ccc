//! Occupancy LPs, stability certificates and worst-case schedule extraction.
//!
//! Both LPs maximize the expected lifted score over block occupancies whose
//! implied per-mode frequencies respect the activation bounds. The sequence
//! form has one variable per length-`h` sequence; the reduced form has one per
//! count vector and is what certification uses. A strictly negative optimum
//! certifies almost-sure asymptotic stability; anything else is inconclusive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{
    build_gamma_tables, count_vector, Composition, GammaTables, ModeSequence,
};
use crate::lpcore::{solve, verify_certificate, LpModel, LpSolution, LpStatus};
use crate::matlib::{spectral_radius, NormKind};
pub use crate::model::{ActivationBounds, SwitchedSystem};

/// Certification requires `J < -STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;
pub const DEFAULT_EPSILON: f64 = 1e-24;
/// Largest deviation accepted when rounding an occupancy to a periodic schedule.
pub const ROUNDING_TOLERANCE: f64 = 1e-3;
pub const MAX_DENOMINATOR: u32 = 10_000;
/// Spectral radius above `1 + MONODROMY_SLACK` counts as unstable.
pub const MONODROMY_SLACK: f64 = 1e-9;

const OCCUPANCY_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpChoice {
    /// One variable per sequence.
    Lp1,
    /// One variable per count vector.
    Lp2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    CertifiedStable,
    Inconclusive,
}

/// Outcome of the sign test at one `(h, norm, eps)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub h: usize,
    pub norm: NormKind,
    pub epsilon: f64,
    pub j: f64,
    pub verdict: Verdict,
    /// Maximizing occupancy over count vectors; zero weights omitted.
    pub worst_occupancy: Vec<(Composition, f64)>,
    /// The same weights placed on each count vector's witness sequence.
    pub witness_schedule: Vec<(ModeSequence, f64)>,
}

impl StabilityCertificate {
    pub fn is_stable(&self) -> bool {
        self.verdict == Verdict::CertifiedStable
    }
}

/// A periodic schedule read off an optimal occupancy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub period: usize,
    pub schedule: Vec<usize>,
    pub mode_frequencies: Vec<f64>,
    pub monodromy_radius: f64,
    pub denominator: u32,
    /// Largest gap between a rounded weight and the LP weight.
    pub deviation: f64,
    /// Witness blocks in schedule order with their repetition counts.
    pub blocks: Vec<(ModeSequence, u32)>,
}

fn check_modes(system_modes: usize, bounds: &ActivationBounds) -> Result<()> {
    if bounds.modes() != system_modes {
        return Err(Error::Dimension(format!(
            "bounds describe {} modes, system has {system_modes}",
            bounds.modes()
        )));
    }
    Ok(())
}

fn occupancy_lp<I>(objective: Vec<f64>, fractions: I, bounds: &ActivationBounds) -> Result<LpModel>
where
    I: Fn(usize, usize) -> f64,
{
    let nv = objective.len();
    let mut lp = LpModel::new(objective)?;
    lp.add_row(vec![1.0; nv], 1.0, 1.0)?;
    for s in 0..bounds.modes() {
        let coeffs = (0..nv).map(|v| fractions(v, s)).collect();
        lp.add_row(coeffs, bounds.lower()[s], bounds.upper()[s])?;
    }
    Ok(lp)
}

/// Sequence-form LP: variables in sequence-index order.
pub fn build_lp1(tables: &GammaTables, bounds: &ActivationBounds) -> Result<LpModel> {
    check_modes(tables.modes(), bounds)?;
    let per_seq = tables.per_sequence().ok_or_else(|| {
        Error::InvalidInput("the sequence LP needs materialized per-sequence scores".into())
    })?;
    let (h, m) = (tables.h(), tables.modes());
    let fractions: Vec<Vec<f64>> = (0..per_seq.len() as u64)
        .map(|i| count_vector(&ModeSequence::from_index(i, h, m), m).fractions())
        .collect();
    occupancy_lp(per_seq.to_vec(), |v, s| fractions[v][s], bounds)
}

/// Reduced LP: variables in composition order.
pub fn build_lp2(tables: &GammaTables, bounds: &ActivationBounds) -> Result<LpModel> {
    check_modes(tables.modes(), bounds)?;
    let fractions: Vec<Vec<f64>> = tables.compositions().iter().map(|z| z.fractions()).collect();
    occupancy_lp(tables.gamma_prime().to_vec(), |v, s| fractions[v][s], bounds)
}

/// Solves an occupancy LP and insists on a verified optimum; the bounds
/// guarantee feasibility, so any other outcome is an internal fault.
pub fn solve_occupancy(model: &LpModel) -> Result<LpSolution> {
    let sol = solve(model)?;
    match sol.status {
        LpStatus::Optimal => {}
        other => {
            return Err(Error::Inconsistent(format!(
                "occupancy LP reported {other:?} for admissible bounds"
            )))
        }
    }
    let report = verify_certificate(model, &sol);
    if !report.valid {
        return Err(Error::Inconsistent(format!(
            "LP optimum failed verification: {:?}",
            report.violations
        )));
    }
    Ok(sol)
}

/// Optimal value of the chosen LP on precomputed tables.
pub fn optimal_j_from_tables(
    tables: &GammaTables,
    bounds: &ActivationBounds,
    which: LpChoice,
) -> Result<(f64, LpSolution)> {
    let model = match which {
        LpChoice::Lp1 => build_lp1(tables, bounds)?,
        LpChoice::Lp2 => build_lp2(tables, bounds)?,
    };
    let sol = solve_occupancy(&model)?;
    Ok((sol.objective_value, sol))
}

/// Builds tables, builds the chosen LP and solves it.
pub fn optimal_j(
    system: &SwitchedSystem,
    bounds: &ActivationBounds,
    h: usize,
    norm: &NormKind,
    epsilon: f64,
    which: LpChoice,
) -> Result<(f64, LpSolution)> {
    check_modes(system.modes(), bounds)?;
    let tables = build_gamma_tables(system, h, norm, epsilon, which == LpChoice::Lp1)?;
    optimal_j_from_tables(&tables, bounds, which)
}

/// Explicit feasible point of the sequence LP: weight `lo_s + beta_s` on each
/// constant sequence, with `beta_s` sharing the slack `1 - sum(lo)` in
/// proportion to each mode's bound width.
pub fn balanced_feasible_point(bounds: &ActivationBounds, h: usize) -> BTreeMap<ModeSequence, f64> {
    let weights = balanced_mode_weights(bounds);
    weights
        .into_iter()
        .enumerate()
        .map(|(s, w)| (ModeSequence::constant(s + 1, h), w))
        .collect()
}

/// Per-mode weights of the constant-sequence feasible point.
pub fn balanced_mode_weights(bounds: &ActivationBounds) -> Vec<f64> {
    let lo_sum: f64 = bounds.lower().iter().sum();
    let hi_sum: f64 = bounds.upper().iter().sum();
    let width = hi_sum - lo_sum;
    bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .map(|(&lo, &hi)| {
            let beta = if width > 0.0 {
                (hi - lo) * (1.0 - lo_sum) / width
            } else {
                0.0
            };
            lo + beta
        })
        .collect()
}

/// Places each count vector's LP weight on its witness sequence.
pub fn recover_lp1_solution(
    lp2_solution: &LpSolution,
    tables: &GammaTables,
) -> BTreeMap<ModeSequence, f64> {
    let mut out = BTreeMap::new();
    for (i, &w) in lp2_solution.x.iter().enumerate() {
        let w = w.clamp(0.0, 1.0);
        if w > 0.0 {
            out.insert(tables.witness(i), w);
        }
    }
    out
}

/// Dense sequence-form vector of a sparse sequence map.
pub fn lp1_point(weights: &BTreeMap<ModeSequence, f64>, h: usize, m: usize) -> Vec<f64> {
    let mut x = vec![0.0; (m as u64).pow(h as u32) as usize];
    for (q, &w) in weights {
        x[q.index(m) as usize] += w;
    }
    x
}

/// Runs the reduced LP and applies the sign test.
pub fn certify(
    system: &SwitchedSystem,
    bounds: &ActivationBounds,
    h: usize,
    norm: &NormKind,
    epsilon: f64,
) -> Result<StabilityCertificate> {
    check_modes(system.modes(), bounds)?;
    let tables = build_gamma_tables(system, h, norm, epsilon, false)?;
    certify_with_tables(&tables, bounds)
}

/// As [`certify`] on precomputed tables.
pub fn certify_with_tables(
    tables: &GammaTables,
    bounds: &ActivationBounds,
) -> Result<StabilityCertificate> {
    certify_with_lp(tables, bounds, LpChoice::Lp2)
}

/// As [`certify_with_tables`] with a chosen LP form; the sequence form needs
/// materialized tables.
pub fn certify_with_lp(
    tables: &GammaTables,
    bounds: &ActivationBounds,
    which: LpChoice,
) -> Result<StabilityCertificate> {
    let (j, sol) = optimal_j_from_tables(tables, bounds, which)?;
    match which {
        LpChoice::Lp1 => certificate_from_sequence_solution(tables, bounds, j, &sol),
        LpChoice::Lp2 => certificate_from_solution(tables, bounds, j, &sol),
    }
}

fn certificate_from_solution(
    tables: &GammaTables,
    bounds: &ActivationBounds,
    j: f64,
    sol: &LpSolution,
) -> Result<StabilityCertificate> {
    let mut worst_occupancy = Vec::new();
    let mut witness_schedule = Vec::new();
    for (i, &w) in sol.x.iter().enumerate() {
        let w = w.clamp(0.0, 1.0);
        if w == 0.0 {
            continue;
        }
        worst_occupancy.push((tables.compositions()[i].clone(), w));
        witness_schedule.push((tables.witness(i), w));
    }
    assemble_certificate(tables, bounds, j, worst_occupancy, witness_schedule)
}

/// Sequence-LP variant: sequence weights are summed per count vector and
/// the weighted sequences themselves are the witnesses.
fn certificate_from_sequence_solution(
    tables: &GammaTables,
    bounds: &ActivationBounds,
    j: f64,
    sol: &LpSolution,
) -> Result<StabilityCertificate> {
    let m = tables.modes();
    let mut by_count: BTreeMap<Composition, f64> = BTreeMap::new();
    let mut witness_schedule = Vec::new();
    for (v, &w) in sol.x.iter().enumerate() {
        let w = w.clamp(0.0, 1.0);
        if w == 0.0 {
            continue;
        }
        let q = ModeSequence::from_index(v as u64, tables.h(), m);
        *by_count.entry(count_vector(&q, m)).or_insert(0.0) += w;
        witness_schedule.push((q, w));
    }
    assemble_certificate(tables, bounds, j, by_count.into_iter().collect(), witness_schedule)
}

fn assemble_certificate(
    tables: &GammaTables,
    bounds: &ActivationBounds,
    j: f64,
    worst_occupancy: Vec<(Composition, f64)>,
    witness_schedule: Vec<(ModeSequence, f64)>,
) -> Result<StabilityCertificate> {
    let mut freqs = vec![0.0; tables.modes()];
    for (z, w) in &worst_occupancy {
        for (f, frac) in freqs.iter_mut().zip(z.fractions()) {
            *f += w * frac;
        }
    }
    let total: f64 = worst_occupancy.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > OCCUPANCY_TOL || !bounds.admits(&freqs, OCCUPANCY_TOL) {
        return Err(Error::Inconsistent(format!(
            "optimal occupancy has mass {total} and mode frequencies {freqs:?} outside the bounds"
        )));
    }
    let verdict = if j < -STABILITY_MARGIN {
        Verdict::CertifiedStable
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityCertificate {
        h: tables.h(),
        norm: tables.norm().clone(),
        epsilon: tables.epsilon(),
        j,
        verdict,
        worst_occupancy,
        witness_schedule,
    })
}

/// Spectral radius of the ordered product over one period, and whether it
/// exceeds `1 + MONODROMY_SLACK`.
pub fn monodromy_check(system: &SwitchedSystem, schedule: &[usize]) -> Result<(f64, bool)> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("schedule must be non-empty".into()));
    }
    let product = system.schedule_product(schedule)?;
    let radius = spectral_radius(&product)?;
    Ok((radius, radius > 1.0 + MONODROMY_SLACK))
}

/// Rounds weights to `k_i / D` with `D <= max_denominator`, minimizing the
/// largest deviation; ties go to the smaller `D`. Returns `(D, k, deviation)`.
pub fn round_occupancy(weights: &[f64], max_denominator: u32) -> Result<(u32, Vec<u32>, f64)> {
    if max_denominator == 0 || max_denominator > MAX_DENOMINATOR {
        return Err(Error::InvalidInput(format!(
            "max denominator must lie in 1..={MAX_DENOMINATOR}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return Err(Error::InvalidInput("occupancy has no mass".into()));
    }
    let w: Vec<f64> = weights.iter().map(|&v| v.max(0.0) / total).collect();
    let mut best: Option<(u32, Vec<u32>, f64)> = None;
    for d in 1..=max_denominator {
        let k = largest_remainder(&w, d);
        let dev = w
            .iter()
            .zip(&k)
            .map(|(&wi, &ki)| (ki as f64 / d as f64 - wi).abs())
            .fold(0.0, f64::max);
        if best.as_ref().map_or(true, |b| dev < b.2 - 1e-12) {
            best = Some((d, k, dev));
        }
    }
    let (d, k, dev) = best.expect("at least one denominator");
    if dev > ROUNDING_TOLERANCE {
        return Err(Error::Rounding {
            deviation: dev,
            denominator: d,
            tolerance: ROUNDING_TOLERANCE,
        });
    }
    Ok((d, k, dev))
}

fn largest_remainder(w: &[f64], d: u32) -> Vec<u32> {
    let scaled: Vec<f64> = w.iter().map(|&v| v * d as f64).collect();
    let mut k: Vec<u32> = scaled.iter().map(|&v| v.floor() as u32).collect();
    let assigned: u32 = k.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    // stable sort keeps the lower index first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(d.saturating_sub(assigned) as usize) {
        k[i] += 1;
    }
    k
}

/// Turns an optimal reduced-LP point into a periodic schedule: each count
/// vector's witness repeated `k_z` times, count vectors in ascending order.
pub fn extract_attack(
    system: &SwitchedSystem,
    tables: &GammaTables,
    lp2_solution: &LpSolution,
    max_denominator: u32,
) -> Result<AttackPlan> {
    if lp2_solution.status != LpStatus::Optimal {
        return Err(Error::InvalidInput("attack extraction needs an optimal solution".into()));
    }
    if lp2_solution.x.len() != tables.compositions().len() {
        return Err(Error::Dimension("solution does not match the reduced tables".into()));
    }
    let weights: Vec<f64> = lp2_solution.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (d, k, deviation) = round_occupancy(&weights, max_denominator)?;
    let mut schedule = Vec::with_capacity(d as usize * tables.h());
    let mut blocks = Vec::new();
    for (i, &ki) in k.iter().enumerate() {
        if ki == 0 {
            continue;
        }
        let q = tables.witness(i);
        for _ in 0..ki {
            schedule.extend_from_slice(q.modes());
        }
        blocks.push((q, ki));
    }
    plan_from_schedule(system, schedule, d, deviation, blocks)
}

/// Attack plan for an explicitly given schedule.
pub fn plan_for_schedule(system: &SwitchedSystem, schedule: Vec<usize>) -> Result<AttackPlan> {
    plan_from_schedule(system, schedule, 1, 0.0, Vec::new())
}

fn plan_from_schedule(
    system: &SwitchedSystem,
    schedule: Vec<usize>,
    denominator: u32,
    deviation: f64,
    blocks: Vec<(ModeSequence, u32)>,
) -> Result<AttackPlan> {
    let (monodromy_radius, _) = monodromy_check(system, &schedule)?;
    let mut counts = vec![0usize; system.modes()];
    for &s in &schedule {
        counts[s - 1] += 1;
    }
    let period = schedule.len();
    Ok(AttackPlan {
        period,
        mode_frequencies: counts.iter().map(|&c| c as f64 / period as f64).collect(),
        schedule,
        monodromy_radius,
        denominator,
        deviation,
        blocks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEntry {
    pub h: usize,
    pub j_lp1: f64,
    pub j_lp2: f64,
    /// Sequence-LP objective at the point recovered from the reduced optimum.
    pub j_recovered: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub entries: Vec<EquivalenceEntry>,
}

impl EquivalenceReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Solves both LPs for every `h <= h_max` and checks that they agree and that
/// the recovered sequence point attains the common optimum.
pub fn equivalence_suite(
    system: &SwitchedSystem,
    bounds: &ActivationBounds,
    norm: &NormKind,
    epsilon: f64,
    h_max: usize,
) -> Result<EquivalenceReport> {
    check_modes(system.modes(), bounds)?;
    let mut entries = Vec::with_capacity(h_max);
    for h in 1..=h_max {
        let tables = build_gamma_tables(system, h, norm, epsilon, true)?;
        entries.push(equivalence_entry(&tables, bounds)?);
    }
    Ok(EquivalenceReport { entries })
}

/// One row of [`equivalence_suite`] on materialized tables.
pub fn equivalence_entry(tables: &GammaTables, bounds: &ActivationBounds) -> Result<EquivalenceEntry> {
    let (j1, _) = optimal_j_from_tables(tables, bounds, LpChoice::Lp1)?;
    let (j2, sol2) = optimal_j_from_tables(tables, bounds, LpChoice::Lp2)?;
    let recovered = recover_lp1_solution(&sol2, tables);
    let x1 = lp1_point(&recovered, tables.h(), tables.modes());
    let lp1 = build_lp1(tables, bounds)?;
    let j_rec = lp1.value(&x1);
    let feasible = {
        let act = lp1.activities(&x1);
        lp1.rows()
            .iter()
            .zip(&act)
            .all(|(r, &a)| a >= r.lo - OCCUPANCY_TOL && a <= r.hi + OCCUPANCY_TOL)
    };
    let tol = 1e-9 * (1.0 + j1.abs());
    Ok(EquivalenceEntry {
        h: tables.h(),
        j_lp1: j1,
        j_lp2: j2,
        j_recovered: j_rec,
        pass: feasible && (j1 - j2).abs() <= tol && (j_rec - j1).abs() <= tol,
    })
}
