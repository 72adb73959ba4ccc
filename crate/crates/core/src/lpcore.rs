//! Dense bounded-variable linear programming.
//!
//! Models maximize `c'x` subject to ranged rows `lo <= a_i'x <= hi` and boxes
//! `lb <= x <= ub`. Rows become equalities `a_i'x - s_i = 0` with the row
//! activity `s_i` as a bounded variable, so every constraint lives in a bound.
//! The solver is a two-phase revised simplex with an explicit basis inverse,
//! product-form updates and periodic refactorization. Pricing is Dantzig's
//! rule until a per-phase iteration budget runs out, then Bland's rule.
//!
//! [`verify_certificate`] re-derives optimality from the model alone, so a
//! solver bug cannot vouch for itself.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on simplex iterations across both phases.
pub const ITERATION_CAP: u64 = 1_000_000;
/// Tolerance used by [`verify_certificate`].
pub const CERTIFICATE_TOL: f64 = 1e-7;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 50;

/// One ranged row `lo <= coeffs . x <= hi`; either side may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// A maximization problem over box-bounded variables.
#[derive(Clone, Debug, PartialEq)]
pub struct LpModel {
    objective: Vec<f64>,
    rows: Vec<LpRow>,
    var_bounds: Vec<(f64, f64)>,
}

impl LpModel {
    /// Maximize `objective . x` with every variable in `[0, 1]` and no rows yet.
    pub fn new(objective: Vec<f64>) -> Result<Self> {
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("objective coefficients must be finite".into()));
        }
        let n = objective.len();
        Ok(LpModel {
            objective,
            rows: Vec::new(),
            var_bounds: vec![(0.0, 1.0); n],
        })
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, lo: f64, hi: f64) -> Result<()> {
        if coeffs.len() != self.objective.len() {
            return Err(Error::Dimension(format!(
                "row has {} coefficients for {} variables",
                coeffs.len(),
                self.objective.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("row coefficients must be finite".into()));
        }
        check_range(lo, hi, "row")?;
        self.rows.push(LpRow { coeffs, lo, hi });
        Ok(())
    }

    pub fn set_bounds(&mut self, j: usize, lb: f64, ub: f64) -> Result<()> {
        if j >= self.objective.len() {
            return Err(Error::Dimension(format!("variable {j} does not exist")));
        }
        check_range(lb, ub, "variable")?;
        self.var_bounds[j] = (lb, ub);
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[LpRow] {
        &self.rows
    }

    pub fn var_bounds(&self) -> &[(f64, f64)] {
        &self.var_bounds
    }

    /// Row activities `a_i . x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

fn check_range(lo: f64, hi: f64, what: &str) -> Result<()> {
    if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
        return Err(Error::InvalidInput(format!("{what} range [{lo}, {hi}] is empty")));
    }
    Ok(())
}

impl fmt::Display for LpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "maximize {:?}", self.objective)?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(f, "  row {i}: {} <= {:?} . x <= {}", r.lo, r.coeffs, r.hi)?;
        }
        write!(f, "  bounds {:?}", self.var_bounds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `duals[i]` is positive only when row `i` sits at `hi`, and
/// negative only at `lo`; `reduced_costs = c - A'duals`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: u64,
}

/// Solves with the default iteration cap.
pub fn solve(model: &LpModel) -> Result<LpSolution> {
    solve_with_cap(model, ITERATION_CAP)
}

/// Solves with an explicit iteration cap; exceeding it is an error, not a status.
pub fn solve_with_cap(model: &LpModel, cap: u64) -> Result<LpSolution> {
    let mut s = Simplex::new(model, cap);
    s.run()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarKind {
    Structural(usize),
    Slack(usize),
    Artificial { row: usize, sign_neg: bool },
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Simplex<'a> {
    model: &'a LpModel,
    m: usize,
    n: usize,
    /// Structural columns, column-major.
    cols: Vec<f64>,
    kinds: Vec<VarKind>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each variable, or `usize::MAX` when nonbasic.
    pos: Vec<usize>,
    binv: Vec<f64>,
    since_refactor: usize,
    iterations: u64,
    cap: u64,
    y: Vec<f64>,
    w: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(model: &'a LpModel, cap: u64) -> Self {
        let m = model.rows.len();
        let n = model.objective.len();
        let mut cols = vec![0.0; n * m];
        for (i, r) in model.rows.iter().enumerate() {
            for (j, &a) in r.coeffs.iter().enumerate() {
                cols[j * m + i] = a;
            }
        }
        let mut s = Simplex {
            model,
            m,
            n,
            cols,
            kinds: Vec::with_capacity(n + 2 * m),
            lb: Vec::with_capacity(n + 2 * m),
            ub: Vec::with_capacity(n + 2 * m),
            x: Vec::with_capacity(n + 2 * m),
            cost: Vec::new(),
            basis: vec![usize::MAX; m],
            pos: Vec::new(),
            binv: vec![0.0; m * m],
            since_refactor: 0,
            iterations: 0,
            cap,
            y: vec![0.0; m],
            w: vec![0.0; m],
            scratch: vec![0.0; m],
        };
        for (j, &(lb, ub)) in model.var_bounds.iter().enumerate() {
            s.kinds.push(VarKind::Structural(j));
            s.lb.push(lb);
            s.ub.push(ub);
            s.x.push(start_value(lb, ub));
        }
        let act = model.activities(&s.x[..n]);
        for (i, r) in model.rows.iter().enumerate() {
            s.kinds.push(VarKind::Slack(i));
            s.lb.push(r.lo);
            s.ub.push(r.hi);
            s.x.push(act[i]);
        }
        // rows whose starting activity is out of range get an artificial
        for (i, r) in model.rows.iter().enumerate() {
            let v = act[i];
            if v >= r.lo && v <= r.hi {
                s.basis[i] = n + i;
                continue;
            }
            let target = if v < r.lo { r.lo } else { r.hi };
            s.x[n + i] = target;
            // a'x - s + d t = 0 with t = |target - v|
            let sign_neg = target - v < 0.0;
            s.kinds.push(VarKind::Artificial { row: i, sign_neg });
            s.lb.push(0.0);
            s.ub.push(f64::INFINITY);
            s.x.push((target - v).abs());
            s.basis[i] = s.kinds.len() - 1;
        }
        let total = s.kinds.len();
        s.pos = vec![usize::MAX; total];
        for (r, &b) in s.basis.iter().enumerate() {
            s.pos[b] = r;
        }
        // the starting basis is diagonal with entries -1 (slack) or +-1 (artificial)
        for r in 0..m {
            let d = match s.kinds[s.basis[r]] {
                VarKind::Slack(_) => -1.0,
                VarKind::Artificial { sign_neg, .. } => {
                    if sign_neg {
                        -1.0
                    } else {
                        1.0
                    }
                }
                VarKind::Structural(_) => unreachable!(),
            };
            s.binv[r * m + r] = 1.0 / d;
        }
        s
    }

    fn column(&self, k: usize, out: &mut [f64]) {
        match self.kinds[k] {
            VarKind::Structural(j) => out.copy_from_slice(&self.cols[j * self.m..(j + 1) * self.m]),
            VarKind::Slack(i) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[i] = -1.0;
            }
            VarKind::Artificial { row, sign_neg } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[row] = if sign_neg { -1.0 } else { 1.0 };
            }
        }
    }

    fn reduced_cost(&self, k: usize) -> f64 {
        let c = self.cost[k];
        match self.kinds[k] {
            VarKind::Structural(j) => {
                let col = &self.cols[j * self.m..(j + 1) * self.m];
                c - col.iter().zip(&self.y).map(|(a, y)| a * y).sum::<f64>()
            }
            VarKind::Slack(i) => c + self.y[i],
            VarKind::Artificial { row, sign_neg } => {
                if sign_neg {
                    c + self.y[row]
                } else {
                    c - self.y[row]
                }
            }
        }
    }

    fn compute_duals(&mut self) {
        let m = self.m;
        for i in 0..m {
            let mut s = 0.0;
            for r in 0..m {
                s += self.cost[self.basis[r]] * self.binv[r * m + i];
            }
            self.y[i] = s;
        }
    }

    /// `w = B^-1 col_k`.
    fn ftran(&mut self, k: usize) {
        let m = self.m;
        let mut col = std::mem::take(&mut self.scratch);
        self.column(k, &mut col);
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.w[r] = row.iter().zip(&col).map(|(a, b)| a * b).sum();
        }
        self.scratch = col;
    }

    fn pivot_update(&mut self, r: usize) {
        let m = self.m;
        let piv = self.w[r];
        for c in 0..m {
            self.binv[r * m + c] /= piv;
        }
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = self.w[i];
            if f == 0.0 {
                continue;
            }
            for c in 0..m {
                self.binv[i * m + c] -= f * self.binv[r * m + c];
            }
        }
    }

    /// Rebuilds `B^-1` by Gauss-Jordan elimination and recomputes basic values.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return Ok(());
        }
        let mut b = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for r in 0..m {
            self.column(self.basis[r], &mut col);
            for i in 0..m {
                b[i * m + r] = col[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&a, &bb| b[a * m + c].abs().total_cmp(&b[bb * m + c].abs()))
                .unwrap();
            if b[p * m + c].abs() < 1e-13 {
                return Err(Error::Inconsistent("simplex basis became singular".into()));
            }
            if p != c {
                for k in 0..m {
                    b.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for i in 0..m {
                if i == c {
                    continue;
                }
                let f = b[i * m + c];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    b[i * m + k] -= f * b[c * m + k];
                    inv[i * m + k] -= f * inv[c * m + k];
                }
            }
        }
        self.binv = inv;
        // B x_B = -sum over nonbasic of col_k x_k
        let mut rhs = vec![0.0; m];
        for k in 0..self.kinds.len() {
            if self.pos[k] != usize::MAX || self.x[k] == 0.0 {
                continue;
            }
            self.column(k, &mut col);
            for i in 0..m {
                rhs[i] -= col[i] * self.x[k];
            }
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.x[self.basis[r]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    fn run_phase(&mut self) -> Result<PhaseEnd> {
        let total = self.kinds.len();
        let bland_after = 10 * (total + self.m) as u64;
        let mut phase_iters = 0u64;
        loop {
            if self.iterations >= self.cap {
                return Err(Error::IterationLimit(self.cap));
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            self.compute_duals();
            let bland = phase_iters >= bland_after;

            let mut entering = None;
            let mut best = 0.0;
            for k in 0..total {
                if self.pos[k] != usize::MAX || self.lb[k] == self.ub[k] {
                    continue;
                }
                let d = self.reduced_cost(k);
                let eligible = (d > OPT_TOL && self.x[k] < self.ub[k])
                    || (d < -OPT_TOL && self.x[k] > self.lb[k]);
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((k, d));
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    entering = Some((k, d));
                }
            }
            let Some((k, d)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let dir = if d > 0.0 { 1.0 } else { -1.0 };
            self.ftran(k);

            let mut theta = self.ub[k] - self.lb[k];
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let wr = self.w[r] * dir;
                if self.w[r].abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[r];
                let (t, bound) = if wr > 0.0 {
                    if self.lb[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x[b] - self.lb[b]) / wr, self.lb[b])
                } else {
                    if self.ub[b] == f64::INFINITY {
                        continue;
                    }
                    ((self.ub[b] - self.x[b]) / -wr, self.ub[b])
                };
                let t = t.max(0.0);
                let better = if t < theta - 1e-12 {
                    true
                } else if t <= theta + 1e-12 {
                    match leave {
                        None => false,
                        Some((r0, _)) => {
                            if bland {
                                self.basis[r] < self.basis[r0]
                            } else {
                                self.w[r].abs() > self.w[r0].abs()
                            }
                        }
                    }
                } else {
                    false
                };
                if better {
                    theta = t;
                    leave = Some((r, bound));
                }
            }
            if theta == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }

            self.x[k] += dir * theta;
            for r in 0..self.m {
                let b = self.basis[r];
                self.x[b] -= dir * theta * self.w[r];
            }
            match leave {
                None => {
                    // bound flip: land exactly on the opposite bound
                    self.x[k] = if dir > 0.0 { self.ub[k] } else { self.lb[k] };
                }
                Some((r, bound)) => {
                    let out = self.basis[r];
                    self.x[out] = bound;
                    self.pos[out] = usize::MAX;
                    self.basis[r] = k;
                    self.pos[k] = r;
                    self.pivot_update(r);
                    self.since_refactor += 1;
                }
            }
            self.iterations += 1;
            phase_iters += 1;
        }
    }

    fn run(&mut self) -> Result<LpSolution> {
        let total = self.kinds.len();
        let n = self.n;
        let has_artificials = total > n + self.m;

        if has_artificials {
            self.cost = (0..total)
                .map(|k| match self.kinds[k] {
                    VarKind::Artificial { .. } => -1.0,
                    _ => 0.0,
                })
                .collect();
            if let PhaseEnd::Unbounded = self.run_phase()? {
                return Err(Error::Inconsistent("phase one reported unbounded".into()));
            }
            self.refactor()?;
            let infeas: f64 = (n + self.m..total).map(|k| self.x[k].max(0.0)).sum();
            let scale = self
                .model
                .rows
                .iter()
                .flat_map(|r| [r.lo, r.hi])
                .chain(self.model.var_bounds.iter().flat_map(|&(a, b)| [a, b]))
                .filter(|v| v.is_finite())
                .fold(1.0f64, |m, v| m.max(v.abs()));
            if infeas > FEAS_TOL * scale {
                return Ok(self.finish(LpStatus::Infeasible));
            }
            for k in n + self.m..total {
                self.ub[k] = 0.0;
                if self.pos[k] == usize::MAX {
                    self.x[k] = 0.0;
                }
            }
            self.drive_out_artificials()?;
        }

        self.cost = vec![0.0; total];
        self.cost[..n].copy_from_slice(&self.model.objective);
        let end = self.run_phase()?;
        self.refactor()?;
        match end {
            PhaseEnd::Unbounded => Ok(self.finish(LpStatus::Unbounded)),
            PhaseEnd::Optimal => Ok(self.finish(LpStatus::Optimal)),
        }
    }

    /// Pivots zero-valued basic artificials out wherever a replacement exists;
    /// artificials left in the basis mark redundant rows and stay fixed at zero.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.m;
        let total = self.kinds.len();
        let first_art = self.n + m;
        let mut col = vec![0.0; m];
        for r in 0..m {
            if self.basis[r] < first_art {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for k in 0..first_art {
                if self.pos[k] != usize::MAX {
                    continue;
                }
                self.column(k, &mut col);
                let row = &self.binv[r * m..(r + 1) * m];
                let alpha: f64 = row.iter().zip(&col).map(|(a, b)| a * b).sum();
                if alpha.abs() > 1e-7 && best.map_or(true, |(_, a)| alpha.abs() > a) {
                    best = Some((k, alpha.abs()));
                }
            }
            if let Some((k, _)) = best {
                let out = self.basis[r];
                self.ftran(k);
                self.x[out] = 0.0;
                self.pos[out] = usize::MAX;
                self.basis[r] = k;
                self.pos[k] = r;
                self.pivot_update(r);
            }
        }
        debug_assert!(self.pos.len() == total);
        self.refactor()
    }

    fn finish(&mut self, status: LpStatus) -> LpSolution {
        let n = self.n;
        if status == LpStatus::Optimal {
            self.compute_duals();
        }
        let x: Vec<f64> = (0..n)
            .map(|j| self.x[j].clamp(self.lb[j], self.ub[j]))
            .collect();
        let duals = if status == LpStatus::Optimal {
            self.y.clone()
        } else {
            vec![0.0; self.m]
        };
        let reduced_costs = (0..n)
            .map(|j| {
                let col = &self.cols[j * self.m..(j + 1) * self.m];
                self.model.objective[j] - col.iter().zip(&duals).map(|(a, y)| a * y).sum::<f64>()
            })
            .collect();
        LpSolution {
            status,
            objective_value: self.model.value(&x),
            x,
            duals,
            reduced_costs,
            iterations: self.iterations,
        }
    }
}

fn start_value(lb: f64, ub: f64) -> f64 {
    if lb.is_finite() {
        lb
    } else if ub.is_finite() {
        ub
    } else {
        0.0
    }
}

/// Outcome of [`verify_certificate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub valid: bool,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Primal { what: String, amount: f64 },
    DualSign { what: String, multiplier: f64 },
    ComplementarySlackness { row: usize, dual: f64, activity: f64 },
    ReducedCostMismatch { var: usize, reported: f64, recomputed: f64 },
    DualityGap { primal: f64, dual: f64 },
    Status(LpStatus),
    Shape(String),
}

/// Checks an optimal solution against the model: primal feasibility, dual sign
/// conditions, complementary slackness and a vanishing duality gap, all at
/// [`CERTIFICATE_TOL`].
pub fn verify_certificate(model: &LpModel, sol: &LpSolution) -> CertificateReport {
    let tol = CERTIFICATE_TOL;
    let mut v = Vec::new();
    let n = model.num_vars();
    let m = model.num_rows();
    if sol.status != LpStatus::Optimal {
        v.push(Violation::Status(sol.status));
    }
    if sol.x.len() != n || sol.duals.len() != m || sol.reduced_costs.len() != n {
        v.push(Violation::Shape("solution vectors do not match the model".into()));
        return CertificateReport {
            valid: false,
            violations: v,
            ..Default::default()
        };
    }
    let act = model.activities(&sol.x);

    for (j, (&xj, &(lb, ub))) in sol.x.iter().zip(&model.var_bounds).enumerate() {
        let amount = (lb - xj).max(xj - ub);
        if amount > tol {
            v.push(Violation::Primal {
                what: format!("variable {j}"),
                amount,
            });
        }
    }
    for (i, (r, &a)) in model.rows.iter().zip(&act).enumerate() {
        let amount = (r.lo - a).max(a - r.hi);
        if amount > tol {
            v.push(Violation::Primal {
                what: format!("row {i}"),
                amount,
            });
        }
    }

    let mut recomputed = model.objective.clone();
    for (r, &y) in model.rows.iter().zip(&sol.duals) {
        for (d, &a) in recomputed.iter_mut().zip(&r.coeffs) {
            *d -= a * y;
        }
    }
    for (j, (&rep, &rc)) in sol.reduced_costs.iter().zip(&recomputed).enumerate() {
        if (rep - rc).abs() > tol * (1.0 + rc.abs()) {
            v.push(Violation::ReducedCostMismatch {
                var: j,
                reported: rep,
                recomputed: rc,
            });
        }
    }
    // maximization: positive reduced cost needs the variable at its upper bound
    for (j, &rc) in recomputed.iter().enumerate() {
        let (lb, ub) = model.var_bounds[j];
        let xj = sol.x[j];
        if (rc > tol && !(ub.is_finite() && xj >= ub - tol))
            || (rc < -tol && !(lb.is_finite() && xj <= lb + tol))
        {
            v.push(Violation::DualSign {
                what: format!("variable {j}"),
                multiplier: rc,
            });
        }
    }
    for (i, (r, &y)) in model.rows.iter().zip(&sol.duals).enumerate() {
        let a = act[i];
        if (y > tol && !(r.hi.is_finite() && a >= r.hi - tol))
            || (y < -tol && !(r.lo.is_finite() && a <= r.lo + tol))
        {
            v.push(Violation::ComplementarySlackness {
                row: i,
                dual: y,
                activity: a,
            });
        }
    }

    let primal = model.value(&sol.x);
    let mut dual = 0.0;
    for (r, &y) in model.rows.iter().zip(&sol.duals) {
        dual += bound_term(y, r.lo, r.hi);
    }
    for (&rc, &(lb, ub)) in recomputed.iter().zip(&model.var_bounds) {
        dual += bound_term(rc, lb, ub);
    }
    if !dual.is_finite() || (primal - dual).abs() > tol * (1.0 + primal.abs()) {
        v.push(Violation::DualityGap { primal, dual });
    }
    CertificateReport {
        valid: v.is_empty(),
        primal_objective: primal,
        dual_objective: dual,
        violations: v,
    }
}

/// Contribution of a multiplier to the dual objective: it prices the upper
/// bound when positive and the lower bound when negative.
fn bound_term(mult: f64, lo: f64, hi: f64) -> f64 {
    if mult > 0.0 {
        mult * hi
    } else if mult < 0.0 {
        mult * lo
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive vertex enumeration for tiny boxed LPs.
    fn brute_force(model: &LpModel) -> Option<f64> {
        let n = model.num_vars();
        // candidate hyperplanes: (coeffs, rhs)
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for r in model.rows() {
            for b in [r.lo, r.hi] {
                if b.is_finite() {
                    planes.push((r.coeffs.clone(), b));
                }
            }
        }
        for (j, &(lb, ub)) in model.var_bounds().iter().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            for b in [lb, ub] {
                if b.is_finite() {
                    planes.push((e.clone(), b));
                }
            }
        }
        let mut best: Option<f64> = None;
        let mut pick = Vec::new();
        fn rec(
            start: usize,
            pick: &mut Vec<usize>,
            planes: &[(Vec<f64>, f64)],
            n: usize,
            model: &LpModel,
            best: &mut Option<f64>,
        ) {
            if pick.len() == n {
                if let Some(x) = solve_square(pick.iter().map(|&i| &planes[i]).collect(), n) {
                    if feasible(model, &x) {
                        let v = model.value(&x);
                        if best.map_or(true, |b| v > b) {
                            *best = Some(v);
                        }
                    }
                }
                return;
            }
            for i in start..planes.len() {
                pick.push(i);
                rec(i + 1, pick, planes, n, model, best);
                pick.pop();
            }
        }
        rec(0, &mut pick, &planes, n, model, &mut best);
        best
    }

    fn solve_square(rows: Vec<&(Vec<f64>, f64)>, n: usize) -> Option<Vec<f64>> {
        let mut a: Vec<Vec<f64>> = rows
            .iter()
            .map(|(c, b)| {
                let mut r = c.clone();
                r.push(*b);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
            if a[p][c].abs() < 1e-10 {
                return None;
            }
            a.swap(p, c);
            for i in 0..n {
                if i != c {
                    let f = a[i][c] / a[c][c];
                    for k in c..=n {
                        a[i][k] -= f * a[c][k];
                    }
                }
            }
        }
        Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
    }

    fn feasible(model: &LpModel, x: &[f64]) -> bool {
        let t = 1e-9;
        x.iter()
            .zip(model.var_bounds())
            .all(|(&v, &(lb, ub))| v >= lb - t && v <= ub + t)
            && model
                .activities(x)
                .iter()
                .zip(model.rows())
                .all(|(&a, r)| a >= r.lo - t && a <= r.hi + t)
    }

    fn assert_certified(model: &LpModel, sol: &LpSolution) {
        let rep = verify_certificate(model, sol);
        assert!(rep.valid, "{:?}\n{model}\n{sol:?}", rep.violations);
    }

    #[test]
    fn forced_point() {
        let mut lp = LpModel::new(vec![-2.5]).unwrap();
        lp.add_row(vec![1.0], 1.0, 1.0).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective_value + 2.5).abs() < 1e-12);
        assert_certified(&lp, &s);
    }

    #[test]
    fn no_rows_picks_best_corner() {
        let lp = LpModel::new(vec![1.0, -1.0, 0.0]).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.x[..2], [1.0, 0.0]);
        assert_certified(&lp, &s);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LpModel::new(vec![1.0, 1.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], 3.0, 4.0).unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LpModel::new(vec![1.0, 0.0]).unwrap();
        lp.set_bounds(0, 0.0, f64::INFINITY).unwrap();
        lp.add_row(vec![1.0, -1.0], f64::NEG_INFINITY, 1.0).unwrap();
        lp.set_bounds(1, 0.0, f64::INFINITY).unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn rejects_malformed_models() {
        assert!(LpModel::new(vec![f64::NAN]).is_err());
        let mut lp = LpModel::new(vec![1.0]).unwrap();
        assert!(lp.add_row(vec![1.0, 2.0], 0.0, 1.0).is_err());
        assert!(lp.add_row(vec![1.0], 2.0, 1.0).is_err());
        assert!(lp.set_bounds(0, 1.0, 0.0).is_err());
        assert!(lp.set_bounds(3, 0.0, 1.0).is_err());
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let mut lp = LpModel::new(vec![1.0, 2.0, 3.0]).unwrap();
        lp.add_row(vec![1.0, 1.0, 1.0], 1.0, 1.0).unwrap();
        assert!(matches!(solve_with_cap(&lp, 0), Err(Error::IterationLimit(0))));
    }

    #[test]
    fn perturbed_point_fails_verification() {
        let mut lp = LpModel::new(vec![1.0, 2.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let mut s = solve(&lp).unwrap();
        assert_certified(&lp, &s);
        s.x[1] += 1e-3;
        let rep = verify_certificate(&lp, &s);
        assert!(!rep.valid);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Primal { what, .. } if what == "row 0")));
    }

    #[test]
    fn wrong_duals_fail_verification() {
        let mut lp = LpModel::new(vec![1.0, 2.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], 0.0, 1.0).unwrap();
        let mut s = solve(&lp).unwrap();
        s.duals[0] = 0.0;
        s.reduced_costs = lp.objective().to_vec();
        assert!(!verify_certificate(&lp, &s).valid);
    }

    #[test]
    fn duplicate_columns_are_handled() {
        // the M=2, h=2 sequence LP: (1,2) and (2,1) share a column
        let gammas = [-1.0, 0.7, 0.7, 0.2];
        let counts = [[2.0, 0.0], [1.0, 1.0], [1.0, 1.0], [0.0, 2.0]];
        let mut lp = LpModel::new(gammas.to_vec()).unwrap();
        lp.add_row(vec![1.0; 4], 1.0, 1.0).unwrap();
        let lo = [0.5, 0.0];
        let hi = [1.0, 0.5];
        for s in 0..2 {
            lp.add_row(counts.iter().map(|c| c[s] / 2.0).collect(), lo[s], hi[s]).unwrap();
        }
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 0.7).abs() < 1e-12);
        assert_certified(&lp, &s);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LpModel::new(vec![1.0, 1.0, -1.0]).unwrap();
        lp.add_row(vec![1.0, 1.0, 1.0], 1.0, 1.0).unwrap();
        lp.add_row(vec![2.0, 2.0, 2.0], 2.0, 2.0).unwrap();
        lp.add_row(vec![1.0, 0.0, 0.0], 0.0, 0.25).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert_certified(&lp, &s);
        assert_eq!(brute_force(&lp), Some(s.objective_value));
    }

    #[test]
    fn free_and_half_bounded_variables() {
        // max x + y, x free, y <= 2, x + y <= 3, x - y >= -5
        let mut lp = LpModel::new(vec![1.0, 1.0]).unwrap();
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        lp.set_bounds(1, f64::NEG_INFINITY, 2.0).unwrap();
        lp.add_row(vec![1.0, 1.0], f64::NEG_INFINITY, 3.0).unwrap();
        lp.add_row(vec![1.0, -1.0], -5.0, f64::INFINITY).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 3.0).abs() < 1e-12);
        assert_certified(&lp, &s);
    }

    /// Classic cycling example under textbook Dantzig rules.
    #[test]
    fn degenerate_cycling_instance_terminates() {
        let mut lp = LpModel::new(vec![10.0, -57.0, -9.0, -24.0]).unwrap();
        for j in 0..4 {
            lp.set_bounds(j, 0.0, f64::INFINITY).unwrap();
        }
        lp.add_row(vec![0.5, -5.5, -2.5, 9.0], f64::NEG_INFINITY, 0.0).unwrap();
        lp.add_row(vec![0.5, -1.5, -0.5, 1.0], f64::NEG_INFINITY, 0.0).unwrap();
        lp.add_row(vec![1.0, 0.0, 0.0, 0.0], f64::NEG_INFINITY, 1.0).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
        assert_certified(&lp, &s);
    }

    fn arb_lp() -> impl Strategy<Value = LpModel> {
        (1usize..=6, 0usize..=4).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-3i32..=3, n),
                proptest::collection::vec(proptest::collection::vec(-2i32..=2, n), m),
                proptest::collection::vec((-3i32..=3, 0i32..=4), m),
                proptest::collection::vec((-2i32..=1, 0i32..=3), n),
                any::<bool>(),
            )
                .prop_map(move |(c, a, rb, vb, eq_first)| {
                    // small integers create plenty of degenerate vertices
                    let mut lp = LpModel::new(c.iter().map(|&v| v as f64 * 0.5).collect()).unwrap();
                    for (j, &(l, w)) in vb.iter().enumerate() {
                        lp.set_bounds(j, l as f64, (l + w) as f64).unwrap();
                    }
                    for (i, (row, &(l, w))) in a.iter().zip(&rb).enumerate() {
                        let w = if eq_first && i == 0 { 0 } else { w };
                        lp.add_row(row.iter().map(|&v| v as f64).collect(), l as f64, (l + w) as f64)
                            .unwrap();
                    }
                    lp
                })
        })
    }

    /// Instances built around a known feasible point.
    fn arb_feasible_lp() -> impl Strategy<Value = LpModel> {
        (1usize..=6, 1usize..=4).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-3i32..=3, n),
                proptest::collection::vec(proptest::collection::vec(-2i32..=2, n), m),
                proptest::collection::vec((0i32..=2, 0i32..=2), m),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(c, a, slack, x0)| {
                    let mut lp = LpModel::new(c.iter().map(|&v| v as f64).collect()).unwrap();
                    for (row, &(l, w)) in a.iter().zip(&slack) {
                        let coeffs: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                        let ax: f64 = coeffs.iter().zip(&x0).map(|(p, q)| p * q).sum();
                        lp.add_row(coeffs, ax - l as f64, ax + w as f64).unwrap();
                    }
                    lp
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn agrees_with_vertex_enumeration(lp in arb_lp()) {
            let s = solve(&lp).unwrap();
            let bf = brute_force(&lp);
            match bf {
                None => prop_assert_eq!(s.status, LpStatus::Infeasible),
                Some(v) => {
                    prop_assert_eq!(s.status, LpStatus::Optimal);
                    prop_assert!((s.objective_value - v).abs() <= 1e-9 * (1.0 + v.abs()),
                        "simplex {} vs vertices {}", s.objective_value, v);
                    let rep = verify_certificate(&lp, &s);
                    prop_assert!(rep.valid, "{:?}", rep.violations);
                }
            }
        }

        #[test]
        fn relaxing_an_upper_bound_never_hurts(lp in arb_feasible_lp(), row in 0usize..4, extra in 0.0f64..2.0) {
            let s = solve(&lp).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            let i = row % lp.num_rows();
            let mut relaxed = lp.clone();
            relaxed.rows[i].hi += extra;
            let r = solve(&relaxed).unwrap();
            prop_assert_eq!(r.status, LpStatus::Optimal);
            prop_assert!(r.objective_value >= s.objective_value - 1e-9);
        }
    }
}
