//! Bounded-variable two-phase primal simplex over a dense tableau.
//!
//! Maximizes `c'x` subject to sparse rows and finite variable bounds.
//! Pivoting is Dantzig pricing with a deterministic lowest-index tie-break;
//! on stalling the solver switches to Bland's rule, which cannot cycle.
//! Suitable for desk-scale instances (a few thousand columns); larger runs
//! go through the external-solver path.

use crate::instance::{Instance, Sense};
use crate::MilpError;

/// Bounds larger than this are treated as infinite in the ratio test.
const INF: f64 = 1e29;
const FEAS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
/// Minimum pivot magnitude accepted by the ratio test. Rows are
/// equilibrated to unit max coefficient, so entries far below this are
/// elimination noise; pivoting on them destroys the tableau.
const PIVOT_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the structural variables (instance order).
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
enum Pricing {
    Dantzig,
    Bland,
}

/// Solves the LP relaxation of `instance`, with `overrides` replacing the
/// bounds of selected variables (used by branch-and-bound node fixing).
pub fn solve_lp(
    instance: &Instance,
    overrides: &[(usize, f64, f64)],
    iteration_limit: usize,
) -> Result<LpSolution, MilpError> {
    let mut sol = Tableau::build(instance, overrides)?.run(Pricing::Dantzig, iteration_limit)?;
    if sol.status == LpStatus::Optimal {
        let viol = violation_with_overrides(instance, overrides, &sol.values);
        if viol > 1e-7 {
            // Numerical trouble: restart with Bland's rule rather than
            // return a silently wrong answer.
            sol = Tableau::build(instance, overrides)?.run(Pricing::Bland, iteration_limit)?;
            let viol = violation_with_overrides(instance, overrides, &sol.values);
            if sol.status == LpStatus::Optimal && viol > 1e-7 {
                return Err(MilpError::Numerical(format!(
                    "simplex residual {viol:.3e} exceeds tolerance after Bland restart"
                )));
            }
        }
    }
    Ok(sol)
}

fn violation_with_overrides(
    instance: &Instance,
    overrides: &[(usize, f64, f64)],
    values: &[f64],
) -> f64 {
    let mut worst = instance.max_violation(values);
    for &(j, lo, hi) in overrides {
        worst = worst.max(lo - values[j]).max(values[j] - hi);
    }
    // Bound overrides only tighten, so the base check may overstate bound
    // slack but never understate row violation.
    worst
}

struct Tableau {
    m: usize,
    /// Total columns: structural + slack + artificial.
    n_total: usize,
    n_struct: usize,
    n_art: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Unperturbed bounds, restored before extraction.
    true_lower: Vec<f64>,
    true_upper: Vec<f64>,
    cost: Vec<f64>,
    /// Dense row-major tableau, m x n_total: current B^-1 * A.
    t: Vec<f64>,
    /// Original constraint matrix and rhs, kept for consistency audits.
    a0: Vec<f64>,
    b0: Vec<f64>,
    /// Basic variable (column index) per row.
    basis: Vec<usize>,
    /// Value of the basic variable per row.
    xb: Vec<f64>,
    /// For nonbasic columns: parked at upper bound (else lower).
    at_upper: Vec<bool>,
    in_basis: Vec<bool>,
    /// Reduced costs d_j = c_j - c_B' B^-1 a_j.
    d: Vec<f64>,
}

impl Tableau {
    fn build(instance: &Instance, overrides: &[(usize, f64, f64)]) -> Result<Self, MilpError> {
        let n_struct = instance.num_variables();
        let m = instance.num_rows();
        let mut lower: Vec<f64> = instance.variables().iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = instance.variables().iter().map(|v| v.upper).collect();
        for &(j, lo, hi) in overrides {
            lower[j] = lower[j].max(lo);
            upper[j] = upper[j].min(hi);
            if lower[j] > upper[j] + 1e-12 {
                // Empty box: trivially infeasible, signal via a marker.
                return Err(MilpError::EmptyBounds(j));
            }
            upper[j] = upper[j].max(lower[j]);
        }

        let n_slack = instance
            .rows()
            .iter()
            .filter(|r| r.sense != Sense::Eq)
            .count();
        let n_total = n_struct + n_slack + m;
        let n_art = m;

        let mut t = vec![0.0; m * n_total];
        let mut slack_idx = n_struct;
        let mut slack_of_row: Vec<Option<usize>> = vec![None; m];
        for (i, row) in instance.rows().iter().enumerate() {
            for &(v, c) in &row.terms {
                t[i * n_total + v.0] += c;
            }
            match row.sense {
                Sense::Le => {
                    t[i * n_total + slack_idx] = 1.0;
                    slack_of_row[i] = Some(slack_idx);
                    slack_idx += 1;
                }
                Sense::Ge => {
                    t[i * n_total + slack_idx] = -1.0;
                    slack_of_row[i] = Some(slack_idx);
                    slack_idx += 1;
                }
                Sense::Eq => {}
            }
        }

        for j in 0..n_slack {
            lower.push(0.0);
            upper.push(f64::INFINITY);
            let _ = j;
        }
        // Artificial columns filled in below once residual signs are known.
        for _ in 0..n_art {
            lower.push(0.0);
            upper.push(f64::INFINITY);
        }

        let true_lower = lower.clone();
        let true_upper = upper.clone();

        // Deterministic anti-degeneracy: expand every non-fixed structural
        // and slack bound by a distinct hair so ratio-test ties and
        // zero-length steps become rare. The true bounds return before
        // extraction.
        const GOLDEN: f64 = 0.618_033_988_749_894_9;
        for j in 0..(n_struct + n_slack) {
            if upper[j] - lower[j] > 1e-9 {
                let f1 = (j as f64 * GOLDEN).fract();
                let f2 = (j as f64 * GOLDEN * GOLDEN).fract();
                if lower[j] > -INF {
                    lower[j] -= 1e-9 * (0.5 + f1);
                }
                if upper[j] < INF {
                    upper[j] += 1e-9 * (0.5 + f2);
                }
            }
        }

        // All structural and slack columns start nonbasic at the finite bound
        // nearest zero.
        let mut at_upper = vec![false; n_total];
        let mut x_non = vec![0.0; n_total];
        for j in 0..(n_struct + n_slack) {
            let (lo, hi) = (lower[j], upper[j]);
            let at_up = if hi <= 0.0 && hi < INF {
                true
            } else if lo >= 0.0 {
                false
            } else {
                // lo < 0 < hi: pick the smaller magnitude bound.
                hi < INF && hi.abs() < lo.abs()
            };
            at_upper[j] = at_up;
            x_non[j] = if at_up { hi } else { lo };
        }

        // Residual signs decide row orientation: rows with negative residual
        // are negated so the artificial basis is the identity.
        // Row equilibration: scale every row to unit max coefficient so the
        // pivot tolerance separates real entries from elimination noise.
        let mut row_rhs: Vec<f64> = instance.rows().iter().map(|r| r.rhs).collect();
        for i in 0..m {
            let mut mx = 0.0f64;
            for j in 0..(n_struct + n_slack) {
                mx = mx.max(t[i * n_total + j].abs());
            }
            if mx > 0.0 && (mx < 0.5 || mx > 2.0) {
                let s = 1.0 / mx;
                for j in 0..(n_struct + n_slack) {
                    t[i * n_total + j] *= s;
                }
                row_rhs[i] *= s;
            }
        }

        // Crash basis: a row's own slack when its starting value is
        // feasible, an artificial otherwise. Rows are oriented so the basic
        // column is +e_i; artificial columns always carry the identity in
        // the original matrix (refreshes and refactorization rely on it).
        let mut basis = Vec::with_capacity(m);
        let mut xb = Vec::with_capacity(m);
        let mut in_basis = vec![false; n_total];
        let mut b0 = Vec::with_capacity(m);
        for i in 0..m {
            let mut act = 0.0;
            for j in 0..(n_struct + n_slack) {
                let c = t[i * n_total + j];
                if c != 0.0 {
                    act += c * x_non[j];
                }
            }
            let rhs = row_rhs[i];
            let r = rhs - act;
            let sense = instance.rows()[i].sense;
            let slack_ok = match sense {
                Sense::Le => r >= 0.0,
                Sense::Ge => r <= 0.0,
                Sense::Eq => false,
            };
            let flip = if slack_ok {
                sense == Sense::Ge
            } else {
                r < 0.0
            };
            if flip {
                for j in 0..(n_struct + n_slack) {
                    t[i * n_total + j] = -t[i * n_total + j];
                }
                b0.push(-rhs);
            } else {
                b0.push(rhs);
            }
            let art = n_struct + n_slack + i;
            t[i * n_total + art] = 1.0;
            if slack_ok {
                let s = slack_of_row[i].expect("inequality slack");
                basis.push(s);
                in_basis[s] = true;
                // Never to be touched: pin the unused artificial at zero.
                upper[art] = 0.0;
            } else {
                basis.push(art);
                in_basis[art] = true;
            }
            xb.push(r.abs());
        }

        let mut cost = instance.objective().to_vec();
        cost.resize(n_total, 0.0);

        Ok(Tableau {
            m,
            n_total,
            n_struct,
            n_art,
            lower,
            upper,
            true_lower,
            true_upper,
            cost,
            a0: t.clone(),
            b0,
            t,
            basis,
            xb,
            at_upper,
            in_basis,
            d: vec![0.0; n_total],
        })
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            self.lower[j]
        }
    }

    /// Recomputes reduced costs for the given objective from scratch.
    fn price(&mut self, cost: &[f64]) {
        for j in 0..self.n_total {
            self.d[j] = cost[j];
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                let row = &self.t[i * self.n_total..(i + 1) * self.n_total];
                for j in 0..self.n_total {
                    self.d[j] -= cb * row[j];
                }
            }
        }
    }

    fn run(mut self, pricing: Pricing, iteration_limit: usize) -> Result<LpSolution, MilpError> {
        let art_base = self.n_total - self.n_art;

        // Phase 1: drive artificial infeasibility to zero.
        let mut phase1_cost = vec![0.0; self.n_total];
        for j in art_base..self.n_total {
            phase1_cost[j] = -1.0;
        }
        let mut iters = 0;
        let needs_phase1 = self
            .basis
            .iter()
            .enumerate()
            .any(|(i, &b)| b >= art_base && self.xb[i] > FEAS_TOL);
        if needs_phase1 {
            self.price(&phase1_cost);
            match self.iterate(&phase1_cost, pricing, iteration_limit, &mut iters)? {
                IterOutcome::Optimal => {}
                IterOutcome::Unbounded => {
                    return Err(MilpError::Numerical(
                        "phase-1 objective unbounded".to_string(),
                    ))
                }
                IterOutcome::IterationLimit => {
                    self.restore_true_bounds();
                    return Ok(self.extract(LpStatus::IterationLimit, iters));
                }
            }
            let infeas: f64 = self
                .basis
                .iter()
                .enumerate()
                .filter(|(_, &b)| b >= art_base)
                .map(|(i, _)| self.xb[i])
                .sum();
            if infeas > 1e-7 {
                self.restore_true_bounds();
                return Ok(self.extract(LpStatus::Infeasible, iters));
            }
        }
        // Lock artificials at zero for phase 2.
        for j in art_base..self.n_total {
            self.upper[j] = 0.0;
            if !self.in_basis[j] {
                self.at_upper[j] = false;
            }
        }
        self.refresh_xb();

        let cost = self.cost.clone();
        self.price(&cost);
        let outcome = self.iterate(&cost, pricing, iteration_limit, &mut iters)?;
        self.restore_true_bounds();
        let status = match outcome {
            IterOutcome::Optimal => LpStatus::Optimal,
            IterOutcome::Unbounded => LpStatus::Unbounded,
            IterOutcome::IterationLimit => LpStatus::IterationLimit,
        };
        Ok(self.extract(status, iters))
    }

    fn extract(&self, status: LpStatus, iterations: usize) -> LpSolution {
        let mut values = vec![0.0; self.n_struct];
        for (j, value) in values.iter_mut().enumerate() {
            *value = self.nonbasic_value(j);
        }
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                values[b] = self.xb[i];
            }
        }
        let objective = values
            .iter()
            .zip(&self.cost)
            .map(|(x, c)| x * c)
            .sum();
        LpSolution {
            status,
            values,
            objective,
            iterations,
        }
    }

    /// Recomputes basic values from the original rhs through the identity
    /// artificial block: x_B = B^-1 b - sum of nonbasic columns. Periodic
    /// refreshes cancel accumulated update drift.
    fn refresh_xb(&mut self) {
        let n = self.n_total;
        let art_base = n - self.n_art;
        let mut fresh = vec![0.0; self.m];
        for i in 0..self.m {
            let bi = self.b0[i];
            if bi != 0.0 {
                for (r, f) in fresh.iter_mut().enumerate() {
                    *f += bi * self.t[r * n + art_base + i];
                }
            }
        }
        for j in 0..n {
            if self.in_basis[j] {
                continue;
            }
            let xj = self.nonbasic_value(j);
            if xj != 0.0 {
                for (r, f) in fresh.iter_mut().enumerate() {
                    *f -= xj * self.t[r * n + j];
                }
            }
        }
        self.xb = fresh;
    }

    /// Drops the anti-degeneracy perturbation: nonbasic variables return to
    /// their true bounds and basic values follow.
    fn restore_true_bounds(&mut self) {
        let frontier = self.n_total - self.n_art;
        self.lower[..frontier].copy_from_slice(&self.true_lower[..frontier]);
        self.upper[..frontier].copy_from_slice(&self.true_upper[..frontier]);
        self.refresh_xb();
    }

    /// Rebuilds the tableau from the original matrix for the current basis
    /// by Gauss-Jordan elimination with row pivoting. Kills accumulated
    /// update error; called when the drift audit trips.
    fn refactorize(&mut self) -> Result<(), MilpError> {
        let n = self.n_total;
        let m = self.m;
        self.t.copy_from_slice(&self.a0);
        let mut placed = vec![false; m];
        for i in 0..m {
            let col = self.basis[i];
            // Pivot row: the unplaced row with the largest entry in `col`.
            let mut best: Option<(usize, f64)> = None;
            for r in 0..m {
                if placed[r] {
                    continue;
                }
                let a = self.t[r * n + col].abs();
                if best.map_or(true, |(_, v)| a > v) {
                    best = Some((r, a));
                }
            }
            let Some((r, mag)) = best else {
                return Err(MilpError::Numerical("refactorization ran out of rows".into()));
            };
            if mag < 1e-11 {
                return Err(MilpError::Numerical(format!(
                    "singular basis during refactorization (column {col})"
                )));
            }
            if r != i {
                for j in 0..n {
                    self.t.swap(r * n + j, i * n + j);
                }
                placed.swap(r, i);
            }
            placed[i] = true;
            let inv = 1.0 / self.t[i * n + col];
            for j in 0..n {
                self.t[i * n + j] *= inv;
            }
            for r2 in 0..m {
                if r2 == i {
                    continue;
                }
                let f = self.t[r2 * n + col];
                if f != 0.0 {
                    let (head, tail) = self.t.split_at_mut(r2.max(i) * n);
                    let (row_a, row_b) = if r2 < i {
                        (&mut head[r2 * n..r2 * n + n], &tail[..n])
                    } else {
                        (&mut tail[..n], &head[i * n..i * n + n])
                    };
                    for j in 0..n {
                        row_a[j] -= f * row_b[j];
                    }
                }
            }
        }
        self.refresh_xb();
        Ok(())
    }

    /// Residual of the assembled point against the original rows; a drift
    /// audit used under debug assertions.
    fn assembled_residual(&self) -> f64 {
        let mut x = vec![0.0; self.n_total];
        for (j, xv) in x.iter_mut().enumerate() {
            *xv = self.nonbasic_value(j);
        }
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.xb[i];
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            let row = &self.a0[i * self.n_total..(i + 1) * self.n_total];
            let act: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
            worst = worst.max((act - self.b0[i]).abs());
        }
        worst
    }

    fn objective_of_basis(&self, cost: &[f64]) -> f64 {
        let mut z = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            z += cost[b] * self.xb[i];
        }
        for j in 0..self.n_total {
            if !self.in_basis[j] {
                let v = self.nonbasic_value(j);
                if v != 0.0 {
                    z += cost[j] * v;
                }
            }
        }
        z
    }

    fn iterate(
        &mut self,
        cost: &[f64],
        mut pricing: Pricing,
        iteration_limit: usize,
        iters: &mut usize,
    ) -> Result<IterOutcome, MilpError> {
        let mut stall = 0usize;
        let stall_cap = self.m + self.n_total + 100;
        let mut last_obj = self.objective_of_basis(cost);
        let mut since_maintenance = 0usize;
        loop {
            if *iters >= iteration_limit {
                return Ok(IterOutcome::IterationLimit);
            }
            let Some((q, dir)) = self.choose_entering(pricing) else {
                // Confirm optimality on a clean tableau: drift can fake
                // both optimal and infeasible verdicts.
                if self.assembled_residual() > 1e-9 {
                    self.refactorize()?;
                    self.price(cost);
                    if self.choose_entering(pricing).is_some() {
                        continue;
                    }
                }
                self.refresh_xb();
                return Ok(IterOutcome::Optimal);
            };
            *iters += 1;
            since_maintenance += 1;
            match self.pivot(q, dir) {
                Err(MilpError::UnboundedDirection(_)) => return Ok(IterOutcome::Unbounded),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
            if since_maintenance >= 128 {
                since_maintenance = 0;
                if self.assembled_residual() > 1e-9 {
                    self.refactorize()?;
                }
                self.refresh_xb();
                self.price(cost);
            }
            let obj = self.objective_of_basis(cost);
            if obj > last_obj + 1e-12 {
                stall = 0;
                last_obj = obj;
            } else {
                stall += 1;
                if stall > stall_cap {
                    // Degeneracy guard: Bland's rule terminates finitely.
                    pricing = Pricing::Bland;
                }
            }
        }
    }

    /// Picks an entering column and its direction (+1 from lower, -1 from
    /// upper), or None at optimality.
    fn choose_entering(&self, pricing: Pricing) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n_total {
            if self.in_basis[j] || self.upper[j] - self.lower[j] <= 0.0 {
                continue;
            }
            let d = self.d[j];
            let (favorable, dir) = if self.at_upper[j] {
                (d < -COST_TOL, -1.0)
            } else {
                (d > COST_TOL, 1.0)
            };
            if !favorable {
                continue;
            }
            match pricing {
                Pricing::Bland => return Some((j, dir)),
                Pricing::Dantzig => {
                    let score = d.abs();
                    if best.map_or(true, |(_, _, s)| score > s) {
                        best = Some((j, dir, score));
                    }
                }
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn pivot(&mut self, q: usize, dir: f64) -> Result<(), MilpError> {
        let n = self.n_total;

        // Two-pass ratio test: find the blocking step length, then among
        // rows tying at it take the largest pivot magnitude (lowest basic
        // index on ties). Tiny pivots corrupt the tableau, so they only
        // win when nothing better blocks.
        let own_span = self.upper[q] - self.lower[q];
        let mut delta = if own_span < INF { own_span } else { f64::INFINITY };
        for i in 0..self.m {
            let a = dir * self.t[i * n + q];
            let b = self.basis[i];
            if a > PIVOT_TOL {
                if self.lower[b] > -INF {
                    delta = delta.min(((self.xb[i] - self.lower[b]) / a).max(0.0));
                }
            } else if a < -PIVOT_TOL && self.upper[b] < INF {
                delta = delta.min(((self.upper[b] - self.xb[i]) / -a).max(0.0));
            }
        }
        if delta.is_infinite() {
            return Err(MilpError::UnboundedDirection(q));
        }
        let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper bound)
        let mut best_piv = 0.0f64;
        for i in 0..self.m {
            let a = dir * self.t[i * n + q];
            let b = self.basis[i];
            let (room, at_upper) = if a > PIVOT_TOL {
                if self.lower[b] <= -INF {
                    continue;
                }
                (((self.xb[i] - self.lower[b]) / a).max(0.0), false)
            } else if a < -PIVOT_TOL {
                if self.upper[b] >= INF {
                    continue;
                }
                (((self.upper[b] - self.xb[i]) / -a).max(0.0), true)
            } else {
                continue;
            };
            if room <= delta + 1e-9 {
                let mag = a.abs();
                let better = mag > best_piv * (1.0 + 1e-12)
                    || ((mag - best_piv).abs() <= best_piv * 1e-12
                        && leave.map_or(true, |(r, _)| self.basis[r] > b));
                if better {
                    best_piv = mag;
                    leave = Some((i, at_upper));
                }
            }
        }
        if let Some((r, _)) = leave {
            // Never step past the chosen row's own room (degeneracy guard).
            let a = dir * self.t[r * n + q];
            let b = self.basis[r];
            let room = if a > 0.0 {
                ((self.xb[r] - self.lower[b]) / a).max(0.0)
            } else {
                ((self.upper[b] - self.xb[r]) / -a).max(0.0)
            };
            delta = delta.min(room);
        }

        match leave {
            None => {
                // Bound flip: entering travels to its opposite bound.
                for i in 0..self.m {
                    let a = self.t[i * n + q];
                    if a != 0.0 {
                        self.xb[i] -= dir * a * delta;
                    }
                }
                self.at_upper[q] = !self.at_upper[q];
                Ok(())
            }
            Some((r, leaves_at_upper)) => {
                let entering_value = self.nonbasic_value(q) + dir * delta;
                for i in 0..self.m {
                    if i != r {
                        let a = self.t[i * n + q];
                        if a != 0.0 {
                            self.xb[i] -= dir * a * delta;
                        }
                    }
                }
                let out = self.basis[r];
                self.in_basis[out] = false;
                self.at_upper[out] = leaves_at_upper;

                // Row elimination.
                let piv = self.t[r * n + q];
                if piv.abs() < PIVOT_TOL {
                    return Err(MilpError::Numerical(format!(
                        "pivot element too small: {piv:e}"
                    )));
                }
                let inv = 1.0 / piv;
                for j in 0..n {
                    self.t[r * n + j] *= inv;
                }
                for i in 0..self.m {
                    if i == r {
                        continue;
                    }
                    let f = self.t[i * n + q];
                    if f != 0.0 {
                        let (head, tail) = self.t.split_at_mut(r.max(i) * n);
                        let (row_i, row_r) = if i < r {
                            (&mut head[i * n..i * n + n], &tail[..n])
                        } else {
                            (&mut tail[..n], &head[r * n..r * n + n])
                        };
                        for j in 0..n {
                            row_i[j] -= f * row_r[j];
                        }
                    }
                }
                let f = self.d[q];
                if f != 0.0 {
                    for j in 0..n {
                        self.d[j] -= f * self.t[r * n + j];
                    }
                }
                self.basis[r] = q;
                self.in_basis[q] = true;
                self.xb[r] = entering_value;
                #[cfg(debug_assertions)]
                if std::env::var_os("MPBS_SIMPLEX_AUDIT").is_some() {
                    let drift = self.assembled_residual();
                    let tmax = self.t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    eprintln!(
                        "audit: drift {drift:.3e} tmax {tmax:.3e} entering {q} dir {dir} delta {delta:.3e} row {r} out {out} piv {piv:.3e}"
                    );
                    assert!(
                        drift < 1e-6,
                        "pivot corrupted state: residual {drift:.3e}, entering {q} dir {dir} \
                         delta {delta:.6e} leaving row {r} var {out} piv {piv:.3e} \
                         bounds_out [{}, {}] leaves_at_upper {leaves_at_upper}",
                        self.lower[out],
                        self.upper[out]
                    );
                }
                Ok(())
            }
        }
    }
}

enum IterOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Instance, Sense, VarKind};

    fn lp(rows: &[(&[(usize, f64)], Sense, f64)], bounds: &[(f64, f64)], c: &[f64]) -> Instance {
        let mut inst = Instance::new("test");
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            inst.add_variable(format!("x{j}"), lo, hi, VarKind::Continuous)
                .unwrap();
        }
        for (j, &cj) in c.iter().enumerate() {
            inst.add_objective(crate::VarId(j), cj);
        }
        for (i, (terms, sense, rhs)) in rows.iter().enumerate() {
            let terms: Vec<_> = terms.iter().map(|&(j, c)| (crate::VarId(j), c)).collect();
            inst.add_row(format!("r{i}"), "test", terms, *sense, *rhs)
                .unwrap();
        }
        inst
    }

    #[test]
    fn two_variable_kkt_solution() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x,y in [0, 10];
        // optimum at (4, 0): objective 12.
        let inst = lp(
            &[
                (&[(0, 1.0), (1, 1.0)], Sense::Le, 4.0),
                (&[(0, 1.0), (1, 3.0)], Sense::Le, 6.0),
            ],
            &[(0.0, 10.0), (0.0, 10.0)],
            &[3.0, 2.0],
        );
        let sol = solve_lp(&inst, &[], 1000).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 12.0).abs() < 1e-9);
        assert!((sol.values[0] - 4.0).abs() < 1e-9);
        assert!(sol.values[1].abs() < 1e-9);
    }

    #[test]
    fn equality_rows_need_phase_one() {
        // max x + y s.t. x + y = 2, x - y = 0 -> x = y = 1.
        let inst = lp(
            &[
                (&[(0, 1.0), (1, 1.0)], Sense::Eq, 2.0),
                (&[(0, 1.0), (1, -1.0)], Sense::Eq, 0.0),
            ],
            &[(0.0, 5.0), (0.0, 5.0)],
            &[1.0, 1.0],
        );
        let sol = solve_lp(&inst, &[], 1000).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] - 1.0).abs() < 1e-9);
        assert!((sol.values[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_row_pair() {
        let inst = lp(
            &[
                (&[(0, 1.0)], Sense::Le, 0.0),
                (&[(0, 1.0)], Sense::Ge, 1.0),
            ],
            &[(0.0, 10.0)],
            &[1.0],
        );
        let sol = solve_lp(&inst, &[], 1000).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn negative_bounds_and_upper_start() {
        // max -x with x in [-3, -1]: optimum x = -3.
        let inst = lp(&[], &[(-3.0, -1.0)], &[-1.0]);
        let sol = solve_lp(&inst, &[], 100).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] + 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn bound_flip_without_rows() {
        // max x + 2y, both in [0, 1], no rows: both flip to upper.
        let inst = lp(&[], &[(0.0, 1.0), (0.0, 1.0)], &[1.0, 2.0]);
        let sol = solve_lp(&inst, &[], 100).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ge_rows_with_interior_optimum() {
        // max -x - y s.t. x + y >= 2, x,y in [0, 5]: optimum on the line.
        let inst = lp(
            &[(&[(0, 1.0), (1, 1.0)], Sense::Ge, 2.0)],
            &[(0.0, 5.0), (0.0, 5.0)],
            &[-1.0, -1.0],
        );
        let sol = solve_lp(&inst, &[], 1000).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 2.0).abs() < 1e-9);
        assert!((sol.values[0] + sol.values[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn override_bounds_apply() {
        let inst = lp(&[], &[(0.0, 1.0)], &[1.0]);
        let sol = solve_lp(&inst, &[(0, 0.0, 0.0)], 100).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.values[0].abs() < 1e-12);
    }

    #[test]
    fn random_feasible_point_never_beats_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let n = rng.gen_range(2..6);
            let m = rng.gen_range(1..5);
            let x_star: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let mut inst = Instance::new(format!("rand{case}"));
            for (j, _) in x_star.iter().enumerate() {
                inst.add_variable(format!("x{j}"), 0.0, 4.0, VarKind::Continuous)
                    .unwrap();
            }
            for j in 0..n {
                inst.add_objective(crate::VarId(j), rng.gen_range(-2.0..2.0));
            }
            for i in 0..m {
                let terms: Vec<_> = (0..n)
                    .map(|j| (crate::VarId(j), rng.gen_range(-1.0..2.0)))
                    .collect();
                let act: f64 = terms.iter().map(|(v, c)| c * x_star[v.0]).sum();
                // Feasible by construction at x*.
                inst.add_row(format!("r{i}"), "t", terms, Sense::Le, act + 0.1)
                    .unwrap();
            }
            let sol = solve_lp(&inst, &[], 10_000).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
            let obj_star = inst.objective_value(&x_star);
            assert!(
                sol.objective >= obj_star - 1e-7,
                "case {case}: {} < {}",
                sol.objective,
                obj_star
            );
            assert!(inst.max_violation(&sol.values) < 1e-7);
        }
    }
}
