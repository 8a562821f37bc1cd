//! Deterministic best-first branch and bound over the LP relaxation.
//!
//! Node order is (bound, insertion id); branching picks the most fractional
//! binary with the lowest variable id on ties. No randomness anywhere, so
//! identical instances and options produce bit-identical solutions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::instance::{Instance, VarKind};
use crate::simplex::{solve_lp, LpStatus};
use crate::MilpError;

/// Integrality tolerance: binaries within this of 0/1 count as integral.
pub const INT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: Status,
    pub values: Vec<f64>,
    pub objective: f64,
    pub node_count: usize,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Relative optimality gap at which the search stops.
    pub gap: f64,
    pub node_limit: usize,
    pub lp_iteration_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap: 0.0,
            node_limit: 1_000_000,
            lp_iteration_limit: 200_000,
        }
    }
}

struct Node {
    bound: f64,
    id: usize,
    fixes: Vec<(usize, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on bound; older node wins ties.
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves a maximization MILP to proven optimality within `options.gap`.
pub fn solve(instance: &Instance, options: &SolveOptions) -> Result<Solution, MilpError> {
    let binaries: Vec<usize> = instance
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect();

    let root_fixes = match singleton_tightening(instance) {
        Ok(f) => f,
        Err(MilpError::EmptyBounds(_)) => {
            return Ok(Solution {
                status: Status::Infeasible,
                values: vec![],
                objective: 0.0,
                node_count: 0,
                gap: 0.0,
            })
        }
        Err(e) => return Err(e),
    };

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut node_count = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut best_bound = f64::INFINITY;

    let push = |heap: &mut BinaryHeap<Node>, next_id: &mut usize, bound, fixes| {
        heap.push(Node {
            bound,
            id: *next_id,
            fixes,
        });
        *next_id += 1;
    };

    // Root node.
    match solve_lp(instance, &root_fixes, options.lp_iteration_limit) {
        Err(MilpError::EmptyBounds(_)) => {
            return Ok(Solution {
                status: Status::Infeasible,
                values: vec![],
                objective: 0.0,
                node_count: 0,
                gap: 0.0,
            })
        }
        Err(e) => return Err(e),
        Ok(lp) => match lp.status {
            LpStatus::Infeasible => {
                return Ok(Solution {
                    status: Status::Infeasible,
                    values: vec![],
                    objective: 0.0,
                    node_count: 1,
                    gap: 0.0,
                })
            }
            LpStatus::Unbounded => {
                return Err(MilpError::Invalid(
                    "LP relaxation is unbounded; instance is malformed".to_string(),
                ))
            }
            LpStatus::IterationLimit => {
                return Ok(Solution {
                    status: Status::IterationLimit,
                    values: lp.values,
                    objective: lp.objective,
                    node_count: 1,
                    gap: f64::INFINITY,
                })
            }
            LpStatus::Optimal => {
                push(&mut heap, &mut next_id, lp.objective, root_fixes.clone());
            }
        },
    }

    let mut status = Status::Optimal;
    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        if let Some((inc_obj, _)) = &incumbent {
            if node.bound <= inc_obj + 1e-9 {
                // Best-first: every remaining node is no better.
                best_bound = *inc_obj;
                break;
            }
            let denom = inc_obj.abs().max(1.0);
            if (node.bound - inc_obj) / denom <= options.gap {
                break;
            }
        }
        if node_count >= options.node_limit {
            status = Status::IterationLimit;
            break;
        }
        node_count += 1;

        let lp = match solve_lp(instance, &node.fixes, options.lp_iteration_limit) {
            Err(MilpError::EmptyBounds(_)) => continue,
            Err(e) => return Err(e),
            Ok(lp) => lp,
        };
        match lp.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(MilpError::Invalid(
                    "LP relaxation is unbounded; instance is malformed".to_string(),
                ))
            }
            LpStatus::IterationLimit => {
                status = Status::IterationLimit;
                continue;
            }
            LpStatus::Optimal => {}
        }
        if let Some((inc_obj, _)) = &incumbent {
            if lp.objective <= inc_obj + 1e-9 {
                continue;
            }
        }

        // Most fractional binary, lowest id on ties.
        let mut branch: Option<(usize, f64)> = None;
        for &j in &binaries {
            let x = lp.values[j];
            let frac_dist = (x - x.round()).abs();
            if frac_dist > INT_TOL {
                let score = (x - x.floor() - 0.5).abs();
                if branch.map_or(true, |(_, s)| score < s - 1e-12) {
                    branch = Some((j, score));
                }
            }
        }

        match branch {
            None => {
                // Integral: candidate incumbent.
                let viol = instance.max_violation(&lp.values);
                if viol > 1e-7 {
                    return Err(MilpError::Numerical(format!(
                        "incumbent violates rows by {viol:.3e}"
                    )));
                }
                let better = incumbent
                    .as_ref()
                    .map_or(true, |(obj, _)| lp.objective > obj + 1e-9);
                if better {
                    incumbent = Some((lp.objective, lp.values));
                }
            }
            Some((j, _)) => {
                let mut down = node.fixes.clone();
                down.push((j, 0.0, 0.0));
                push(&mut heap, &mut next_id, lp.objective, down);
                let mut up = node.fixes.clone();
                up.push((j, 1.0, 1.0));
                push(&mut heap, &mut next_id, lp.objective, up);
            }
        }
    }

    match incumbent {
        None => Ok(Solution {
            status: if status == Status::Optimal {
                Status::Infeasible
            } else {
                status
            },
            values: vec![],
            objective: 0.0,
            node_count,
            gap: 0.0,
        }),
        Some((obj, values)) => {
            let recomputed = instance.objective_value(&values);
            debug_assert!(
                (recomputed - obj).abs() <= 1e-7 * obj.abs().max(1.0),
                "objective mismatch: {recomputed} vs {obj}"
            );
            let gap = if heap.is_empty() || best_bound <= obj {
                0.0
            } else {
                (best_bound - obj) / obj.abs().max(1.0)
            };
            Ok(Solution {
                status,
                values,
                objective: recomputed,
                node_count,
                gap,
            })
        }
    }
}

/// One pass of singleton-row bound tightening; returns bound overrides.
fn singleton_tightening(instance: &Instance) -> Result<Vec<(usize, f64, f64)>, MilpError> {
    use crate::instance::Sense;
    let mut lo: Vec<f64> = instance.variables().iter().map(|v| v.lower).collect();
    let mut hi: Vec<f64> = instance.variables().iter().map(|v| v.upper).collect();
    for row in instance.rows() {
        if row.terms.len() != 1 {
            continue;
        }
        let (v, c) = row.terms[0];
        if c.abs() < 1e-12 {
            continue;
        }
        let b = row.rhs / c;
        let j = v.0;
        match (row.sense, c > 0.0) {
            (Sense::Le, true) | (Sense::Ge, false) => hi[j] = hi[j].min(b),
            (Sense::Ge, true) | (Sense::Le, false) => lo[j] = lo[j].max(b),
            (Sense::Eq, _) => {
                lo[j] = lo[j].max(b);
                hi[j] = hi[j].min(b);
            }
        }
    }
    let mut fixes = Vec::new();
    for (j, v) in instance.variables().iter().enumerate() {
        let (mut l, mut h) = (lo[j], hi[j]);
        if v.kind == VarKind::Binary {
            l = if l > 1e-9 { 1.0 } else { 0.0 };
            h = if h < 1.0 - 1e-9 { 0.0 } else { 1.0 };
        }
        if l > h + 1e-9 {
            return Err(MilpError::EmptyBounds(j));
        }
        if l > v.lower || h < v.upper {
            fixes.push((j, l, h.max(l)));
        }
    }
    Ok(fixes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Instance, Sense, VarKind};
    use crate::VarId;

    #[test]
    fn pure_lp_no_binaries() {
        let mut inst = Instance::new("lp");
        let x = inst.add_variable("x", 0.0, 10.0, VarKind::Continuous).unwrap();
        let y = inst.add_variable("y", 0.0, 10.0, VarKind::Continuous).unwrap();
        inst.add_objective(x, 3.0);
        inst.add_objective(y, 2.0);
        inst.add_row("r0", "t", vec![(x, 1.0), (y, 1.0)], Sense::Le, 4.0)
            .unwrap();
        inst.add_row("r1", "t", vec![(x, 1.0), (y, 3.0)], Sense::Le, 6.0)
            .unwrap();
        let sol = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 12.0).abs() < 1e-9);
    }

    #[test]
    fn knapsack_matches_enumeration() {
        // 8-item binary knapsack, compare against 2^8 enumeration.
        let weights = [3.0, 5.0, 7.0, 2.0, 9.0, 4.0, 6.0, 8.0];
        let values = [4.0, 7.0, 9.0, 3.0, 12.0, 5.0, 7.0, 10.0];
        let cap = 17.0;
        let mut inst = Instance::new("knap");
        let vars: Vec<VarId> = (0..8)
            .map(|j| {
                inst.add_variable(format!("x{j}"), 0.0, 1.0, VarKind::Binary)
                    .unwrap()
            })
            .collect();
        for (j, &v) in values.iter().enumerate() {
            inst.add_objective(vars[j], v);
        }
        inst.add_row(
            "cap",
            "t",
            vars.iter().zip(weights.iter()).map(|(&v, &w)| (v, w)).collect(),
            Sense::Le,
            cap,
        )
        .unwrap();

        let mut best = 0.0f64;
        for mask in 0u32..256 {
            let w: f64 = (0..8)
                .filter(|j| mask >> j & 1 == 1)
                .map(|j| weights[j])
                .sum();
            if w <= cap {
                let v: f64 = (0..8)
                    .filter(|j| mask >> j & 1 == 1)
                    .map(|j| values[j])
                    .sum();
                best = best.max(v);
            }
        }

        let sol = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(
            (sol.objective - best).abs() < 1e-7,
            "bb {} vs enum {}",
            sol.objective,
            best
        );
        for &v in &sol.values {
            assert!((v - v.round()).abs() < INT_TOL);
        }
    }

    #[test]
    fn infeasible_binary_instance() {
        let mut inst = Instance::new("inf");
        let x = inst.add_variable("x", 0.0, 1.0, VarKind::Binary).unwrap();
        inst.add_row("le", "t", vec![(x, 1.0)], Sense::Le, 0.0).unwrap();
        inst.add_row("ge", "t", vec![(x, 1.0)], Sense::Ge, 1.0).unwrap();
        let sol = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn lp_relaxation_bound_dominates_milp() {
        let mut inst = Instance::new("bnd");
        let x = inst.add_variable("x", 0.0, 1.0, VarKind::Binary).unwrap();
        let y = inst.add_variable("y", 0.0, 1.0, VarKind::Binary).unwrap();
        inst.add_objective(x, 2.0);
        inst.add_objective(y, 3.0);
        inst.add_row("r", "t", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.5)
            .unwrap();
        let relax = solve_lp(&inst, &[], 1000).unwrap();
        let sol = solve(&inst, &SolveOptions::default()).unwrap();
        assert!(relax.objective >= sol.objective - 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn determinism_bit_for_bit() {
        let mut inst = Instance::new("det");
        let vars: Vec<VarId> = (0..6)
            .map(|j| {
                inst.add_variable(format!("x{j}"), 0.0, 1.0, VarKind::Binary)
                    .unwrap()
            })
            .collect();
        for (j, &v) in vars.iter().enumerate() {
            inst.add_objective(v, 1.0 + j as f64 * 0.3);
        }
        inst.add_row(
            "r",
            "t",
            vars.iter().map(|&v| (v, 1.0)).collect(),
            Sense::Le,
            3.0,
        )
        .unwrap();
        let a = solve(&inst, &SolveOptions::default()).unwrap();
        let b = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.node_count, b.node_count);
    }
}
