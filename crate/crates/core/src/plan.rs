//! Typed restoration plan extracted from a solved instance. Only the first
//! step is marked executable; later steps are the receding-horizon
//! reference.

use std::collections::BTreeMap;

use mpbs_milp::{Solution, INT_TOL};

use crate::builder::{BuiltModel, VarKey};
use crate::error::CoreError;
use crate::feeder::{EdgeKind, NetworkGraph};
use crate::ids::{BlockId, BusId, EdgeId};
use crate::scenario::{LoadClass, Scenario};
use crate::state::SystemState;

#[derive(Clone, Debug)]
pub struct RestorationPlan {
    pub objective: f64,
    pub steps: Vec<PlanStep>,
}

#[derive(Clone, Debug)]
pub struct PlanStep {
    /// 1-based window index.
    pub window_step: usize,
    /// Absolute scenario step.
    pub abs_step: usize,
    pub executable: bool,
    /// Switches newly closed at this step.
    pub esw_closures: Vec<EdgeId>,
    pub ssw_closures: Vec<EdgeId>,
    /// Blocks newly energized at this step.
    pub blocks_energized: Vec<BlockId>,
    pub nl_pickups: Vec<BusId>,
    pub block_on: Vec<bool>,
    pub bus_on: Vec<bool>,
    pub edge_on: Vec<bool>,
    pub nl_on: Vec<bool>,
    /// Planned squared voltages (pu^2).
    pub v_sq: Vec<[f64; 3]>,
    /// Total planned BESS output per GFMI bus (kW).
    pub p_bess_kw: BTreeMap<BusId, f64>,
    pub p_tg_kw: f64,
    pub soc: BTreeMap<BusId, f64>,
    pub freq: BTreeMap<BusId, f64>,
    pub restored_cl_kw: f64,
    pub restored_nl_kw: f64,
}

impl RestorationPlan {
    pub fn first_step(&self) -> &PlanStep {
        &self.steps[0]
    }
}

fn as_bool(x: f64) -> bool {
    x > 0.5
}

/// Converts a solved instance into a typed plan. Rejects solutions whose
/// binaries drift beyond the integrality tolerance.
pub fn extract_plan(
    graph: &NetworkGraph,
    scenario: &Scenario,
    state: &SystemState,
    model: &BuiltModel,
    solution: &Solution,
) -> Result<RestorationPlan, CoreError> {
    let inst = &model.instance;
    for (j, var) in inst.variables().iter().enumerate() {
        if var.kind == mpbs_milp::VarKind::Binary {
            let x = solution.values[j];
            if (x - x.round()).abs() > INT_TOL {
                return Err(CoreError::Solve(format!(
                    "solution has fractional binary {} = {x}",
                    var.name
                )));
            }
        }
    }

    let value = |key: &VarKey| -> f64 {
        model
            .var(key)
            .map(|id| solution.values[id.0])
            .unwrap_or(0.0)
    };

    let t_len = model.window.len();
    let mut steps = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let block_on: Vec<bool> = (0..graph.blocks.len())
            .map(|g| as_bool(value(&VarKey::UBb(BlockId(g), t))))
            .collect();
        let bus_on: Vec<bool> = (0..graph.bus_names.len())
            .map(|b| as_bool(value(&VarKey::UB(BusId(b), t))))
            .collect();
        let mut edge_on = vec![false; graph.edges.len()];
        let mut esw_closures = Vec::new();
        let mut ssw_closures = Vec::new();
        for (ei, e) in graph.edges.iter().enumerate() {
            let eid = EdgeId(ei);
            let key = match e.kind {
                EdgeKind::Line => VarKey::UE(eid, t),
                EdgeKind::Esw => VarKey::UEsw(eid, t),
                EdgeKind::Ssw => VarKey::USsw(eid, t),
            };
            edge_on[ei] = as_bool(value(&key));
            let was_on = if t > 1 {
                let prev_key = match e.kind {
                    EdgeKind::Line => VarKey::UE(eid, t - 1),
                    EdgeKind::Esw => VarKey::UEsw(eid, t - 1),
                    EdgeKind::Ssw => VarKey::USsw(eid, t - 1),
                };
                as_bool(value(&prev_key))
            } else {
                state.edge_closed[ei]
            };
            if edge_on[ei] && !was_on {
                match e.kind {
                    EdgeKind::Esw => esw_closures.push(eid),
                    EdgeKind::Ssw => ssw_closures.push(eid),
                    EdgeKind::Line => {}
                }
            }
        }
        let mut blocks_energized = Vec::new();
        for (g, on) in block_on.iter().enumerate() {
            let was = if t > 1 {
                as_bool(value(&VarKey::UBb(BlockId(g), t - 1)))
            } else {
                state.block_energized[g]
            };
            if *on && !was {
                blocks_energized.push(BlockId(g));
            }
        }
        let mut nl_on = vec![false; graph.bus_names.len()];
        let mut nl_pickups = Vec::new();
        for load in &scenario.loads {
            if load.class != LoadClass::Nl {
                continue;
            }
            let b = load.bus;
            let on = as_bool(value(&VarKey::W(b, t)));
            let was = if t > 1 {
                as_bool(value(&VarKey::W(b, t - 1)))
            } else {
                state.nl_pickup[b.0]
            };
            if on && !nl_on[b.0] && !was {
                nl_pickups.push(b);
            }
            nl_on[b.0] = on;
        }
        nl_pickups.sort_unstable();
        nl_pickups.dedup();

        let mut v_sq = vec![[0.0; 3]; graph.bus_names.len()];
        for b in 0..graph.bus_names.len() {
            for p in graph.bus_phases[b].iter() {
                v_sq[b][p.index()] = value(&VarKey::V(BusId(b), p, t));
            }
        }

        let mut p_bess_kw = BTreeMap::new();
        let mut soc = BTreeMap::new();
        let mut freq = BTreeMap::new();
        for bess in &graph.fleet.bess {
            let total: f64 = graph.bus_phases[bess.bus.0]
                .iter()
                .map(|p| value(&VarKey::PBess(bess.bus, p, t)))
                .sum();
            p_bess_kw.insert(bess.bus, total);
            soc.insert(bess.bus, value(&VarKey::Soc(bess.bus, t)));
            freq.insert(bess.bus, value(&VarKey::F(bess.bus, t)));
        }
        let p_tg_kw = graph
            .fleet
            .tg
            .as_ref()
            .map(|tg| {
                graph.bus_phases[tg.bus.0]
                    .iter()
                    .map(|p| value(&VarKey::PTg(tg.bus, p, t)))
                    .sum()
            })
            .unwrap_or(0.0);

        let mut restored_cl_kw = 0.0;
        let mut restored_nl_kw = 0.0;
        for (li, load) in scenario.loads.iter().enumerate() {
            match load.class {
                LoadClass::Cl => restored_cl_kw += value(&VarKey::PCl(li, t)),
                LoadClass::Nl => restored_nl_kw += value(&VarKey::PNl(li, t)),
            }
        }

        steps.push(PlanStep {
            window_step: t,
            abs_step: model.window.abs_steps[t - 1],
            executable: t == 1,
            esw_closures,
            ssw_closures,
            blocks_energized,
            nl_pickups,
            block_on,
            bus_on,
            edge_on,
            nl_on,
            v_sq,
            p_bess_kw,
            p_tg_kw,
            soc,
            freq,
            restored_cl_kw,
            restored_nl_kw,
        });
    }

    Ok(RestorationPlan {
        objective: solution.objective,
        steps,
    })
}
