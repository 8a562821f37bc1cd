//! Mutable per-step restoration state and active mitigation flags.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::feeder::NetworkGraph;
use crate::ids::{BlockId, BusId, EdgeId};
use crate::scenario::Scenario;

/// Snapshot of the plant between control steps. `step` counts completed
/// steps; the next solve covers window steps `step + 1 ..`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub step: usize,
    pub block_energized: Vec<bool>,
    pub bus_energized: Vec<bool>,
    pub edge_closed: Vec<bool>,
    /// Non-critical-load pickup flag per bus.
    pub nl_pickup: Vec<bool>,
    pub soc: BTreeMap<BusId, f64>,
    /// Realized squared voltage (pu^2) per bus and phase; zero when dead.
    pub v_sq: Vec<[f64; 3]>,
    /// Linearization point for the ZIP model (pu^2); defaults to 1.0 and
    /// tracks the last realized value of energized buses.
    pub v_meas: Vec<[f64; 3]>,
    /// Island frequency per GFMI source bus (Hz).
    pub freq: BTreeMap<BusId, f64>,
    /// Realized total BESS output at the last executed step (kW), the
    /// boundary for the rate-of-change surrogate.
    pub p_bess_prev: BTreeMap<BusId, f64>,
    /// Step at which each block was energized (CLPU ladder history).
    pub block_pickup_step: Vec<Option<usize>>,
    pub nl_pickup_step: Vec<Option<usize>>,
    pub mitigation: ActiveMitigation,
}

/// Mitigation decisions that persist in the plant between steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActiveMitigation {
    /// Per GFMI bus: flagged phases and the last step the reduction covers.
    pub v_red: BTreeMap<BusId, VoltageReduction>,
    /// ESWs blocked for the step being planned.
    pub blocked_esws: BTreeSet<EdgeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VoltageReduction {
    pub mask: [bool; 3],
    pub until_step: usize,
}

impl SystemState {
    pub fn initial(graph: &NetworkGraph, scenario: &Scenario) -> SystemState {
        let nb = graph.bus_names.len();
        let mut soc = BTreeMap::new();
        let mut freq = BTreeMap::new();
        let mut p_bess_prev = BTreeMap::new();
        for b in &graph.fleet.bess {
            soc.insert(b.bus, b.soc_init);
            freq.insert(b.bus, scenario.frequency.f_nom);
            p_bess_prev.insert(b.bus, 0.0);
        }
        SystemState {
            step: 0,
            block_energized: vec![false; graph.blocks.len()],
            bus_energized: vec![false; nb],
            edge_closed: vec![false; graph.edges.len()],
            nl_pickup: vec![false; nb],
            soc,
            v_sq: vec![[0.0; 3]; nb],
            v_meas: vec![[1.0; 3]; nb],
            freq,
            p_bess_prev,
            block_pickup_step: vec![None; graph.blocks.len()],
            nl_pickup_step: vec![None; nb],
            mitigation: ActiveMitigation::default(),
        }
    }

    /// Blocks picked up within the CLPU ladder depth at window step `t`
    /// contribute boundary staircase terms; this returns the in-ladder
    /// delta for block `g` at absolute step `abs_t` (1 if the block was
    /// picked up exactly then).
    pub fn pickup_delta(&self, g: BlockId, abs_t: usize) -> f64 {
        match self.block_pickup_step[g.0] {
            Some(s) if s == abs_t => 1.0,
            _ => 0.0,
        }
    }

    pub fn nl_delta(&self, bus: BusId, abs_t: usize) -> f64 {
        match self.nl_pickup_step[bus.0] {
            Some(s) if s == abs_t => 1.0,
            _ => 0.0,
        }
    }
}

/// Mitigation data handed to the MILP builder for one solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MitigationFlags {
    /// Reduced squared-voltage setpoint (pu^2).
    pub v_red_sq: f64,
    /// GFMI buses whose setpoint is pinned to `v_red_sq` on flagged phases.
    pub gfmi_vred: BTreeMap<BusId, [bool; 3]>,
    /// Blocks whose bus voltage floors relax proportionally to the reduced
    /// setpoint (members of the affected microgrid plus still-dead blocks).
    pub relax_floor_blocks: BTreeSet<BlockId>,
    /// ESWs excluded from closure, per window step (1-based).
    pub blocked_esws: BTreeSet<(EdgeId, usize)>,
}

impl MitigationFlags {
    pub fn is_empty(&self) -> bool {
        self.gfmi_vred.is_empty() && self.blocked_esws.is_empty()
    }
}

/// A microgrid: one energized island rooted at GFMI (or TG) sources.
#[derive(Clone, Debug, PartialEq)]
pub struct Microgrid {
    /// Representative source (lowest-index GFMI bus in the island).
    pub source: BusId,
    /// All GFMI buses inside the island.
    pub gfmi_members: Vec<BusId>,
    pub blocks: Vec<BlockId>,
}

/// Connected components of the energized subgraph that contain a GFMI.
pub fn microgrids(graph: &NetworkGraph, state: &SystemState) -> Vec<Microgrid> {
    let comp = graph.components(&state.edge_closed);
    let mut by_comp: BTreeMap<usize, Microgrid> = BTreeMap::new();
    for &g in &graph.gfmi_buses {
        if !state.bus_energized[g.0] {
            continue;
        }
        let c = comp[g.0];
        by_comp
            .entry(c)
            .or_insert_with(|| Microgrid {
                source: g,
                gfmi_members: Vec::new(),
                blocks: Vec::new(),
            })
            .gfmi_members
            .push(g);
    }
    for (gi, block) in graph.blocks.iter().enumerate() {
        if !state.block_energized[gi] {
            continue;
        }
        let c = comp[block.buses[0].0];
        if let Some(mg) = by_comp.get_mut(&c) {
            mg.blocks.push(BlockId(gi));
        }
    }
    by_comp.into_values().collect()
}
