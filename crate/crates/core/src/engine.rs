//! The closed control loop: forecast, build and solve the restoration
//! problem, check the first step for inrush feasibility, apply voltage
//! reduction or switch blocking and re-solve when protection would
//! misoperate, execute the first step in the plant, and advance.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::builder::{build, BuildConfig, Window};
use crate::error::CoreError;
use crate::feeder::{EdgeKind, NetworkGraph, TransformerSpec};
use crate::ids::{BlockId, BusId, EdgeId, Phase};
use crate::inrush::{aggregate_mg, evaluate_action, InrushReport, MgInrushReport, MicrogridState};
use crate::plan::{extract_plan, PlanStep, RestorationPlan};
use crate::scenario::{LoadClass, Scenario};
use crate::state::{microgrids, MitigationFlags, SystemState, VoltageReduction};

#[derive(Clone, Debug)]
pub enum SolverBackend {
    Embedded(mpbs_milp::SolveOptions),
    /// Command invoked as `<cmd> <instance.mps> <solution.txt>`.
    External(String),
}

impl Default for SolverBackend {
    fn default() -> Self {
        SolverBackend::Embedded(mpbs_milp::SolveOptions::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VredPersistence {
    /// Reduction holds while the triggering block sits in its CLPU window.
    ClpuWindow,
    StepOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockPersistence {
    /// Blocked switches clear when the step is executed.
    StepOnly,
    /// Blocked switches stay blocked for the rest of the run.
    Always,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Prediction window length (steps).
    pub t_c: usize,
    /// Mitigation re-solve cap per step.
    pub iter_cap: usize,
    pub mitigation_enabled: bool,
    pub angle_grid_deg: f64,
    /// Multiplicative forecast noise on the PV rate: (fraction, seed).
    pub noise: Option<(f64, u64)>,
    pub solver: SolverBackend,
    pub vred_persistence: VredPersistence,
    pub block_persistence: BlockPersistence,
    pub build: BuildConfig,
    /// Where to dump the instance on solver failure.
    pub diag_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            t_c: 4,
            iter_cap: 3,
            mitigation_enabled: true,
            angle_grid_deg: crate::inrush::DEFAULT_ANGLE_GRID_DEG,
            noise: None,
            solver: SolverBackend::default(),
            vred_persistence: VredPersistence::ClpuWindow,
            block_persistence: BlockPersistence::StepOnly,
            build: BuildConfig::default(),
            diag_dir: None,
        }
    }
}

// --- log structures --------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct RestorationLog {
    pub feeder: String,
    pub scenario: String,
    pub steps: Vec<StepLog>,
    pub termination: Termination,
    /// String-id to dense-index maps for traceability.
    pub index_maps: IndexMaps,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexMaps {
    pub buses: Vec<String>,
    pub blocks: Vec<String>,
    pub edges: Vec<String>,
    pub laterals: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    Restored,
    HorizonExhausted,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub time: String,
    pub iterations: Vec<IterationLog>,
    pub executed: ExecutedLog,
    /// Realized-voltage box violations (plant truth, never masked).
    pub violations: Vec<String>,
    /// Structural-invariant violations of accepted plans (must stay empty).
    pub structural: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationLog {
    pub index: usize,
    /// What triggered this solve (empty on the first iteration).
    pub triggers: Vec<String>,
    pub objective: f64,
    pub planned_blocks: Vec<String>,
    pub planned_esws: Vec<String>,
    pub mg_reports: Vec<MgReportLog>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MgReportLog {
    pub mg_source: String,
    pub recloser: String,
    pub recloser_peaks_a: [f64; 3],
    pub recloser_flags: [bool; 3],
    pub laterals: Vec<LateralReportLog>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LateralReportLog {
    pub block: String,
    pub lateral: String,
    pub fuse: String,
    pub theta_wc_deg: f64,
    pub peaks_a: [f64; 3],
    pub flags: [bool; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct ExecutedLog {
    /// True when the iteration cap was hit and switching was withheld.
    pub held: bool,
    pub esw_closed: Vec<String>,
    pub ssw_closed: Vec<String>,
    pub blocks_energized: Vec<String>,
    pub nl_pickups: Vec<String>,
    pub restored_cl_kw: f64,
    pub restored_nl_kw: f64,
    pub soc: BTreeMap<String, f64>,
    pub p_bess_kw: BTreeMap<String, f64>,
    pub cum_discharge_kwh: BTreeMap<String, f64>,
    pub freq_hz: BTreeMap<String, f64>,
    /// Realized |V| (pu) per bus and phase; 0 for dead phases.
    pub v_pu: Vec<[f64; 3]>,
    pub vred_active: BTreeMap<String, [bool; 3]>,
    pub blocked_esws: Vec<String>,
}

// --- forecast ---------------------------------------------------------------

/// Deterministic scenario slice with optional seeded multiplicative noise on
/// the PV rate. Windows extending past the horizon truncate with a flag.
pub fn forecast(
    scenario: &Scenario,
    t_abs: usize,
    t_c: usize,
    noise: Option<(f64, u64)>,
) -> Window {
    let last = (t_abs + t_c - 1).min(scenario.n_steps);
    let abs_steps: Vec<usize> = (t_abs..=last).collect();
    let mut pv_rate: Vec<f64> = abs_steps.iter().map(|&s| scenario.pv_rate[s - 1]).collect();
    if let Some((frac, seed)) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b9).wrapping_add(t_abs as u64));
        for r in pv_rate.iter_mut() {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            *r = (*r * (1.0 + frac * z)).clamp(0.0, 1.0);
        }
    }
    let tg_available = abs_steps
        .iter()
        .map(|&s| scenario.tg_available[s - 1])
        .collect();
    Window {
        truncated: last < t_abs + t_c - 1,
        abs_steps,
        pv_rate,
        tg_available,
    }
}

// --- structural checks -------------------------------------------------------

/// Structural invariants of an accepted plan: radiality identity and
/// acyclicity per step, monotone status flags, one new ESW per dead block.
pub fn structural_violations(
    graph: &NetworkGraph,
    state: &SystemState,
    plan: &RestorationPlan,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut prev_block: Vec<bool> = state.block_energized.clone();
    let mut prev_bus: Vec<bool> = state.bus_energized.clone();
    let mut prev_edge: Vec<bool> = state.edge_closed.clone();
    let mut prev_nl: Vec<bool> = state.nl_pickup.clone();

    for step in &plan.steps {
        let t = step.window_step;
        // Radiality identity.
        let edges_on = step.edge_on.iter().filter(|x| **x).count() as i64;
        let buses_on = step.bus_on.iter().filter(|x| **x).count() as i64;
        let ssw_on = graph
            .ssw_edges()
            .filter(|(id, _)| step.edge_on[id.0])
            .count() as i64;
        let tg_on: i64 = graph
            .tg_buses
            .iter()
            .filter(|b| step.bus_on[b.0])
            .count() as i64;
        let roots = graph.gfmi_buses.len() as i64 + tg_on - ssw_on;
        if edges_on != buses_on - roots {
            out.push(format!(
                "step {t}: radiality identity broken: {edges_on} edges vs {buses_on} buses minus {roots} roots"
            ));
        }
        // Acyclicity of the energized subgraph.
        if let Err(e) = graph.check_radial(&step.edge_on) {
            out.push(format!("step {t}: {e}"));
        }
        // Monotone flags.
        for g in 0..graph.blocks.len() {
            if prev_block[g] && !step.block_on[g] {
                out.push(format!(
                    "step {t}: block {} de-energized",
                    graph.blocks[g].name
                ));
            }
        }
        for b in 0..graph.bus_names.len() {
            if prev_bus[b] && !step.bus_on[b] {
                out.push(format!("step {t}: bus {} de-energized", graph.bus_names[b]));
            }
            if prev_nl[b] && !step.nl_on[b] {
                out.push(format!(
                    "step {t}: NL pickup at {} reverted",
                    graph.bus_names[b]
                ));
            }
        }
        // One new ESW per freshly energized block.
        for (g, block) in graph.blocks.iter().enumerate() {
            if prev_block[g] {
                continue;
            }
            let new_esws = block
                .esws
                .iter()
                .filter(|e| step.edge_on[e.0] && !prev_edge[e.0])
                .count();
            if new_esws > 1 {
                out.push(format!(
                    "step {t}: block {} energized through {new_esws} switches",
                    block.name
                ));
            }
        }
        prev_block = step.block_on.clone();
        prev_bus = step.bus_on.clone();
        prev_edge = step.edge_on.clone();
        prev_nl = step.nl_on.clone();
    }
    out
}

// --- the loop ----------------------------------------------------------------

struct InrushOutcome {
    reports: Vec<MgInrushReport>,
    any_fuse: bool,
    any_recloser: bool,
}

pub struct Engine<'a> {
    pub graph: &'a NetworkGraph,
    pub scenario: &'a Scenario,
    pub config: EngineConfig,
    /// Transformer specs with the scenario residual-flux override applied.
    specs: Vec<TransformerSpec>,
}

impl<'a> Engine<'a> {
    pub fn new(graph: &'a NetworkGraph, scenario: &'a Scenario, config: EngineConfig) -> Self {
        let mut specs = graph.transformers.clone();
        if let Some(flux) = scenario.residual_flux {
            for s in specs.iter_mut() {
                s.lambda_0 = flux[s.phase.index()];
            }
        }
        Engine {
            graph,
            scenario,
            config,
            specs,
        }
    }

    pub fn run(&self) -> Result<(RestorationLog, SystemState), CoreError> {
        if self.graph.gfmi_buses.is_empty() {
            return Err(CoreError::Config(
                "feeder has no GFMI bus; black start needs at least one self-starting source"
                    .into(),
            ));
        }
        let mut state = SystemState::initial(self.graph, self.scenario);
        let mut steps = Vec::new();
        let mut cum_discharge: BTreeMap<BusId, f64> = BTreeMap::new();
        let mut termination = Termination::HorizonExhausted;

        for t_abs in 1..=self.scenario.n_steps {
            let step_log = self.run_step(&mut state, t_abs, &mut cum_discharge)?;
            steps.push(step_log);
            if self.restored(&state) {
                termination = Termination::Restored;
                break;
            }
        }

        let log = RestorationLog {
            feeder: self.graph.name.clone(),
            scenario: self.scenario.name.clone(),
            steps,
            termination,
            index_maps: IndexMaps {
                buses: self.graph.bus_names.clone(),
                blocks: self.graph.blocks.iter().map(|b| b.name.clone()).collect(),
                edges: self.graph.edges.iter().map(|e| e.name.clone()).collect(),
                laterals: self.graph.laterals.iter().map(|l| l.name.clone()).collect(),
            },
        };
        Ok((log, state))
    }

    fn restored(&self, state: &SystemState) -> bool {
        let all_blocks = state.block_energized.iter().all(|x| *x);
        let nl_buses: BTreeSet<BusId> = self
            .scenario
            .loads
            .iter()
            .filter(|l| l.class == LoadClass::Nl)
            .map(|l| l.bus)
            .collect();
        let all_nl = nl_buses.iter().all(|b| state.nl_pickup[b.0]);
        let tg_needed = self.graph.fleet.tg.is_some()
            && self.scenario.tg_available.iter().any(|x| *x);
        let tg_synced = if tg_needed {
            let tg_bus = self.graph.fleet.tg.as_ref().unwrap().bus;
            self.graph
                .ssw_edges()
                .any(|(id, e)| (e.from == tg_bus || e.to == tg_bus) && state.edge_closed[id.0])
        } else {
            true
        };
        all_blocks && all_nl && tg_synced
    }

    fn run_step(
        &self,
        state: &mut SystemState,
        t_abs: usize,
        cum_discharge: &mut BTreeMap<BusId, f64>,
    ) -> Result<StepLog, CoreError> {
        let window = forecast(self.scenario, t_abs, self.config.t_c, self.config.noise);
        let mut flags = self.flags_from_state(state, t_abs);
        let mut iterations: Vec<IterationLog> = Vec::new();
        let mut structural: Vec<String> = Vec::new();
        let mut triggers: Vec<String> = Vec::new();
        let mut accepted: Option<RestorationPlan> = None;
        let mut held = false;

        for iter_idx in 1..=self.config.iter_cap {
            let model = build(
                self.graph,
                self.scenario,
                state,
                &window,
                &flags,
                &self.config.build,
            )?;
            let solution = self.solve(&model)?;
            let plan = extract_plan(self.graph, self.scenario, state, &model, &solution)?;
            structural.extend(structural_violations(self.graph, state, &plan));

            let outcome = self.check_inrush(state, &plan)?;
            let mut iter_log = IterationLog {
                index: iter_idx,
                triggers: std::mem::take(&mut triggers),
                objective: plan.objective,
                planned_blocks: plan
                    .first_step()
                    .blocks_energized
                    .iter()
                    .map(|g| self.graph.blocks[g.0].name.clone())
                    .collect(),
                planned_esws: plan
                    .first_step()
                    .esw_closures
                    .iter()
                    .map(|e| self.graph.edges[e.0].name.clone())
                    .collect(),
                mg_reports: Vec::new(),
            };
            iter_log.mg_reports = outcome
                .reports
                .iter()
                .map(|r| self.log_mg_report(r))
                .collect();
            let feasible = !(outcome.any_fuse || outcome.any_recloser);
            iterations.push(iter_log);

            if feasible || !self.config.mitigation_enabled {
                accepted = Some(plan);
                break;
            }

            // Mitigation: reduced setpoints for fuse risk, blocked argmax
            // switch for recloser risk; both shrink the feasible set.
            if outcome.any_fuse {
                self.apply_voltage_reduction(state, &outcome, t_abs, &mut triggers);
            }
            if outcome.any_recloser {
                self.apply_switch_blocking(state, &outcome, &mut triggers);
            }
            flags = self.flags_from_state(state, t_abs);

            if iter_idx == self.config.iter_cap {
                held = true;
            }
        }

        // Fail-safe on cap exhaustion: hold topology, execute no switching.
        let executed_plan = accepted;
        let (exec_log, violations) = self.execute(
            state,
            t_abs,
            executed_plan.as_ref().map(|p| p.first_step()),
            held,
            cum_discharge,
        )?;

        Ok(StepLog {
            step: t_abs,
            time: self.scenario.time_label(t_abs),
            iterations,
            executed: exec_log,
            violations,
            structural,
        })
    }

    fn log_mg_report(&self, r: &MgInrushReport) -> MgReportLog {
        let recloser = self
            .graph
            .recloser_of_gfmi(r.recloser_bus)
            .map(|x| x.name.clone())
            .unwrap_or_default();
        MgReportLog {
            mg_source: self.graph.bus_name(r.recloser_bus).to_string(),
            recloser,
            recloser_peaks_a: r.mg_peaks,
            recloser_flags: r.recloser_flags,
            laterals: r
                .blocks
                .iter()
                .flat_map(|b| self.log_block_report(b))
                .collect(),
        }
    }

    fn log_block_report(&self, b: &InrushReport) -> Vec<LateralReportLog> {
        b.lateral_peaks
            .iter()
            .map(|(lid, peaks)| {
                let fuse = &self.graph.fuses[self.graph.fuse_of_lateral[lid.0]];
                LateralReportLog {
                    block: self.graph.blocks[b.block.0].name.clone(),
                    lateral: self.graph.laterals[lid.0].name.clone(),
                    fuse: fuse.name.clone(),
                    theta_wc_deg: b.theta_wc_deg,
                    peaks_a: *peaks,
                    flags: b.fuse_flags.get(lid).copied().unwrap_or([false; 3]),
                }
            })
            .collect()
    }

    /// Evaluates the plan's first-step block pickups against the protection
    /// thresholds, grouped per feeding microgrid.
    fn check_inrush(
        &self,
        state: &SystemState,
        plan: &RestorationPlan,
    ) -> Result<InrushOutcome, CoreError> {
        let first = plan.first_step();
        let comp = self.graph.components(&state.edge_closed);
        let mgs = microgrids(self.graph, state);

        // Per MG source: the block reports attributed to its recloser.
        let mut per_source: BTreeMap<BusId, Vec<InrushReport>> = BTreeMap::new();
        for &g in &first.blocks_energized {
            // The switch that feeds the block, if any.
            let via = first
                .esw_closures
                .iter()
                .copied()
                .find(|e| self.graph.blocks[g.0].esws.contains(e));
            let (source, k_bus) = match via {
                Some(esw) => {
                    let e = &self.graph.edges[esw.0];
                    let k = if self.graph.block_of_bus[e.from.0] == g {
                        e.to
                    } else {
                        e.from
                    };
                    // Feeding source: a GFMI in k's current island, or the
                    // GFMI of a simultaneously energized source block.
                    let source = mgs
                        .iter()
                        .find(|m| comp[m.source.0] == comp[k.0] && state.bus_energized[k.0])
                        .map(|m| m.source)
                        .or_else(|| {
                            self.graph
                                .gfmi_buses
                                .iter()
                                .copied()
                                .find(|s| self.graph.block_of_bus[s.0] == self.graph.block_of_bus[k.0])
                        });
                    match source {
                        Some(s) => (s, k),
                        None => {
                            return Err(CoreError::Internal(format!(
                                "block {} picked up through {} with no feeding source",
                                self.graph.blocks[g.0].name, e.name
                            )))
                        }
                    }
                }
                None => {
                    // Self-start: the block hosts its own GFMI.
                    let s = self
                        .graph
                        .gfmi_buses
                        .iter()
                        .copied()
                        .find(|s| self.graph.block_of_bus[s.0] == g)
                        .ok_or_else(|| {
                            CoreError::Internal(format!(
                                "block {} energized without a switch or a source",
                                self.graph.blocks[g.0].name
                            ))
                        })?;
                    (s, s)
                }
            };
            let mg = MicrogridState {
                source,
                energized_edges: state.edge_closed.clone(),
                omega: self.graph.omega(),
            };
            let v_k_sq = first.v_sq[k_bus.0];
            let report = evaluate_action(
                self.graph,
                &mg,
                g,
                via,
                v_k_sq,
                &self.specs,
                self.config.angle_grid_deg,
            )?;
            per_source.entry(source).or_default().push(report);
        }

        let mut reports = Vec::new();
        let mut any_fuse = false;
        let mut any_recloser = false;
        for (source, blocks) in per_source {
            let mg_report = aggregate_mg(self.graph, source, blocks)?;
            any_fuse |= mg_report.any_fuse_flag();
            any_recloser |= mg_report.any_recloser_flag();
            reports.push(mg_report);
        }
        Ok(InrushOutcome {
            reports,
            any_fuse,
            any_recloser,
        })
    }

    /// Fuse risk: pin the affected microgrid's GFMI setpoint to the reduced
    /// level. The phase mask follows the printed all-laterals product unless
    /// the per-lateral mode is configured.
    fn apply_voltage_reduction(
        &self,
        state: &mut SystemState,
        outcome: &InrushOutcome,
        t_abs: usize,
        triggers: &mut Vec<String>,
    ) {
        for mg in &outcome.reports {
            if !mg.any_fuse_flag() {
                continue;
            }
            let mut mask = [false; 3];
            if self.config.build.per_lateral_vred {
                for b in &mg.blocks {
                    for flags in b.fuse_flags.values() {
                        for p in 0..3 {
                            mask[p] |= flags[p];
                        }
                    }
                }
            } else {
                // Hadamard product across the step's laterals per phase.
                for p in 0..3 {
                    let mut all = true;
                    let mut any = false;
                    for b in &mg.blocks {
                        for flags in b.fuse_flags.values() {
                            any = true;
                            all &= flags[p];
                        }
                    }
                    mask[p] = any && all;
                }
            }
            if !mask.iter().any(|x| *x) {
                continue;
            }
            let until_step = match self.config.vred_persistence {
                VredPersistence::ClpuWindow => t_abs + self.scenario.clpu.beta.len() - 1,
                VredPersistence::StepOnly => t_abs,
            };
            state
                .mitigation
                .v_red
                .insert(mg.recloser_bus, VoltageReduction { mask, until_step });
            triggers.push(format!(
                "voltage reduction at {} phases {}",
                self.graph.bus_name(mg.recloser_bus),
                mask_string(mask)
            ));
        }
    }

    /// Recloser risk: block the candidate switch whose block carries the
    /// largest summed lateral inrush.
    fn apply_switch_blocking(
        &self,
        state: &mut SystemState,
        outcome: &InrushOutcome,
        triggers: &mut Vec<String>,
    ) {
        for mg in &outcome.reports {
            if !mg.any_recloser_flag() {
                continue;
            }
            let worst = mg
                .blocks
                .iter()
                .filter(|b| b.via_esw.is_some())
                .max_by(|a, b| {
                    a.total_lateral_current()
                        .partial_cmp(&b.total_lateral_current())
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| b.block.cmp(&a.block))
                });
            match worst {
                Some(report) => {
                    let esw = report.via_esw.expect("filtered");
                    state.mitigation.blocked_esws.insert(esw);
                    triggers.push(format!(
                        "blocked {} feeding {}",
                        self.graph.edges[esw.0].name, self.graph.blocks[report.block.0].name
                    ));
                }
                None => {
                    triggers.push(format!(
                        "recloser at {} tripped by a self-start block; no switch to block",
                        self.graph.bus_name(mg.recloser_bus)
                    ));
                }
            }
        }
    }

    fn flags_from_state(&self, state: &SystemState, t_abs: usize) -> MitigationFlags {
        let mut flags = MitigationFlags {
            v_red_sq: self.scenario.mitigation.v_red_pu * self.scenario.mitigation.v_red_pu,
            ..Default::default()
        };
        for (&bus, red) in &state.mitigation.v_red {
            if red.until_step >= t_abs {
                flags.gfmi_vred.insert(bus, red.mask);
            }
        }
        if !flags.gfmi_vred.is_empty() {
            // Floors relax for the affected microgrids' members and for
            // still-dead blocks they may pick up.
            let mgs = microgrids(self.graph, state);
            for mg in &mgs {
                if mg
                    .gfmi_members
                    .iter()
                    .any(|g| flags.gfmi_vred.contains_key(g))
                {
                    for &b in &mg.blocks {
                        flags.relax_floor_blocks.insert(b);
                    }
                }
            }
            for (g, on) in state.block_energized.iter().enumerate() {
                if !on {
                    flags.relax_floor_blocks.insert(BlockId(g));
                }
            }
            // Before any block is energized (initial self-start), the
            // sources' own blocks are also still dead and covered above.
        }
        for &esw in &state.mitigation.blocked_esws {
            flags.blocked_esws.insert((esw, 1));
        }
        flags
    }

    fn solve(&self, model: &crate::builder::BuiltModel) -> Result<mpbs_milp::Solution, CoreError> {
        let solution = match &self.config.solver {
            SolverBackend::Embedded(options) => mpbs_milp::solve(&model.instance, options)?,
            SolverBackend::External(cmd) => self.solve_external(model, cmd)?,
        };
        match solution.status {
            mpbs_milp::Status::Optimal => Ok(solution),
            mpbs_milp::Status::Infeasible => {
                let dump = self.dump_instance(model);
                Err(CoreError::Solve(format!(
                    "restoration problem infeasible at instance {}{dump}",
                    model.instance.name
                )))
            }
            mpbs_milp::Status::IterationLimit => {
                let dump = self.dump_instance(model);
                Err(CoreError::Solve(format!(
                    "solver hit its node/iteration limit on {}{dump}",
                    model.instance.name
                )))
            }
        }
    }

    fn dump_instance(&self, model: &crate::builder::BuiltModel) -> String {
        match &self.config.diag_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.mps", model.instance.name));
                match mpbs_milp::write_mps(&model.instance, &path) {
                    Ok(()) => format!("; instance dumped to {}", path.display()),
                    Err(e) => format!("; dump failed: {e}"),
                }
            }
            None => String::new(),
        }
    }

    fn solve_external(
        &self,
        model: &crate::builder::BuiltModel,
        cmd: &str,
    ) -> Result<mpbs_milp::Solution, CoreError> {
        let dir = std::env::temp_dir();
        let mps = dir.join(format!("{}.mps", model.instance.name));
        let sol = dir.join(format!("{}.sol", model.instance.name));
        mpbs_milp::write_mps(&model.instance, &mps)?;
        let status = std::process::Command::new(cmd)
            .arg(&mps)
            .arg(&sol)
            .status()
            .map_err(|e| CoreError::Solve(format!("external solver {cmd}: {e}")))?;
        if !status.success() {
            return Err(CoreError::Solve(format!(
                "external solver {cmd} exited with {status}"
            )));
        }
        Ok(mpbs_milp::import_solution(&model.instance, &sol)?)
    }

    /// Applies the executed first step to the plant and realizes voltages,
    /// SoC, and frequencies. `None` means a fail-safe hold (no switching).
    fn execute(
        &self,
        state: &mut SystemState,
        t_abs: usize,
        first: Option<&PlanStep>,
        held: bool,
        cum_discharge: &mut BTreeMap<BusId, f64>,
    ) -> Result<(ExecutedLog, Vec<String>), CoreError> {
        let mut esw_closed = Vec::new();
        let mut ssw_closed = Vec::new();
        let mut blocks_new = Vec::new();
        let mut nl_new = Vec::new();

        if let Some(step) = first {
            for (g, on) in step.block_on.iter().enumerate() {
                if *on && !state.block_energized[g] {
                    blocks_new.push(self.graph.blocks[g].name.clone());
                    state.block_pickup_step[g] = Some(t_abs);
                }
                state.block_energized[g] |= *on;
            }
            for (b, on) in step.bus_on.iter().enumerate() {
                state.bus_energized[b] |= *on;
            }
            for (e, on) in step.edge_on.iter().enumerate() {
                if *on && !state.edge_closed[e] {
                    match self.graph.edges[e].kind {
                        EdgeKind::Esw => esw_closed.push(self.graph.edges[e].name.clone()),
                        EdgeKind::Ssw => ssw_closed.push(self.graph.edges[e].name.clone()),
                        EdgeKind::Line => {}
                    }
                }
                state.edge_closed[e] |= *on;
            }
            for (b, on) in step.nl_on.iter().enumerate() {
                if *on && !state.nl_pickup[b] {
                    nl_new.push(self.graph.bus_names[b].clone());
                    state.nl_pickup_step[b] = Some(t_abs);
                }
                state.nl_pickup[b] |= *on;
            }
        }

        // GFMI setpoints for the realization: the plan's first-step voltage
        // at source buses; on a hold, the previous setpoints (or reduced
        // levels if mitigation is active).
        let mut setpoints: BTreeMap<BusId, [f64; 3]> = BTreeMap::new();
        for &gfmi in &self.graph.gfmi_buses {
            let v = match first {
                Some(step) => step.v_sq[gfmi.0],
                None => {
                    let mut v = [self.graph.gfmi_v_set_sq; 3];
                    if let Some(red) = state.mitigation.v_red.get(&gfmi) {
                        if red.until_step >= t_abs {
                            let red_sq = self.scenario.mitigation.v_red_pu
                                * self.scenario.mitigation.v_red_pu;
                            for p in 0..3 {
                                if red.mask[p] {
                                    v[p] = red_sq;
                                }
                            }
                        }
                    }
                    v
                }
            };
            setpoints.insert(gfmi, v);
        }

        // Planned injections of sources that are not island roots (other
        // GFMIs after a merge, and the TG): realized as planned, with the
        // root absorbing the residual.
        let mut planned_injections: BTreeMap<BusId, f64> = BTreeMap::new();
        if let Some(step) = first {
            for (&bus, &p) in &step.p_bess_kw {
                planned_injections.insert(bus, p);
            }
            if let Some(tg) = &self.graph.fleet.tg {
                planned_injections.insert(tg.bus, step.p_tg_kw);
            }
        }

        let realized = self.realize_plant(state, t_abs, &setpoints, &planned_injections)?;
        let violations = realized.violations.clone();

        // Advance stored state.
        state.step = t_abs;
        state.v_sq = realized.v_sq.clone();
        for (b, v) in realized.v_sq.iter().enumerate() {
            for p in 0..3 {
                if state.bus_energized[b] && v[p] > 0.0 {
                    state.v_meas[b][p] = v[p];
                }
            }
        }
        let dt_h = self.scenario.dt_hours();
        let mut soc_log = BTreeMap::new();
        let mut p_log = BTreeMap::new();
        let mut cum_log = BTreeMap::new();
        let mut freq_log = BTreeMap::new();
        for bess in &self.graph.fleet.bess {
            let p = realized.p_bess_kw.get(&bess.bus).copied().unwrap_or(0.0);
            let soc = state.soc.entry(bess.bus).or_insert(bess.soc_init);
            *soc -= p * dt_h / bess.e_nom_kwh;
            state.p_bess_prev.insert(bess.bus, p);
            let cum = cum_discharge.entry(bess.bus).or_insert(0.0);
            *cum += (p * dt_h).max(0.0);
            let f = self.scenario.frequency.f_nom
                - self.graph.fleet.freq.k_droop_hz * p / bess.s_nom_kva;
            state.freq.insert(bess.bus, f);
            soc_log.insert(self.graph.bus_name(bess.bus).to_string(), *soc);
            p_log.insert(self.graph.bus_name(bess.bus).to_string(), p);
            cum_log.insert(self.graph.bus_name(bess.bus).to_string(), *cum);
            freq_log.insert(self.graph.bus_name(bess.bus).to_string(), f);
        }

        // Expire step-scoped mitigation.
        state
            .mitigation
            .v_red
            .retain(|_, red| red.until_step > t_abs);
        if self.config.block_persistence == BlockPersistence::StepOnly {
            state.mitigation.blocked_esws.clear();
        }

        let v_pu: Vec<[f64; 3]> = realized
            .v_sq
            .iter()
            .map(|v| [v[0].max(0.0).sqrt(), v[1].max(0.0).sqrt(), v[2].max(0.0).sqrt()])
            .collect();

        let vred_active = state
            .mitigation
            .v_red
            .iter()
            .map(|(b, r)| (self.graph.bus_name(*b).to_string(), r.mask))
            .collect();

        Ok((
            ExecutedLog {
                held,
                esw_closed,
                ssw_closed,
                blocks_energized: blocks_new,
                nl_pickups: nl_new,
                restored_cl_kw: realized.restored_cl_kw,
                restored_nl_kw: realized.restored_nl_kw,
                soc: soc_log,
                p_bess_kw: p_log,
                cum_discharge_kwh: cum_log,
                freq_hz: freq_log,
                v_pu,
                vred_active,
                blocked_esws: state
                    .mitigation
                    .blocked_esws
                    .iter()
                    .map(|e| self.graph.edges[e.0].name.clone())
                    .collect(),
            },
            violations,
        ))
    }

    /// Solves the realized operating point on the executed topology: a
    /// backward-forward sweep of the linearized flow equalities with the
    /// voltage-dependent loads, per energized island. Non-root sources
    /// (other GFMIs after a merge, the TG) inject their planned power; the
    /// island root balances the residual.
    fn realize_plant(
        &self,
        state: &SystemState,
        t_abs: usize,
        setpoints: &BTreeMap<BusId, [f64; 3]>,
        planned_injections: &BTreeMap<BusId, f64>,
    ) -> Result<PlantRealization, CoreError> {
        let graph = self.graph;
        let n = graph.bus_names.len();
        let mut v_sq = vec![[0.0; 3]; n];
        let mut violations = Vec::new();
        let mut p_bess_kw: BTreeMap<BusId, f64> = BTreeMap::new();
        let mut restored_cl = 0.0;
        let mut restored_nl = 0.0;

        let comp = graph.components(&state.edge_closed);
        // Root per island: the lowest GFMI bus, else the TG bus.
        let mut roots: BTreeMap<usize, BusId> = BTreeMap::new();
        for &g in &graph.gfmi_buses {
            if state.bus_energized[g.0] {
                roots.entry(comp[g.0]).or_insert(g);
            }
        }
        if let Some(tg) = &graph.fleet.tg {
            if state.bus_energized[tg.bus.0] {
                roots.entry(comp[tg.bus.0]).or_insert(tg.bus);
            }
        }

        let eta = self.scenario.pv_rate[t_abs - 1];
        let zip = self.scenario.zip;
        let w_per_kw = 1000.0 / (graph.v_base_ln * graph.v_base_ln);

        for (&island, &root) in &roots {
            // Island bus set in BFS order from the root.
            let mut order = vec![root];
            let mut parent: Vec<Option<(BusId, EdgeId)>> = vec![None; n];
            let mut seen = vec![false; n];
            seen[root.0] = true;
            let mut qi = 0;
            while qi < order.len() {
                let b = order[qi];
                qi += 1;
                for &(eid, other) in &graph.adjacency[b.0] {
                    if state.edge_closed[eid.0] && !seen[other.0] && comp[other.0] == island {
                        seen[other.0] = true;
                        parent[other.0] = Some((b, eid));
                        order.push(other);
                    }
                }
            }

            // Secondary sources of this island (planned injections).
            let secondaries: Vec<BusId> = graph
                .gfmi_buses
                .iter()
                .copied()
                .chain(graph.tg_buses.iter().copied())
                .filter(|&s| s != root && comp[s.0] == island && state.bus_energized[s.0])
                .collect();

            let root_v = setpoints
                .get(&root)
                .copied()
                .unwrap_or([self.graph.gfmi_v_set_sq; 3]);
            for &b in &order {
                v_sq[b.0] = root_v;
            }

            let (mut island_cl, mut island_nl) = (0.0, 0.0);
            for _ in 0..200 {
                // Loads at current voltages.
                let mut inj_p = vec![[0.0; 3]; n];
                let mut inj_q = vec![[0.0; 3]; n];
                island_cl = 0.0;
                island_nl = 0.0;
                for load in &self.scenario.loads {
                    let b = load.bus;
                    if comp[b.0] != island || !state.bus_energized[b.0] {
                        continue;
                    }
                    let ladder = match load.class {
                        LoadClass::Cl => clpu_ladder(
                            &self.scenario.clpu.beta,
                            state.block_pickup_step[graph.block_of_bus[b.0].0],
                            t_abs,
                        ),
                        LoadClass::Nl => {
                            if !state.nl_pickup[b.0] {
                                0.0
                            } else {
                                clpu_ladder(
                                    &self.scenario.clpu.beta,
                                    state.nl_pickup_step[b.0],
                                    t_abs,
                                )
                            }
                        }
                    };
                    if ladder == 0.0 {
                        continue;
                    }
                    let v = v_sq[b.0][load.phase.index()];
                    let v_m = state.v_meas[b.0][load.phase.index()].max(1e-6);
                    let a = zip.k_z + zip.k_i / (2.0 * v_m.sqrt());
                    let c = zip.k_i * v_m.sqrt() / 2.0 + zip.k_p;
                    let p = load.p_kw[t_abs - 1] * (a * v + c) * ladder;
                    let q = p * load.tan_phi;
                    inj_p[b.0][load.phase.index()] -= p;
                    inj_q[b.0][load.phase.index()] -= q;
                    match load.class {
                        LoadClass::Cl => island_cl += p,
                        LoadClass::Nl => island_nl += p,
                    }
                }
                for pv in &graph.fleet.pv {
                    if comp[pv.bus.0] == island && state.bus_energized[pv.bus.0] {
                        for p in graph.bus_phases[pv.bus.0].iter() {
                            let inj = pv.s_nom_kva / 3.0 * eta;
                            inj_p[pv.bus.0][p.index()] += inj;
                            inj_q[pv.bus.0][p.index()] += 0.352 * inj;
                        }
                    }
                }
                for &s in &secondaries {
                    let planned = planned_injections.get(&s).copied().unwrap_or(0.0);
                    let phases = graph.bus_phases[s.0].len() as f64;
                    for p in graph.bus_phases[s.0].iter() {
                        inj_p[s.0][p.index()] += planned / phases;
                    }
                    p_bess_kw.insert(s, planned);
                }

                // Backward pass: accumulate flows toward the root.
                let mut flow_p = vec![[0.0; 3]; graph.edges.len()];
                let mut flow_q = vec![[0.0; 3]; graph.edges.len()];
                let mut down_p = inj_p;
                let mut down_q = inj_q;
                for &b in order.iter().rev() {
                    if let Some((pb, eid)) = parent[b.0] {
                        for p in 0..3 {
                            flow_p[eid.0][p] = -down_p[b.0][p];
                            flow_q[eid.0][p] = -down_q[b.0][p];
                            down_p[pb.0][p] += down_p[b.0][p];
                            down_q[pb.0][p] += down_q[b.0][p];
                        }
                    }
                }
                let root_net: f64 = down_p[root.0].iter().sum();
                p_bess_kw.insert(root, -root_net);

                // Forward pass: propagate voltage drops from the root.
                let mut max_dv = 0.0f64;
                for &b in &order {
                    if let Some((pb, eid)) = parent[b.0] {
                        let e = &graph.edges[eid.0];
                        let sign = if e.from == pb { 1.0 } else { -1.0 };
                        for phi in e.phases.iter() {
                            let coeff = crate::builder::drop_coefficients(graph, eid, phi);
                            let mut drop = 0.0;
                            for psi in e.phases.iter() {
                                let (r_eff, x_eff) = coeff[psi.index()];
                                drop += 2.0
                                    * (r_eff * sign * flow_p[eid.0][psi.index()]
                                        + x_eff * sign * flow_q[eid.0][psi.index()])
                                    * w_per_kw;
                            }
                            let fresh = v_sq[pb.0][phi.index()] - drop;
                            max_dv = max_dv.max((fresh - v_sq[b.0][phi.index()]).abs());
                            v_sq[b.0][phi.index()] = fresh;
                        }
                    }
                }
                if max_dv < 1e-12 {
                    break;
                }
            }
            restored_cl += island_cl;
            restored_nl += island_nl;
        }

        // Voltage-box audit on the realized point.
        for b in 0..n {
            if !state.bus_energized[b] {
                continue;
            }
            for p in graph.bus_phases[b].iter() {
                let v = v_sq[b][p.index()];
                let g = graph.block_of_bus[b];
                let relaxed = state
                    .mitigation
                    .v_red
                    .values()
                    .any(|r| r.until_step >= t_abs)
                    || !state.block_energized[g.0];
                let floor = if relaxed {
                    graph.v_floor_sq
                        * self.scenario.mitigation.v_red_pu
                        * self.scenario.mitigation.v_red_pu
                } else {
                    graph.v_floor_sq
                };
                if v > graph.v_ceil_sq + 1e-9 || v < floor - 1e-9 {
                    violations.push(format!(
                        "step {t_abs}: realized voltage {v:.4} pu^2 at {}.{p} outside [{floor:.4}, {:.4}]",
                        graph.bus_names[b], graph.v_ceil_sq
                    ));
                }
            }
        }

        Ok(PlantRealization {
            v_sq,
            p_bess_kw,
            restored_cl_kw: restored_cl,
            restored_nl_kw: restored_nl,
            violations,
        })
    }
}

struct PlantRealization {
    v_sq: Vec<[f64; 3]>,
    p_bess_kw: BTreeMap<BusId, f64>,
    restored_cl_kw: f64,
    restored_nl_kw: f64,
    violations: Vec<String>,
}

/// Staircase amplification at absolute step `t` for an element picked up at
/// `pickup`: 1 + beta_o at the o-th step after pickup, 1 afterwards, 0 when
/// never picked up.
pub fn clpu_ladder(beta: &[f64; 3], pickup: Option<usize>, t: usize) -> f64 {
    match pickup {
        None => 0.0,
        Some(s) if s > t => 0.0,
        Some(s) => {
            let age = t - s;
            if age < 3 {
                1.0 + beta[age]
            } else {
                1.0
            }
        }
    }
}

fn mask_string(mask: [bool; 3]) -> String {
    let mut s = String::new();
    for p in Phase::ALL {
        if mask[p.index()] {
            s.push(p.letter());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clpu_ladder_staircase() {
        let beta = [0.5, 0.3, 0.1];
        assert_eq!(clpu_ladder(&beta, None, 5), 0.0);
        assert_eq!(clpu_ladder(&beta, Some(3), 2), 0.0);
        assert_eq!(clpu_ladder(&beta, Some(3), 3), 1.5);
        assert_eq!(clpu_ladder(&beta, Some(3), 4), 1.3);
        assert_eq!(clpu_ladder(&beta, Some(3), 5), 1.1);
        assert_eq!(clpu_ladder(&beta, Some(3), 6), 1.0);
    }

    #[test]
    fn zero_beta_collapses_to_plain_demand() {
        let beta = [0.0, 0.0, 0.0];
        assert_eq!(clpu_ladder(&beta, Some(1), 1), 1.0);
        assert_eq!(clpu_ladder(&beta, Some(1), 2), 1.0);
    }

    #[test]
    fn forecast_slices_and_truncates() {
        let toy = crate::testkit::Toy::default();
        let (_, scenario) = toy.build();
        let w = forecast(&scenario, 1, 4, None);
        assert_eq!(w.abs_steps, vec![1, 2, 3, 4]);
        assert!(!w.truncated);
        let w = forecast(&scenario, scenario.n_steps, 4, None);
        assert_eq!(w.abs_steps.len(), 1);
        assert!(w.truncated);
    }

    #[test]
    fn forecast_noise_is_seed_reproducible() {
        let toy = crate::testkit::Toy::default();
        let (_, mut scenario) = toy.build();
        scenario.pv_rate = vec![0.5; scenario.n_steps];
        let a = forecast(&scenario, 2, 4, Some((0.05, 42)));
        let b = forecast(&scenario, 2, 4, Some((0.05, 42)));
        assert_eq!(a.pv_rate, b.pv_rate);
        let c = forecast(&scenario, 2, 4, Some((0.05, 43)));
        assert_ne!(a.pv_rate, c.pv_rate);
        for (x, y) in a.pv_rate.iter().zip(&scenario.pv_rate[1..5]) {
            assert!((x - y).abs() <= 0.05 * y + 1e-12);
        }
    }
}
