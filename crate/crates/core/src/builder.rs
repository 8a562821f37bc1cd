//! Restoration MILP construction: block energization, switch actions,
//! radiality, device models, ZIP loads with cold-load pickup, unbalanced
//! linearized power flow, and the mitigation hooks (reduced GFMI setpoints,
//! blocked switches).
//!
//! The builder is pure: identical inputs produce an identical instance, row
//! by row, so MPS exports are byte-stable. Families are labelled for the
//! census log and audits.

use std::collections::BTreeMap;

use mpbs_milp::{Instance, Sense, VarId, VarKind};

use crate::error::CoreError;
use crate::feeder::{EdgeKind, NetworkGraph};
use crate::ids::{BlockId, BusId, EdgeId, Phase};
use crate::scenario::{LoadClass, Scenario};
use crate::state::{MitigationFlags, SystemState};

/// Build-time knobs. Defaults follow the documented design choices.
#[derive(Clone, Debug)]
pub struct BuildConfig {
    /// Sides of the regular polygon inscribed in each apparent-power disc.
    pub polygon_sides: usize,
    /// Apply the reduced voltage per flagged lateral's own phases rather
    /// than requiring every lateral of the microgrid to be flagged.
    pub per_lateral_vred: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            polygon_sides: 12,
            per_lateral_vred: false,
        }
    }
}

/// Forecast window handed to the builder: absolute scenario steps with the
/// (possibly noise-perturbed) exogenous series.
#[derive(Clone, Debug)]
pub struct Window {
    /// Absolute 1-based scenario step per window step.
    pub abs_steps: Vec<usize>,
    pub pv_rate: Vec<f64>,
    pub tg_available: Vec<bool>,
    pub truncated: bool,
}

impl Window {
    pub fn len(&self) -> usize {
        self.abs_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_steps.is_empty()
    }
}

/// Structured variable key; display order defines instance column order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum VarKey {
    UBb(BlockId, usize),
    UB(BusId, usize),
    UE(EdgeId, usize),
    UEsw(EdgeId, usize),
    USsw(EdgeId, usize),
    W(BusId, usize),
    V(BusId, Phase, usize),
    F(BusId, usize),
    Fg(BlockId, usize),
    FQss(BusId, usize),
    FRoc(BusId, usize),
    FNadir(BusId, usize),
    PFlow(EdgeId, Phase, usize),
    QFlow(EdgeId, Phase, usize),
    PTg(BusId, Phase, usize),
    QTg(BusId, Phase, usize),
    PBess(BusId, Phase, usize),
    QBess(BusId, Phase, usize),
    PPv(BusId, Phase, usize),
    QPv(BusId, Phase, usize),
    PZip(usize, usize),
    PCl(usize, usize),
    QCl(usize, usize),
    PNl(usize, usize),
    QNl(usize, usize),
    /// Product p_zip[load, t] * u_bb[block(load), tau].
    YCl(usize, usize, usize),
    /// Product p_zip[load, t] * w[bus(load), tau].
    YNl(usize, usize, usize),
    RootCount(usize),
    Soc(BusId, usize),
}

/// The built instance plus the key-to-column map used by plan extraction.
#[derive(Debug)]
pub struct BuiltModel {
    pub instance: Instance,
    pub vars: BTreeMap<VarKey, VarId>,
    pub window: Window,
}

impl BuiltModel {
    pub fn var(&self, key: &VarKey) -> Option<VarId> {
        self.vars.get(key).copied()
    }
}

struct Ctx<'a> {
    graph: &'a NetworkGraph,
    scenario: &'a Scenario,
    state: &'a SystemState,
    flags: &'a MitigationFlags,
    cfg: &'a BuildConfig,
    window: &'a Window,
    inst: Instance,
    vars: BTreeMap<VarKey, VarId>,
}

impl<'a> Ctx<'a> {
    fn t_len(&self) -> usize {
        self.window.len()
    }

    fn add(&mut self, key: VarKey, name: String, lo: f64, hi: f64, kind: VarKind) -> VarId {
        let id = self
            .inst
            .add_variable(name, lo, hi, kind)
            .expect("variable declaration");
        self.vars.insert(key, id);
        id
    }

    fn v(&self, key: VarKey) -> VarId {
        *self
            .vars
            .get(&key)
            .unwrap_or_else(|| panic!("undeclared variable {key:?}"))
    }

    fn row(&mut self, name: String, family: &str, terms: Vec<(VarId, f64)>, sense: Sense, rhs: f64) {
        self.inst
            .add_row(name, family, terms, sense, rhs)
            .expect("row construction");
    }

    fn bus_name(&self, b: BusId) -> &str {
        self.graph.bus_name(b)
    }

    fn edge_name(&self, e: EdgeId) -> &str {
        &self.graph.edges[e.0].name
    }

    fn block_name(&self, g: BlockId) -> &str {
        &self.graph.blocks[g.0].name
    }

    /// Boundary value of the bus energization flag at window step t-1.
    fn ub_prev(&self, b: BusId, t: usize) -> Boundary {
        if t > 1 {
            Boundary::Var(self.v(VarKey::UB(b, t - 1)))
        } else {
            Boundary::Const(f64::from(self.state.bus_energized[b.0]))
        }
    }

    fn ubb_prev(&self, g: BlockId, t: usize) -> Boundary {
        if t > 1 {
            Boundary::Var(self.v(VarKey::UBb(g, t - 1)))
        } else {
            Boundary::Const(f64::from(self.state.block_energized[g.0]))
        }
    }

    fn uesw_prev(&self, e: EdgeId, t: usize) -> Boundary {
        if t > 1 {
            Boundary::Var(self.v(VarKey::UEsw(e, t - 1)))
        } else {
            Boundary::Const(f64::from(self.state.edge_closed[e.0]))
        }
    }

    fn ussw_prev(&self, e: EdgeId, t: usize) -> Boundary {
        if t > 1 {
            Boundary::Var(self.v(VarKey::USsw(e, t - 1)))
        } else {
            Boundary::Const(f64::from(self.state.edge_closed[e.0]))
        }
    }

}

/// Either an in-window variable or a boundary constant from the state.
#[derive(Clone, Copy)]
enum Boundary {
    Var(VarId),
    Const(f64),
}

impl Boundary {
    /// Adds `coef * value` into a row: variable term or rhs adjustment.
    fn add(self, coef: f64, terms: &mut Vec<(VarId, f64)>, rhs: &mut f64) {
        match self {
            Boundary::Var(v) => terms.push((v, coef)),
            Boundary::Const(c) => *rhs -= coef * c,
        }
    }
}

/// Buses with at least one load record of the given class.
fn class_buses(scenario: &Scenario, class: LoadClass) -> Vec<BusId> {
    let mut out: Vec<BusId> = scenario
        .loads
        .iter()
        .filter(|l| l.class == class)
        .map(|l| l.bus)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Three-phase voltage-drop coefficients for one edge and receiving phase:
/// returns per sending phase the effective (r, x) pair including the
/// balanced rotation factors.
pub fn drop_coefficients(graph: &NetworkGraph, e: EdgeId, phi: Phase) -> [(f64, f64); 3] {
    let edge = &graph.edges[e.0];
    let mut out = [(0.0, 0.0); 3];
    for psi in Phase::ALL {
        if !edge.phases.contains(psi) {
            continue;
        }
        let z = edge.z[phi.index()][psi.index()];
        let gamma = (phi.reference_angle_deg() - psi.reference_angle_deg()).to_radians();
        let (s, c) = gamma.sin_cos();
        out[psi.index()] = (z.re * c + z.im * s, z.im * c - z.re * s);
    }
    out
}

/// Builds the restoration MILP over the given window.
pub fn build(
    graph: &NetworkGraph,
    scenario: &Scenario,
    state: &SystemState,
    window: &Window,
    flags: &MitigationFlags,
    cfg: &BuildConfig,
) -> Result<BuiltModel, CoreError> {
    if window.is_empty() {
        return Err(CoreError::Config("window length must be at least 1".into()));
    }
    // Build-time feasibility of the boundary state.
    for bess in &graph.fleet.bess {
        let soc = state.soc.get(&bess.bus).copied().unwrap_or(bess.soc_init);
        if soc < bess.soc_min - 1e-9 || soc > bess.soc_max + 1e-9 {
            return Err(CoreError::Validation(format!(
                "state SoC {soc} at bus {} outside [{}, {}]",
                graph.bus_name(bess.bus),
                bess.soc_min,
                bess.soc_max
            )));
        }
    }

    let mut ctx = Ctx {
        graph,
        scenario,
        state,
        flags,
        cfg,
        window,
        inst: Instance::new(format!("mpbs_t{}", state.step + 1)),
        vars: BTreeMap::new(),
    };

    declare_variables(&mut ctx)?;
    objective(&mut ctx);
    block_energization(&mut ctx);
    frequency_ties(&mut ctx);
    esw_rows(&mut ctx);
    ssw_rows(&mut ctx);
    radiality(&mut ctx);
    tg_rows(&mut ctx);
    bess_rows(&mut ctx);
    gfmi_frequency_rows(&mut ctx);
    pv_rows(&mut ctx);
    zip_rows(&mut ctx);
    clpu_rows(&mut ctx);
    balance_rows(&mut ctx);
    voltage_drop_rows(&mut ctx);
    security_rows(&mut ctx);
    blocked_rows(&mut ctx);

    Ok(BuiltModel {
        instance: ctx.inst,
        vars: ctx.vars,
        window: window.clone(),
    })
}

/// Per-phase flow cap: total source capability (kW per phase).
fn flow_big_m(graph: &NetworkGraph) -> f64 {
    let mut m = 0.0;
    for b in &graph.fleet.bess {
        m += b.s_nom_kva / 3.0;
    }
    if let Some(tg) = &graph.fleet.tg {
        m += tg.s_max_kva / 3.0;
    }
    for p in &graph.fleet.pv {
        m += p.s_nom_kva / 3.0;
    }
    1.1 * m
}

/// Frequency disagreement cap: covers a dead bus (0 Hz) against a live one.
fn freq_big_m(scenario: &Scenario) -> f64 {
    2.0 * scenario.frequency.f_ceil
}

fn declare_variables(ctx: &mut Ctx) -> Result<(), CoreError> {
    let t_len = ctx.t_len();
    let graph = ctx.graph;
    let scen = ctx.scenario;

    // Frequency-relevant buses: switch terminals, GFMI, TG.
    let mut f_buses = graph.switch_terminal_buses();
    for &b in graph.gfmi_buses.iter().chain(graph.tg_buses.iter()) {
        if !f_buses.contains(&b) {
            f_buses.push(b);
        }
    }
    f_buses.sort_unstable();

    let nl_buses = class_buses(scen, LoadClass::Nl);

    for t in 1..=t_len {
        for (gi, block) in graph.blocks.iter().enumerate() {
            let g = BlockId(gi);
            let lo = if ctx.state.block_energized[gi] { 1.0 } else { 0.0 };
            ctx.add(
                VarKey::UBb(g, t),
                format!("uBB.{}.t{t}", block.name),
                lo,
                1.0,
                VarKind::Binary,
            );
        }
        for b in 0..graph.bus_names.len() {
            let bus = BusId(b);
            let mut lo = if ctx.state.bus_energized[b] { 1.0 } else { 0.0 };
            let mut hi = 1.0;
            if graph.gfmi_buses.contains(&bus) {
                lo = 1.0; // self-starting source
            }
            if graph.tg_buses.contains(&bus) && !ctx.window.tg_available[t - 1] {
                hi = 0.0;
                lo = 0.0;
            }
            ctx.add(
                VarKey::UB(bus, t),
                format!("uB.{}.t{t}", ctx.graph.bus_name(bus)),
                lo,
                hi,
                VarKind::Binary,
            );
        }
        for (ei, e) in graph.edges.iter().enumerate() {
            let eid = EdgeId(ei);
            let lo = if ctx.state.edge_closed[ei] { 1.0 } else { 0.0 };
            match e.kind {
                EdgeKind::Line => {
                    ctx.add(
                        VarKey::UE(eid, t),
                        format!("uE.{}.t{t}", e.name),
                        lo,
                        1.0,
                        VarKind::Binary,
                    );
                }
                EdgeKind::Esw => {
                    ctx.add(
                        VarKey::UEsw(eid, t),
                        format!("uESW.{}.t{t}", e.name),
                        lo,
                        1.0,
                        VarKind::Binary,
                    );
                }
                EdgeKind::Ssw => {
                    ctx.add(
                        VarKey::USsw(eid, t),
                        format!("uSSW.{}.t{t}", e.name),
                        lo,
                        1.0,
                        VarKind::Binary,
                    );
                }
            }
        }
        for &b in &nl_buses {
            let lo = if ctx.state.nl_pickup[b.0] { 1.0 } else { 0.0 };
            ctx.add(
                VarKey::W(b, t),
                format!("w.{}.t{t}", ctx.graph.bus_name(b)),
                lo,
                1.0,
                VarKind::Binary,
            );
        }

        // Voltages.
        for b in 0..graph.bus_names.len() {
            let bus = BusId(b);
            for p in graph.bus_phases[b].iter() {
                let (mut lo, mut hi) = (0.0, graph.v_ceil_sq);
                if graph.gfmi_buses.contains(&bus) {
                    // GFMI regulates its own bus; mitigation pins the
                    // setpoint to the reduced level on flagged phases.
                    let flagged = ctx
                        .flags
                        .gfmi_vred
                        .get(&bus)
                        .map(|m| m[p.index()])
                        .unwrap_or(false);
                    if flagged {
                        lo = ctx.flags.v_red_sq;
                        hi = ctx.flags.v_red_sq;
                    } else {
                        lo = graph.v_floor_sq;
                        hi = graph.gfmi_v_set_sq;
                    }
                }
                ctx.add(
                    VarKey::V(bus, p, t),
                    format!("v.{}.{p}.t{t}", ctx.graph.bus_name(bus)),
                    lo,
                    hi,
                    VarKind::Continuous,
                );
            }
        }

        // Frequencies.
        let fq = &scen.frequency;
        for &b in &f_buses {
            let (lo, hi) = if graph.gfmi_buses.contains(&b) {
                (fq.f_floor, fq.f_ceil)
            } else {
                (0.0, 2.0 * fq.f_nom)
            };
            ctx.add(
                VarKey::F(b, t),
                format!("f.{}.t{t}", ctx.graph.bus_name(b)),
                lo,
                hi,
                VarKind::Continuous,
            );
        }
        for (gi, block) in graph.blocks.iter().enumerate() {
            ctx.add(
                VarKey::Fg(BlockId(gi), t),
                format!("fg.{}.t{t}", block.name),
                0.0,
                2.0 * fq.f_nom,
                VarKind::Continuous,
            );
        }
        for &b in &graph.gfmi_buses {
            ctx.add(
                VarKey::FQss(b, t),
                format!("fqss.{}.t{t}", ctx.graph.bus_name(b)),
                fq.qss_floor,
                fq.qss_ceil,
                VarKind::Continuous,
            );
            ctx.add(
                VarKey::FRoc(b, t),
                format!("froc.{}.t{t}", ctx.graph.bus_name(b)),
                fq.roc_floor,
                fq.roc_ceil,
                VarKind::Continuous,
            );
            ctx.add(
                VarKey::FNadir(b, t),
                format!("fnadir.{}.t{t}", ctx.graph.bus_name(b)),
                fq.nadir_floor,
                fq.nadir_ceil,
                VarKind::Continuous,
            );
        }

        // Flows.
        let m_flow = flow_big_m(graph);
        for (ei, e) in graph.edges.iter().enumerate() {
            for p in e.phases.iter() {
                ctx.add(
                    VarKey::PFlow(EdgeId(ei), p, t),
                    format!("pF.{}.{p}.t{t}", e.name),
                    -m_flow,
                    m_flow,
                    VarKind::Continuous,
                );
                ctx.add(
                    VarKey::QFlow(EdgeId(ei), p, t),
                    format!("qF.{}.{p}.t{t}", e.name),
                    -m_flow,
                    m_flow,
                    VarKind::Continuous,
                );
            }
        }

        // Injections.
        if let Some(tg) = &graph.fleet.tg {
            let cap = tg.s_max_kva / 3.0;
            for p in graph.bus_phases[tg.bus.0].iter() {
                ctx.add(
                    VarKey::PTg(tg.bus, p, t),
                    format!("pTG.{}.{p}.t{t}", ctx.graph.bus_name(tg.bus)),
                    -cap,
                    cap,
                    VarKind::Continuous,
                );
                ctx.add(
                    VarKey::QTg(tg.bus, p, t),
                    format!("qTG.{}.{p}.t{t}", ctx.graph.bus_name(tg.bus)),
                    -cap,
                    cap,
                    VarKind::Continuous,
                );
            }
        }
        for bess in &graph.fleet.bess {
            let cap = bess.s_nom_kva / 3.0;
            for p in graph.bus_phases[bess.bus.0].iter() {
                ctx.add(
                    VarKey::PBess(bess.bus, p, t),
                    format!("pB.{}.{p}.t{t}", ctx.graph.bus_name(bess.bus)),
                    -cap,
                    cap,
                    VarKind::Continuous,
                );
                ctx.add(
                    VarKey::QBess(bess.bus, p, t),
                    format!("qB.{}.{p}.t{t}", ctx.graph.bus_name(bess.bus)),
                    -cap,
                    cap,
                    VarKind::Continuous,
                );
            }
            ctx.add(
                VarKey::Soc(bess.bus, t),
                format!("soc.{}.t{t}", ctx.graph.bus_name(bess.bus)),
                bess.soc_min,
                bess.soc_max,
                VarKind::Continuous,
            );
        }
        for pv in &graph.fleet.pv {
            let cap = pv.s_nom_kva / 3.0;
            for p in graph.bus_phases[pv.bus.0].iter() {
                ctx.add(
                    VarKey::PPv(pv.bus, p, t),
                    format!("pPV.{}.{p}.t{t}", ctx.graph.bus_name(pv.bus)),
                    0.0,
                    cap,
                    VarKind::Continuous,
                );
                ctx.add(
                    VarKey::QPv(pv.bus, p, t),
                    format!("qPV.{}.{p}.t{t}", ctx.graph.bus_name(pv.bus)),
                    0.0,
                    cap,
                    VarKind::Continuous,
                );
            }
        }

        // Loads: ZIP value, class powers, and product variables.
        let ladder_max = 1.0 + scen.clpu.beta.iter().cloned().fold(0.0, f64::max);
        for (li, load) in scen.loads.iter().enumerate() {
            let (x_lo, x_hi) = zip_bounds(ctx, li, t);
            ctx.add(
                VarKey::PZip(li, t),
                format!("pZ.{li}.t{t}"),
                x_lo,
                x_hi,
                VarKind::Continuous,
            );
            let p_hi = x_hi * ladder_max;
            let q_span = p_hi * load.tan_phi.abs() + 1e-9;
            match load.class {
                LoadClass::Cl => {
                    ctx.add(
                        VarKey::PCl(li, t),
                        format!("pCL.{li}.t{t}"),
                        0.0,
                        p_hi,
                        VarKind::Continuous,
                    );
                    ctx.add(
                        VarKey::QCl(li, t),
                        format!("qCL.{li}.t{t}"),
                        -q_span,
                        q_span,
                        VarKind::Continuous,
                    );
                    for tau in tau_range(t) {
                        ctx.add(
                            VarKey::YCl(li, t, tau),
                            format!("yCL.{li}.t{t}.u{tau}"),
                            0.0,
                            x_hi,
                            VarKind::Continuous,
                        );
                    }
                }
                LoadClass::Nl => {
                    ctx.add(
                        VarKey::PNl(li, t),
                        format!("pNL.{li}.t{t}"),
                        0.0,
                        p_hi,
                        VarKind::Continuous,
                    );
                    ctx.add(
                        VarKey::QNl(li, t),
                        format!("qNL.{li}.t{t}"),
                        -q_span,
                        q_span,
                        VarKind::Continuous,
                    );
                    for tau in tau_range(t) {
                        ctx.add(
                            VarKey::YNl(li, t, tau),
                            format!("yNL.{li}.t{t}.u{tau}"),
                            0.0,
                            x_hi,
                            VarKind::Continuous,
                        );
                    }
                }
            }
        }

        let n_roots_hi = graph.gfmi_buses.len() as f64 + 1.0;
        ctx.add(
            VarKey::RootCount(t),
            format!("R.t{t}"),
            0.0,
            n_roots_hi,
            VarKind::Continuous,
        );
    }
    Ok(())
}

/// In-window staircase steps tau whose block/NL status multiplies
/// p_zip at window step t: tau in [t-3, t] clipped to >= 1.
fn tau_range(t: usize) -> impl Iterator<Item = usize> {
    (t.saturating_sub(3).max(1))..=t
}

/// Bounds of the linearized ZIP demand for one load at one window step.
fn zip_bounds(ctx: &Ctx, li: usize, t: usize) -> (f64, f64) {
    let load = &ctx.scenario.loads[li];
    let zip = &ctx.scenario.zip;
    let v_m = ctx.state.v_meas[load.bus.0][load.phase.index()].max(1e-6);
    let a = zip.k_z + zip.k_i / (2.0 * v_m.sqrt());
    let c = zip.k_i * v_m.sqrt() / 2.0 + zip.k_p;
    let p_nom = load.p_kw[ctx.window.abs_steps[t - 1] - 1];
    (p_nom * c.min(a * ctx.graph.v_ceil_sq + c), p_nom * (a * ctx.graph.v_ceil_sq + c))
}

/// ZIP coefficients (slope on v, constant) for one load at one step.
fn zip_affine(ctx: &Ctx, li: usize, t: usize) -> (f64, f64) {
    let load = &ctx.scenario.loads[li];
    let zip = &ctx.scenario.zip;
    let v_m = ctx.state.v_meas[load.bus.0][load.phase.index()].max(1e-6);
    let a = zip.k_z + zip.k_i / (2.0 * v_m.sqrt());
    let c = zip.k_i * v_m.sqrt() / 2.0 + zip.k_p;
    let p_nom = load.p_kw[ctx.window.abs_steps[t - 1] - 1];
    (p_nom * a, p_nom * c)
}

fn objective(ctx: &mut Ctx) {
    let dt_h = ctx.scenario.dt_hours();
    for t in 1..=ctx.t_len() {
        for (li, load) in ctx.scenario.loads.iter().enumerate() {
            let (key, gamma) = match load.class {
                LoadClass::Cl => (VarKey::PCl(li, t), ctx.scenario.weights.gamma_cl),
                LoadClass::Nl => (VarKey::PNl(li, t), ctx.scenario.weights.gamma_nl),
            };
            let var = ctx.v(key);
            ctx.inst.add_objective(var, dt_h * gamma);
        }
    }
}

fn block_energization(ctx: &mut Ctx) {
    let t_len = ctx.t_len();
    for t in 1..=t_len {
        for gi in 0..ctx.graph.blocks.len() {
            let g = BlockId(gi);
            let ubb = ctx.v(VarKey::UBb(g, t));
            // Monotone energization; the boundary case is a variable bound.
            if t > 1 {
                let prev = ctx.v(VarKey::UBb(g, t - 1));
                ctx.row(
                    format!("bb_mono.{}.t{t}", ctx.block_name(g)),
                    "bb_monotone",
                    vec![(ubb, 1.0), (prev, -1.0)],
                    Sense::Ge,
                    0.0,
                );
            }
            // Bus and line status tie to the block.
            for &b in &ctx.graph.blocks[gi].buses {
                let ub = ctx.v(VarKey::UB(b, t));
                ctx.row(
                    format!("bb_bus.{}.t{t}", ctx.bus_name(b)),
                    "bb_bus_tie",
                    vec![(ubb, 1.0), (ub, -1.0)],
                    Sense::Eq,
                    0.0,
                );
            }
            for &e in &ctx.graph.blocks[gi].line_edges {
                let ue = ctx.v(VarKey::UE(e, t));
                ctx.row(
                    format!("bb_line.{}.t{t}", ctx.edge_name(e)),
                    "bb_line_tie",
                    vec![(ubb, 1.0), (ue, -1.0)],
                    Sense::Eq,
                    0.0,
                );
            }
            // ESW implies both adjacent blocks energized; one new closure
            // per de-energized block.
            let esws = ctx.graph.blocks[gi].esws.clone();
            for &e in &esws {
                let uesw = ctx.v(VarKey::UEsw(e, t));
                ctx.row(
                    format!("bb_esw.{}.{}.t{t}", ctx.block_name(g), ctx.edge_name(e)),
                    "bb_esw_le",
                    vec![(ubb, 1.0), (uesw, -1.0)],
                    Sense::Ge,
                    0.0,
                );
            }
            if !esws.is_empty() {
                let m = esws.len() as f64;
                let mut terms = Vec::new();
                let mut rhs = 1.0;
                for &e in &esws {
                    terms.push((ctx.v(VarKey::UEsw(e, t)), 1.0));
                    ctx.uesw_prev(e, t).add(-1.0, &mut terms, &mut rhs);
                }
                ctx.ubb_prev(g, t).add(-m, &mut terms, &mut rhs);
                ctx.inst.record_big_m(
                    format!("esw_cap.{}.t{t}", ctx.block_name(g)),
                    m,
                );
                ctx.row(
                    format!("esw_cap.{}.t{t}", ctx.block_name(g)),
                    "bb_esw_cap",
                    terms,
                    Sense::Le,
                    rhs,
                );
            }
        }
    }
}

fn frequency_ties(ctx: &mut Ctx) {
    let sw_terms = ctx.graph.switch_terminal_buses();
    for t in 1..=ctx.t_len() {
        for (gi, block) in ctx.graph.blocks.iter().enumerate() {
            let fg = ctx.v(VarKey::Fg(BlockId(gi), t));
            for &b in &block.buses {
                let is_gfmi = ctx.graph.gfmi_buses.contains(&b);
                let is_sw = sw_terms.contains(&b);
                if !is_gfmi && !is_sw {
                    continue;
                }
                let f = ctx.v(VarKey::F(b, t));
                let family = if is_gfmi { "freq_gfmi_tie" } else { "freq_sw_tie" };
                ctx.row(
                    format!("{family}.{}.t{t}", ctx.bus_name(b)),
                    family,
                    vec![(f, 1.0), (fg, -1.0)],
                    Sense::Eq,
                    0.0,
                );
            }
        }
    }
}

fn esw_rows(ctx: &mut Ctx) {
    let m_f = freq_big_m(ctx.scenario);
    ctx.inst.record_big_m("esw_freq_transfer".to_string(), m_f);
    let esws: Vec<(EdgeId, BusId, BusId)> = ctx
        .graph
        .esw_edges()
        .map(|(id, e)| (id, e.from, e.to))
        .collect();
    for t in 1..=ctx.t_len() {
        for &(eid, k, l) in &esws {
            let uesw = ctx.v(VarKey::UEsw(eid, t));
            // Closure needs an energized terminal in the previous step.
            let mut terms = vec![(uesw, 1.0)];
            let mut rhs = 0.0;
            ctx.ub_prev(k, t).add(-1.0, &mut terms, &mut rhs);
            ctx.ub_prev(l, t).add(-1.0, &mut terms, &mut rhs);
            ctx.row(
                format!("esw_pre.{}.t{t}", ctx.edge_name(eid)),
                "esw_precond",
                terms,
                Sense::Le,
                rhs,
            );
            // No synchronization of two live islands through an ESW.
            let mut terms = vec![(uesw, 1.0)];
            let mut rhs = 2.0;
            ctx.uesw_prev(eid, t).add(-1.0, &mut terms, &mut rhs);
            ctx.ub_prev(k, t).add(1.0, &mut terms, &mut rhs);
            ctx.ub_prev(l, t).add(1.0, &mut terms, &mut rhs);
            ctx.row(
                format!("esw_nosync.{}.t{t}", ctx.edge_name(eid)),
                "esw_no_sync",
                terms,
                Sense::Le,
                rhs,
            );
            // Frequency transfer across a closed ESW.
            let fk = ctx.v(VarKey::F(k, t));
            let fl = ctx.v(VarKey::F(l, t));
            ctx.row(
                format!("esw_ftr_hi.{}.t{t}", ctx.edge_name(eid)),
                "esw_freq_transfer",
                vec![(fk, 1.0), (fl, -1.0), (uesw, m_f)],
                Sense::Le,
                m_f,
            );
            ctx.row(
                format!("esw_ftr_lo.{}.t{t}", ctx.edge_name(eid)),
                "esw_freq_transfer",
                vec![(fk, 1.0), (fl, -1.0), (uesw, -m_f)],
                Sense::Ge,
                -m_f,
            );
        }
    }
}

fn ssw_rows(ctx: &mut Ctx) {
    let m_f = freq_big_m(ctx.scenario);
    ctx.inst.record_big_m("ssw_sync".to_string(), m_f);
    let eps = ctx.scenario.frequency.eps_sync_hz;
    let ssws: Vec<(EdgeId, BusId, BusId)> = ctx
        .graph
        .ssw_edges()
        .map(|(id, e)| (id, e.from, e.to))
        .collect();
    for t in 1..=ctx.t_len() {
        for &(eid, k, l) in &ssws {
            let ussw = ctx.v(VarKey::USsw(eid, t));
            if t > 1 {
                let prev = ctx.v(VarKey::USsw(eid, t - 1));
                ctx.row(
                    format!("ssw_mono.{}.t{t}", ctx.edge_name(eid)),
                    "ssw_monotone",
                    vec![(ussw, 1.0), (prev, -1.0)],
                    Sense::Ge,
                    0.0,
                );
            }
            // Both terminals energized before synchronization.
            let mut terms = vec![(ussw, 2.0)];
            let mut rhs = 0.0;
            ctx.ub_prev(k, t).add(-1.0, &mut terms, &mut rhs);
            ctx.ub_prev(l, t).add(-1.0, &mut terms, &mut rhs);
            ctx.row(
                format!("ssw_pre.{}.t{t}", ctx.edge_name(eid)),
                "ssw_precond",
                terms,
                Sense::Le,
                rhs,
            );
            // Frequencies within the synchronization tolerance when closed.
            let fk = ctx.v(VarKey::F(k, t));
            let fl = ctx.v(VarKey::F(l, t));
            ctx.row(
                format!("ssw_sync_hi.{}.t{t}", ctx.edge_name(eid)),
                "ssw_sync",
                vec![(fk, 1.0), (fl, -1.0), (ussw, m_f)],
                Sense::Le,
                m_f + eps / 2.0,
            );
            ctx.row(
                format!("ssw_sync_lo.{}.t{t}", ctx.edge_name(eid)),
                "ssw_sync",
                vec![(fk, 1.0), (fl, -1.0), (ussw, -m_f)],
                Sense::Ge,
                -m_f - eps / 2.0,
            );
        }
    }
}

fn radiality(ctx: &mut Ctx) {
    for t in 1..=ctx.t_len() {
        let r = ctx.v(VarKey::RootCount(t));
        // R_t = |GFMI| + sum of TG bus status - sum of closed SSWs.
        let mut terms = vec![(r, 1.0)];
        for &b in &ctx.graph.tg_buses {
            terms.push((ctx.v(VarKey::UB(b, t)), -1.0));
        }
        let ssws: Vec<EdgeId> = ctx.graph.ssw_edges().map(|(id, _)| id).collect();
        for e in ssws {
            terms.push((ctx.v(VarKey::USsw(e, t)), 1.0));
        }
        ctx.row(
            format!("rad_roots.t{t}"),
            "radiality_roots",
            terms,
            Sense::Eq,
            ctx.graph.gfmi_buses.len() as f64,
        );

        // Energized edges = energized buses - roots.
        let mut terms = Vec::new();
        for (ei, e) in ctx.graph.edges.iter().enumerate() {
            let key = match e.kind {
                EdgeKind::Line => VarKey::UE(EdgeId(ei), t),
                EdgeKind::Esw => VarKey::UEsw(EdgeId(ei), t),
                EdgeKind::Ssw => VarKey::USsw(EdgeId(ei), t),
            };
            terms.push((ctx.v(key), 1.0));
        }
        for b in 0..ctx.graph.bus_names.len() {
            terms.push((ctx.v(VarKey::UB(BusId(b), t)), -1.0));
        }
        terms.push((r, 1.0));
        ctx.row(
            format!("rad_balance.t{t}"),
            "radiality_balance",
            terms,
            Sense::Eq,
            0.0,
        );
    }
}

/// Inscribed regular polygon rows approximating p^2 + q^2 <= cap^2.
fn polygon_rows(
    ctx: &mut Ctx,
    label: &str,
    family: &'static str,
    p: VarId,
    q: VarId,
    cap: f64,
    t: usize,
) {
    let n = ctx.cfg.polygon_sides.max(4);
    let inradius = cap * (std::f64::consts::PI / n as f64).cos();
    for k in 0..n {
        let alpha = (2 * k + 1) as f64 * std::f64::consts::PI / n as f64;
        ctx.row(
            format!("{label}.k{k}.t{t}"),
            family,
            vec![(p, alpha.cos()), (q, alpha.sin())],
            Sense::Le,
            inradius,
        );
    }
}

fn tg_rows(ctx: &mut Ctx) {
    let Some(tg) = ctx.graph.fleet.tg.clone() else {
        return;
    };
    let f_nom = ctx.scenario.frequency.f_nom;
    for t in 1..=ctx.t_len() {
        let ub = ctx.v(VarKey::UB(tg.bus, t));
        for p in ctx.graph.bus_phases[tg.bus.0].iter() {
            let v = ctx.v(VarKey::V(tg.bus, p, t));
            ctx.row(
                format!("tg_v.{}.{p}.t{t}", ctx.bus_name(tg.bus)),
                "tg_voltage",
                vec![(v, 1.0), (ub, -1.0)],
                Sense::Eq,
                0.0,
            );
            let pv = ctx.v(VarKey::PTg(tg.bus, p, t));
            let qv = ctx.v(VarKey::QTg(tg.bus, p, t));
            polygon_rows(
                ctx,
                &format!("tg_cap.{}.{p}", ctx.bus_name(tg.bus)),
                "tg_cap",
                pv,
                qv,
                tg.s_max_kva / 3.0,
                t,
            );
        }
        let f = ctx.v(VarKey::F(tg.bus, t));
        ctx.row(
            format!("tg_f.{}.t{t}", ctx.bus_name(tg.bus)),
            "tg_freq",
            vec![(f, 1.0), (ub, -f_nom)],
            Sense::Eq,
            0.0,
        );
    }
}

fn bess_rows(ctx: &mut Ctx) {
    let dt_h = ctx.scenario.dt_hours();
    let bess_list = ctx.graph.fleet.bess.clone();
    for t in 1..=ctx.t_len() {
        for bess in &bess_list {
            let soc = ctx.v(VarKey::Soc(bess.bus, t));
            let mut terms = vec![(soc, 1.0)];
            let mut rhs = 0.0;
            if t > 1 {
                terms.push((ctx.v(VarKey::Soc(bess.bus, t - 1)), -1.0));
            } else {
                rhs += ctx
                    .state
                    .soc
                    .get(&bess.bus)
                    .copied()
                    .unwrap_or(bess.soc_init);
            }
            for p in ctx.graph.bus_phases[bess.bus.0].iter() {
                terms.push((
                    ctx.v(VarKey::PBess(bess.bus, p, t)),
                    dt_h / bess.e_nom_kwh,
                ));
            }
            ctx.row(
                format!("soc_rec.{}.t{t}", ctx.bus_name(bess.bus)),
                "bess_soc",
                terms,
                Sense::Eq,
                rhs,
            );
            for p in ctx.graph.bus_phases[bess.bus.0].iter() {
                let pv = ctx.v(VarKey::PBess(bess.bus, p, t));
                let qv = ctx.v(VarKey::QBess(bess.bus, p, t));
                polygon_rows(
                    ctx,
                    &format!("bess_cap.{}.{p}", ctx.bus_name(bess.bus)),
                    "bess_cap",
                    pv,
                    qv,
                    bess.s_nom_kva / 3.0,
                    t,
                );
            }
        }
    }
}

fn gfmi_frequency_rows(ctx: &mut Ctx) {
    let fq = ctx.scenario.frequency;
    let bess_list = ctx.graph.fleet.bess.clone();
    let ssws: Vec<EdgeId> = ctx.graph.ssw_edges().map(|(id, _)| id).collect();
    for t in 1..=ctx.t_len() {
        for bess in &bess_list {
            let b = bess.bus;
            let phases: Vec<Phase> = ctx.graph.bus_phases[b.0].iter().collect();
            let s_nom = bess.s_nom_kva;

            // f = f_qss + sum over SSWs of df_syn * (u_ssw[t] - u_ssw[t-1]).
            let f = ctx.v(VarKey::F(b, t));
            let fqss = ctx.v(VarKey::FQss(b, t));
            let mut terms = vec![(f, 1.0), (fqss, -1.0)];
            let mut rhs = 0.0;
            for &e in &ssws {
                terms.push((ctx.v(VarKey::USsw(e, t)), -fq.delta_f_syn_hz));
                ctx.ussw_prev(e, t)
                    .add(fq.delta_f_syn_hz, &mut terms, &mut rhs);
            }
            ctx.row(
                format!("gfmi_f.{}.t{t}", ctx.bus_name(b)),
                "gfmi_freq",
                terms,
                Sense::Eq,
                rhs,
            );

            // QSS droop surrogate: f_qss = f_nom - k_droop * P / S_nom.
            let mut terms = vec![(fqss, 1.0)];
            for &p in &phases {
                terms.push((ctx.v(VarKey::PBess(b, p, t)), ctx.graph.fleet.freq.k_droop_hz / s_nom));
            }
            ctx.row(
                format!("fqss_def.{}.t{t}", ctx.bus_name(b)),
                "fqss_def",
                terms,
                Sense::Eq,
                fq.f_nom,
            );

            // Rate-of-change surrogate on the power step.
            let froc = ctx.v(VarKey::FRoc(b, t));
            let k_roc = fq.f_nom / (2.0 * ctx.graph.fleet.freq.h_sur_s * s_nom);
            let mut terms = vec![(froc, 1.0)];
            let mut rhs = 0.0;
            for &p in &phases {
                terms.push((ctx.v(VarKey::PBess(b, p, t)), -k_roc));
            }
            if t > 1 {
                for &p in &phases {
                    terms.push((ctx.v(VarKey::PBess(b, p, t - 1)), k_roc));
                }
            } else {
                rhs += -k_roc * ctx.state_p_bess_prev(b);
            }
            ctx.row(
                format!("froc_def.{}.t{t}", ctx.bus_name(b)),
                "froc_def",
                terms,
                Sense::Eq,
                rhs,
            );

            // Nadir surrogate below the QSS level.
            let fnad = ctx.v(VarKey::FNadir(b, t));
            let k_nad = ctx.graph.fleet.freq.k_nadir_hz / s_nom;
            let mut terms = vec![(fnad, 1.0), (fqss, -1.0)];
            let mut rhs = 0.0;
            for &p in &phases {
                terms.push((ctx.v(VarKey::PBess(b, p, t)), k_nad));
            }
            if t > 1 {
                for &p in &phases {
                    terms.push((ctx.v(VarKey::PBess(b, p, t - 1)), -k_nad));
                }
            } else {
                rhs += k_nad * ctx.state_p_bess_prev(b);
            }
            ctx.row(
                format!("fnadir_def.{}.t{t}", ctx.bus_name(b)),
                "fnadir_def",
                terms,
                Sense::Eq,
                rhs,
            );
        }
    }
}

impl<'a> Ctx<'a> {
    /// Realized total BESS output at the boundary step (kW).
    fn state_p_bess_prev(&self, bus: BusId) -> f64 {
        self.state.p_bess_prev.get(&bus).copied().unwrap_or(0.0)
    }
}

fn pv_rows(ctx: &mut Ctx) {
    let pv_list = ctx.graph.fleet.pv.clone();
    for t in 1..=ctx.t_len() {
        let eta = ctx.window.pv_rate[t - 1];
        for pv in &pv_list {
            let ub = ctx.v(VarKey::UB(pv.bus, t));
            for p in ctx.graph.bus_phases[pv.bus.0].iter() {
                let pvar = ctx.v(VarKey::PPv(pv.bus, p, t));
                let qvar = ctx.v(VarKey::QPv(pv.bus, p, t));
                // Output follows the irradiance rate once the bus is live.
                ctx.row(
                    format!("pv_p.{}.{p}.t{t}", ctx.bus_name(pv.bus)),
                    "pv_p",
                    vec![(pvar, 1.0), (ub, -pv.s_nom_kva / 3.0 * eta)],
                    Sense::Eq,
                    0.0,
                );
                ctx.row(
                    format!("pv_q.{}.{p}.t{t}", ctx.bus_name(pv.bus)),
                    "pv_q",
                    vec![(qvar, 1.0), (pvar, -0.352)],
                    Sense::Eq,
                    0.0,
                );
            }
        }
    }
}

fn zip_rows(ctx: &mut Ctx) {
    for t in 1..=ctx.t_len() {
        for li in 0..ctx.scenario.loads.len() {
            let (slope, constant) = zip_affine(ctx, li, t);
            let load = &ctx.scenario.loads[li];
            let pz = ctx.v(VarKey::PZip(li, t));
            let v = ctx.v(VarKey::V(load.bus, load.phase, t));
            ctx.row(
                format!("zip_def.{li}.t{t}"),
                "zip_def",
                vec![(pz, 1.0), (v, -slope)],
                Sense::Eq,
                constant,
            );
        }
    }
}

/// Exact product linearization rows for y = x * delta with binary delta.
fn mccormick_rows(
    ctx: &mut Ctx,
    label: &str,
    family: &'static str,
    y: VarId,
    x: VarId,
    delta: VarId,
    x_lo: f64,
    x_hi: f64,
) {
    ctx.row(
        format!("{label}.lo"),
        family,
        vec![(y, 1.0), (delta, -x_lo)],
        Sense::Ge,
        0.0,
    );
    ctx.row(
        format!("{label}.hi"),
        family,
        vec![(y, 1.0), (delta, -x_hi)],
        Sense::Le,
        0.0,
    );
    ctx.row(
        format!("{label}.xlo"),
        family,
        vec![(y, 1.0), (x, -1.0), (delta, -x_lo)],
        Sense::Le,
        -x_lo,
    );
    ctx.row(
        format!("{label}.xhi"),
        family,
        vec![(y, 1.0), (x, -1.0), (delta, -x_hi)],
        Sense::Ge,
        -x_hi,
    );
}

fn clpu_rows(ctx: &mut Ctx) {
    let beta = ctx.scenario.clpu.beta;
    let t_len = ctx.t_len();
    for t in 1..=t_len {
        for li in 0..ctx.scenario.loads.len() {
            let load = ctx.scenario.loads[li].clone();
            let g = ctx.graph.block_of_bus[load.bus.0];
            let (x_lo, x_hi) = zip_bounds(ctx, li, t);
            let pz = ctx.v(VarKey::PZip(li, t));

            // Staircase coefficient per status step tau (window index), and
            // the constant contribution from pre-window history.
            // ladder(t) = sum_o beta_o * (u[tau_o] - u[tau_o - 1]) + u[t]
            // with tau_o = t - o + 1.
            let mut coef: BTreeMap<isize, f64> = BTreeMap::new();
            *coef.entry(t as isize).or_insert(0.0) += 1.0;
            for (o, b) in beta.iter().enumerate() {
                let tau = t as isize - o as isize;
                *coef.entry(tau).or_insert(0.0) += b;
                *coef.entry(tau - 1).or_insert(0.0) -= b;
            }

            let abs_of = |tau: isize| -> isize { ctx.state.step as isize + tau };

            match load.class {
                LoadClass::Cl => {
                    let p_cl = ctx.v(VarKey::PCl(li, t));
                    let q_cl = ctx.v(VarKey::QCl(li, t));
                    let mut terms = vec![(p_cl, 1.0)];
                    let mut zip_const_coef = 0.0;
                    for (&tau, &c) in &coef {
                        if c == 0.0 {
                            continue;
                        }
                        if tau >= 1 {
                            let y = ctx.v(VarKey::YCl(li, t, tau as usize));
                            terms.push((y, -c));
                        } else {
                            // Boundary: u_bb at an absolute past step.
                            let abs = abs_of(tau);
                            let on = match ctx.state.block_pickup_step[g.0] {
                                Some(s) => abs >= 0 && (s as isize) <= abs,
                                None => false,
                            };
                            if on {
                                zip_const_coef += c;
                            }
                        }
                    }
                    if zip_const_coef != 0.0 {
                        terms.push((pz, -zip_const_coef));
                    }
                    ctx.row(
                        format!("clpu_cl.{li}.t{t}"),
                        "clpu_cl_p",
                        terms,
                        Sense::Eq,
                        0.0,
                    );
                    ctx.row(
                        format!("clpu_cl_q.{li}.t{t}"),
                        "clpu_cl_q",
                        vec![(q_cl, 1.0), (p_cl, -load.tan_phi)],
                        Sense::Eq,
                        0.0,
                    );
                    for tau in tau_range(t) {
                        let y = ctx.v(VarKey::YCl(li, t, tau));
                        let delta = ctx.v(VarKey::UBb(g, tau));
                        mccormick_rows(
                            ctx,
                            &format!("mc_cl.{li}.t{t}.u{tau}"),
                            "mc_cl",
                            y,
                            pz,
                            delta,
                            x_lo,
                            x_hi,
                        );
                    }
                }
                LoadClass::Nl => {
                    let p_nl = ctx.v(VarKey::PNl(li, t));
                    let q_nl = ctx.v(VarKey::QNl(li, t));
                    let mut terms = vec![(p_nl, 1.0)];
                    let mut zip_const_coef = 0.0;
                    for (&tau, &c) in &coef {
                        if c == 0.0 {
                            continue;
                        }
                        if tau >= 1 {
                            let y = ctx.v(VarKey::YNl(li, t, tau as usize));
                            terms.push((y, -c));
                        } else {
                            let abs = abs_of(tau);
                            let on = match ctx.state.nl_pickup_step[load.bus.0] {
                                Some(s) => abs >= 0 && (s as isize) <= abs,
                                None => false,
                            };
                            if on {
                                zip_const_coef += c;
                            }
                        }
                    }
                    if zip_const_coef != 0.0 {
                        terms.push((pz, -zip_const_coef));
                    }
                    ctx.row(
                        format!("clpu_nl.{li}.t{t}"),
                        "clpu_nl_p",
                        terms,
                        Sense::Eq,
                        0.0,
                    );
                    ctx.row(
                        format!("clpu_nl_q.{li}.t{t}"),
                        "clpu_nl_q",
                        vec![(q_nl, 1.0), (p_nl, -load.tan_phi)],
                        Sense::Eq,
                        0.0,
                    );
                    for tau in tau_range(t) {
                        let y = ctx.v(VarKey::YNl(li, t, tau));
                        let delta = ctx.v(VarKey::W(load.bus, tau));
                        mccormick_rows(
                            ctx,
                            &format!("mc_nl.{li}.t{t}.u{tau}"),
                            "mc_nl",
                            y,
                            pz,
                            delta,
                            x_lo,
                            x_hi,
                        );
                    }
                }
            }
        }

        // NL pickup gating and monotonicity.
        for b in class_buses(ctx.scenario, LoadClass::Nl) {
            let w = ctx.v(VarKey::W(b, t));
            let g = ctx.graph.block_of_bus[b.0];
            let ubb = ctx.v(VarKey::UBb(g, t));
            ctx.row(
                format!("nl_gate.{}.t{t}", ctx.bus_name(b)),
                "nl_gate",
                vec![(w, 1.0), (ubb, -1.0)],
                Sense::Le,
                0.0,
            );
            if t > 1 {
                let prev = ctx.v(VarKey::W(b, t - 1));
                ctx.row(
                    format!("nl_mono.{}.t{t}", ctx.bus_name(b)),
                    "nl_monotone",
                    vec![(w, 1.0), (prev, -1.0)],
                    Sense::Ge,
                    0.0,
                );
            }
        }
    }
}

fn balance_rows(ctx: &mut Ctx) {
    for t in 1..=ctx.t_len() {
        for b in 0..ctx.graph.bus_names.len() {
            let bus = BusId(b);
            for p in ctx.graph.bus_phases[b].iter() {
                for (family, is_active) in [("balance_p", true), ("balance_q", false)] {
                    let mut terms: Vec<(VarId, f64)> = Vec::new();
                    // Outgoing minus incoming flows equal the net injection.
                    for &(eid, _) in &ctx.graph.adjacency[b] {
                        let e = &ctx.graph.edges[eid.0];
                        if !e.phases.contains(p) {
                            continue;
                        }
                        let sign = if e.from == bus { 1.0 } else { -1.0 };
                        let key = if is_active {
                            VarKey::PFlow(eid, p, t)
                        } else {
                            VarKey::QFlow(eid, p, t)
                        };
                        terms.push((ctx.v(key), sign));
                    }
                    // Sources.
                    if let Some(tg) = &ctx.graph.fleet.tg {
                        if tg.bus == bus {
                            let key = if is_active {
                                VarKey::PTg(bus, p, t)
                            } else {
                                VarKey::QTg(bus, p, t)
                            };
                            terms.push((ctx.v(key), -1.0));
                        }
                    }
                    if ctx.graph.fleet.bess.iter().any(|x| x.bus == bus) {
                        let key = if is_active {
                            VarKey::PBess(bus, p, t)
                        } else {
                            VarKey::QBess(bus, p, t)
                        };
                        terms.push((ctx.v(key), -1.0));
                    }
                    if ctx.graph.fleet.pv.iter().any(|x| x.bus == bus) {
                        let key = if is_active {
                            VarKey::PPv(bus, p, t)
                        } else {
                            VarKey::QPv(bus, p, t)
                        };
                        terms.push((ctx.v(key), -1.0));
                    }
                    // Loads.
                    for (li, load) in ctx.scenario.loads.iter().enumerate() {
                        if load.bus != bus || load.phase != p {
                            continue;
                        }
                        let key = match (load.class, is_active) {
                            (LoadClass::Cl, true) => VarKey::PCl(li, t),
                            (LoadClass::Cl, false) => VarKey::QCl(li, t),
                            (LoadClass::Nl, true) => VarKey::PNl(li, t),
                            (LoadClass::Nl, false) => VarKey::QNl(li, t),
                        };
                        terms.push((ctx.v(key), 1.0));
                    }
                    if terms.is_empty() {
                        continue;
                    }
                    ctx.row(
                        format!("{family}.{}.{p}.t{t}", ctx.bus_name(bus)),
                        family,
                        terms,
                        Sense::Eq,
                        0.0,
                    );
                }
            }
        }
    }
}

fn voltage_drop_rows(ctx: &mut Ctx) {
    let m_flow = flow_big_m(ctx.graph);
    let w_per_kw = 1000.0 / (ctx.graph.v_base_ln * ctx.graph.v_base_ln);
    let mut m_v_max: f64 = 0.0;
    for t in 1..=ctx.t_len() {
        for (ei, e) in ctx.graph.edges.iter().enumerate() {
            let eid = EdgeId(ei);
            let u_key = match e.kind {
                EdgeKind::Line => VarKey::UE(eid, t),
                EdgeKind::Esw => VarKey::UEsw(eid, t),
                EdgeKind::Ssw => VarKey::USsw(eid, t),
            };
            let u = ctx.v(u_key);
            for p in e.phases.iter() {
                let coeff = drop_coefficients(ctx.graph, eid, p);
                // Slack wide enough for a dead bus against a live one plus
                // the worst drop magnitude.
                let drop_span: f64 = coeff
                    .iter()
                    .map(|(r, x)| 2.0 * (r.abs() + x.abs()) * m_flow * w_per_kw)
                    .sum();
                let m_v = ctx.graph.v_ceil_sq + drop_span;
                m_v_max = m_v_max.max(m_v);

                let vk = ctx.v(VarKey::V(e.from, p, t));
                let vl = ctx.v(VarKey::V(e.to, p, t));
                let mut base_terms = vec![(vl, 1.0), (vk, -1.0)];
                for psi in e.phases.iter() {
                    let (r_eff, x_eff) = coeff[psi.index()];
                    if r_eff != 0.0 {
                        base_terms.push((ctx.v(VarKey::PFlow(eid, psi, t)), 2.0 * r_eff * w_per_kw));
                    }
                    if x_eff != 0.0 {
                        base_terms.push((ctx.v(VarKey::QFlow(eid, psi, t)), 2.0 * x_eff * w_per_kw));
                    }
                }
                let mut hi = base_terms.clone();
                hi.push((u, m_v));
                ctx.row(
                    format!("vdrop_hi.{}.{p}.t{t}", e.name),
                    "vdrop_hi",
                    hi,
                    Sense::Le,
                    m_v,
                );
                let mut lo = base_terms;
                lo.push((u, -m_v));
                ctx.row(
                    format!("vdrop_lo.{}.{p}.t{t}", e.name),
                    "vdrop_lo",
                    lo,
                    Sense::Ge,
                    -m_v,
                );
            }
        }
    }
    ctx.inst.record_big_m("vdrop".to_string(), m_v_max);
    ctx.inst.record_big_m("flow_cap".to_string(), m_flow);
}

fn security_rows(ctx: &mut Ctx) {
    let m_flow = flow_big_m(ctx.graph);
    for t in 1..=ctx.t_len() {
        // Flow gating by edge status.
        for (ei, e) in ctx.graph.edges.iter().enumerate() {
            let eid = EdgeId(ei);
            let u_key = match e.kind {
                EdgeKind::Line => VarKey::UE(eid, t),
                EdgeKind::Esw => VarKey::UEsw(eid, t),
                EdgeKind::Ssw => VarKey::USsw(eid, t),
            };
            let u = ctx.v(u_key);
            for p in e.phases.iter() {
                for (tag, key) in [
                    ("p", VarKey::PFlow(eid, p, t)),
                    ("q", VarKey::QFlow(eid, p, t)),
                ] {
                    let fv = ctx.v(key);
                    ctx.row(
                        format!("flow_{tag}_hi.{}.{p}.t{t}", e.name),
                        "flow_gate",
                        vec![(fv, 1.0), (u, -m_flow)],
                        Sense::Le,
                        0.0,
                    );
                    ctx.row(
                        format!("flow_{tag}_lo.{}.{p}.t{t}", e.name),
                        "flow_gate",
                        vec![(fv, 1.0), (u, m_flow)],
                        Sense::Ge,
                        0.0,
                    );
                }
            }
        }

        // Voltage boxes gated by bus status; floors relax under mitigation.
        for b in 0..ctx.graph.bus_names.len() {
            let bus = BusId(b);
            let ub = ctx.v(VarKey::UB(bus, t));
            let g = ctx.graph.block_of_bus[b];
            let relax = ctx.flags.relax_floor_blocks.contains(&g);
            for p in ctx.graph.bus_phases[b].iter() {
                let v = ctx.v(VarKey::V(bus, p, t));
                ctx.row(
                    format!("vbox_hi.{}.{p}.t{t}", ctx.bus_name(bus)),
                    "vbox_hi",
                    vec![(v, 1.0), (ub, -ctx.graph.v_ceil_sq)],
                    Sense::Le,
                    0.0,
                );
                let floor = if relax {
                    // Proportional relaxation: the nominal floor scales by
                    // the reduced setpoint.
                    ctx.graph.v_floor_sq * ctx.flags.v_red_sq
                } else {
                    ctx.graph.v_floor_sq
                };
                ctx.row(
                    format!("vbox_lo.{}.{p}.t{t}", ctx.bus_name(bus)),
                    "vbox_lo",
                    vec![(v, 1.0), (ub, -floor)],
                    Sense::Ge,
                    0.0,
                );
            }
        }
    }
}

fn blocked_rows(ctx: &mut Ctx) {
    let blocked: Vec<(EdgeId, usize)> = ctx.flags.blocked_esws.iter().copied().collect();
    for (e, t) in blocked {
        if t < 1 || t > ctx.t_len() {
            continue;
        }
        let u = ctx.v(VarKey::UEsw(e, t));
        ctx.row(
            format!("esw_blocked.{}.t{t}", ctx.edge_name(e)),
            "esw_blocked",
            vec![(u, 1.0)],
            Sense::Eq,
            0.0,
        );
    }
}
