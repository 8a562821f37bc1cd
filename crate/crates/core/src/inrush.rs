//! Analytical inrush estimation and fuse/recloser feasibility checks.
//!
//! Energizing a dead bus block drives the no-load distribution transformers
//! into saturation; the peak magnetizing surge is estimated per transformer
//! from the residual flux, the closing angle, and the series path impedance
//! seen from the feeding terminal, then aggregated per lateral and per
//! microgrid against the two-cycle protection thresholds. All functions are
//! pure over immutable inputs.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::CoreError;
use crate::feeder::{NetworkGraph, TransformerSpec};
use crate::ids::{BlockId, BusId, EdgeId, LateralId, Phase};

/// Default worst-case-angle search resolution (degrees).
pub const DEFAULT_ANGLE_GRID_DEG: f64 = 1.0;

/// The energized island used as the Thevenin side of an evaluation.
#[derive(Clone, Debug)]
pub struct MicrogridState {
    /// Source bus providing the Thevenin voltage reference (GFMI).
    pub source: BusId,
    /// Currently energized edges (pre-action).
    pub energized_edges: Vec<bool>,
    /// Angular frequency (rad/s).
    pub omega: f64,
}

/// Saturation indicator: +1 positive saturation, -1 negative, 0 unsaturated.
pub fn saturation_indicator(theta_deg: f64, lambda_n: f64, lambda_s: f64, lambda_0: f64) -> i8 {
    let c = lambda_n * theta_deg.to_radians().cos();
    if c > lambda_s - lambda_n - lambda_0 {
        1
    } else if c < lambda_n - lambda_s - lambda_0 {
        -1
    } else {
        0
    }
}

/// Steady-state magnitude of the saturated current: the scale factor of the
/// peak estimate. `v_k` in volts, impedances in ohms, `l_s` in henries.
pub fn steady_state_saturated_current(
    v_k: f64,
    z_kk: Complex64,
    z_kn: Complex64,
    l_s: f64,
    omega: f64,
) -> Result<f64, CoreError> {
    let z = z_kk + z_kn + Complex64::new(0.0, omega * l_s);
    let mag = z.norm();
    if mag <= 0.0 {
        return Err(CoreError::Graph(
            "total series impedance is zero in saturated-current estimate".to_string(),
        ));
    }
    Ok(v_k / mag)
}

/// Peak inrush estimate for a phase-A-referenced closing angle. The unit's
/// own phase offset is applied before the saturation test; an unsaturated
/// core contributes zero.
pub fn peak_inrush(theta_deg: f64, spec: &TransformerSpec, i_ss: f64) -> f64 {
    let theta_phase = theta_deg + spec.phase.angle_offset_deg();
    let h = saturation_indicator(theta_phase, spec.lambda_n, spec.lambda_s, spec.lambda_0);
    if h == 0 {
        return 0.0;
    }
    let mult = (spec.lambda_0 - f64::from(h) * spec.lambda_s) / spec.lambda_n
        + theta_phase.to_radians().cos()
        + 1.0;
    (mult * i_ss).max(0.0)
}

/// A transformer of the block under evaluation, paired with the saturated
/// steady-state current its path admits.
#[derive(Clone, Debug)]
pub struct DtDrive<'a> {
    pub dt_index: usize,
    pub spec: &'a TransformerSpec,
    pub i_ss: f64,
}

/// Block-wide per-phase aggregate peaks at a given angle.
pub fn block_aggregate(theta_deg: f64, dts: &[DtDrive<'_>]) -> [f64; 3] {
    let mut agg = [0.0; 3];
    for d in dts {
        agg[d.spec.phase.index()] += peak_inrush(theta_deg, d.spec, d.i_ss);
    }
    agg
}

/// Worst-case closing angle over a uniform grid: the angle maximizing the
/// block-wide maximum per-phase aggregate, ties broken toward the smallest
/// angle. A block without transformers reports 0 degrees.
pub fn worst_case_angle(dts: &[DtDrive<'_>], grid_deg: f64) -> f64 {
    if dts.is_empty() {
        return 0.0;
    }
    let steps = (360.0 / grid_deg).round() as usize;
    let mut best_theta = 0.0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..steps {
        let theta = k as f64 * grid_deg;
        let agg = block_aggregate(theta, dts);
        let peak = agg.iter().cloned().fold(0.0, f64::max);
        if peak > best + 1e-12 {
            best = peak;
            best_theta = theta;
        }
    }
    best_theta
}

/// Inrush outcome for one block energization at its worst-case angle.
#[derive(Clone, Debug)]
pub struct InrushReport {
    pub block: BlockId,
    /// The ESW used, or None for a source block self-start.
    pub via_esw: Option<EdgeId>,
    pub theta_wc_deg: f64,
    pub per_dt: Vec<DtContribution>,
    /// Per-lateral peak vector (A per phase).
    pub lateral_peaks: BTreeMap<LateralId, [f64; 3]>,
    /// Fuse melt flags: strict threshold exceedance.
    pub fuse_flags: BTreeMap<LateralId, [bool; 3]>,
}

#[derive(Clone, Debug)]
pub struct DtContribution {
    pub dt_index: usize,
    pub bus: BusId,
    pub phase: Phase,
    pub i_ss: f64,
    pub i_peak: f64,
}

impl InrushReport {
    pub fn any_fuse_flag(&self) -> bool {
        self.fuse_flags
            .values()
            .any(|f| f.iter().any(|x| *x))
    }

    /// Sum of all lateral peak entries (the switch-blocking ranking key).
    pub fn total_lateral_current(&self) -> f64 {
        self.lateral_peaks
            .values()
            .map(|v| v.iter().sum::<f64>())
            .sum()
    }

    fn empty(block: BlockId, via_esw: Option<EdgeId>) -> InrushReport {
        InrushReport {
            block,
            via_esw,
            theta_wc_deg: 0.0,
            per_dt: Vec::new(),
            lateral_peaks: BTreeMap::new(),
            fuse_flags: BTreeMap::new(),
        }
    }
}

/// Microgrid-level aggregation across the blocks energized in one step.
#[derive(Clone, Debug)]
pub struct MgInrushReport {
    pub recloser_bus: BusId,
    pub blocks: Vec<InrushReport>,
    pub mg_peaks: [f64; 3],
    pub recloser_flags: [bool; 3],
}

impl MgInrushReport {
    pub fn any_recloser_flag(&self) -> bool {
        self.recloser_flags.iter().any(|x| *x)
    }

    pub fn any_fuse_flag(&self) -> bool {
        self.blocks.iter().any(|b| b.any_fuse_flag())
    }
}

/// Evaluates one proposed block energization.
///
/// `v_k_sq` is the planned squared voltage (pu^2) at the feeding terminal k:
/// the energized-side ESW terminal, or the source bus itself for a
/// self-start. The pickup path impedance runs from k through the candidate
/// switch and the block's internal edges.
pub fn evaluate_action(
    graph: &NetworkGraph,
    mg: &MicrogridState,
    block: BlockId,
    via_esw: Option<EdgeId>,
    v_k_sq: [f64; 3],
    specs: &[TransformerSpec],
    grid_deg: f64,
) -> Result<InrushReport, CoreError> {
    let k_bus = match via_esw {
        Some(esw) => {
            let e = &graph.edges[esw.0];
            // The energized terminal is the one outside the target block.
            if graph.block_of_bus[e.from.0] == block {
                e.to
            } else {
                e.from
            }
        }
        None => mg.source,
    };

    // Hypothetical post-action topology: energized edges plus the candidate
    // switch plus the block's internal lines.
    let mut closed = mg.energized_edges.clone();
    if let Some(esw) = via_esw {
        closed[esw.0] = true;
    }
    for &e in &graph.blocks[block.0].line_edges {
        closed[e.0] = true;
    }

    // Drives for every transformer of the block.
    let mut drives = Vec::new();
    for (dt_index, spec) in specs.iter().enumerate() {
        if graph.block_of_bus[spec.bus.0] != block {
            continue;
        }
        let phase = spec.phase;
        let z_kk = graph.path_impedance(&mg.energized_edges, mg.source, k_bus, phase)?;
        let z_kn = graph.path_impedance(&closed, k_bus, spec.bus, phase)?;
        let v_k = v_k_sq[phase.index()].max(0.0).sqrt() * graph.v_base_ln;
        let i_ss = steady_state_saturated_current(v_k, z_kk, z_kn, spec.l_s, mg.omega)?;
        drives.push(DtDrive {
            dt_index,
            spec,
            i_ss,
        });
    }
    if drives.is_empty() {
        return Ok(InrushReport::empty(block, via_esw));
    }

    let theta_wc = worst_case_angle(&drives, grid_deg);

    let mut per_dt = Vec::new();
    let mut lateral_peaks: BTreeMap<LateralId, [f64; 3]> = BTreeMap::new();
    for d in &drives {
        let i_peak = peak_inrush(theta_wc, d.spec, d.i_ss);
        let lateral = graph.lateral_of_bus[d.spec.bus.0].ok_or_else(|| {
            CoreError::Graph(format!(
                "transformer bus {} has no lateral",
                graph.bus_name(d.spec.bus)
            ))
        })?;
        lateral_peaks.entry(lateral).or_insert([0.0; 3])[d.spec.phase.index()] += i_peak;
        per_dt.push(DtContribution {
            dt_index: d.dt_index,
            bus: d.spec.bus,
            phase: d.spec.phase,
            i_ss: d.i_ss,
            i_peak,
        });
    }

    let mut fuse_flags = BTreeMap::new();
    for (&lateral, peaks) in &lateral_peaks {
        let fuse = &graph.fuses[graph.fuse_of_lateral[lateral.0]];
        let mut flags = [false; 3];
        for p in Phase::ALL {
            let i = peaks[p.index()];
            if i <= 0.0 {
                continue;
            }
            match fuse.thresholds[p.index()] {
                Some(t) => flags[p.index()] = i > t,
                None => {
                    return Err(CoreError::Validation(format!(
                        "fuse {} has no phase-{} threshold but carries {i:.1} A",
                        fuse.name, p
                    )))
                }
            }
        }
        fuse_flags.insert(lateral, flags);
    }

    Ok(InrushReport {
        block,
        via_esw,
        theta_wc_deg: theta_wc,
        per_dt,
        lateral_peaks,
        fuse_flags,
    })
}

/// Sums the step's block reports through the microgrid's recloser.
pub fn aggregate_mg(
    graph: &NetworkGraph,
    recloser_bus: BusId,
    blocks: Vec<InrushReport>,
) -> Result<MgInrushReport, CoreError> {
    let mut mg_peaks = [0.0; 3];
    for b in &blocks {
        for peaks in b.lateral_peaks.values() {
            for p in 0..3 {
                mg_peaks[p] += peaks[p];
            }
        }
    }
    let recloser = graph.recloser_of_gfmi(recloser_bus).ok_or_else(|| {
        CoreError::Validation(format!(
            "GFMI bus {} has no recloser",
            graph.bus_name(recloser_bus)
        ))
    })?;
    let mut recloser_flags = [false; 3];
    for p in Phase::ALL {
        let i = mg_peaks[p.index()];
        if i <= 0.0 {
            continue;
        }
        match recloser.thresholds[p.index()] {
            Some(t) => recloser_flags[p.index()] = i > t,
            None => {
                return Err(CoreError::Validation(format!(
                    "recloser {} has no phase-{} threshold but carries {i:.1} A",
                    recloser.name, p
                )))
            }
        }
    }
    Ok(MgInrushReport {
        recloser_bus,
        blocks,
        mg_peaks,
        recloser_flags,
    })
}

/// Angle sweep of one block under a synthetic fully-energized surrounding
/// network at nominal voltage (the `inrush` CLI command).
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub theta_deg: f64,
    pub per_phase_a: [f64; 3],
    pub block_max_a: f64,
    pub max_phase: Option<Phase>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub block: BlockId,
    pub rows: Vec<SweepRow>,
    pub theta_wc_deg: f64,
}

/// Builds the synthetic pre-action state used by the sweep: every other
/// block energized through a deterministic ESW spanning forest grown from
/// the GFMI blocks, the target block dead.
pub fn synthetic_pickup(
    graph: &NetworkGraph,
    block: BlockId,
) -> Result<(MicrogridState, Option<EdgeId>, BusId), CoreError> {
    let nblocks = graph.blocks.len();
    let mut block_on = vec![false; nblocks];
    let mut closed = vec![false; graph.edges.len()];

    let self_start = graph
        .gfmi_buses
        .iter()
        .any(|&g| graph.block_of_bus[g.0] == block);
    let source_of = |b: BlockId| -> Option<BusId> {
        graph
            .gfmi_buses
            .iter()
            .copied()
            .find(|&g| graph.block_of_bus[g.0] == b)
    };

    if self_start {
        let source = source_of(block).expect("gfmi block");
        return Ok((
            MicrogridState {
                source,
                energized_edges: closed,
                omega: graph.omega(),
            },
            None,
            source,
        ));
    }

    // Grow a spanning forest over blocks via ESWs from the GFMI blocks,
    // never entering the target block.
    for &g in &graph.gfmi_buses {
        block_on[graph.block_of_bus[g.0].0] = true;
    }
    let mut grew = true;
    while grew {
        grew = false;
        for (eid, e) in graph.esw_edges() {
            let gf = graph.block_of_bus[e.from.0];
            let gt = graph.block_of_bus[e.to.0];
            if gf == block || gt == block {
                continue;
            }
            if block_on[gf.0] != block_on[gt.0] {
                block_on[gf.0] = true;
                block_on[gt.0] = true;
                closed[eid.0] = true;
                grew = true;
            }
        }
    }
    for (gi, on) in block_on.iter().enumerate() {
        if *on {
            for &e in &graph.blocks[gi].line_edges {
                closed[e.0] = true;
            }
        }
    }

    // Candidate ESW: lowest edge id adjacent to the target with an
    // energized far terminal.
    let mut via = None;
    for &eid in &graph.blocks[block.0].esws {
        let e = &graph.edges[eid.0];
        let far = if graph.block_of_bus[e.from.0] == block {
            e.to
        } else {
            e.from
        };
        if block_on[graph.block_of_bus[far.0].0] {
            via = Some((eid, far));
            break;
        }
    }
    let (via, far) = via.ok_or_else(|| {
        CoreError::Graph(format!(
            "block {} is not reachable from any GFMI through ESWs",
            graph.blocks[block.0].name
        ))
    })?;

    // Source: the GFMI in the component feeding `far`.
    let comp = graph.components(&closed);
    let source = graph
        .gfmi_buses
        .iter()
        .copied()
        .find(|&g| comp[g.0] == comp[far.0])
        .ok_or_else(|| {
            CoreError::Graph(format!(
                "no GFMI feeds ESW terminal {}",
                graph.bus_name(far)
            ))
        })?;

    Ok((
        MicrogridState {
            source,
            energized_edges: closed,
            omega: graph.omega(),
        },
        Some(via),
        far,
    ))
}

/// Per-angle sweep of the block's aggregate peaks at nominal voltage.
pub fn sweep_block(
    graph: &NetworkGraph,
    block: BlockId,
    angles_deg: &[f64],
    specs: &[TransformerSpec],
    grid_deg: f64,
) -> Result<SweepResult, CoreError> {
    let (mg, via, k_bus) = synthetic_pickup(graph, block)?;

    let mut closed = mg.energized_edges.clone();
    if let Some(esw) = via {
        closed[esw.0] = true;
    }
    for &e in &graph.blocks[block.0].line_edges {
        closed[e.0] = true;
    }
    let mut drives = Vec::new();
    for (dt_index, spec) in specs.iter().enumerate() {
        if graph.block_of_bus[spec.bus.0] != block {
            continue;
        }
        let z_kk = graph.path_impedance(&mg.energized_edges, mg.source, k_bus, spec.phase)?;
        let z_kn = graph.path_impedance(&closed, k_bus, spec.bus, spec.phase)?;
        let i_ss =
            steady_state_saturated_current(graph.v_base_ln, z_kk, z_kn, spec.l_s, mg.omega)?;
        drives.push(DtDrive {
            dt_index,
            spec,
            i_ss,
        });
    }

    let theta_wc = worst_case_angle(&drives, grid_deg);
    let mut rows = Vec::new();
    for &theta in angles_deg {
        let agg = block_aggregate(theta, &drives);
        let (mut max_phase, mut block_max) = (None, 0.0f64);
        for p in Phase::ALL {
            if agg[p.index()] > block_max {
                block_max = agg[p.index()];
                max_phase = Some(p);
            }
        }
        rows.push(SweepRow {
            theta_deg: theta,
            per_phase_a: agg,
            block_max_a: block_max,
            max_phase,
        });
    }
    Ok(SweepResult {
        block,
        rows,
        theta_wc_deg: theta_wc,
    })
}
