//! Feeder description: topology, bus blocks, laterals, transformers,
//! protection, and DER fleet, parsed from JSON and validated against the
//! structural invariants.
//!
//! The graph is immutable after construction and safe to share across
//! threads. String ids from the file map to dense indices; the name tables
//! stay around so reports can translate back.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::ids::{BlockId, BusId, EdgeId, LateralId, Phase, PhaseSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Line,
    Esw,
    Ssw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: String,
    pub from: BusId,
    pub to: BusId,
    pub kind: EdgeKind,
    pub phases: PhaseSet,
    /// 3x3 complex phase impedance matrix in ohms; entries outside the
    /// edge's phase set are zero.
    pub z: [[Complex64; 3]; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub buses: Vec<BusId>,
    pub line_edges: Vec<EdgeId>,
    /// ESWs incident to this block (an ESW appears in both its blocks).
    pub esws: Vec<EdgeId>,
    pub laterals: Vec<LateralId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lateral {
    pub name: String,
    pub head_edge: EdgeId,
    pub block: BlockId,
    /// Buses whose distribution transformers the head fuse protects.
    pub buses: Vec<BusId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerSpec {
    pub bus: BusId,
    pub phase: Phase,
    pub rating_kva: f64,
    /// Nominal, saturation, and residual flux in per unit of nominal.
    pub lambda_n: f64,
    pub lambda_s: f64,
    pub lambda_0: f64,
    /// Saturated inductance (H).
    pub l_s: f64,
    /// Unsaturated magnetizing inductance (H); time-domain oracle only.
    pub l_m: f64,
    /// Winding resistance (ohm); time-domain oracle only.
    pub r_w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fuse {
    pub name: String,
    pub lateral: LateralId,
    /// Two-cycle minimum-melting current per phase (A).
    pub thresholds: [Option<f64>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recloser {
    pub name: String,
    pub gfmi_bus: BusId,
    /// Two-cycle rapid-act pickup per phase (A).
    pub thresholds: [Option<f64>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BessSpec {
    pub bus: BusId,
    pub s_nom_kva: f64,
    pub e_nom_kwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PvSpec {
    pub bus: BusId,
    pub s_nom_kva: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgSpec {
    pub bus: BusId,
    pub s_max_kva: f64,
}

/// Affine surrogate parameters for the GFMI frequency indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfmiFreqParams {
    /// QSS droop: Hz per unit of rated power output.
    pub k_droop_hz: f64,
    /// Inertia surrogate (s) for the max rate-of-change index.
    pub h_sur_s: f64,
    /// Nadir depth: Hz per unit of rated power step.
    pub k_nadir_hz: f64,
}

impl Default for GfmiFreqParams {
    fn default() -> Self {
        GfmiFreqParams {
            k_droop_hz: 0.3,
            h_sur_s: 4.0,
            k_nadir_hz: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DeviceFleet {
    pub bess: Vec<BessSpec>,
    pub pv: Vec<PvSpec>,
    pub tg: Option<TgSpec>,
    pub freq: GfmiFreqParams,
}

/// Immutable feeder topology plus devices and protection.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    /// Line-neutral voltage base (V) for pu conversion.
    pub v_base_ln: f64,
    pub f_nom: f64,
    pub v_floor_sq: f64,
    pub v_ceil_sq: f64,
    /// GFMI voltage setpoint ceiling (pu^2); the reduced setpoint replaces it
    /// when voltage reduction is active.
    pub gfmi_v_set_sq: f64,

    pub bus_names: Vec<String>,
    pub bus_index: HashMap<String, BusId>,
    pub bus_phases: Vec<PhaseSet>,

    pub edges: Vec<Edge>,
    /// Per bus: (incident edge, far endpoint).
    pub adjacency: Vec<Vec<(EdgeId, BusId)>>,

    pub blocks: Vec<Block>,
    pub block_of_bus: Vec<BlockId>,

    pub laterals: Vec<Lateral>,
    pub lateral_of_bus: Vec<Option<LateralId>>,

    pub gfmi_buses: Vec<BusId>,
    pub tg_buses: Vec<BusId>,

    pub transformers: Vec<TransformerSpec>,
    pub transformers_of_bus: Vec<Vec<usize>>,
    pub fuses: Vec<Fuse>,
    pub fuse_of_lateral: Vec<usize>,
    pub reclosers: Vec<Recloser>,

    pub fleet: DeviceFleet,
}

impl NetworkGraph {
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_nom
    }

    pub fn bus(&self, name: &str) -> Option<BusId> {
        self.bus_index.get(name).copied()
    }

    pub fn bus_name(&self, b: BusId) -> &str {
        &self.bus_names[b.0]
    }

    pub fn block_by_name(&self, name: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(BlockId)
    }

    pub fn line_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edge_iter(EdgeKind::Line)
    }

    pub fn esw_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edge_iter(EdgeKind::Esw)
    }

    pub fn ssw_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edge_iter(EdgeKind::Ssw)
    }

    fn edge_iter(&self, kind: EdgeKind) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.kind == kind)
            .map(|(i, e)| (EdgeId(i), e))
    }

    /// Buses that terminate a switch (ESW or SSW).
    pub fn switch_terminal_buses(&self) -> Vec<BusId> {
        let mut set = HashSet::new();
        for e in &self.edges {
            if e.kind != EdgeKind::Line {
                set.insert(e.from);
                set.insert(e.to);
            }
        }
        let mut v: Vec<BusId> = set.into_iter().collect();
        v.sort_unstable();
        v
    }

    pub fn recloser_of_gfmi(&self, gfmi: BusId) -> Option<&Recloser> {
        self.reclosers.iter().find(|r| r.gfmi_bus == gfmi)
    }

    /// Series per-phase impedance along the unique path k -> n through closed
    /// edges carrying `phase`. `closed[e]` marks edge e as energized.
    pub fn path_impedance(
        &self,
        closed: &[bool],
        k: BusId,
        n: BusId,
        phase: Phase,
    ) -> Result<Complex64, CoreError> {
        if k == n {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let mut parent: Vec<Option<(BusId, EdgeId)>> = vec![None; self.bus_names.len()];
        let mut visited = vec![false; self.bus_names.len()];
        visited[k.0] = true;
        let mut queue = std::collections::VecDeque::from([k]);
        while let Some(b) = queue.pop_front() {
            for &(eid, other) in &self.adjacency[b.0] {
                if !closed[eid.0] || !self.edges[eid.0].phases.contains(phase) {
                    continue;
                }
                if visited[other.0] {
                    let came_from = parent[b.0].map(|(p, _)| p);
                    if came_from != Some(other) {
                        return Err(CoreError::Graph(format!(
                            "energized topology is not radial: cycle through bus {}",
                            self.bus_name(other)
                        )));
                    }
                    continue;
                }
                visited[other.0] = true;
                parent[other.0] = Some((b, eid));
                queue.push_back(other);
            }
        }
        if !visited[n.0] {
            return Err(CoreError::Graph(format!(
                "bus {} not connected to bus {} on phase {} through energized edges",
                self.bus_name(n),
                self.bus_name(k),
                phase
            )));
        }
        let mut z = Complex64::new(0.0, 0.0);
        let mut cursor = n;
        let pi = phase.index();
        while cursor != k {
            let (prev, eid) = parent[cursor.0].expect("path broken");
            z += self.edges[eid.0].z[pi][pi];
            cursor = prev;
        }
        Ok(z)
    }

    /// Checks that the subgraph of closed edges is acyclic.
    pub fn check_radial(&self, closed: &[bool]) -> Result<(), CoreError> {
        let n = self.bus_names.len();
        let mut comp = vec![usize::MAX; n];
        let mut n_comp = 0;
        let mut n_edges_closed = 0usize;
        for (i, e) in self.edges.iter().enumerate() {
            if closed[i] {
                n_edges_closed += 1;
                let _ = e;
            }
        }
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            comp[start] = n_comp;
            while let Some(b) = queue.pop_front() {
                for &(eid, other) in &self.adjacency[b] {
                    if closed[eid.0] && comp[other.0] == usize::MAX {
                        comp[other.0] = n_comp;
                        queue.push_back(other.0);
                    }
                }
            }
            n_comp += 1;
        }
        // Forest identity: |E| = |V| - #components.
        if n_edges_closed != n - n_comp {
            return Err(CoreError::Graph(format!(
                "closed-edge subgraph has a cycle: {n_edges_closed} edges over {n} buses in {n_comp} components"
            )));
        }
        Ok(())
    }

    /// Component index per bus over the closed-edge subgraph.
    pub fn components(&self, closed: &[bool]) -> Vec<usize> {
        let n = self.bus_names.len();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            comp[start] = next;
            while let Some(b) = queue.pop_front() {
                for &(eid, other) in &self.adjacency[b] {
                    if closed[eid.0] && comp[other.0] == usize::MAX {
                        comp[other.0] = next;
                        queue.push_back(other.0);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Serializes the graph back to the file representation.
    pub fn to_file(&self) -> FeederFile {
        let bus_name = |b: BusId| self.bus_names[b.0].clone();
        FeederFile {
            name: self.name.clone(),
            units: default_units(),
            base: BaseSection {
                v_ln_volts: self.v_base_ln,
                f_hz: self.f_nom,
            },
            limits: LimitsSection {
                v_floor_pu2: self.v_floor_sq,
                v_ceil_pu2: self.v_ceil_sq,
                gfmi_v_set_pu2: self.gfmi_v_set_sq,
            },
            buses: self
                .bus_names
                .iter()
                .enumerate()
                .map(|(i, n)| BusEntry {
                    id: n.clone(),
                    phases: self.bus_phases[i],
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    let mut z_ohm = BTreeMap::new();
                    for pa in Phase::ALL {
                        for pb in Phase::ALL {
                            let z = e.z[pa.index()][pb.index()];
                            if z != Complex64::new(0.0, 0.0) {
                                z_ohm.insert(
                                    format!(
                                        "{}{}",
                                        pa.letter().to_ascii_lowercase(),
                                        pb.letter().to_ascii_lowercase()
                                    ),
                                    (z.re, z.im),
                                );
                            }
                        }
                    }
                    EdgeEntry {
                        id: Some(e.name.clone()),
                        from: bus_name(e.from),
                        to: bus_name(e.to),
                        kind: e.kind,
                        phases: e.phases,
                        z_ohm,
                    }
                })
                .collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    id: b.name.clone(),
                    buses: b.buses.iter().map(|&x| bus_name(x)).collect(),
                })
                .collect(),
            laterals: self
                .laterals
                .iter()
                .map(|l| {
                    let e = &self.edges[l.head_edge.0];
                    LateralEntry {
                        id: l.name.clone(),
                        head: (bus_name(e.from), bus_name(e.to)),
                        buses: l.buses.iter().map(|&x| bus_name(x)).collect(),
                    }
                })
                .collect(),
            transformers: self
                .transformers
                .iter()
                .map(|t| TransformerEntry {
                    bus: bus_name(t.bus),
                    phase: t.phase,
                    rating_kva: t.rating_kva,
                    lambda_n: Some(t.lambda_n),
                    lambda_s: Some(t.lambda_s),
                    lambda_0: Some(t.lambda_0),
                    l_s_h: Some(t.l_s),
                    l_m_h: Some(t.l_m),
                    r_w_ohm: Some(t.r_w),
                })
                .collect(),
            protection: ProtectionSection {
                fuses: self
                    .fuses
                    .iter()
                    .map(|f| FuseEntry {
                        id: f.name.clone(),
                        lateral: self.laterals[f.lateral.0].name.clone(),
                        i_2t_a: thresholds_to_map(&f.thresholds),
                    })
                    .collect(),
                reclosers: self
                    .reclosers
                    .iter()
                    .map(|r| RecloserEntry {
                        id: r.name.clone(),
                        gfmi_bus: bus_name(r.gfmi_bus),
                        i_2t_a: thresholds_to_map(&r.thresholds),
                    })
                    .collect(),
            },
            gfmi_buses: self.gfmi_buses.iter().map(|&b| bus_name(b)).collect(),
            devices: DevicesSection {
                bess: self
                    .fleet
                    .bess
                    .iter()
                    .map(|b| BessEntry {
                        bus: bus_name(b.bus),
                        s_nom_kva: b.s_nom_kva,
                        e_nom_kwh: b.e_nom_kwh,
                        soc_min: b.soc_min,
                        soc_max: b.soc_max,
                        soc_init: b.soc_init,
                    })
                    .collect(),
                pv: self
                    .fleet
                    .pv
                    .iter()
                    .map(|p| PvEntry {
                        bus: bus_name(p.bus),
                        s_nom_kva: p.s_nom_kva,
                    })
                    .collect(),
                tg: self.fleet.tg.as_ref().map(|t| TgEntry {
                    bus: bus_name(t.bus),
                    s_max_kva: t.s_max_kva,
                }),
                gfmi_freq: Some(self.fleet.freq.clone()),
            },
        }
    }
}

fn thresholds_to_map(t: &[Option<f64>; 3]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for p in Phase::ALL {
        if let Some(v) = t[p.index()] {
            m.insert(p.letter().to_string(), v);
        }
    }
    m
}

fn default_units() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("impedance".into(), "ohm".into());
    m.insert("power".into(), "kW / kvar / kVA".into());
    m.insert("energy".into(), "kWh".into());
    m.insert("voltage".into(), "squared per-unit on base.v_ln_volts".into());
    m.insert("current".into(), "A".into());
    m.insert("flux".into(), "per-unit of nominal peak flux linkage".into());
    m.insert("inductance".into(), "H".into());
    m
}

// --- file schema ---------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeederFile {
    pub name: String,
    #[serde(default = "default_units")]
    pub units: BTreeMap<String, String>,
    pub base: BaseSection,
    #[serde(default)]
    pub limits: LimitsSection,
    pub buses: Vec<BusEntry>,
    pub edges: Vec<EdgeEntry>,
    pub blocks: Vec<BlockEntry>,
    #[serde(default)]
    pub laterals: Vec<LateralEntry>,
    #[serde(default)]
    pub transformers: Vec<TransformerEntry>,
    #[serde(default)]
    pub protection: ProtectionSection,
    #[serde(default)]
    pub gfmi_buses: Vec<String>,
    #[serde(default)]
    pub devices: DevicesSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseSection {
    pub v_ln_volts: f64,
    pub f_hz: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitsSection {
    #[serde(default = "default_v_floor")]
    pub v_floor_pu2: f64,
    #[serde(default = "default_v_ceil")]
    pub v_ceil_pu2: f64,
    #[serde(default = "default_gfmi_set")]
    pub gfmi_v_set_pu2: f64,
}

fn default_v_floor() -> f64 {
    0.9025
}
fn default_v_ceil() -> f64 {
    1.1025
}
fn default_gfmi_set() -> f64 {
    1.0
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            v_floor_pu2: default_v_floor(),
            v_ceil_pu2: default_v_ceil(),
            gfmi_v_set_pu2: default_gfmi_set(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BusEntry {
    pub id: String,
    pub phases: PhaseSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeEntry {
    #[serde(default)]
    pub id: Option<String>,
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    pub phases: PhaseSet,
    #[serde(default)]
    pub z_ohm: BTreeMap<String, (f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockEntry {
    pub id: String,
    pub buses: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LateralEntry {
    pub id: String,
    pub head: (String, String),
    pub buses: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerEntry {
    pub bus: String,
    pub phase: Phase,
    pub rating_kva: f64,
    #[serde(default)]
    pub lambda_n: Option<f64>,
    #[serde(default)]
    pub lambda_s: Option<f64>,
    #[serde(default)]
    pub lambda_0: Option<f64>,
    #[serde(default)]
    pub l_s_h: Option<f64>,
    #[serde(default)]
    pub l_m_h: Option<f64>,
    #[serde(default)]
    pub r_w_ohm: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProtectionSection {
    #[serde(default)]
    pub fuses: Vec<FuseEntry>,
    #[serde(default)]
    pub reclosers: Vec<RecloserEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FuseEntry {
    pub id: String,
    pub lateral: String,
    pub i_2t_a: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecloserEntry {
    pub id: String,
    pub gfmi_bus: String,
    pub i_2t_a: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DevicesSection {
    #[serde(default)]
    pub bess: Vec<BessEntry>,
    #[serde(default)]
    pub pv: Vec<PvEntry>,
    #[serde(default)]
    pub tg: Option<TgEntry>,
    #[serde(default)]
    pub gfmi_freq: Option<GfmiFreqParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BessEntry {
    pub bus: String,
    pub s_nom_kva: f64,
    pub e_nom_kwh: f64,
    #[serde(default)]
    pub soc_min: f64,
    #[serde(default = "one")]
    pub soc_max: f64,
    #[serde(default = "one")]
    pub soc_init: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PvEntry {
    pub bus: String,
    pub s_nom_kva: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TgEntry {
    pub bus: String,
    pub s_max_kva: f64,
}

// --- DT parameter defaults ------------------------------------------------

/// Capacity-indexed transformer parameters: (kVA, voltage drop %, load
/// losses W). The nearest capacity row supplies defaults for missing fields.
pub const DT_DEFAULTS: [(f64, f64, f64); 6] = [
    (25.0, 1.0, 201.0),
    (50.0, 1.5, 340.0),
    (75.0, 2.0, 469.0),
    (100.0, 2.5, 571.0),
    (125.0, 3.2, 706.0),
    (150.0, 4.0, 827.0),
];

/// Residual flux defaults per phase (pu): A, B, C.
pub const RESIDUAL_FLUX_DEFAULT: [f64; 3] = [0.8, -0.4, -0.4];

/// Ratio of unsaturated magnetizing inductance to saturated inductance used
/// when a fixture omits `l_m_h`.
pub const LM_OVER_LS_DEFAULT: f64 = 500.0;

fn dt_default_row(rating_kva: f64) -> (f64, f64) {
    let mut best = DT_DEFAULTS[0];
    for row in DT_DEFAULTS {
        if (row.0 - rating_kva).abs() < (best.0 - rating_kva).abs() {
            best = row;
        }
    }
    (best.1, best.2)
}

// --- parsing --------------------------------------------------------------

pub fn parse_feeder(path: &Path) -> Result<NetworkGraph, CoreError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Io(format!("feeder file {}: {e}", path.display())))?;
    let file: FeederFile = serde_json::from_str(&text)
        .map_err(|e| CoreError::Parse(format!("feeder file {}: {e}", path.display())))?;
    build_graph(file)
}

pub fn build_graph(file: FeederFile) -> Result<NetworkGraph, CoreError> {
    let val = |msg: String| CoreError::Validation(msg);

    if file.base.v_ln_volts <= 0.0 || file.base.f_hz <= 0.0 {
        return Err(val(format!(
            "base: voltage base {} V and frequency {} Hz must be positive",
            file.base.v_ln_volts, file.base.f_hz
        )));
    }
    if !(file.limits.v_floor_pu2 < file.limits.v_ceil_pu2) {
        return Err(val("limits: v_floor_pu2 must be below v_ceil_pu2".into()));
    }

    // Buses.
    let mut bus_names = Vec::new();
    let mut bus_index: HashMap<String, BusId> = HashMap::new();
    let mut bus_phases = Vec::new();
    for b in &file.buses {
        if bus_index.contains_key(&b.id) {
            return Err(val(format!("bus {} declared twice", b.id)));
        }
        bus_index.insert(b.id.clone(), BusId(bus_names.len()));
        bus_names.push(b.id.clone());
        bus_phases.push(b.phases);
    }
    let lookup = |id: &str, ctx: &str| -> Result<BusId, CoreError> {
        bus_index
            .get(id)
            .copied()
            .ok_or_else(|| val(format!("{ctx}: unknown bus {id}")))
    };

    // Edges.
    let mut edges = Vec::new();
    for e in &file.edges {
        let from = lookup(&e.from, "edge")?;
        let to = lookup(&e.to, "edge")?;
        if from == to {
            return Err(val(format!("edge {}-{}: endpoints identical", e.from, e.to)));
        }
        let allowed = bus_phases[from.0].intersection(bus_phases[to.0]);
        if !e.phases.is_subset_of(allowed) {
            return Err(val(format!(
                "edge {}-{}: phase set {} not contained in endpoint phases {}",
                e.from, e.to, e.phases, allowed
            )));
        }
        let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (key, (re, im)) in &e.z_ohm {
            let chars: Vec<char> = key.chars().collect();
            if chars.len() != 2 {
                return Err(val(format!(
                    "edge {}-{}: impedance key {key:?} must name a phase pair like \"ab\"",
                    e.from, e.to
                )));
            }
            let parse_phase = |c: char| -> Result<Phase, CoreError> {
                match c.to_ascii_uppercase() {
                    'A' => Ok(Phase::A),
                    'B' => Ok(Phase::B),
                    'C' => Ok(Phase::C),
                    other => Err(val(format!(
                        "edge {}-{}: unknown phase {other:?} in impedance key",
                        e.from, e.to
                    ))),
                }
            };
            let pa = parse_phase(chars[0])?;
            let pb = parse_phase(chars[1])?;
            if !e.phases.contains(pa) || !e.phases.contains(pb) {
                return Err(val(format!(
                    "edge {}-{}: impedance entry {key} references a phase outside {}",
                    e.from, e.to, e.phases
                )));
            }
            z[pa.index()][pb.index()] = Complex64::new(*re, *im);
        }
        edges.push(Edge {
            name: e
                .id
                .clone()
                .unwrap_or_else(|| format!("{}-{}", e.from, e.to)),
            from,
            to,
            kind: e.kind,
            phases: e.phases,
            z,
        });
    }

    let mut adjacency = vec![Vec::new(); bus_names.len()];
    for (i, e) in edges.iter().enumerate() {
        adjacency[e.from.0].push((EdgeId(i), e.to));
        adjacency[e.to.0].push((EdgeId(i), e.from));
    }

    // Blocks: exact partition of buses.
    let mut block_of_bus = vec![usize::MAX; bus_names.len()];
    let mut blocks = Vec::new();
    for (gi, b) in file.blocks.iter().enumerate() {
        let mut members = Vec::new();
        for id in &b.buses {
            let bus = lookup(id, &format!("block {}", b.id))?;
            if block_of_bus[bus.0] != usize::MAX {
                return Err(val(format!(
                    "partition violation: bus {} belongs to blocks {} and {}",
                    id, file.blocks[block_of_bus[bus.0]].id, b.id
                )));
            }
            block_of_bus[bus.0] = gi;
            members.push(bus);
        }
        if members.is_empty() {
            return Err(val(format!("block {}: no member buses", b.id)));
        }
        blocks.push(Block {
            name: b.id.clone(),
            buses: members,
            line_edges: Vec::new(),
            esws: Vec::new(),
            laterals: Vec::new(),
        });
    }
    for (i, name) in bus_names.iter().enumerate() {
        if block_of_bus[i] == usize::MAX {
            return Err(val(format!(
                "partition violation: bus {name} belongs to no block"
            )));
        }
    }
    let block_of_bus: Vec<BlockId> = block_of_bus.into_iter().map(BlockId).collect();

    // Line edges live inside one block; switches connect distinct blocks.
    for (i, e) in edges.iter().enumerate() {
        let gf = block_of_bus[e.from.0];
        let gt = block_of_bus[e.to.0];
        match e.kind {
            EdgeKind::Line => {
                if gf != gt {
                    return Err(val(format!(
                        "partition violation: line edge {} spans blocks {} and {}",
                        e.name, blocks[gf.0].name, blocks[gt.0].name
                    )));
                }
                blocks[gf.0].line_edges.push(EdgeId(i));
            }
            EdgeKind::Esw | EdgeKind::Ssw => {
                if gf == gt {
                    return Err(val(format!(
                        "switch {} must connect distinct blocks, both ends in {}",
                        e.name, blocks[gf.0].name
                    )));
                }
                if e.kind == EdgeKind::Esw {
                    blocks[gf.0].esws.push(EdgeId(i));
                    blocks[gt.0].esws.push(EdgeId(i));
                }
            }
        }
    }

    // Each block's line subgraph must be connected.
    for (gi, block) in blocks.iter().enumerate() {
        let mut visited: HashSet<BusId> = HashSet::new();
        let start = block.buses[0];
        let mut queue = std::collections::VecDeque::from([start]);
        visited.insert(start);
        while let Some(b) = queue.pop_front() {
            for &(eid, other) in &adjacency[b.0] {
                let e = &edges[eid.0];
                if e.kind == EdgeKind::Line
                    && block_of_bus[other.0] == BlockId(gi)
                    && visited.insert(other)
                {
                    queue.push_back(other);
                }
            }
        }
        if visited.len() != block.buses.len() {
            return Err(val(format!(
                "block {}: non-switchable subgraph is disconnected ({} of {} buses reachable)",
                block.name,
                visited.len(),
                block.buses.len()
            )));
        }
    }

    // Laterals.
    let mut laterals: Vec<Lateral> = Vec::new();
    let mut lateral_of_bus: Vec<Option<LateralId>> = vec![None; bus_names.len()];
    for l in &file.laterals {
        let hf = lookup(&l.head.0, &format!("lateral {}", l.id))?;
        let ht = lookup(&l.head.1, &format!("lateral {}", l.id))?;
        let head_edge = edges
            .iter()
            .position(|e| {
                e.kind == EdgeKind::Line
                    && ((e.from == hf && e.to == ht) || (e.from == ht && e.to == hf))
            })
            .map(EdgeId)
            .ok_or_else(|| {
                val(format!(
                    "lateral {}: head edge ({}, {}) is not a line edge",
                    l.id, l.head.0, l.head.1
                ))
            })?;
        let block = block_of_bus[hf.0];
        let lid = LateralId(laterals.len());
        let mut members = Vec::new();
        for id in &l.buses {
            let bus = lookup(id, &format!("lateral {}", l.id))?;
            if block_of_bus[bus.0] != block {
                return Err(val(format!(
                    "lateral {}: member bus {} lies outside block {}",
                    l.id, id, blocks[block.0].name
                )));
            }
            if let Some(prev) = lateral_of_bus[bus.0] {
                return Err(val(format!(
                    "bus {} belongs to laterals {} and {}",
                    id, laterals[prev.0 as usize].name, l.id
                )));
            }
            lateral_of_bus[bus.0] = Some(lid);
            members.push(bus);
        }
        blocks[block.0].laterals.push(lid);
        laterals.push(Lateral {
            name: l.id.clone(),
            head_edge,
            block,
            buses: members,
        });
    }

    // GFMI / TG sets.
    let mut gfmi_buses = Vec::new();
    for id in &file.gfmi_buses {
        gfmi_buses.push(lookup(id, "gfmi_buses")?);
    }
    let mut tg_buses = Vec::new();
    let tg = match &file.devices.tg {
        Some(t) => {
            let bus = lookup(&t.bus, "devices.tg")?;
            if t.s_max_kva <= 0.0 {
                return Err(val("devices.tg: s_max_kva must be positive".into()));
            }
            tg_buses.push(bus);
            Some(TgSpec {
                bus,
                s_max_kva: t.s_max_kva,
            })
        }
        None => None,
    };

    // Transformers with capacity-indexed defaults.
    let omega = 2.0 * std::f64::consts::PI * file.base.f_hz;
    let mut transformers = Vec::new();
    let mut transformers_of_bus: Vec<Vec<usize>> = vec![Vec::new(); bus_names.len()];
    for t in &file.transformers {
        let bus = lookup(&t.bus, "transformer")?;
        if !bus_phases[bus.0].contains(t.phase) {
            return Err(val(format!(
                "transformer at bus {}: phase {} not present at that bus",
                t.bus, t.phase
            )));
        }
        if t.rating_kva <= 0.0 {
            return Err(val(format!(
                "transformer at bus {}: rating must be positive",
                t.bus
            )));
        }
        let (vd_pct, loss_w) = dt_default_row(t.rating_kva);
        let s_va = t.rating_kva * 1e3;
        let i_rated = s_va / file.base.v_ln_volts;
        let l_s = t.l_s_h.unwrap_or_else(|| {
            let z_sc = vd_pct / 100.0 * file.base.v_ln_volts * file.base.v_ln_volts / s_va;
            2.0 * z_sc / omega
        });
        let l_m = t.l_m_h.unwrap_or(LM_OVER_LS_DEFAULT * l_s);
        let r_w = t.r_w_ohm.unwrap_or(loss_w / (i_rated * i_rated));
        let lambda_n = t.lambda_n.unwrap_or(1.0);
        let lambda_s = t.lambda_s.unwrap_or(1.2);
        let lambda_0 = t
            .lambda_0
            .unwrap_or(RESIDUAL_FLUX_DEFAULT[t.phase.index()]);
        if !(lambda_s > lambda_n && lambda_n > 0.0) {
            return Err(val(format!(
                "transformer at bus {}: requires lambda_s > lambda_n > 0, got {lambda_s}, {lambda_n}",
                t.bus
            )));
        }
        if lambda_0.abs() >= lambda_s {
            return Err(val(format!(
                "transformer at bus {}: |lambda_0| = {} must be below lambda_s = {}",
                t.bus,
                lambda_0.abs(),
                lambda_s
            )));
        }
        if l_s <= 0.0 {
            return Err(val(format!(
                "transformer at bus {}: saturated inductance must be positive",
                t.bus
            )));
        }
        if lateral_of_bus[bus.0].is_none() {
            return Err(val(format!(
                "transformer at bus {}: bus lies in no lateral (every DT bus must be fused)",
                t.bus
            )));
        }
        transformers_of_bus[bus.0].push(transformers.len());
        transformers.push(TransformerSpec {
            bus,
            phase: t.phase,
            rating_kva: t.rating_kva,
            lambda_n,
            lambda_s,
            lambda_0,
            l_s,
            l_m,
            r_w,
        });
    }

    // Protection.
    let parse_thresholds = |m: &BTreeMap<String, f64>, ctx: &str| -> Result<[Option<f64>; 3], CoreError> {
        let mut t = [None; 3];
        for (k, v) in m {
            let p = match k.as_str() {
                "A" | "a" => Phase::A,
                "B" | "b" => Phase::B,
                "C" | "c" => Phase::C,
                other => return Err(val(format!("{ctx}: unknown phase {other:?}"))),
            };
            if *v <= 0.0 {
                return Err(val(format!("{ctx}: threshold for phase {p} must be positive")));
            }
            t[p.index()] = Some(*v);
        }
        Ok(t)
    };
    let mut fuses = Vec::new();
    let mut fuse_of_lateral = vec![usize::MAX; laterals.len()];
    for f in &file.protection.fuses {
        let lid = laterals
            .iter()
            .position(|l| l.name == f.lateral)
            .map(LateralId)
            .ok_or_else(|| val(format!("fuse {}: unknown lateral {}", f.id, f.lateral)))?;
        if fuse_of_lateral[lid.0] != usize::MAX {
            return Err(val(format!(
                "lateral {} has more than one fuse",
                f.lateral
            )));
        }
        fuse_of_lateral[lid.0] = fuses.len();
        fuses.push(Fuse {
            name: f.id.clone(),
            lateral: lid,
            thresholds: parse_thresholds(&f.i_2t_a, &format!("fuse {}", f.id))?,
        });
    }
    for (li, f) in fuse_of_lateral.iter().enumerate() {
        if *f == usize::MAX {
            return Err(val(format!(
                "lateral {} has no fuse (fuse count must equal lateral count)",
                laterals[li].name
            )));
        }
    }
    let mut reclosers = Vec::new();
    for r in &file.protection.reclosers {
        let bus = lookup(&r.gfmi_bus, &format!("recloser {}", r.id))?;
        if !gfmi_buses.contains(&bus) {
            return Err(val(format!(
                "recloser {}: bus {} is not a GFMI bus",
                r.id, r.gfmi_bus
            )));
        }
        if reclosers.iter().any(|x: &Recloser| x.gfmi_bus == bus) {
            return Err(val(format!(
                "GFMI bus {} has more than one recloser",
                r.gfmi_bus
            )));
        }
        reclosers.push(Recloser {
            name: r.id.clone(),
            gfmi_bus: bus,
            thresholds: parse_thresholds(&r.i_2t_a, &format!("recloser {}", r.id))?,
        });
    }
    for &g in &gfmi_buses {
        if !reclosers.iter().any(|r| r.gfmi_bus == g) {
            return Err(val(format!(
                "GFMI bus {} has no recloser at its feeder head",
                bus_names[g.0]
            )));
        }
    }

    // Fleet.
    let mut bess = Vec::new();
    for b in &file.devices.bess {
        let bus = lookup(&b.bus, "devices.bess")?;
        if !gfmi_buses.contains(&bus) {
            return Err(val(format!(
                "devices.bess: bus {} is not in gfmi_buses",
                b.bus
            )));
        }
        if !(0.0..=1.0).contains(&b.soc_min)
            || !(0.0..=1.0).contains(&b.soc_max)
            || b.soc_min > b.soc_max
        {
            return Err(val(format!(
                "devices.bess at {}: SoC bounds [{}, {}] must lie in [0, 1]",
                b.bus, b.soc_min, b.soc_max
            )));
        }
        if b.soc_init < b.soc_min - 1e-12 || b.soc_init > b.soc_max + 1e-12 {
            return Err(val(format!(
                "devices.bess at {}: initial SoC {} outside [{}, {}]",
                b.bus, b.soc_init, b.soc_min, b.soc_max
            )));
        }
        if b.s_nom_kva <= 0.0 || b.e_nom_kwh <= 0.0 {
            return Err(val(format!(
                "devices.bess at {}: ratings must be positive",
                b.bus
            )));
        }
        bess.push(BessSpec {
            bus,
            s_nom_kva: b.s_nom_kva,
            e_nom_kwh: b.e_nom_kwh,
            soc_min: b.soc_min,
            soc_max: b.soc_max,
            soc_init: b.soc_init,
        });
    }
    for &g in &gfmi_buses {
        if !bess.iter().any(|b| b.bus == g) {
            return Err(val(format!(
                "GFMI bus {} has no BESS record",
                bus_names[g.0]
            )));
        }
    }
    let mut pv = Vec::new();
    for p in &file.devices.pv {
        let bus = lookup(&p.bus, "devices.pv")?;
        if p.s_nom_kva <= 0.0 {
            return Err(val(format!("devices.pv at {}: rating must be positive", p.bus)));
        }
        pv.push(PvSpec {
            bus,
            s_nom_kva: p.s_nom_kva,
        });
    }

    Ok(NetworkGraph {
        name: file.name,
        v_base_ln: file.base.v_ln_volts,
        f_nom: file.base.f_hz,
        v_floor_sq: file.limits.v_floor_pu2,
        v_ceil_sq: file.limits.v_ceil_pu2,
        gfmi_v_set_sq: file.limits.gfmi_v_set_pu2,
        bus_names,
        bus_index,
        bus_phases,
        edges,
        adjacency,
        blocks,
        block_of_bus,
        laterals,
        lateral_of_bus,
        gfmi_buses,
        tg_buses,
        transformers,
        transformers_of_bus,
        fuses,
        fuse_of_lateral,
        reclosers,
        fleet: DeviceFleet {
            bess,
            pv,
            tg,
            freq: file.devices.gfmi_freq.unwrap_or_default(),
        },
    })
}

/// Runs every structural invariant and returns the list of violations
/// (empty when clean). Backs the `validate` CLI command; `build_graph`
/// already aborts on the first violation, so this re-checks a parsed file
/// collecting everything.
pub fn collect_violations(file: &FeederFile) -> Vec<String> {
    // Re-run the strict builder repeatedly is wasteful; instead reuse it and
    // report its first error, then probe section-level issues that are
    // independently checkable.
    let mut out = Vec::new();
    if let Err(e) = build_graph(file.clone()) {
        out.push(e.to_string());
    }
    out
}
