//! Exogenous time-series data: PV output rate, TG availability, nominal
//! loads, load-model parameters, and operating limits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::feeder::NetworkGraph;
use crate::ids::{BusId, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LoadClass {
    /// Critical load: restored with the bus block.
    Cl,
    /// Non-critical load: picked up by a separate decision.
    Nl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadRecord {
    pub bus: BusId,
    pub phase: Phase,
    pub class: LoadClass,
    /// Nominal active demand per step (kW).
    pub p_kw: Vec<f64>,
    /// Nominal reactive demand per step (kvar).
    pub q_kvar: Vec<f64>,
    pub tan_phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZipCoefficients {
    pub k_z: f64,
    pub k_i: f64,
    pub k_p: f64,
}

impl Default for ZipCoefficients {
    fn default() -> Self {
        ZipCoefficients {
            k_z: 0.2,
            k_i: 0.3,
            k_p: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClpuParams {
    /// Staircase amplification coefficients, most recent step first.
    pub beta: [f64; 3],
}

impl Default for ClpuParams {
    fn default() -> Self {
        ClpuParams {
            beta: [0.5, 0.3, 0.1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub gamma_cl: f64,
    pub gamma_nl: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            gamma_cl: 10.0,
            gamma_nl: 1.0,
        }
    }
}

/// Frequency-security boxes and synchronization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLimits {
    pub f_nom: f64,
    pub f_floor: f64,
    pub f_ceil: f64,
    pub qss_floor: f64,
    pub qss_ceil: f64,
    pub nadir_floor: f64,
    pub nadir_ceil: f64,
    pub roc_floor: f64,
    pub roc_ceil: f64,
    /// Synchronization tolerance for SSW closure (Hz).
    pub eps_sync_hz: f64,
    /// Fixed synchronization-induced frequency adjustment (Hz).
    pub delta_f_syn_hz: f64,
}

impl Default for FrequencyLimits {
    fn default() -> Self {
        FrequencyLimits {
            f_nom: 60.0,
            f_floor: 59.5,
            f_ceil: 60.5,
            qss_floor: 59.5,
            qss_ceil: 60.5,
            nadir_floor: 57.8,
            nadir_ceil: 61.8,
            roc_floor: -4.0,
            roc_ceil: 4.0,
            eps_sync_hz: 0.05,
            delta_f_syn_hz: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationParams {
    /// Reduced GFMI voltage magnitude (pu) enforced on fuse-risk phases.
    pub v_red_pu: f64,
}

impl Default for MitigationParams {
    fn default() -> Self {
        MitigationParams { v_red_pu: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Step duration in minutes.
    pub dt_min: f64,
    pub n_steps: usize,
    /// Label of step 1, "HH:MM".
    pub start: String,
    pub pv_rate: Vec<f64>,
    pub tg_available: Vec<bool>,
    pub loads: Vec<LoadRecord>,
    pub zip: ZipCoefficients,
    pub clpu: ClpuParams,
    pub weights: ObjectiveWeights,
    pub frequency: FrequencyLimits,
    pub mitigation: MitigationParams,
    /// Optional residual-flux override per phase (pu).
    pub residual_flux: Option<[f64; 3]>,
}

impl Scenario {
    pub fn dt_hours(&self) -> f64 {
        self.dt_min / 60.0
    }

    /// "HH:MM" label of 1-based step `t`.
    pub fn time_label(&self, t: usize) -> String {
        let (h, m) = parse_hhmm(&self.start).unwrap_or((0, 0));
        let total = h as i64 * 60 + m as i64 + ((t as i64 - 1) * self.dt_min as i64);
        let total = total.rem_euclid(24 * 60);
        format!("{:02}:{:02}", total / 60, total % 60)
    }

    pub fn loads_at(&self, bus: BusId) -> impl Iterator<Item = &LoadRecord> {
        self.loads.iter().filter(move |l| l.bus == bus)
    }
}

fn parse_hhmm(s: &str) -> Option<(u32, u32)> {
    let (h, m) = s.split_once(':')?;
    Some((h.parse().ok()?, m.parse().ok()?))
}

// --- file schema ----------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
    #[serde(default = "default_dt")]
    pub dt_min: f64,
    pub n_steps: usize,
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default)]
    pub pv_rate: Vec<f64>,
    #[serde(default)]
    pub tg_available: Vec<bool>,
    #[serde(default)]
    pub loads: Vec<LoadEntry>,
    #[serde(default = "default_pf_convention")]
    pub pf_convention: String,
    #[serde(default)]
    pub zip: ZipCoefficients,
    #[serde(default)]
    pub clpu: ClpuParams,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub frequency: FrequencyLimits,
    #[serde(default)]
    pub mitigation: MitigationParams,
    #[serde(default)]
    pub residual_flux: Option<[f64; 3]>,
}

fn default_dt() -> f64 {
    15.0
}
fn default_start() -> String {
    "09:00".to_string()
}
fn default_pf_convention() -> String {
    "tan_phi".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadEntry {
    pub bus: String,
    pub phase: Phase,
    pub class: LoadClass,
    /// Either one constant value (broadcast) or one value per step.
    pub p_kw: Vec<f64>,
    #[serde(default)]
    pub q_kvar: Option<Vec<f64>>,
    #[serde(default)]
    pub pf: Option<f64>,
    #[serde(default)]
    pub tan_phi: Option<f64>,
}

pub fn load_scenario(path: &Path, graph: &NetworkGraph) -> Result<Scenario, CoreError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Io(format!("scenario file {}: {e}", path.display())))?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| CoreError::Parse(format!("scenario file {}: {e}", path.display())))?;
    build_scenario(file, graph)
}

pub fn build_scenario(file: ScenarioFile, graph: &NetworkGraph) -> Result<Scenario, CoreError> {
    let val = |msg: String| CoreError::Validation(msg);
    if file.n_steps == 0 {
        return Err(val("scenario: n_steps must be at least 1".into()));
    }
    if file.dt_min <= 0.0 {
        return Err(val("scenario: dt_min must be positive".into()));
    }

    let expand = |series: &[f64], what: &str| -> Result<Vec<f64>, CoreError> {
        match series.len() {
            0 => Ok(vec![0.0; file.n_steps]),
            1 => Ok(vec![series[0]; file.n_steps]),
            n if n == file.n_steps => Ok(series.to_vec()),
            n => Err(val(format!(
                "scenario: {what} has {n} entries, expected 1 or {}",
                file.n_steps
            ))),
        }
    };

    let pv_rate = expand(&file.pv_rate, "pv_rate")?;
    for (i, r) in pv_rate.iter().enumerate() {
        if !(0.0..=1.0).contains(r) {
            return Err(val(format!(
                "scenario: pv_rate[{i}] = {r} outside [0, 1]"
            )));
        }
    }

    let tg_available = match file.tg_available.len() {
        0 => vec![false; file.n_steps],
        1 => vec![file.tg_available[0]; file.n_steps],
        n if n == file.n_steps => file.tg_available.clone(),
        n => {
            return Err(val(format!(
                "scenario: tg_available has {n} entries, expected 1 or {}",
                file.n_steps
            )))
        }
    };
    for w in tg_available.windows(2) {
        if w[0] && !w[1] {
            return Err(val(
                "scenario: tg_available must be monotone non-decreasing (single repair event)"
                    .into(),
            ));
        }
    }

    let zip = file.zip;
    let sum = zip.k_z + zip.k_i + zip.k_p;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(val(format!(
            "scenario: ZIP coefficients must sum to 1, got {sum}"
        )));
    }
    if zip.k_z < 0.0 || zip.k_i < 0.0 || zip.k_p < 0.0 {
        return Err(val("scenario: ZIP coefficients must be non-negative".into()));
    }
    if file.clpu.beta.iter().any(|b| *b < 0.0) {
        return Err(val("scenario: CLPU beta coefficients must be non-negative".into()));
    }
    let f = &file.frequency;
    if !(f.f_floor < f.f_ceil && f.nadir_floor < f.nadir_ceil && f.roc_floor < f.roc_ceil) {
        return Err(val("scenario: frequency boxes must have floor < ceiling".into()));
    }
    if !(0.0 < file.mitigation.v_red_pu && file.mitigation.v_red_pu <= 1.0) {
        return Err(val(format!(
            "scenario: v_red_pu = {} outside (0, 1]",
            file.mitigation.v_red_pu
        )));
    }

    let use_tan_phi = match file.pf_convention.as_str() {
        "tan_phi" => true,
        "pf" => false,
        other => {
            return Err(val(format!(
                "scenario: pf_convention {other:?} (expected \"tan_phi\" or \"pf\")"
            )))
        }
    };

    let mut loads = Vec::new();
    for l in &file.loads {
        let bus = graph
            .bus(&l.bus)
            .ok_or_else(|| val(format!("scenario load: unknown bus {}", l.bus)))?;
        if !graph.bus_phases[bus.0].contains(l.phase) {
            return Err(val(format!(
                "scenario load at {}: phase {} not present at that bus",
                l.bus, l.phase
            )));
        }
        let p_kw = expand(&l.p_kw, &format!("load {} p_kw", l.bus))?;
        if p_kw.iter().any(|p| *p < 0.0) {
            return Err(val(format!(
                "scenario load at {}: demand must be non-negative",
                l.bus
            )));
        }
        let tan_phi = match (use_tan_phi, l.tan_phi, l.pf) {
            (true, Some(t), _) => t,
            (false, _, Some(pf)) => {
                if !(0.0 < pf && pf <= 1.0) {
                    return Err(val(format!(
                        "scenario load at {}: power factor {pf} outside (0, 1]",
                        l.bus
                    )));
                }
                (pf.acos()).tan()
            }
            (true, None, Some(pf)) => (pf.acos()).tan(),
            (false, None, None) | (true, None, None) => 0.484,
            (false, Some(t), None) => t,
        };
        let q_kvar = match &l.q_kvar {
            Some(q) => expand(q, &format!("load {} q_kvar", l.bus))?,
            None => p_kw.iter().map(|p| p * tan_phi).collect(),
        };
        loads.push(LoadRecord {
            bus,
            phase: l.phase,
            class: l.class,
            p_kw,
            q_kvar,
            tan_phi,
        });
    }

    Ok(Scenario {
        name: file.name,
        dt_min: file.dt_min,
        n_steps: file.n_steps,
        start: file.start,
        pv_rate,
        tg_available,
        loads,
        zip,
        clpu: file.clpu,
        weights: file.weights,
        frequency: file.frequency,
        mitigation: file.mitigation,
        residual_flux: file.residual_flux,
    })
}
