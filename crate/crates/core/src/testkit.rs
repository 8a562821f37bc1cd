//! Programmatic toy fixtures for tests and examples: small block-chain and
//! block-star feeders with configurable loads, transformers, and
//! protection. Production runs parse real files; these builders exist so
//! tests can sweep randomized topologies without fixture sprawl.

use crate::feeder::{
    build_graph, BaseSection, BessEntry, BlockEntry, BusEntry, DevicesSection, EdgeEntry,
    EdgeKind, FeederFile, FuseEntry, LateralEntry, LimitsSection, NetworkGraph,
    ProtectionSection, RecloserEntry, TransformerEntry,
};
use crate::ids::{Phase, PhaseSet};
use crate::scenario::{
    build_scenario, LoadClass, LoadEntry, Scenario, ScenarioFile, ZipCoefficients,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTopology {
    /// Blocks in a line: G - C1 - C2 - ...
    Chain,
    /// Every block hangs off the source block.
    Star,
}

/// A compact toy description; `build` turns it into a parsed feeder plus
/// scenario.
#[derive(Clone, Debug)]
pub struct Toy {
    pub topology: ToyTopology,
    /// Number of non-source blocks.
    pub n_blocks: usize,
    /// (block index 1.., class, kW) phase-A loads; block 0 is the source.
    pub loads: Vec<(usize, LoadClass, f64)>,
    /// (block index, saturated reactance ohm, residual flux) phase-A DTs.
    pub dts: Vec<(usize, f64, f64)>,
    /// Fuse threshold per block lateral (A); defaults high.
    pub fuse_a: Vec<(usize, f64)>,
    pub recloser_a: f64,
    pub line_r: f64,
    pub line_x: f64,
    pub bess_kva: f64,
    pub bess_kwh: f64,
    pub n_steps: usize,
    pub zip: ZipCoefficients,
    pub v_red_pu: f64,
}

impl Default for Toy {
    fn default() -> Self {
        Toy {
            topology: ToyTopology::Chain,
            n_blocks: 2,
            loads: vec![(1, LoadClass::Cl, 100.0), (2, LoadClass::Cl, 80.0)],
            dts: vec![],
            fuse_a: vec![],
            recloser_a: 1e6,
            line_r: 0.1,
            line_x: 0.5,
            bess_kva: 3000.0,
            bess_kwh: 2000.0,
            n_steps: 6,
            zip: ZipCoefficients::default(),
            v_red_pu: 0.8,
        }
    }
}

impl Toy {
    pub fn build(&self) -> (NetworkGraph, Scenario) {
        let file = self.feeder_file();
        let graph = build_graph(file).expect("toy feeder");
        let scenario = build_scenario(self.scenario_file(), &graph).expect("toy scenario");
        (graph, scenario)
    }

    pub fn feeder_file(&self) -> FeederFile {
        let mut buses = vec![
            BusEntry {
                id: "G".into(),
                phases: PhaseSet::single(Phase::A),
            },
            BusEntry {
                id: "G1".into(),
                phases: PhaseSet::single(Phase::A),
            },
        ];
        let mut edges = vec![EdgeEntry {
            id: None,
            from: "G".into(),
            to: "G1".into(),
            kind: EdgeKind::Line,
            phases: PhaseSet::single(Phase::A),
            z_ohm: [("aa".to_string(), (self.line_r, self.line_x))]
                .into_iter()
                .collect(),
        }];
        let mut blocks = vec![BlockEntry {
            id: "B0".into(),
            buses: vec!["G".into(), "G1".into()],
        }];
        let mut laterals = vec![LateralEntry {
            id: "L0".into(),
            head: ("G".into(), "G1".into()),
            buses: vec!["G1".into()],
        }];
        let mut fuses = vec![FuseEntry {
            id: "F0".into(),
            lateral: "L0".into(),
            i_2t_a: [("A".to_string(), self.fuse_threshold(0))].into_iter().collect(),
        }];
        let mut transformers = Vec::new();

        for i in 1..=self.n_blocks {
            let head = format!("C{i}");
            let tail = format!("C{i}b");
            buses.push(BusEntry {
                id: head.clone(),
                phases: PhaseSet::single(Phase::A),
            });
            buses.push(BusEntry {
                id: tail.clone(),
                phases: PhaseSet::single(Phase::A),
            });
            let parent = match self.topology {
                ToyTopology::Star => "G".to_string(),
                ToyTopology::Chain => {
                    if i == 1 {
                        "G1".to_string()
                    } else {
                        format!("C{}b", i - 1)
                    }
                }
            };
            edges.push(EdgeEntry {
                id: Some(format!("SW{i}")),
                from: parent,
                to: head.clone(),
                kind: EdgeKind::Esw,
                phases: PhaseSet::single(Phase::A),
                z_ohm: Default::default(),
            });
            edges.push(EdgeEntry {
                id: None,
                from: head.clone(),
                to: tail.clone(),
                kind: EdgeKind::Line,
                phases: PhaseSet::single(Phase::A),
                z_ohm: [("aa".to_string(), (self.line_r, self.line_x))]
                    .into_iter()
                    .collect(),
            });
            blocks.push(BlockEntry {
                id: format!("B{i}"),
                buses: vec![head.clone(), tail.clone()],
            });
            laterals.push(LateralEntry {
                id: format!("L{i}"),
                head: (head.clone(), tail.clone()),
                buses: vec![tail.clone()],
            });
            fuses.push(FuseEntry {
                id: format!("F{i}"),
                lateral: format!("L{i}"),
                i_2t_a: [("A".to_string(), self.fuse_threshold(i))]
                    .into_iter()
                    .collect(),
            });
        }

        let omega = 2.0 * std::f64::consts::PI * 60.0;
        for &(block, x_sat, lambda_0) in &self.dts {
            transformers.push(TransformerEntry {
                bus: if block == 0 {
                    "G1".to_string()
                } else {
                    format!("C{block}b")
                },
                phase: Phase::A,
                rating_kva: 100.0,
                lambda_n: Some(1.0),
                lambda_s: Some(1.2),
                lambda_0: Some(lambda_0),
                l_s_h: Some(x_sat / omega),
                l_m_h: Some(500.0 * x_sat / omega),
                r_w_ohm: Some(0.2),
            });
        }

        FeederFile {
            name: "toy".into(),
            units: Default::default(),
            base: BaseSection {
                v_ln_volts: 2400.0,
                f_hz: 60.0,
            },
            limits: LimitsSection::default(),
            buses,
            edges,
            blocks,
            laterals,
            transformers,
            protection: ProtectionSection {
                fuses,
                reclosers: vec![RecloserEntry {
                    id: "R0".into(),
                    gfmi_bus: "G".into(),
                    i_2t_a: [("A".to_string(), self.recloser_a)].into_iter().collect(),
                }],
            },
            gfmi_buses: vec!["G".into()],
            devices: DevicesSection {
                bess: vec![BessEntry {
                    bus: "G".into(),
                    s_nom_kva: self.bess_kva,
                    e_nom_kwh: self.bess_kwh,
                    soc_min: 0.05,
                    soc_max: 1.0,
                    soc_init: 1.0,
                }],
                pv: vec![],
                tg: None,
                gfmi_freq: None,
            },
        }
    }

    fn fuse_threshold(&self, block: usize) -> f64 {
        self.fuse_a
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, v)| *v)
            .unwrap_or(1e6)
    }

    pub fn scenario_file(&self) -> ScenarioFile {
        let loads = self
            .loads
            .iter()
            .map(|&(block, class, kw)| LoadEntry {
                bus: if block == 0 {
                    "G1".to_string()
                } else {
                    format!("C{block}b")
                },
                phase: Phase::A,
                class,
                p_kw: vec![kw],
                q_kvar: None,
                pf: None,
                tan_phi: Some(0.484),
            })
            .collect();
        ScenarioFile {
            name: "toy-scenario".into(),
            units: Default::default(),
            dt_min: 15.0,
            n_steps: self.n_steps,
            start: "09:00".into(),
            pv_rate: vec![0.0],
            tg_available: vec![false],
            loads,
            pf_convention: "tan_phi".into(),
            zip: self.zip,
            clpu: Default::default(),
            weights: Default::default(),
            frequency: Default::default(),
            mitigation: crate::scenario::MitigationParams {
                v_red_pu: self.v_red_pu,
            },
            residual_flux: None,
        }
    }
}
