//! Regenerates the checked-in fixture files under `fixtures/`:
//! the two mitigation toys and the 123-node feeder with its scenario.
//! Deterministic; run from the workspace root with
//! `cargo run -p mpbs-core --example gen_fixtures`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mpbs_core::feeder::{
    build_graph, BaseSection, BessEntry, BlockEntry, BusEntry, DevicesSection, EdgeEntry,
    EdgeKind, FeederFile, FuseEntry, LateralEntry, LimitsSection, ProtectionSection, PvEntry,
    RecloserEntry, TgEntry, TransformerEntry,
};
use mpbs_core::ids::{Phase, PhaseSet};
use mpbs_core::scenario::{build_scenario, LoadClass, LoadEntry, ScenarioFile};
use mpbs_core::testkit::{Toy, ToyTopology};

/// Trunk line segments (three-phase) per block, `(from, to)`.
const TRUNK: &[(&str, &str)] = &[
    // B1
    ("149", "1"), ("1", "7"), ("1", "3"), ("3", "5"),
    // B2
    ("8", "13"), ("13", "18"), ("18", "21"), ("21", "23"), ("8", "9"),
    // B3
    ("152", "52"), ("52", "53"), ("53", "54"), ("54", "57"), ("57", "60"), ("60", "160"), ("60", "61"),
    // B4
    ("135", "35"), ("35", "40"), ("40", "42"), ("42", "44"), ("44", "47"), ("47", "49"), ("49", "50"), ("50", "51"), ("51", "151"),
    // B5
    ("25", "26"), ("25", "28"), ("28", "29"), ("29", "30"), ("30", "250"),
    // B6
    ("62", "63"), ("63", "64"), ("64", "65"), ("65", "66"),
    // B7
    ("72", "76"), ("76", "77"), ("77", "78"), ("78", "80"), ("80", "81"), ("76", "86"),
    // B8
    ("67", "97"), ("97", "98"), ("98", "99"), ("99", "100"), ("100", "450"), ("67", "68"),
    // B9
    ("87", "89"), ("89", "91"), ("91", "93"), ("93", "95"),
    // B10
    ("197", "101"), ("101", "105"), ("105", "108"), ("108", "109"), ("108", "300"), ("101", "102"),
];

/// Single-phase lateral chains: (head trunk bus, members in chain order,
/// phase letter). Each lateral carries loads and transformers on its member
/// buses and a fuse at its head edge.
const LATERALS: &[(&str, &[&str], char)] = &[
    // B1
    ("1", &["2"], 'B'),
    ("3", &["4"], 'C'),
    ("5", &["6"], 'C'),
    // B2
    ("9", &["14", "10", "11"], 'A'),
    ("8", &["12"], 'B'),
    ("13", &["34", "15", "16", "17"], 'C'),
    ("18", &["19", "20"], 'A'),
    ("21", &["22"], 'B'),
    ("23", &["24"], 'C'),
    // B3
    ("54", &["55", "56"], 'A'),
    ("57", &["58", "59"], 'B'),
    ("61", &["610"], 'C'),
    // B4
    ("35", &["36", "37", "38", "39"], 'A'),
    ("40", &["41"], 'C'),
    ("42", &["43"], 'B'),
    ("44", &["45", "46"], 'A'),
    ("47", &["48"], 'B'),
    // B5
    ("26", &["27", "33"], 'A'),
    ("26", &["31", "32"], 'C'),
    // B6
    ("62", &["62a"], 'A'),
    ("64", &["64a"], 'B'),
    // B7
    ("72", &["73", "74", "75"], 'C'),
    ("78", &["79"], 'A'),
    ("81", &["82", "83"], 'B'),
    ("81", &["84", "85"], 'C'),
    // B8
    ("68", &["69", "70", "71"], 'A'),
    ("99", &["99a"], 'B'),
    // B9
    ("87", &["88"], 'B'),
    ("89", &["90"], 'A'),
    ("91", &["92"], 'C'),
    ("93", &["94"], 'A'),
    ("95", &["96"], 'B'),
    // B10
    ("101", &["103", "104"], 'C'),
    ("102", &["102a"], 'B'),
    ("105", &["106", "107"], 'A'),
    ("109", &["110", "111"], 'A'),
    ("109", &["112", "113", "114"], 'C'),
];

const BLOCKS: &[(&str, &[&str])] = &[
    ("B1", &["149", "1", "2", "3", "4", "5", "6", "7"]),
    ("B2", &["8", "9", "10", "11", "12", "13", "14", "34", "15", "16", "17", "18", "19", "20", "21", "22", "23", "24"]),
    ("B3", &["152", "52", "53", "54", "55", "56", "57", "58", "59", "60", "61", "160", "610"]),
    ("B4", &["135", "35", "36", "37", "38", "39", "40", "41", "42", "43", "44", "45", "46", "47", "48", "49", "50", "51", "151"]),
    ("B5", &["25", "26", "27", "28", "29", "30", "31", "32", "33", "250"]),
    ("B6", &["62", "62a", "63", "64", "64a", "65", "66"]),
    ("B7", &["72", "73", "74", "75", "76", "77", "78", "79", "80", "81", "82", "83", "84", "85", "86"]),
    ("B8", &["67", "68", "69", "70", "71", "97", "98", "99", "99a", "100", "450"]),
    ("B9", &["87", "88", "89", "90", "91", "92", "93", "94", "95", "96"]),
    ("B10", &["197", "101", "102", "102a", "103", "104", "105", "106", "107", "108", "109", "110", "111", "112", "113", "114", "300"]),
    ("BTG", &["150"]),
];

const ESWS: &[(&str, &str)] = &[
    ("7", "8"),
    ("13", "152"),
    ("18", "135"),
    ("23", "25"),
    ("60", "62"),
    ("160", "67"),
    ("67", "72"),
    ("86", "87"),
    ("97", "197"),
    ("54", "94"),
];

const SSWS: &[(&str, &str)] = &[("150", "149"), ("151", "300")];

fn phase_of(letter: char) -> Phase {
    match letter {
        'A' => Phase::A,
        'B' => Phase::B,
        _ => Phase::C,
    }
}

fn z_map(r: f64, x: f64, phases: PhaseSet) -> BTreeMap<String, (f64, f64)> {
    let mut m = BTreeMap::new();
    for p in phases.iter() {
        let key = format!(
            "{}{}",
            p.letter().to_ascii_lowercase(),
            p.letter().to_ascii_lowercase()
        );
        m.insert(key, (r, x));
    }
    if phases == PhaseSet::ABC {
        for (a, b) in [("a", "b"), ("a", "c"), ("b", "c"), ("b", "a"), ("c", "a"), ("c", "b")] {
            m.insert(format!("{a}{b}"), (0.02, 0.06));
        }
    }
    m
}

fn ieee123() -> (FeederFile, ScenarioFile) {
    let mut bus_phase: BTreeMap<String, PhaseSet> = BTreeMap::new();
    for block in BLOCKS {
        for b in block.1 {
            bus_phase.insert((*b).to_string(), PhaseSet::ABC);
        }
    }
    // Lateral members are single phase; heads stay three phase.
    for (_, members, letter) in LATERALS {
        for m in *members {
            bus_phase.insert((*m).to_string(), PhaseSet::single(phase_of(*letter)));
        }
    }

    let mut edges = Vec::new();
    for (f, t) in TRUNK {
        edges.push(EdgeEntry {
            id: None,
            from: (*f).to_string(),
            to: (*t).to_string(),
            kind: EdgeKind::Line,
            phases: PhaseSet::ABC,
            z_ohm: z_map(0.06, 0.14, PhaseSet::ABC),
        });
    }
    let mut laterals = Vec::new();
    let mut loads = Vec::new();
    let mut transformers = Vec::new();
    let mut fuses = Vec::new();
    let n_steps = 12;
    let mut load_round = 0usize;
    for (li, (head, members, letter)) in LATERALS.iter().enumerate() {
        let phase = phase_of(*letter);
        let pset = PhaseSet::single(phase);
        let mut prev = (*head).to_string();
        for m in *members {
            edges.push(EdgeEntry {
                id: None,
                from: prev.clone(),
                to: (*m).to_string(),
                kind: EdgeKind::Line,
                phases: pset,
                z_ohm: z_map(0.08, 0.16, pset),
            });
            prev = (*m).to_string();

            // Load and its service transformer.
            let p_kw = 25.0 + 10.0 * ((load_round % 4) as f64);
            let class = if load_round % 5 < 3 {
                LoadClass::Cl
            } else {
                LoadClass::Nl
            };
            load_round += 1;
            loads.push(LoadEntry {
                bus: (*m).to_string(),
                phase,
                class,
                p_kw: vec![p_kw],
                q_kvar: None,
                pf: None,
                tan_phi: Some(0.484),
            });
            let rating = if p_kw <= 25.0 {
                25.0
            } else if p_kw <= 50.0 {
                50.0
            } else {
                75.0
            };
            transformers.push(TransformerEntry {
                bus: (*m).to_string(),
                phase,
                rating_kva: rating,
                lambda_n: None,
                lambda_s: None,
                lambda_0: None,
                l_s_h: None,
                l_m_h: None,
                r_w_ohm: None,
            });
        }
        let name = format!("F{}", li + 1);
        laterals.push(LateralEntry {
            id: format!("L{}", li + 1),
            head: ((*head).to_string(), members[0].to_string()),
            buses: members.iter().map(|m| (*m).to_string()).collect(),
        });
        fuses.push(FuseEntry {
            id: name,
            lateral: format!("L{}", li + 1),
            i_2t_a: [(letter.to_string(), 1200.0)].into_iter().collect(),
        });
    }

    for (f, t) in ESWS {
        let pf = bus_phase[*f];
        let pt = bus_phase[*t];
        edges.push(EdgeEntry {
            id: Some(format!("SW{f}-{t}")),
            from: (*f).to_string(),
            to: (*t).to_string(),
            kind: EdgeKind::Esw,
            phases: pf.intersection(pt),
            z_ohm: BTreeMap::new(),
        });
    }
    for (f, t) in SSWS {
        edges.push(EdgeEntry {
            id: Some(format!("TIE{f}-{t}")),
            from: (*f).to_string(),
            to: (*t).to_string(),
            kind: EdgeKind::Ssw,
            phases: bus_phase[*f].intersection(bus_phase[*t]),
            z_ohm: BTreeMap::new(),
        });
    }

    let feeder = FeederFile {
        name: "ieee123-black-start".to_string(),
        units: Default::default(),
        base: BaseSection {
            v_ln_volts: 2401.777,
            f_hz: 60.0,
        },
        limits: LimitsSection::default(),
        buses: bus_phase
            .iter()
            .map(|(id, phases)| BusEntry {
                id: id.clone(),
                phases: *phases,
            })
            .collect(),
        edges,
        blocks: BLOCKS
            .iter()
            .map(|(id, buses)| BlockEntry {
                id: (*id).to_string(),
                buses: buses.iter().map(|b| (*b).to_string()).collect(),
            })
            .collect(),
        laterals,
        transformers,
        protection: ProtectionSection {
            fuses,
            reclosers: vec![
                RecloserEntry {
                    id: "R1".to_string(),
                    gfmi_bus: "149".to_string(),
                    i_2t_a: [("A", 2600.0), ("B", 2600.0), ("C", 2600.0)]
                        .into_iter()
                        .map(|(k, v)| (k.to_string(), v))
                        .collect(),
                },
                RecloserEntry {
                    id: "R2".to_string(),
                    gfmi_bus: "98".to_string(),
                    i_2t_a: [("A", 2600.0), ("B", 2600.0), ("C", 2600.0)]
                        .into_iter()
                        .map(|(k, v)| (k.to_string(), v))
                        .collect(),
                },
            ],
        },
        gfmi_buses: vec!["149".to_string(), "98".to_string()],
        devices: DevicesSection {
            bess: vec![
                BessEntry {
                    bus: "149".to_string(),
                    s_nom_kva: 2294.0,
                    e_nom_kwh: 3942.0,
                    soc_min: 0.05,
                    soc_max: 1.0,
                    soc_init: 1.0,
                },
                BessEntry {
                    bus: "98".to_string(),
                    s_nom_kva: 2222.0,
                    e_nom_kwh: 3587.0,
                    soc_min: 0.05,
                    soc_max: 1.0,
                    soc_init: 1.0,
                },
            ],
            pv: ["6", "20", "33", "39", "56", "66", "75", "83", "90", "96", "104", "114"]
                .iter()
                .map(|b| PvEntry {
                    bus: (*b).to_string(),
                    s_nom_kva: 80.4,
                })
                .collect(),
            tg: Some(TgEntry {
                bus: "150".to_string(),
                s_max_kva: 6000.0,
            }),
            gfmi_freq: None,
        },
    };

    let scenario = ScenarioFile {
        name: "ieee123-day".to_string(),
        units: Default::default(),
        dt_min: 15.0,
        n_steps,
        start: "09:00".to_string(),
        pv_rate: (0..n_steps)
            .map(|t| (0.1 + 0.03 * t as f64).min(0.6))
            .collect(),
        // Repair completes at 11:00, eight steps after 09:00.
        tg_available: (0..n_steps).map(|t| t >= 8).collect(),
        loads,
        pf_convention: "tan_phi".to_string(),
        zip: Default::default(),
        clpu: Default::default(),
        weights: Default::default(),
        frequency: Default::default(),
        mitigation: Default::default(),
        residual_flux: None,
    };
    (feeder, scenario)
}

fn toy_files(toy: &Toy, feeder_name: &str, scen_name: &str, dir: &Path) {
    let feeder = toy.feeder_file();
    let scen = toy.scenario_file();
    fs::write(
        dir.join(feeder_name),
        serde_json::to_string_pretty(&feeder).unwrap(),
    )
    .unwrap();
    fs::write(
        dir.join(scen_name),
        serde_json::to_string_pretty(&scen).unwrap(),
    )
    .unwrap();
}

fn main() {
    let dir = Path::new("fixtures");
    fs::create_dir_all(dir).unwrap();

    let fuse_toy = Toy {
        topology: ToyTopology::Chain,
        n_blocks: 2,
        loads: vec![
            (0, LoadClass::Cl, 100.0),
            (1, LoadClass::Cl, 80.0),
            (2, LoadClass::Nl, 60.0),
        ],
        dts: vec![(0, 3.0, 0.8)],
        fuse_a: vec![(0, 953.0)],
        n_steps: 6,
        ..Default::default()
    };
    toy_files(&fuse_toy, "toy_fuse.json", "toy_fuse_scenario.json", dir);

    let recloser_toy = Toy {
        topology: ToyTopology::Star,
        n_blocks: 2,
        loads: vec![(1, LoadClass::Cl, 120.0), (2, LoadClass::Cl, 100.0)],
        dts: vec![(1, 2.5, 0.8), (2, 3.1, 0.8)],
        recloser_a: 2000.0,
        n_steps: 6,
        ..Default::default()
    };
    toy_files(
        &recloser_toy,
        "toy_recloser.json",
        "toy_recloser_scenario.json",
        dir,
    );

    let (feeder, scenario) = ieee123();
    // Validate before writing.
    let graph = build_graph(feeder.clone()).expect("123-node fixture must validate");
    build_scenario(scenario.clone(), &graph).expect("123-node scenario must validate");
    assert_eq!(graph.blocks.len(), 11);
    assert_eq!(graph.esw_edges().count(), 10);
    assert_eq!(graph.ssw_edges().count(), 2);
    fs::write(
        dir.join("ieee123.json"),
        serde_json::to_string_pretty(&feeder).unwrap(),
    )
    .unwrap();
    fs::write(
        dir.join("ieee123_scenario.json"),
        serde_json::to_string_pretty(&scenario).unwrap(),
    )
    .unwrap();
    println!(
        "wrote fixtures: toys + 123-node ({} buses, {} edges, {} loads)",
        graph.bus_names.len(),
        graph.edges.len(),
        scenario.loads.len()
    );
}
