//! Fixture-file tests: the 123-node feeder's structure, round-trip
//! identity, block-graph connectivity, and path-impedance properties.

use std::path::PathBuf;

use mpbs_core::feeder::{build_graph, parse_feeder};
use mpbs_core::ids::Phase;
use mpbs_core::scenario::load_scenario;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn ieee123_structure_counts() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    assert_eq!(g.blocks.len(), 11);
    assert_eq!(g.esw_edges().count(), 10);
    assert_eq!(g.ssw_edges().count(), 2);
    let gfmi: Vec<&str> = g.gfmi_buses.iter().map(|b| g.bus_name(*b)).collect();
    assert_eq!(gfmi, vec!["149", "98"]);
    let tg = g.fleet.tg.as_ref().unwrap();
    assert_eq!(g.bus_name(tg.bus), "150");
    // Fuse per lateral, recloser per GFMI feeder head.
    assert_eq!(g.fuses.len(), g.laterals.len());
    assert_eq!(g.reclosers.len(), 2);
}

#[test]
fn ieee123_block_graph_connects_when_all_switches_close() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    let closed = vec![true; g.edges.len()];
    let comp = g.components(&closed);
    let first = comp[0];
    assert!(comp.iter().all(|c| *c == first), "one island");
}

#[test]
fn ieee123_round_trip_identity() {
    let g1 = parse_feeder(&fixture("ieee123.json")).unwrap();
    let text = serde_json::to_string(&g1.to_file()).unwrap();
    let g2 = build_graph(serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn ieee123_scenario_loads() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    let s = load_scenario(&fixture("ieee123_scenario.json"), &g).unwrap();
    assert_eq!(s.dt_min, 15.0);
    assert_eq!(s.time_label(1), "09:00");
    // Repair completes at 11:00.
    let first_avail = s.tg_available.iter().position(|x| *x).unwrap() + 1;
    assert_eq!(s.time_label(first_avail), "11:00");
    assert!(!s.loads.is_empty());
}

/// Path impedance on a randomized radial subtree equals a brute-force
/// enumeration of the simple path.
#[test]
fn path_impedance_matches_brute_force_path_enumeration() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    // Close every line edge of blocks B1/B2 plus the switch between them:
    // a known radial subtree.
    let mut closed = vec![false; g.edges.len()];
    for (gi, block) in g.blocks.iter().enumerate() {
        if block.name == "B1" || block.name == "B2" {
            for e in &g.blocks[gi].line_edges {
                closed[e.0] = true;
            }
        }
    }
    let sw = g
        .edges
        .iter()
        .position(|e| e.name == "SW7-8")
        .expect("switch between B1 and B2");
    closed[sw] = true;

    // Brute force: depth-first simple-path search summing diagonals.
    let from = g.bus("149").unwrap();
    for target in ["9", "11", "20", "23"] {
        let to = g.bus(target).unwrap();
        let got = g.path_impedance(&closed, from, to, Phase::A).unwrap();
        let want = brute_force_path(&g, &closed, from, to, Phase::A).expect("path exists");
        assert!(
            (got - want).norm() < 1e-12,
            "{target}: {got} vs {want}"
        );
        // Symmetry (up to float summation order).
        let rev = g.path_impedance(&closed, to, from, Phase::A).unwrap();
        assert!((got - rev).norm() < 1e-12);
    }
}

fn brute_force_path(
    g: &mpbs_core::feeder::NetworkGraph,
    closed: &[bool],
    from: mpbs_core::ids::BusId,
    to: mpbs_core::ids::BusId,
    phase: Phase,
) -> Option<num_complex::Complex64> {
    fn dfs(
        g: &mpbs_core::feeder::NetworkGraph,
        closed: &[bool],
        at: mpbs_core::ids::BusId,
        to: mpbs_core::ids::BusId,
        phase: Phase,
        visited: &mut Vec<bool>,
    ) -> Option<num_complex::Complex64> {
        if at == to {
            return Some(num_complex::Complex64::new(0.0, 0.0));
        }
        visited[at.0] = true;
        for &(eid, other) in &g.adjacency[at.0] {
            if !closed[eid.0] || visited[other.0] || !g.edges[eid.0].phases.contains(phase) {
                continue;
            }
            if let Some(rest) = dfs(g, closed, other, to, phase, visited) {
                let i = phase.index();
                return Some(rest + g.edges[eid.0].z[i][i]);
            }
        }
        visited[at.0] = false;
        None
    }
    let mut visited = vec![false; g.bus_names.len()];
    dfs(g, closed, from, to, phase, &mut visited)
}

#[test]
fn disconnected_pair_is_an_error() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    let closed = vec![false; g.edges.len()];
    let a = g.bus("149").unwrap();
    let b = g.bus("98").unwrap();
    assert!(g.path_impedance(&closed, a, b, Phase::A).is_err());
}

#[test]
fn non_radial_topology_is_an_error() {
    let g = parse_feeder(&fixture("ieee123.json")).unwrap();
    // Close everything: the ten ESWs plus two SSWs over eleven blocks
    // necessarily close a loop.
    let closed = vec![true; g.edges.len()];
    let a = g.bus("149").unwrap();
    let b = g.bus("98").unwrap();
    let err = g.path_impedance(&closed, a, b, Phase::A).unwrap_err();
    assert!(err.to_string().contains("radial"), "{err}");
    assert!(g.check_radial(&closed).is_err());
}
