//! Restoration-MILP builder tests: structural rows, the balanced-reduction
//! check against a hand fixed-point, blocked switches, and monotonicity of
//! solved trajectories.

use mpbs_core::builder::{build, BuildConfig, VarKey, Window};
use mpbs_core::ids::{BlockId, EdgeId, Phase};
use mpbs_core::plan::extract_plan;
use mpbs_core::scenario::LoadClass;
use mpbs_core::state::{MitigationFlags, SystemState};
use mpbs_core::testkit::{Toy, ToyTopology};
use mpbs_core::util::sqrt_linearized;
use mpbs_milp::{solve, Sense, SolveOptions, Status};

fn window(state_step: usize, len: usize, n_steps: usize) -> Window {
    let abs: Vec<usize> = (1..=len)
        .map(|t| (state_step + t).min(n_steps))
        .collect();
    Window {
        abs_steps: abs,
        pv_rate: vec![0.0; len],
        tg_available: vec![false; len],
        truncated: false,
    }
}

#[test]
fn single_block_one_step_has_radiality_row() {
    let toy = Toy {
        n_blocks: 0,
        loads: vec![(0, LoadClass::Cl, 50.0)],
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, 1, scenario.n_steps),
        &MitigationFlags::default(),
        &BuildConfig::default(),
    )
    .unwrap();

    // Radiality balance: sum of edges - sum of buses + R = 0 with R = 1.
    let bal = model
        .instance
        .rows()
        .iter()
        .find(|r| r.name == "rad_balance.t1")
        .expect("radiality row");
    assert_eq!(bal.sense, Sense::Eq);
    let roots = model
        .instance
        .rows()
        .iter()
        .find(|r| r.name == "rad_roots.t1")
        .unwrap();
    assert_eq!(roots.rhs, 1.0);
    // No in-window monotonicity rows for a 1-step window.
    assert!(model
        .instance
        .rows()
        .iter()
        .all(|r| r.family != "bb_monotone"));

    let sol = solve(&model.instance, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let plan = extract_plan(&graph, &scenario, &state, &model, &sol).unwrap();
    assert!(plan.first_step().block_on[0]);
    assert!(plan.first_step().restored_cl_kw > 0.0);
}

#[test]
fn esw_precondition_delays_remote_blocks() {
    let toy = Toy {
        n_blocks: 2,
        topology: ToyTopology::Chain,
        loads: vec![(1, LoadClass::Cl, 100.0), (2, LoadClass::Cl, 80.0)],
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, 3, scenario.n_steps),
        &MitigationFlags::default(),
        &BuildConfig::default(),
    )
    .unwrap();
    let sol = solve(&model.instance, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let plan = extract_plan(&graph, &scenario, &state, &model, &sol).unwrap();
    // Step 1: only the source block (no switch has an energized terminal
    // at the boundary). B1 at step 2, B2 at step 3.
    assert_eq!(plan.steps[0].block_on, vec![true, false, false]);
    assert_eq!(plan.steps[1].block_on, vec![true, true, false]);
    assert_eq!(plan.steps[2].block_on, vec![true, true, true]);
    // Monotone flags across the window.
    for t in 1..plan.steps.len() {
        for g in 0..graph.blocks.len() {
            assert!(plan.steps[t].block_on[g] >= plan.steps[t - 1].block_on[g]);
        }
    }
}

#[test]
fn blocked_esw_row_forces_stall() {
    let toy = Toy {
        n_blocks: 1,
        loads: vec![(1, LoadClass::Cl, 100.0)],
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let esw: Vec<EdgeId> = graph.esw_edges().map(|(id, _)| id).collect();
    let mut flags = MitigationFlags {
        v_red_sq: 0.64,
        ..Default::default()
    };
    // Block the only ESW at both window steps.
    flags.blocked_esws.insert((esw[0], 1));
    flags.blocked_esws.insert((esw[0], 2));
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, 2, scenario.n_steps),
        &flags,
        &BuildConfig::default(),
    )
    .unwrap();
    assert!(model
        .instance
        .rows()
        .iter()
        .any(|r| r.family == "esw_blocked"));
    let sol = solve(&model.instance, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let plan = extract_plan(&graph, &scenario, &state, &model, &sol).unwrap();
    assert!(!plan.steps[0].block_on[1]);
    assert!(!plan.steps[1].block_on[1]);
}

/// Balanced reduction: on a single-phase two-bus run the planned receiving
/// voltage must satisfy v_l = v_k - 2 (r p + x q) / V_base^2 exactly, with
/// the load given by the linearized ZIP model and the CLPU ladder. The
/// expectation is computed by an independent scalar fixed point.
#[test]
fn lindistflow_drop_matches_hand_fixed_point() {
    let toy = Toy {
        n_blocks: 0,
        loads: vec![(0, LoadClass::Cl, 200.0)],
        line_r: 0.3,
        line_x: 0.9,
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, 1, scenario.n_steps),
        &MitigationFlags::default(),
        &BuildConfig::default(),
    )
    .unwrap();
    let sol = solve(&model.instance, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);

    let g1 = graph.bus("G1").unwrap();
    let g0 = graph.bus("G").unwrap();
    let v_k = sol.values[model.var(&VarKey::V(g0, Phase::A, 1)).unwrap().0];
    let v_l = sol.values[model.var(&VarKey::V(g1, Phase::A, 1)).unwrap().0];
    assert!((v_k - 1.0).abs() < 1e-7, "source setpoint should sit at 1.0");

    // Independent fixed point: v -> 1 - 2 (r p(v) + x q(v)) / V^2.
    let zip = scenario.zip;
    let beta1 = scenario.clpu.beta[0];
    let ladder = 1.0 + beta1;
    let tan_phi = scenario.loads[0].tan_phi;
    let scale = 1000.0 / (2400.0f64 * 2400.0);
    let mut v = 1.0;
    for _ in 0..200 {
        let p = 200.0 * (zip.k_z * v + zip.k_i * sqrt_linearized(v, 1.0) + zip.k_p) * ladder;
        let q = p * tan_phi;
        v = 1.0 - 2.0 * (0.3 * p + 0.9 * q) * scale;
    }
    assert!(
        (v_l - v).abs() < 1e-9,
        "planned {v_l} vs fixed point {v}"
    );
}

#[test]
fn census_matches_independent_count_on_toy() {
    let toy = Toy {
        n_blocks: 2,
        loads: vec![
            (1, LoadClass::Cl, 100.0),
            (2, LoadClass::Nl, 50.0),
        ],
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let t_len = 3usize;
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, t_len, scenario.n_steps),
        &MitigationFlags::default(),
        &BuildConfig::default(),
    )
    .unwrap();
    let census = model.instance.census();

    // Independent arithmetic over the fixture dimensions.
    let n_blocks = graph.blocks.len();
    let n_buses = graph.bus_names.len();
    let n_lines = graph.line_edges().count();
    let n_esw = graph.esw_edges().count();
    let n_loads = scenario.loads.len();
    let n_nl_buses = 1;
    let n_gfmi = graph.gfmi_buses.len();
    // Phase count is 1 everywhere in this toy.
    let n_bus_phase = n_buses;
    let n_edge_phase = n_lines + n_esw;
    let sw_terms = graph.switch_terminal_buses().len();
    let f_buses = {
        let mut s = graph.switch_terminal_buses();
        for &g in &graph.gfmi_buses {
            if !s.contains(&g) {
                s.push(g);
            }
        }
        s.len()
    };
    let _ = sw_terms;
    // Product variables per load: sum over t of min(4, t).
    let y_per_load: usize = (1..=t_len).map(|t| t.min(4)).sum();

    let expected_vars = t_len
        * (n_blocks                      // uBB
            + n_buses                    // uB
            + n_lines                    // uE
            + n_esw                      // uESW
            + n_nl_buses                 // w
            + n_bus_phase                // v
            + f_buses                    // f
            + n_blocks                   // fg
            + 3 * n_gfmi                 // fqss, froc, fnadir
            + 2 * n_edge_phase           // pF, qF
            + 2 * n_gfmi                 // pB, qB
            + n_gfmi                     // soc
            + n_loads                    // pZ
            + 2 * n_loads                // pCL/qCL or pNL/qNL
            + 1)                         // R
        + 2 * y_per_load; // yCL + yNL for the two loads
    assert_eq!(census.variables, expected_vars, "{census}");

    // Spot-check two row families.
    let rows: std::collections::HashMap<&str, usize> = census
        .row_families
        .iter()
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    assert_eq!(rows["radiality_balance"], t_len);
    assert_eq!(rows["bb_bus_tie"], t_len * n_buses);
    assert_eq!(rows["vdrop_hi"], t_len * n_edge_phase);
    // Four exact-product rows per product variable.
    assert_eq!(rows["mc_cl"] + rows["mc_nl"], 4 * 2 * y_per_load);
}

#[test]
fn build_rejects_out_of_range_state_soc() {
    let toy = Toy::default();
    let (graph, scenario) = toy.build();
    let mut state = SystemState::initial(&graph, &scenario);
    let g = graph.bus("G").unwrap();
    state.soc.insert(g, 0.01); // below the 0.05 floor
    let err = build(
        &graph,
        &scenario,
        &state,
        &window(0, 1, scenario.n_steps),
        &MitigationFlags::default(),
        &BuildConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("SoC"), "{err}");
}

#[test]
fn vred_flags_pin_gfmi_setpoint() {
    let toy = Toy {
        n_blocks: 0,
        loads: vec![(0, LoadClass::Cl, 50.0)],
        ..Default::default()
    };
    let (graph, scenario) = toy.build();
    let state = SystemState::initial(&graph, &scenario);
    let g = graph.bus("G").unwrap();
    let mut flags = MitigationFlags {
        v_red_sq: 0.64,
        ..Default::default()
    };
    flags.gfmi_vred.insert(g, [true, false, false]);
    flags.relax_floor_blocks.insert(BlockId(0));
    let model = build(
        &graph,
        &scenario,
        &state,
        &window(0, 1, scenario.n_steps),
        &flags,
        &BuildConfig::default(),
    )
    .unwrap();
    let sol = solve(&model.instance, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let v = sol.values[model.var(&VarKey::V(g, Phase::A, 1)).unwrap().0];
    assert!((v - 0.64).abs() < 1e-9, "pinned setpoint, got {v}");
}
