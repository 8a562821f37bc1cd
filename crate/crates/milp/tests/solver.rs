//! Solver-level integration tests: MPS fixture parsing, random MILPs against
//! exhaustive enumeration, and large-export capacity.

use std::path::PathBuf;

use mpbs_milp::{
    import_solution, parse_mps, read_mps, solve, to_mps_string, write_mps, write_solution,
    Instance, Sense, SolveOptions, Status, VarId, VarKind, INT_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn hand_written_mps_fixture_parses_to_expected_rows() {
    let inst = read_mps(&fixture("mps/simple3.mps")).unwrap();
    assert_eq!(inst.num_variables(), 3);
    assert_eq!(inst.num_rows(), 3);
    let names: Vec<&str> = inst.variables().iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, vec!["x1", "x2", "x3"]);
    assert_eq!(inst.variables()[0].kind, VarKind::Binary);
    assert_eq!(inst.variables()[1].kind, VarKind::Continuous);
    let rows = inst.rows();
    assert_eq!(rows[0].name, "LIM1");
    assert_eq!(rows[0].sense, Sense::Le);
    assert_eq!(rows[0].rhs, 4.0);
    assert_eq!(rows[1].sense, Sense::Ge);
    assert_eq!(rows[2].sense, Sense::Eq);
    assert_eq!(rows[2].rhs, 2.0);

    // Optimum by hand: x1 = 1, x2 = 2, x3 = 0 -> objective 5.
    let sol = solve(&inst, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 5.0).abs() < 1e-7);
    assert!((sol.values[0] - 1.0).abs() < INT_TOL);
    assert!((sol.values[1] - 2.0).abs() < 1e-7);
    assert!(sol.values[2].abs() < 1e-7);
}

/// Random mixed instances: embedded branch-and-bound must match exhaustive
/// enumeration of all binary assignments (continuous part re-solved per
/// assignment through the LP path of the same solver, bound fixing only).
#[test]
fn random_milps_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..40 {
        let nb = rng.gen_range(2..=8usize);
        let nc = rng.gen_range(0..=3usize);
        let m = rng.gen_range(1..=5usize);
        let mut inst = Instance::new(format!("case{case}"));
        let mut vars = Vec::new();
        for j in 0..nb {
            vars.push(
                inst.add_variable(format!("b{j}"), 0.0, 1.0, VarKind::Binary)
                    .unwrap(),
            );
        }
        for j in 0..nc {
            vars.push(
                inst.add_variable(format!("c{j}"), 0.0, 3.0, VarKind::Continuous)
                    .unwrap(),
            );
        }
        for &v in &vars {
            inst.add_objective(v, rng.gen_range(-3.0..5.0));
        }
        // A known-feasible point keeps most cases feasible.
        let x_ref: Vec<f64> = (0..vars.len())
            .map(|j| {
                if j < nb {
                    f64::from(rng.gen_range(0..2))
                } else {
                    rng.gen_range(0.0..2.0)
                }
            })
            .collect();
        for i in 0..m {
            let terms: Vec<(VarId, f64)> = vars
                .iter()
                .map(|&v| (v, rng.gen_range(-2.0..3.0)))
                .collect();
            let act: f64 = terms.iter().map(|(v, c)| c * x_ref[v.0]).sum();
            inst.add_row(format!("r{i}"), "t", terms, Sense::Le, act + rng.gen_range(0.0..1.0))
                .unwrap();
        }

        let sol = solve(&inst, &SolveOptions::default()).unwrap();

        // Enumeration oracle over binary assignments.
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << nb) {
            let fixes: Vec<(usize, f64, f64)> = (0..nb)
                .map(|j| {
                    let v = f64::from(mask >> j & 1);
                    (j, v, v)
                })
                .collect();
            match mpbs_milp::solve_lp(&inst, &fixes, 100_000) {
                Ok(lp) if lp.status == mpbs_milp::LpStatus::Optimal => {
                    best = Some(best.map_or(lp.objective, |b: f64| b.max(lp.objective)));
                }
                _ => {}
            }
        }

        match best {
            None => assert_eq!(sol.status, Status::Infeasible, "case {case}"),
            Some(b) => {
                assert_eq!(sol.status, Status::Optimal, "case {case}");
                assert!(
                    (sol.objective - b).abs() < 1e-6,
                    "case {case}: bb {} vs enum {b}",
                    sol.objective
                );
            }
        }
    }
}

#[test]
fn export_import_solution_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inst = Instance::new("roundtrip");
    let mut vars = Vec::new();
    for j in 0..6 {
        vars.push(
            inst.add_variable(format!("u.{j}"), 0.0, 1.0, VarKind::Binary)
                .unwrap(),
        );
    }
    for &v in &vars {
        inst.add_objective(v, rng.gen_range(0.5..2.0));
    }
    inst.add_row(
        "cap",
        "t",
        vars.iter().map(|&v| (v, 1.0)).collect(),
        Sense::Le,
        3.0,
    )
    .unwrap();
    let sol = solve(&inst, &SolveOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sol_path = dir.path().join("s.txt");
    write_solution(&inst, &sol, &sol_path).unwrap();
    let back = import_solution(&inst, &sol_path).unwrap();
    assert_eq!(back.values, sol.values);
}

#[test]
fn large_instance_export_completes() {
    // > 10^4 rows: capacity check for the MPS writer.
    let mut inst = Instance::new("large");
    let n = 2_000;
    let vars: Vec<VarId> = (0..n)
        .map(|j| {
            inst.add_variable(format!("x{j}"), 0.0, 10.0, VarKind::Continuous)
                .unwrap()
        })
        .collect();
    for i in 0..12_000 {
        let a = vars[i % n];
        let b = vars[(i * 7 + 3) % n];
        inst.add_row(
            format!("r{i}"),
            "t",
            vec![(a, 1.0), (b, -0.5)],
            Sense::Le,
            5.0,
        )
        .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("large.mps");
    write_mps(&inst, &path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    assert!(size > 100_000, "export size {size}");
    let text = std::fs::read_to_string(&path).unwrap();
    let back = parse_mps(&text).unwrap();
    assert_eq!(back.num_rows(), 12_000);
}

#[test]
fn exported_text_deterministic_across_processes_inputs() {
    let mut inst = Instance::new("det");
    let x = inst.add_variable("x", 0.0, 1.5, VarKind::Continuous).unwrap();
    let y = inst.add_variable("y", 0.0, 1.0, VarKind::Binary).unwrap();
    inst.add_objective(x, 1.0);
    inst.add_objective(y, 2.0);
    inst.add_row("r", "t", vec![(x, 1.0), (y, 2.5)], Sense::Le, 3.0)
        .unwrap();
    let s1 = to_mps_string(&inst);
    let s2 = to_mps_string(&inst.clone());
    assert_eq!(s1, s2);
    assert!(s1.contains("OBJSENSE"));
    assert!(s1.contains("INTORG"));
}
