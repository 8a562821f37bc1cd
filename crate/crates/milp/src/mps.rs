//! MPS writer/reader and the flat `name value` solution-file format.
//!
//! The writer emits the extended fixed MPS layout (whitespace-delimited
//! fields, names longer than eight characters allowed) with an `OBJSENSE`
//! section, `INTORG`/`INTEND` markers for binaries, and explicit bounds for
//! every column. Output is byte-stable for identical instances.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bb::{Solution, Status, INT_TOL};
use crate::instance::{Instance, Sense, VarId, VarKind};
use crate::MilpError;

/// Default upper bound assigned to columns an MPS file leaves unbounded.
/// The canonical instance form requires finite bounds.
pub const DEFAULT_UPPER: f64 = 1e12;

pub fn write_mps(instance: &Instance, path: &Path) -> Result<(), MilpError> {
    let text = to_mps_string(instance);
    fs::write(path, text).map_err(|e| MilpError::Io(format!("{}: {e}", path.display())))
}

pub fn to_mps_string(instance: &Instance) -> String {
    let mut out = String::new();
    let name = if instance.name.is_empty() {
        "MPBS"
    } else {
        &instance.name
    };
    let _ = writeln!(out, "NAME          {name}");
    let _ = writeln!(out, "OBJSENSE");
    let _ = writeln!(out, "    MAX");
    let _ = writeln!(out, "ROWS");
    let _ = writeln!(out, " N  OBJ");
    for row in instance.rows() {
        let tag = match row.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        let _ = writeln!(out, " {tag}  {}", row.name);
    }

    // Column-major entries: objective first, then rows in declaration order.
    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); instance.num_variables()];
    for (j, &c) in instance.objective().iter().enumerate() {
        if c != 0.0 {
            cols[j].push(("OBJ".to_string(), c));
        }
    }
    for row in instance.rows() {
        let mut merged: HashMap<usize, f64> = HashMap::new();
        for &(v, c) in &row.terms {
            *merged.entry(v.0).or_insert(0.0) += c;
        }
        let mut keys: Vec<usize> = merged.keys().copied().collect();
        keys.sort_unstable();
        for j in keys {
            let c = merged[&j];
            if c != 0.0 {
                cols[j].push((row.name.clone(), c));
            }
        }
    }

    let _ = writeln!(out, "COLUMNS");
    let mut in_int = false;
    for (j, var) in instance.variables().iter().enumerate() {
        let want_int = var.kind == VarKind::Binary;
        if want_int && !in_int {
            let _ = writeln!(out, "    MARKER    'MARKER'    'INTORG'");
            in_int = true;
        }
        if !want_int && in_int {
            let _ = writeln!(out, "    MARKER    'MARKER'    'INTEND'");
            in_int = false;
        }
        if cols[j].is_empty() {
            // Column must still exist; emit a zero objective entry.
            let _ = writeln!(out, "    {:<12} {:<12} {}", var.name, "OBJ", 0.0);
        }
        for (row_name, c) in &cols[j] {
            let _ = writeln!(out, "    {:<12} {:<12} {}", var.name, row_name, c);
        }
    }
    if in_int {
        let _ = writeln!(out, "    MARKER    'MARKER'    'INTEND'");
    }

    let _ = writeln!(out, "RHS");
    for row in instance.rows() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    {:<12} {:<12} {}", "RHS", row.name, row.rhs);
        }
    }

    let _ = writeln!(out, "BOUNDS");
    for var in instance.variables() {
        if var.lower == var.upper {
            let _ = writeln!(out, " FX {:<12} {:<12} {}", "BND", var.name, var.lower);
        } else {
            let _ = writeln!(out, " LO {:<12} {:<12} {}", "BND", var.name, var.lower);
            let _ = writeln!(out, " UP {:<12} {:<12} {}", "BND", var.name, var.upper);
        }
    }
    let _ = writeln!(out, "ENDATA");
    out
}

/// Parses an MPS file back into a canonical instance.
///
/// Rows arrive with family label "mps". Columns without explicit bounds get
/// `[0, DEFAULT_UPPER]`. `OBJSENSE MIN` is converted to maximization by
/// negating the objective.
pub fn read_mps(path: &Path) -> Result<Instance, MilpError> {
    let text =
        fs::read_to_string(path).map_err(|e| MilpError::Io(format!("{}: {e}", path.display())))?;
    parse_mps(&text)
}

pub fn parse_mps(text: &str) -> Result<Instance, MilpError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        ObjSense,
        Rows,
        Columns,
        Rhs,
        Bounds,
        Done,
    }
    let bad = |line: usize, msg: &str| MilpError::Parse(format!("MPS line {}: {msg}", line + 1));

    let mut name = String::from("MPS");
    let mut section = Section::None;
    let mut maximize = true;
    let mut obj_row: Option<String> = None;
    // (name, sense); populated in ROWS order.
    let mut rows: Vec<(String, Sense)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    // Column entries in first-seen order.
    let mut col_order: Vec<String> = Vec::new();
    let mut col_kind: HashMap<String, VarKind> = HashMap::new();
    let mut col_entries: HashMap<String, Vec<(String, f64)>> = HashMap::new();
    let mut rhs: HashMap<String, f64> = HashMap::new();
    let mut bounds: HashMap<String, (Option<f64>, Option<f64>)> = HashMap::new();
    let mut in_int = false;

    for (ln, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let is_header = !raw.starts_with(' ') && !raw.starts_with('\t');
        if is_header {
            let mut parts = raw.split_whitespace();
            match parts.next().unwrap_or("") {
                "NAME" => {
                    if let Some(n) = parts.next() {
                        name = n.to_string();
                    }
                }
                "OBJSENSE" => section = Section::ObjSense,
                "ROWS" => section = Section::Rows,
                "COLUMNS" => section = Section::Columns,
                "RHS" => section = Section::Rhs,
                "RANGES" => return Err(bad(ln, "RANGES section not supported")),
                "BOUNDS" => section = Section::Bounds,
                "ENDATA" => {
                    section = Section::Done;
                    break;
                }
                other => return Err(bad(ln, &format!("unknown section {other}"))),
            }
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match section {
            Section::ObjSense => match fields[0] {
                "MAX" | "MAXIMIZE" => maximize = true,
                "MIN" | "MINIMIZE" => maximize = false,
                other => return Err(bad(ln, &format!("unknown objective sense {other}"))),
            },
            Section::Rows => {
                if fields.len() != 2 {
                    return Err(bad(ln, "expected <type> <name>"));
                }
                match fields[0] {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(fields[1].to_string());
                        }
                    }
                    t => {
                        let sense = match t {
                            "L" => Sense::Le,
                            "G" => Sense::Ge,
                            "E" => Sense::Eq,
                            _ => return Err(bad(ln, &format!("unknown row type {t}"))),
                        };
                        row_index.insert(fields[1].to_string(), rows.len());
                        rows.push((fields[1].to_string(), sense));
                    }
                }
            }
            Section::Columns => {
                if fields.len() >= 3 && fields[1].contains("MARKER") {
                    if fields[2].contains("INTORG") {
                        in_int = true;
                    } else if fields[2].contains("INTEND") {
                        in_int = false;
                    }
                    continue;
                }
                if fields.len() >= 2 && fields[0].contains("MARKER") {
                    if raw.contains("INTORG") {
                        in_int = true;
                    } else if raw.contains("INTEND") {
                        in_int = false;
                    }
                    continue;
                }
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(bad(ln, "expected <col> (<row> <value>)+"));
                }
                let col = fields[0].to_string();
                if !col_entries.contains_key(&col) {
                    col_order.push(col.clone());
                    col_entries.insert(col.clone(), Vec::new());
                    col_kind.insert(
                        col.clone(),
                        if in_int {
                            VarKind::Binary
                        } else {
                            VarKind::Continuous
                        },
                    );
                }
                for pair in fields[1..].chunks(2) {
                    let value: f64 = pair[1]
                        .parse()
                        .map_err(|_| bad(ln, &format!("bad number {}", pair[1])))?;
                    col_entries
                        .get_mut(&col)
                        .unwrap()
                        .push((pair[0].to_string(), value));
                }
            }
            Section::Rhs => {
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(bad(ln, "expected <set> (<row> <value>)+"));
                }
                for pair in fields[1..].chunks(2) {
                    let value: f64 = pair[1]
                        .parse()
                        .map_err(|_| bad(ln, &format!("bad number {}", pair[1])))?;
                    rhs.insert(pair[0].to_string(), value);
                }
            }
            Section::Bounds => {
                if fields.len() < 3 {
                    return Err(bad(ln, "expected <type> <set> <col> [<value>]"));
                }
                let col = fields[2].to_string();
                let entry = bounds.entry(col.clone()).or_insert((None, None));
                let value = || -> Result<f64, MilpError> {
                    fields
                        .get(3)
                        .ok_or_else(|| bad(ln, "bound needs a value"))?
                        .parse()
                        .map_err(|_| bad(ln, "bad bound value"))
                };
                match fields[0] {
                    "UP" => entry.1 = Some(value()?),
                    "LO" => entry.0 = Some(value()?),
                    "FX" => {
                        let v = value()?;
                        *entry = (Some(v), Some(v));
                    }
                    "BV" => {
                        *entry = (Some(0.0), Some(1.0));
                        col_kind.insert(col, VarKind::Binary);
                    }
                    "MI" => entry.0 = Some(-DEFAULT_UPPER),
                    "PL" => entry.1 = Some(DEFAULT_UPPER),
                    "UI" | "LI" => {
                        let v = value()?;
                        if fields[0] == "UI" {
                            entry.1 = Some(v)
                        } else {
                            entry.0 = Some(v)
                        }
                    }
                    other => return Err(bad(ln, &format!("unknown bound type {other}"))),
                }
            }
            Section::None | Section::Done => return Err(bad(ln, "data before first section")),
        }
    }
    if section != Section::Done {
        return Err(MilpError::Parse("MPS file missing ENDATA".to_string()));
    }
    let obj_row = obj_row.ok_or_else(|| MilpError::Parse("MPS file has no N row".to_string()))?;

    let mut inst = Instance::new(name);
    let mut var_ids: HashMap<String, VarId> = HashMap::new();
    for col in &col_order {
        let (lo, hi) = bounds.get(col).copied().unwrap_or((None, None));
        let kind = col_kind[col];
        let (lo, hi) = match kind {
            VarKind::Binary => (lo.unwrap_or(0.0), hi.unwrap_or(1.0)),
            VarKind::Continuous => (lo.unwrap_or(0.0), hi.unwrap_or(DEFAULT_UPPER)),
        };
        let id = inst.add_variable(col.clone(), lo, hi, kind)?;
        var_ids.insert(col.clone(), id);
    }
    let sign = if maximize { 1.0 } else { -1.0 };
    let mut row_terms: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); rows.len()];
    for col in &col_order {
        let id = var_ids[col];
        for (row_name, c) in &col_entries[col] {
            if *row_name == obj_row {
                inst.add_objective(id, sign * c);
            } else {
                let &ri = row_index
                    .get(row_name)
                    .ok_or_else(|| MilpError::Parse(format!("unknown row {row_name}")))?;
                row_terms[ri].push((id, *c));
            }
        }
    }
    for (i, (row_name, sense)) in rows.iter().enumerate() {
        let b = rhs.get(row_name).copied().unwrap_or(0.0);
        inst.add_row(row_name.clone(), "mps", row_terms[i].clone(), *sense, b)?;
    }
    Ok(inst)
}

/// Writes a solution as one `name value` pair per line.
pub fn write_solution(instance: &Instance, solution: &Solution, path: &Path) -> Result<(), MilpError> {
    let mut out = String::new();
    let _ = writeln!(out, "# objective {}", solution.objective);
    for (var, value) in instance.variables().iter().zip(&solution.values) {
        let _ = writeln!(out, "{} {}", var.name, value);
    }
    fs::write(path, out).map_err(|e| MilpError::Io(format!("{}: {e}", path.display())))
}

/// Reads a `name value` solution file produced by an external solver.
///
/// Every instance variable must be present exactly once; unknown names and
/// non-integral binaries are rejected.
pub fn import_solution(instance: &Instance, path: &Path) -> Result<Solution, MilpError> {
    let text =
        fs::read_to_string(path).map_err(|e| MilpError::Io(format!("{}: {e}", path.display())))?;
    let mut values = vec![f64::NAN; instance.num_variables()];
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value)) = (parts.next(), parts.next()) else {
            return Err(MilpError::Parse(format!(
                "solution line {}: expected `name value`",
                ln + 1
            )));
        };
        let id = instance.var_by_name(name).ok_or_else(|| {
            MilpError::NameMismatch(format!("solution names unknown variable {name}"))
        })?;
        let value: f64 = value
            .parse()
            .map_err(|_| MilpError::Parse(format!("solution line {}: bad value", ln + 1)))?;
        values[id.0] = value;
    }
    for (var, v) in instance.variables().iter().zip(&values) {
        if v.is_nan() {
            return Err(MilpError::NameMismatch(format!(
                "solution missing variable {}",
                var.name
            )));
        }
        if var.kind == VarKind::Binary && (v - v.round()).abs() > INT_TOL {
            return Err(MilpError::Invalid(format!(
                "imported binary {} is non-integral: {v}",
                var.name
            )));
        }
    }
    let viol = instance.max_violation(&values);
    if viol > 1e-5 {
        return Err(MilpError::Numerical(format!(
            "imported solution violates rows by {viol:.3e}"
        )));
    }
    Ok(Solution {
        status: Status::Optimal,
        objective: instance.objective_value(&values),
        values,
        node_count: 0,
        gap: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Instance, Sense, VarKind};

    fn sample() -> Instance {
        let mut inst = Instance::new("sample");
        let x = inst.add_variable("x_a", 0.0, 1.0, VarKind::Binary).unwrap();
        let y = inst
            .add_variable("y_load.1.A", -5.0, 5.0, VarKind::Continuous)
            .unwrap();
        inst.add_objective(x, 2.0);
        inst.add_objective(y, 1.0);
        inst.add_row("cap", "t", vec![(x, 3.0), (y, 1.0)], Sense::Le, 4.0)
            .unwrap();
        inst.add_row("link", "t", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 0.0)
            .unwrap();
        inst
    }

    #[test]
    fn mps_round_trip_preserves_solution() {
        let inst = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.mps");
        write_mps(&inst, &path).unwrap();
        let back = read_mps(&path).unwrap();
        assert_eq!(back.num_variables(), inst.num_variables());
        assert_eq!(back.num_rows(), inst.num_rows());
        let a = crate::bb::solve(&inst, &Default::default()).unwrap();
        let b = crate::bb::solve(&back, &Default::default()).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn mps_export_is_byte_stable() {
        let inst = sample();
        assert_eq!(to_mps_string(&inst), to_mps_string(&inst));
    }

    #[test]
    fn solution_round_trip() {
        let inst = sample();
        let sol = crate::bb::solve(&inst, &Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.txt");
        write_solution(&inst, &sol, &path).unwrap();
        let back = import_solution(&inst, &path).unwrap();
        assert_eq!(back.values, sol.values);
        assert!((back.objective - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn import_rejects_unknown_and_missing_names() {
        let inst = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "x_a 1\nnope 2\ny_load.1.A 1\n").unwrap();
        assert!(matches!(
            import_solution(&inst, &path),
            Err(MilpError::NameMismatch(_))
        ));
        std::fs::write(&path, "x_a 1\n").unwrap();
        assert!(matches!(
            import_solution(&inst, &path),
            Err(MilpError::NameMismatch(_))
        ));
    }

    #[test]
    fn import_rejects_fractional_binary() {
        let inst = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frac.txt");
        std::fs::write(&path, "x_a 0.5\ny_load.1.A 0.5\n").unwrap();
        assert!(import_solution(&inst, &path).is_err());
    }
}
