//! Canonical mixed-integer linear program container.
//!
//! An [`Instance`] holds variables (bounds + integrality), sparse linear
//! rows grouped by a family label, and a linear objective, always in
//! maximization sense. Row and column order is the insertion order, so two
//! builds that insert in the same order produce byte-identical exports.

use std::collections::HashMap;
use std::fmt;

use crate::MilpError;

/// Index of a declared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// Index of a constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sense::Le => write!(f, "<="),
            Sense::Eq => write!(f, "="),
            Sense::Ge => write!(f, ">="),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    /// Family label used for auditing and census reporting.
    pub family: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A maximization MILP over bounded variables.
#[derive(Clone, Debug, Default)]
pub struct Instance {
    pub name: String,
    variables: Vec<Variable>,
    rows: Vec<Row>,
    objective: Vec<f64>,
    name_to_var: HashMap<String, VarId>,
    /// Big-M constants recorded at build time, keyed by a label, for audit.
    pub big_m_log: Vec<(String, f64)>,
}

impl Instance {
    pub fn new(name: impl Into<String>) -> Self {
        Instance {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        kind: VarKind,
    ) -> Result<VarId, MilpError> {
        let name = name.into();
        if !lower.is_finite() || !upper.is_finite() {
            return Err(MilpError::Invalid(format!(
                "variable {name}: bounds must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower > upper {
            return Err(MilpError::Invalid(format!(
                "variable {name}: lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        if kind == VarKind::Binary && (lower < 0.0 || upper > 1.0) {
            return Err(MilpError::Invalid(format!(
                "binary variable {name}: bounds [{lower}, {upper}] outside [0, 1]"
            )));
        }
        if self.name_to_var.contains_key(&name) {
            return Err(MilpError::Invalid(format!(
                "variable {name} declared twice"
            )));
        }
        let id = VarId(self.variables.len());
        self.name_to_var.insert(name.clone(), id);
        self.variables.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        self.objective.push(0.0);
        Ok(id)
    }

    /// Adds `coef` to the objective coefficient of `var` (maximization).
    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] += coef;
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        family: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> Result<RowId, MilpError> {
        let name = name.into();
        if !rhs.is_finite() || terms.iter().any(|(_, c)| !c.is_finite()) {
            return Err(MilpError::Invalid(format!(
                "row {name}: non-finite coefficient or rhs"
            )));
        }
        for (v, _) in &terms {
            if v.0 >= self.variables.len() {
                return Err(MilpError::Invalid(format!(
                    "row {name}: references undeclared variable index {}",
                    v.0
                )));
            }
        }
        let id = RowId(self.rows.len());
        self.rows.push(Row {
            name,
            family: family.into(),
            terms,
            sense,
            rhs,
        });
        Ok(id)
    }

    pub fn record_big_m(&mut self, label: impl Into<String>, value: f64) {
        self.big_m_log.push((label.into(), value));
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.name_to_var.get(name).copied()
    }

    /// Tightens a variable's bounds in place (used for fixing binaries and
    /// boundary data). Errors if the result is empty.
    pub fn tighten_bounds(&mut self, id: VarId, lower: f64, upper: f64) -> Result<(), MilpError> {
        let v = &mut self.variables[id.0];
        let lo = v.lower.max(lower);
        let hi = v.upper.min(upper);
        if lo > hi + 1e-12 {
            return Err(MilpError::Invalid(format!(
                "variable {}: tightening to empty interval [{lo}, {hi}]",
                v.name
            )));
        }
        v.lower = lo;
        v.upper = hi.max(lo);
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(values)
            .map(|(c, x)| c * x)
            .sum()
    }

    /// Maximum absolute row violation of `values` over all rows and bounds.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, v) in self.variables.iter().enumerate() {
            worst = worst.max(v.lower - values[i]).max(values[i] - v.upper);
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|(v, c)| c * values[v.0]).sum();
            let gap = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst.max(0.0)
    }

    /// Per-family (variable prefix and row family) counts, for census logs.
    pub fn census(&self) -> Census {
        let mut rows: Vec<(String, usize)> = Vec::new();
        let mut map: HashMap<&str, usize> = HashMap::new();
        for r in &self.rows {
            *map.entry(r.family.as_str()).or_insert(0) += 1;
        }
        let mut keys: Vec<&str> = map.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            rows.push((k.to_string(), map[k]));
        }
        let mut vars: Vec<(String, usize)> = Vec::new();
        let mut vmap: HashMap<String, usize> = HashMap::new();
        for v in &self.variables {
            let prefix = v.name.split('.').next().unwrap_or("").to_string();
            *vmap.entry(prefix).or_insert(0) += 1;
        }
        let mut vkeys: Vec<String> = vmap.keys().cloned().collect();
        vkeys.sort_unstable();
        for k in vkeys {
            let n = vmap[&k];
            vars.push((k, n));
        }
        Census {
            variables: self.num_variables(),
            rows: self.num_rows(),
            binaries: self
                .variables
                .iter()
                .filter(|v| v.kind == VarKind::Binary)
                .count(),
            row_families: rows,
            var_families: vars,
        }
    }
}

/// Variable/row counts per family, emitted in build logs.
#[derive(Clone, Debug)]
pub struct Census {
    pub variables: usize,
    pub rows: usize,
    pub binaries: usize,
    pub row_families: Vec<(String, usize)>,
    pub var_families: Vec<(String, usize)>,
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "instance census: {} variables ({} binary), {} rows",
            self.variables, self.binaries, self.rows
        )?;
        for (k, n) in &self.var_families {
            writeln!(f, "  var {k}: {n}")?;
        }
        for (k, n) in &self.row_families {
            writeln!(f, "  row {k}: {n}")?;
        }
        Ok(())
    }
}
