//! Dataset representation: typed variables, three-way cell states
//! (observed / missing / not-applicable), per-cell bracket bounds, and
//! skip-pattern restriction synchronization.

mod io;
mod restriction;

pub use io::{
    load_dataset, load_dataset_from_paths, recode_rules_from_config, write_dataset_csv,
    ConfigFile, EngineDefaults, Loaded, VariableConfig,
};
pub use restriction::{CmpOp, CompiledExpr, Expr, Literal, RestrictionRule, Tri};

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::transforms::Transform;

/// One cell of the rectangular grid. `Imputed` never appears in a freshly
/// loaded dataset; the engine and hot deck introduce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Observed(f64),
    Imputed(f64),
    Missing,
    NotApplicable,
}

impl Cell {
    /// Current numeric value, if the cell has one.
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Observed(v) | Cell::Imputed(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn is_observed(&self) -> bool {
        matches!(self, Cell::Observed(_))
    }

    pub fn is_not_applicable(&self) -> bool {
        matches!(self, Cell::NotApplicable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariableKind {
    Continuous,
    Categorical { levels: Vec<String> },
    Count,
    Semicontinuous,
}

impl VariableKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, VariableKind::Categorical { .. })
    }

    pub fn supports_bounds(&self) -> bool {
        matches!(self, VariableKind::Continuous | VariableKind::Semicontinuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    /// Imputed when incomplete and available as a predictor for others.
    #[default]
    ImputedAndPredictor,
    /// Never imputed by a regression model, but used as a predictor.
    PredictorOnly,
    /// Carried through untouched (identifiers, flags).
    Excluded,
}

/// Per-variable metadata, resolved and validated.
#[derive(Debug, Clone)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub transform: Transform,
    pub restriction: Option<RestrictionRule>,
    /// Column names in the source table that carried per-cell brackets.
    pub bounds_source: Option<(String, String)>,
    pub eligibility: Eligibility,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, kind: VariableKind) -> Self {
        VariableSpec {
            name: name.into(),
            kind,
            transform: Transform::None,
            restriction: None,
            bounds_source: None,
            eligibility: Eligibility::ImputedAndPredictor,
        }
    }

    pub fn with_transform(mut self, t: Transform) -> Self {
        self.transform = t;
        self
    }

    pub fn with_restriction(mut self, rule: &str) -> Self {
        self.restriction = Some(RestrictionRule::parse(rule).expect("restriction parses"));
        self
    }

    pub fn with_eligibility(mut self, e: Eligibility) -> Self {
        self.eligibility = e;
        self
    }

    pub fn with_bounds_source(mut self, lo: &str, hi: &str) -> Self {
        self.bounds_source = Some((lo.to_string(), hi.to_string()));
        self
    }
}

/// Per-cell bracket, `None` when the row supplied no bound. One-sided
/// brackets use +/- infinity on the open side.
pub type CellBounds = Option<(f64, f64)>;

#[derive(Debug, Clone)]
pub struct ColumnData {
    pub cells: Vec<Cell>,
    pub bounds: Option<Vec<CellBounds>>,
}

impl ColumnData {
    pub fn new(cells: Vec<Cell>) -> Self {
        ColumnData { cells, bounds: None }
    }

    pub fn bounds_at(&self, row: usize) -> CellBounds {
        self.bounds.as_ref().and_then(|b| b[row])
    }
}

/// Compiled restriction machinery shared by the dataset and chain states.
#[derive(Debug, Clone, Default)]
pub struct Restrictions {
    /// Compiled rule per variable (None when unrestricted).
    compiled: Vec<Option<CompiledExpr>>,
    /// Restricted variable indices in dependency order (parents first).
    topo: Vec<usize>,
    /// Transitive closure of restricting variables, per variable.
    closure: Vec<BTreeSet<usize>>,
    /// Variables whose applicability depends (transitively) on this one.
    downstream: Vec<Vec<usize>>,
    /// Longest restriction-nesting chain; bounds the sync fixpoint.
    pub depth: usize,
}

impl Restrictions {
    pub fn restricted_topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn rule(&self, var: usize) -> Option<&CompiledExpr> {
        self.compiled[var].as_ref()
    }

    /// Transitive set of variables that gate `var`'s applicability.
    pub fn restricting_closure(&self, var: usize) -> &BTreeSet<usize> {
        &self.closure[var]
    }

    /// Restricted variables downstream of `var`, in dependency order.
    pub fn downstream_of(&self, var: usize) -> &[usize] {
        &self.downstream[var]
    }

    pub fn evaluate(&self, var: usize, row: usize, columns: &[ColumnData]) -> Tri {
        match &self.compiled[var] {
            None => Tri::True,
            Some(rule) => rule.eval(&|idx: usize| match columns[idx].cells[row] {
                Cell::Observed(v) | Cell::Imputed(v) => Some(v),
                Cell::NotApplicable => Some(f64::NAN),
                Cell::Missing => None,
            }),
        }
    }
}

/// What one synchronization pass changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SyncReport {
    /// Cells forced to NotApplicable because their rule went false.
    pub made_not_applicable: usize,
    /// NotApplicable cells that became Missing because their rule went true.
    pub reopened_missing: usize,
    /// Observed values discarded by a false rule (inconsistent input or a
    /// filter imputed against an observed follow-up).
    pub discarded_observed: usize,
}

impl SyncReport {
    pub fn changed(&self) -> bool {
        self.made_not_applicable > 0 || self.reopened_missing > 0
    }

    fn absorb(&mut self, other: SyncReport) {
        self.made_not_applicable += other.made_not_applicable;
        self.reopened_missing += other.reopened_missing;
        self.discarded_observed += other.discarded_observed;
    }
}

/// Synchronize the given restricted variables (dependency order required)
/// against the current column values.
///
/// Per restricted variable and row: rule false forces the cell to
/// NotApplicable (a previously drawn value is discarded); rule true reopens
/// a NotApplicable cell as Missing so it gets imputed; an undeterminable
/// rule (some restricting value still Missing) leaves the cell alone until
/// the filter itself is imputed later in the cycle.
pub fn sync_restricted(
    restrictions: &Restrictions,
    columns: &mut [ColumnData],
    vars: &[usize],
) -> SyncReport {
    let mut report = SyncReport::default();
    let n_rows = columns.first().map_or(0, |c| c.cells.len());
    for &v in vars {
        for row in 0..n_rows {
            match restrictions.evaluate(v, row, columns) {
                Tri::False => match columns[v].cells[row] {
                    Cell::NotApplicable => {}
                    Cell::Observed(_) => {
                        columns[v].cells[row] = Cell::NotApplicable;
                        report.discarded_observed += 1;
                        report.made_not_applicable += 1;
                    }
                    _ => {
                        columns[v].cells[row] = Cell::NotApplicable;
                        report.made_not_applicable += 1;
                    }
                },
                Tri::True => {
                    if columns[v].cells[row].is_not_applicable() {
                        columns[v].cells[row] = Cell::Missing;
                        report.reopened_missing += 1;
                    }
                }
                Tri::Unknown => {}
            }
        }
    }
    report
}

/// Rectangular survey table with typed variables and restriction machinery.
/// Immutable after load; chains copy the cells they mutate.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    variables: Vec<VariableSpec>,
    columns: Vec<ColumnData>,
    restrictions: Restrictions,
    by_name: HashMap<String, usize>,
    initial_sync: SyncReport,
}

impl Dataset {
    /// Assemble and validate a dataset from parts. `load_dataset` is the
    /// file-based entry; this is the programmatic one used by simulators
    /// and tests.
    pub fn from_parts(variables: Vec<VariableSpec>, columns: Vec<ColumnData>) -> Result<Dataset> {
        if variables.len() != columns.len() {
            return Err(Error::validation(format!(
                "{} variable specs but {} columns",
                variables.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, |c| c.cells.len());
        for (spec, col) in variables.iter().zip(&columns) {
            if col.cells.len() != n_rows {
                return Err(Error::validation(format!(
                    "column `{}` has {} rows, expected {}",
                    spec.name,
                    col.cells.len(),
                    n_rows
                )));
            }
            if let Some(b) = &col.bounds {
                if b.len() != n_rows {
                    return Err(Error::validation(format!(
                        "bounds for `{}` have {} rows, expected {}",
                        spec.name,
                        b.len(),
                        n_rows
                    )));
                }
            }
        }

        let mut by_name = HashMap::new();
        for (i, spec) in variables.iter().enumerate() {
            if by_name.insert(spec.name.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "duplicate column `{}`",
                    spec.name
                )));
            }
        }

        validate_specs(&variables)?;
        let restrictions = build_restrictions(&variables, &by_name)?;
        validate_cells(&variables, &columns)?;

        let mut ds = Dataset {
            n_rows,
            variables,
            columns,
            restrictions,
            by_name,
            initial_sync: SyncReport::default(),
        };
        // Initial synchronization so NotApplicable states agree with the
        // observed filter values.
        ds.initial_sync = ds.sync_restrictions();
        Ok(ds)
    }

    /// What the load-time synchronization changed (observed values discarded
    /// here indicate filter/follow-up inconsistencies in the input).
    pub fn initial_sync(&self) -> SyncReport {
        self.initial_sync
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &ColumnData {
        &self.columns[idx]
    }

    pub fn restrictions(&self) -> &Restrictions {
        &self.restrictions
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn cell(&self, row: usize, var: usize) -> Cell {
        self.columns[var].cells[row]
    }

    /// Bracket for one cell, on the original scale.
    pub fn bounds(&self, row: usize, var: usize) -> CellBounds {
        self.columns[var].bounds_at(row)
    }

    /// Run restriction synchronization to a fixpoint over the whole table.
    pub fn sync_restrictions(&mut self) -> SyncReport {
        let mut total = SyncReport::default();
        for _ in 0..=self.restrictions.depth {
            let topo: Vec<usize> = self.restrictions.restricted_topo().to_vec();
            let report = sync_restricted(&self.restrictions, &mut self.columns, &topo);
            let changed = report.changed();
            total.absorb(report);
            if !changed {
                break;
            }
        }
        total
    }

    /// Recode matching observed cells as Missing. Returns how many cells
    /// were recoded, after re-synchronizing restrictions.
    pub fn recode_missing(&mut self, rules: &[RecodeRule]) -> Result<usize> {
        let mut recoded = 0;
        for rule in rules {
            match rule {
                RecodeRule::Sentinel { variable, values } => {
                    let var = self.require_var(variable)?;
                    for cell in &mut self.columns[var].cells {
                        if let Cell::Observed(v) = cell {
                            if values.iter().any(|s| s == v) {
                                *cell = Cell::Missing;
                                recoded += 1;
                            }
                        }
                    }
                }
                RecodeRule::Flag {
                    variable,
                    flag_column,
                    missing_codes,
                } => {
                    let var = self.require_var(variable)?;
                    let flag = self.require_var(flag_column)?;
                    for row in 0..self.n_rows {
                        let flagged = match self.columns[flag].cells[row].value() {
                            Some(code) => missing_codes.iter().any(|c| *c == code),
                            None => false,
                        };
                        if flagged {
                            if let Cell::Observed(_) = self.columns[var].cells[row] {
                                self.columns[var].cells[row] = Cell::Missing;
                                recoded += 1;
                            }
                        }
                    }
                }
            }
        }
        if recoded > 0 {
            self.sync_restrictions();
        }
        Ok(recoded)
    }

    fn require_var(&self, name: &str) -> Result<usize> {
        self.variable_index(name)
            .ok_or_else(|| Error::validation(format!("unknown variable `{name}`")))
    }

    /// Apparent and true missingness per variable, as percentages.
    pub fn missingness_profile(&self) -> Vec<MissingnessRow> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut missing = 0usize;
                let mut na = 0usize;
                for cell in &self.columns[i].cells {
                    match cell {
                        Cell::Missing => missing += 1,
                        Cell::NotApplicable => na += 1,
                        _ => {}
                    }
                }
                let n = self.n_rows.max(1) as f64;
                MissingnessRow {
                    variable: spec.name.clone(),
                    apparent_pct: 100.0 * (missing + na) as f64 / n,
                    true_pct: 100.0 * missing as f64 / n,
                    missing_count: missing,
                }
            })
            .collect()
    }

    /// Number of Missing cells in one column.
    pub fn missing_count(&self, var: usize) -> usize {
        self.columns[var]
            .cells
            .iter()
            .filter(|c| c.is_missing())
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessRow {
    pub variable: String,
    pub apparent_pct: f64,
    pub true_pct: f64,
    pub missing_count: usize,
}

/// A recode instruction: either sentinel values of the variable itself, or
/// codes in a companion flag column marking the value as previously imputed.
#[derive(Debug, Clone, PartialEq)]
pub enum RecodeRule {
    Sentinel {
        variable: String,
        values: Vec<f64>,
    },
    Flag {
        variable: String,
        flag_column: String,
        missing_codes: Vec<f64>,
    },
}

fn validate_specs(variables: &[VariableSpec]) -> Result<()> {
    for spec in variables {
        match &spec.kind {
            VariableKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::validation(format!(
                        "categorical `{}` declares no levels",
                        spec.name
                    )));
                }
                let mut seen = BTreeSet::new();
                for level in levels {
                    if !seen.insert(level) {
                        return Err(Error::validation(format!(
                            "categorical `{}` has duplicate level `{level}`",
                            spec.name
                        )));
                    }
                }
            }
            _ => {}
        }
        if spec.transform != Transform::None
            && !matches!(
                spec.kind,
                VariableKind::Continuous | VariableKind::Semicontinuous
            )
        {
            return Err(Error::validation(format!(
                "transform on `{}` requires a continuous or semicontinuous kind",
                spec.name
            )));
        }
        if spec.bounds_source.is_some() && !spec.kind.supports_bounds() {
            return Err(Error::validation(format!(
                "bounds on `{}` require a continuous or semicontinuous kind",
                spec.name
            )));
        }
        if let Some(rule) = &spec.restriction {
            if rule.depends_on.contains(&spec.name) {
                return Err(Error::validation(format!(
                    "variable `{}` is named in its own restriction",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}

fn build_restrictions(
    variables: &[VariableSpec],
    by_name: &HashMap<String, usize>,
) -> Result<Restrictions> {
    let n = variables.len();
    let mut compiled: Vec<Option<CompiledExpr>> = vec![None; n];
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];

    for (i, spec) in variables.iter().enumerate() {
        if let Some(rule) = &spec.restriction {
            for dep in &rule.depends_on {
                let dep_idx = *by_name.get(dep).ok_or_else(|| {
                    Error::validation(format!(
                        "restriction of `{}` references unknown variable `{dep}`",
                        spec.name
                    ))
                })?;
                parents[i].push(dep_idx);
            }
            compiled[i] = Some(compile_expr(&rule.expr, variables, by_name)?);
        }
    }

    // Kahn topological sort over restricted variables; cycles rejected.
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, ps) in parents.iter().enumerate() {
        for &p in ps {
            indegree[i] += 1;
            children[p].push(i);
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::new();
    let mut depth = vec![0usize; n];
    while let Some(v) = queue.pop() {
        order.push(v);
        for &c in &children[v] {
            depth[c] = depth[c].max(depth[v] + 1);
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push(c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| variables[i].name.as_str())
            .collect();
        return Err(Error::validation(format!(
            "cyclic restriction graph involving: {}",
            stuck.join(", ")
        )));
    }
    // Stable dependency order: sort by nesting depth, then declaration.
    let mut topo: Vec<usize> = (0..n).filter(|&i| compiled[i].is_some()).collect();
    topo.sort_by_key(|&i| (depth[i], i));

    // Transitive closure of restricting variables.
    let mut closure: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut by_depth: Vec<usize> = (0..n).collect();
    by_depth.sort_by_key(|&i| depth[i]);
    for &i in &by_depth {
        let mut acc = BTreeSet::new();
        for &p in &parents[i] {
            acc.insert(p);
            acc.extend(closure[p].iter().copied());
        }
        closure[i] = acc;
    }

    // Downstream restricted variables, per variable, in dependency order.
    let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        let mut ds: Vec<usize> = topo
            .iter()
            .copied()
            .filter(|&t| closure[t].contains(&v))
            .collect();
        ds.sort_by_key(|&i| (depth[i], i));
        downstream[v] = ds;
    }

    Ok(Restrictions {
        compiled,
        topo,
        closure,
        downstream,
        depth: depth.into_iter().max().unwrap_or(0),
    })
}

fn compile_expr(
    expr: &Expr,
    variables: &[VariableSpec],
    by_name: &HashMap<String, usize>,
) -> Result<CompiledExpr> {
    match expr {
        Expr::Cmp { var, op, value } => {
            let var_idx = *by_name
                .get(var)
                .ok_or_else(|| Error::validation(format!("unknown variable `{var}` in restriction")))?;
            let spec = &variables[var_idx];
            let resolved = match (value, &spec.kind) {
                (Literal::Label(label), VariableKind::Categorical { levels }) => levels
                    .iter()
                    .position(|l| l == label)
                    .map(|i| i as f64)
                    .ok_or_else(|| {
                        Error::validation(format!(
                            "unknown level `{label}` for `{var}` in restriction"
                        ))
                    })?,
                (Literal::Label(label), _) => {
                    return Err(Error::validation(format!(
                        "level literal `{label}` compared against non-categorical `{var}`"
                    )))
                }
                (Literal::Number(x), VariableKind::Categorical { levels }) => {
                    if x.fract() != 0.0 || *x < 0.0 || *x >= levels.len() as f64 {
                        return Err(Error::validation(format!(
                            "level index {x} out of range for `{var}` in restriction"
                        )));
                    }
                    *x
                }
                (Literal::Number(x), _) => *x,
            };
            Ok(CompiledExpr::Cmp {
                var_idx,
                op: *op,
                value: resolved,
            })
        }
        Expr::And(a, b) => Ok(CompiledExpr::And(
            Box::new(compile_expr(a, variables, by_name)?),
            Box::new(compile_expr(b, variables, by_name)?),
        )),
        Expr::Or(a, b) => Ok(CompiledExpr::Or(
            Box::new(compile_expr(a, variables, by_name)?),
            Box::new(compile_expr(b, variables, by_name)?),
        )),
    }
}

fn validate_cells(variables: &[VariableSpec], columns: &[ColumnData]) -> Result<()> {
    for (spec, col) in variables.iter().zip(columns) {
        for (row, cell) in col.cells.iter().enumerate() {
            if let Some(v) = cell.value() {
                match &spec.kind {
                    VariableKind::Count => {
                        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                            return Err(Error::validation(format!(
                                "non-integer value {v} in count column `{}` (row {row})",
                                spec.name
                            )));
                        }
                    }
                    VariableKind::Categorical { levels } => {
                        if v.fract() != 0.0 || v < 0.0 || v >= levels.len() as f64 {
                            return Err(Error::validation(format!(
                                "level index {v} out of range in `{}` (row {row})",
                                spec.name
                            )));
                        }
                    }
                    _ => {
                        if !v.is_finite() {
                            return Err(Error::validation(format!(
                                "non-finite value in `{}` (row {row})",
                                spec.name
                            )));
                        }
                    }
                }
            }
            if let Some(bounds) = &col.bounds {
                if let Some((lo, hi)) = bounds[row] {
                    if lo > hi {
                        return Err(Error::validation(format!(
                            "inverted bounds [{lo}, {hi}] for `{}` (row {row})",
                            spec.name
                        )));
                    }
                    if let Some(v) = cell.value() {
                        if v < lo || v > hi {
                            return Err(Error::validation(format!(
                                "observed value {v} outside bounds [{lo}, {hi}] in `{}` (row {row})",
                                spec.name
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
