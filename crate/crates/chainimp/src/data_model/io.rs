//! Loading and writing datasets.
//!
//! Input is a UTF-8 CSV with a header row plus a JSON config listing the
//! variables in order. Bracket columns named by `bounds_low`/`bounds_high`
//! are absorbed into per-cell bounds and removed from the variable list.
//! Missing cells are written as the empty string, not-applicable cells as
//! `NA`; categorical cells round-trip through their level labels.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::Transform;

use super::{
    Cell, CellBounds, ColumnData, Dataset, Eligibility, RecodeRule, RestrictionRule, VariableKind,
    VariableSpec,
};

/// One variable entry of the config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableConfig {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction: Option<RestrictionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_low: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_high: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligibility: Option<Eligibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_sentinels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_missing_codes: Option<Vec<f64>>,
}

/// Optional engine defaults carried in the config document; command-line
/// flags override any value set here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EngineDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between_cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_r2_increase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_predictors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub variables: Vec<VariableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineDefaults>,
}

impl ConfigFile {
    pub fn from_reader(r: impl Read) -> Result<ConfigFile> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ConfigFile> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::validation(format!(
                "cannot open config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        ConfigFile::from_reader(std::io::BufReader::new(f))
    }
}

fn kind_from_config(vc: &VariableConfig) -> Result<VariableKind> {
    match vc.kind.as_str() {
        "continuous" => Ok(VariableKind::Continuous),
        "count" => Ok(VariableKind::Count),
        "semicontinuous" => Ok(VariableKind::Semicontinuous),
        "categorical" => {
            let levels = vc.levels.clone().ok_or_else(|| {
                Error::validation(format!("categorical `{}` needs `levels`", vc.name))
            })?;
            Ok(VariableKind::Categorical { levels })
        }
        other => Err(Error::validation(format!(
            "unknown kind `{other}` for `{}`",
            vc.name
        ))),
    }
}

fn kind_to_string(kind: &VariableKind) -> &'static str {
    match kind {
        VariableKind::Continuous => "continuous",
        VariableKind::Categorical { .. } => "categorical",
        VariableKind::Count => "count",
        VariableKind::Semicontinuous => "semicontinuous",
    }
}

/// Dataset plus anything the loader wants to tell the operator.
#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

pub fn load_dataset_from_paths(
    data: impl AsRef<Path>,
    config: impl AsRef<Path>,
) -> Result<Loaded> {
    let cfg = ConfigFile::from_path(config)?;
    let f = std::fs::File::open(data.as_ref()).map_err(|e| {
        Error::validation(format!("cannot open data {}: {e}", data.as_ref().display()))
    })?;
    load_dataset(std::io::BufReader::new(f), &cfg)
}

/// Parse and validate a CSV table against the config.
pub fn load_dataset(reader: impl Read, config: &ConfigFile) -> Result<Loaded> {
    let mut csv_reader = csv::ReaderBuilder::new().from_reader(reader);
    let header: Vec<String> = csv_reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut col_of: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if col_of.insert(name.as_str(), i).is_some() {
            return Err(Error::validation(format!("duplicate column `{name}`")));
        }
    }

    // Which CSV columns play which role.
    let mut claimed: HashSet<usize> = HashSet::new();
    let mut var_col: Vec<usize> = Vec::with_capacity(config.variables.len());
    let mut bound_cols: Vec<Option<(usize, usize)>> = Vec::with_capacity(config.variables.len());
    let declared: HashSet<&str> = config.variables.iter().map(|v| v.name.as_str()).collect();
    if declared.len() != config.variables.len() {
        return Err(Error::validation("duplicate variable in config".to_string()));
    }

    for vc in &config.variables {
        let idx = *col_of
            .get(vc.name.as_str())
            .ok_or_else(|| Error::validation(format!("unknown column `{}`", vc.name)))?;
        if !claimed.insert(idx) {
            return Err(Error::validation(format!("duplicate column `{}`", vc.name)));
        }
        var_col.push(idx);
        match (&vc.bounds_low, &vc.bounds_high) {
            (Some(lo), Some(hi)) => {
                for b in [lo, hi] {
                    if declared.contains(b.as_str()) {
                        return Err(Error::validation(format!(
                            "bounds column `{b}` is also declared as a variable"
                        )));
                    }
                }
                let lo_idx = *col_of
                    .get(lo.as_str())
                    .ok_or_else(|| Error::validation(format!("unknown column `{lo}`")))?;
                let hi_idx = *col_of
                    .get(hi.as_str())
                    .ok_or_else(|| Error::validation(format!("unknown column `{hi}`")))?;
                for b in [lo_idx, hi_idx] {
                    if !claimed.insert(b) {
                        return Err(Error::validation(format!(
                            "bounds column `{}` claimed twice",
                            header[b]
                        )));
                    }
                }
                bound_cols.push(Some((lo_idx, hi_idx)));
            }
            (None, None) => bound_cols.push(None),
            _ => {
                return Err(Error::validation(format!(
                    "`{}` must declare both bounds_low and bounds_high or neither",
                    vc.name
                )))
            }
        }
    }
    for (i, name) in header.iter().enumerate() {
        if !claimed.contains(&i) {
            return Err(Error::validation(format!(
                "column `{name}` in data is not declared in the config"
            )));
        }
    }

    // Build specs; flag columns are demoted to excluded so they never enter
    // a predictor pool.
    let mut flag_columns: HashSet<&str> = HashSet::new();
    for vc in &config.variables {
        if let Some(flag) = &vc.flag_column {
            if !declared.contains(flag.as_str()) {
                return Err(Error::validation(format!(
                    "flag column `{flag}` for `{}` is not a declared variable",
                    vc.name
                )));
            }
            flag_columns.insert(flag.as_str());
        }
    }

    let mut warnings = Vec::new();
    let mut specs = Vec::with_capacity(config.variables.len());
    for vc in &config.variables {
        let kind = kind_from_config(vc)?;
        let mut eligibility = vc.eligibility.unwrap_or_default();
        if flag_columns.contains(vc.name.as_str()) && eligibility != Eligibility::Excluded {
            warnings.push(format!(
                "`{}` is used as a flag column; excluded from modeling",
                vc.name
            ));
            eligibility = Eligibility::Excluded;
        }
        specs.push(VariableSpec {
            name: vc.name.clone(),
            kind,
            transform: vc.transform.unwrap_or_default(),
            restriction: vc.restriction.clone(),
            bounds_source: vc
                .bounds_low
                .clone()
                .zip(vc.bounds_high.clone()),
            eligibility,
        });
    }

    // Parse rows.
    let n_cols = header.len();
    let mut raw: Vec<Vec<String>> = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        if record.len() != n_cols {
            return Err(Error::validation(format!(
                "row {} has {} fields, expected {n_cols}",
                raw.len() + 2,
                record.len()
            )));
        }
        raw.push(record.iter().map(|s| s.to_string()).collect());
    }
    let n_rows = raw.len();

    let mut columns = Vec::with_capacity(specs.len());
    for (v, spec) in specs.iter().enumerate() {
        let csv_idx = var_col[v];
        let mut cells = Vec::with_capacity(n_rows);
        for (row, fields) in raw.iter().enumerate() {
            cells.push(parse_cell(&fields[csv_idx], spec, row)?);
        }
        let bounds = match bound_cols[v] {
            None => None,
            Some((lo_idx, hi_idx)) => {
                let mut bs: Vec<CellBounds> = Vec::with_capacity(n_rows);
                for (row, fields) in raw.iter().enumerate() {
                    bs.push(parse_bounds(
                        &fields[lo_idx],
                        &fields[hi_idx],
                        &spec.name,
                        row,
                    )?);
                }
                Some(bs)
            }
        };
        columns.push(ColumnData { cells, bounds });
    }

    // Config-declared recodes are applied before bounds validation so a
    // sentinel like 999999 never trips the bounds check.
    for (vc, spec) in config.variables.iter().zip(&specs) {
        if let Some(sentinels) = &vc.missing_sentinels {
            let col = specs.iter().position(|s| s.name == spec.name).unwrap();
            for cell in &mut columns[col].cells {
                if let Cell::Observed(x) = cell {
                    if sentinels.iter().any(|s| s == x) {
                        *cell = Cell::Missing;
                    }
                }
            }
        }
    }
    for vc in &config.variables {
        if let (Some(flag), Some(codes)) = (&vc.flag_column, &vc.flag_missing_codes) {
            let target = specs.iter().position(|s| s.name == vc.name).unwrap();
            let flag_idx = specs.iter().position(|s| &s.name == flag).unwrap();
            for row in 0..n_rows {
                let flagged = columns[flag_idx].cells[row]
                    .value()
                    .map(|code| codes.iter().any(|c| *c == code))
                    .unwrap_or(false);
                if flagged {
                    if let Cell::Observed(_) = columns[target].cells[row] {
                        columns[target].cells[row] = Cell::Missing;
                    }
                }
            }
        }
    }

    let dataset = Dataset::from_parts(specs, columns)?;
    let sync = dataset.initial_sync();
    if sync.discarded_observed > 0 {
        warnings.push(format!(
            "{} observed value(s) discarded because their restriction evaluates false",
            sync.discarded_observed
        ));
    }
    for row in dataset.missingness_profile() {
        if row.missing_count > 0 {
            let var = dataset.variable_index(&row.variable).unwrap();
            if dataset.variables()[var].eligibility == Eligibility::PredictorOnly {
                warnings.push(format!(
                    "predictor-only `{}` has {} missing cell(s); they will be filled from the observed marginal, not modeled",
                    row.variable, row.missing_count
                ));
            }
        }
    }
    Ok(Loaded { dataset, warnings })
}

fn parse_cell(field: &str, spec: &VariableSpec, row: usize) -> Result<Cell> {
    let t = field.trim();
    if t.is_empty() || t == "." {
        return Ok(Cell::Missing);
    }
    if t == "NA" {
        return Ok(Cell::NotApplicable);
    }
    match &spec.kind {
        VariableKind::Categorical { levels } => match levels.iter().position(|l| l == t) {
            Some(i) => Ok(Cell::Observed(i as f64)),
            None => Err(Error::validation(format!(
                "unknown level `{t}` in `{}` (row {row})",
                spec.name
            ))),
        },
        VariableKind::Count => {
            let v: f64 = t.parse().map_err(|_| {
                Error::validation(format!(
                    "non-integer value `{t}` in count column `{}` (row {row})",
                    spec.name
                ))
            })?;
            Ok(Cell::Observed(v))
        }
        _ => {
            let v: f64 = t.parse().map_err(|_| {
                Error::validation(format!(
                    "bad numeric value `{t}` in `{}` (row {row})",
                    spec.name
                ))
            })?;
            Ok(Cell::Observed(v))
        }
    }
}

fn parse_bounds(lo: &str, hi: &str, var: &str, row: usize) -> Result<CellBounds> {
    let parse_side = |s: &str, side: &str| -> Result<Option<f64>> {
        let t = s.trim();
        if t.is_empty() || t == "." || t == "NA" {
            return Ok(None);
        }
        t.parse::<f64>().map(Some).map_err(|_| {
            Error::validation(format!("bad {side} bound `{t}` for `{var}` (row {row})"))
        })
    };
    let lo = parse_side(lo, "low")?;
    let hi = parse_side(hi, "high")?;
    Ok(match (lo, hi) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))),
    })
}

/// Format one cell for CSV output.
pub(crate) fn format_cell(cell: Cell, spec: &VariableSpec) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::NotApplicable => "NA".to_string(),
        Cell::Observed(v) | Cell::Imputed(v) => format_value(v, spec),
    }
}

pub(crate) fn format_value(v: f64, spec: &VariableSpec) -> String {
    match &spec.kind {
        VariableKind::Categorical { levels } => levels[v as usize].clone(),
        VariableKind::Count => format!("{}", v as i64),
        _ => format!("{v}"),
    }
}

fn format_bound(b: f64) -> String {
    if b.is_infinite() {
        String::new()
    } else {
        format!("{b}")
    }
}

/// Write the dataset (or a completed table sharing its specs) as CSV,
/// re-emitting bracket columns under their original names.
pub fn write_dataset_csv(
    writer: impl Write,
    variables: &[VariableSpec],
    columns: &[ColumnData],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    for spec in variables {
        header.push(spec.name.clone());
        if let Some((lo, hi)) = &spec.bounds_source {
            header.push(lo.clone());
            header.push(hi.clone());
        }
    }
    w.write_record(&header)?;

    let n_rows = columns.first().map_or(0, |c| c.cells.len());
    let mut record = Vec::with_capacity(header.len());
    for row in 0..n_rows {
        record.clear();
        for (spec, col) in variables.iter().zip(columns) {
            record.push(format_cell(col.cells[row], spec));
            if spec.bounds_source.is_some() {
                match col.bounds_at(row) {
                    Some((lo, hi)) => {
                        record.push(format_bound(lo));
                        record.push(format_bound(hi));
                    }
                    None => {
                        record.push(String::new());
                        record.push(String::new());
                    }
                }
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

impl Dataset {
    /// Reconstruct the config document describing this dataset.
    pub fn to_config(&self) -> ConfigFile {
        ConfigFile {
            variables: self
                .variables()
                .iter()
                .map(|spec| VariableConfig {
                    name: spec.name.clone(),
                    kind: kind_to_string(&spec.kind).to_string(),
                    levels: match &spec.kind {
                        VariableKind::Categorical { levels } => Some(levels.clone()),
                        _ => None,
                    },
                    transform: match spec.transform {
                        Transform::None => None,
                        t => Some(t),
                    },
                    restriction: spec.restriction.clone(),
                    bounds_low: spec.bounds_source.as_ref().map(|(lo, _)| lo.clone()),
                    bounds_high: spec.bounds_source.as_ref().map(|(_, hi)| hi.clone()),
                    eligibility: match spec.eligibility {
                        Eligibility::ImputedAndPredictor => None,
                        e => Some(e),
                    },
                    missing_sentinels: None,
                    flag_column: None,
                    flag_missing_codes: None,
                })
                .collect(),
            engine: None,
        }
    }

    /// Serialize the dataset itself (states, labels, bounds) as CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        write_dataset_csv(writer, self.variables(), self.columns())
    }
}

/// Build recode rules from the config's sentinel/flag declarations, for use
/// with [`Dataset::recode_missing`] when recoding is done as a separate step.
pub fn recode_rules_from_config(config: &ConfigFile) -> Vec<RecodeRule> {
    let mut rules = Vec::new();
    for vc in &config.variables {
        if let Some(values) = &vc.missing_sentinels {
            rules.push(RecodeRule::Sentinel {
                variable: vc.name.clone(),
                values: values.clone(),
            });
        }
        if let (Some(flag), Some(codes)) = (&vc.flag_column, &vc.flag_missing_codes) {
            rules.push(RecodeRule::Flag {
                variable: vc.name.clone(),
                flag_column: flag.clone(),
                missing_codes: codes.clone(),
            });
        }
    }
    rules
}
