//! File emission for engine and hot-deck runs: the completed CSV tables,
//! the provenance table (one row per imputed cell), and the JSON run
//! manifest that makes a run reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{load_dataset, write_dataset_csv, Cell, Dataset};
use crate::error::{Error, Result};

use super::{CompletedSet, CompletedTable};

/// Everything needed to reconstruct a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<super::EngineConfig>,
    #[serde(default)]
    pub selected_predictors: Vec<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        RunManifest {
            tool: "chainimp".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            seed,
            engine: None,
            selected_predictors: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

fn write_provenance(
    path: &Path,
    ds: &Dataset,
    tables: &[(usize, &CompletedTable)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "variable", "chain", "imputed"])?;
    for (chain, table) in tables {
        for (row, var) in table.imputed_cells() {
            w.write_record([
                row.to_string(),
                ds.variables()[var].name.clone(),
                chain.to_string(),
                "1".to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Emit `imp_1.csv .. imp_m.csv`, `provenance.csv`, and `manifest.json`.
pub fn write_completed_set(
    dir: impl AsRef<Path>,
    ds: &Dataset,
    set: &CompletedSet,
    mut manifest: RunManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, table) in set.tables.iter().enumerate() {
        let file = std::fs::File::create(dir.join(format!("imp_{}.csv", i + 1)))?;
        write_dataset_csv(
            std::io::BufWriter::new(file),
            ds.variables(),
            &table.columns,
        )?;
    }
    write_provenance(
        &dir.join("provenance.csv"),
        ds,
        &set.tables
            .iter()
            .enumerate()
            .collect::<Vec<_>>(),
    )?;
    manifest.selected_predictors = set.selections.clone();
    manifest.warnings.extend(set.warnings.iter().cloned());
    manifest.write(dir.join("manifest.json"))?;
    Ok(())
}

/// Emit a single-table baseline run: `completed.csv`, `provenance.csv`, and
/// `manifest.json` (same provenance schema as the engine, chain = 0).
pub fn write_hotdeck_output(
    dir: impl AsRef<Path>,
    ds: &Dataset,
    table: &CompletedTable,
    warnings: &[String],
    mut manifest: RunManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("completed.csv"))?;
    write_dataset_csv(std::io::BufWriter::new(file), ds.variables(), &table.columns)?;
    write_provenance(&dir.join("provenance.csv"), ds, &[(0, table)])?;
    manifest.warnings.extend(warnings.iter().cloned());
    manifest.write(dir.join("manifest.json"))?;
    Ok(())
}

/// Read completed tables back from a run directory: `imp_*.csv` in index
/// order, or the single `completed.csv` of a baseline run. Imputed-cell
/// provenance is restored from `provenance.csv` when present.
pub fn read_completed_set(dir: impl AsRef<Path>, ds: &Dataset) -> Result<Vec<CompletedTable>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for i in 1.. {
        let p = dir.join(format!("imp_{i}.csv"));
        if p.exists() {
            paths.push(p);
        } else {
            break;
        }
    }
    if paths.is_empty() {
        let single = dir.join("completed.csv");
        if single.exists() {
            paths.push(single);
        }
    }
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "no imp_*.csv or completed.csv under {}",
            dir.display()
        )));
    }

    // provenance: (chain, row, variable name) -> imputed
    let mut imputed: BTreeMap<(usize, usize, String), ()> = BTreeMap::new();
    let prov_path = dir.join("provenance.csv");
    if prov_path.exists() {
        let mut r = csv::Reader::from_path(&prov_path)?;
        for record in r.records() {
            let record = record?;
            let row: usize = record[0].parse().map_err(|_| {
                Error::validation(format!("bad provenance row `{}`", &record[0]))
            })?;
            let chain: usize = record[2].parse().map_err(|_| {
                Error::validation(format!("bad provenance chain `{}`", &record[2]))
            })?;
            imputed.insert((chain, row, record[1].to_string()), ());
        }
    }

    let config = ds.to_config();
    let mut tables = Vec::with_capacity(paths.len());
    for (chain, path) in paths.iter().enumerate() {
        let file = std::fs::File::open(path)?;
        let loaded = load_dataset(std::io::BufReader::new(file), &config)?;
        let mut columns = loaded.dataset.columns().to_vec();
        for (v, spec) in ds.variables().iter().enumerate() {
            for row in 0..loaded.dataset.n_rows() {
                if imputed.contains_key(&(chain, row, spec.name.clone())) {
                    if let Cell::Observed(x) = columns[v].cells[row] {
                        columns[v].cells[row] = Cell::Imputed(x);
                    }
                }
            }
        }
        tables.push(CompletedTable { columns });
    }
    Ok(tables)
}
