//! The chained-equation driver: variable ordering, per-variable imputation
//! dispatch, restriction synchronization, burn-in, and production of the M
//! completed datasets.
//!
//! Each chain owns a copy of the cell grid and its own RNG stream. Within a
//! chain, variables update strictly sequentially (Gibbs-style); chains are
//! independent and may run in parallel without changing the output.

mod impute;
mod io;

pub(crate) use impute::donor_draw;
pub use io::{read_completed_set, write_completed_set, write_hotdeck_output, RunManifest};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{sync_restricted, Cell, ColumnData, Dataset, Eligibility};
use crate::error::{Error, Result};
use crate::selection::{DesignColumn, SelectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMode {
    /// M independent chains, one completed dataset from each.
    #[default]
    IndependentChains,
    /// One chain; emit a dataset after burn-in and then every
    /// `between_cycles` cycles until M are collected.
    SingleChainThinned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub m: usize,
    pub burn_in_cycles: usize,
    pub between_cycles: usize,
    pub chain_mode: ChainMode,
    pub seed: u64,
    pub selection: SelectionConfig,
    /// Cap on chain parallelism; `None` uses the process default.
    pub threads: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            m: 10,
            burn_in_cycles: 10,
            between_cycles: 5,
            chain_mode: ChainMode::IndependentChains,
            seed: 0,
            selection: SelectionConfig::default(),
            threads: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::validation("m must be at least 1".to_string()));
        }
        if self.burn_in_cycles < 1 {
            return Err(Error::validation(
                "burn_in_cycles must be at least 1".to_string(),
            ));
        }
        if self.chain_mode == ChainMode::SingleChainThinned && self.between_cycles < 1 {
            return Err(Error::validation(
                "between_cycles must be at least 1 in single-chain mode".to_string(),
            ));
        }
        self.selection.validate()
    }
}

/// One chain's working state: the completed table, provenance (the
/// `Imputed` cell state), the chain's RNG, and bookkeeping for the manifest.
pub struct ChainState<'d> {
    pub dataset: &'d Dataset,
    pub columns: Vec<ColumnData>,
    pub rng: ChaCha12Rng,
    pub cycle: usize,
    pub warnings: Vec<String>,
    /// Selected predictor labels per variable (and per stage for
    /// semicontinuous), overwritten each cycle so the final cycle remains.
    pub selections: BTreeMap<String, Vec<String>>,
    /// Maintained expanded predictor pool over all rows; columns sourced
    /// from a variable are regenerated right after that variable updates.
    pool: Vec<DesignColumn>,
    /// Variables eligible as predictors (sources of `pool`).
    pool_vars: Vec<usize>,
    /// All-rows Gram of [intercept | pool], kept in step with `pool` by
    /// delta updates; per-variable fit-row Grams are derived from it by
    /// downdating the excluded rows.
    gram: PoolGram,
    /// Pool column positions per source variable.
    pool_cols_of: Vec<Vec<usize>>,
}

/// Symmetric inner-product matrix of [intercept | pool columns] over all
/// rows (index 0 is the intercept).
pub(crate) struct PoolGram {
    pub(crate) dim: usize,
    pub(crate) data: Vec<f64>,
}

impl PoolGram {
    fn empty() -> Self {
        PoolGram { dim: 0, data: Vec::new() }
    }

    fn build(pool: &[DesignColumn], n_rows: usize) -> Self {
        let k = pool.len();
        let dim = k + 1;
        let mut g = PoolGram {
            dim,
            data: vec![0.0; dim * dim],
        };
        g.put(0, 0, n_rows as f64);
        for i in 0..k {
            let ci = &pool[i].values;
            g.put(0, i + 1, ci.iter().sum());
            for j in i..k {
                g.put(i + 1, j + 1, crate::selection::dot(ci, &pool[j].values));
            }
        }
        g
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    fn put(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    fn add(&mut self, i: usize, j: usize, d: f64) {
        self.data[i * self.dim + j] += d;
        if i != j {
            self.data[j * self.dim + i] += d;
        }
    }
}

/// One completed dataset: every cell Observed, Imputed, or NotApplicable.
#[derive(Debug, Clone)]
pub struct CompletedTable {
    pub columns: Vec<ColumnData>,
}

impl CompletedTable {
    /// Current value with NotApplicable as a structural zero.
    pub fn value_or_zero(&self, row: usize, var: usize) -> f64 {
        self.columns[var].cells[row].value().unwrap_or(0.0)
    }

    pub fn cell(&self, row: usize, var: usize) -> Cell {
        self.columns[var].cells[row]
    }

    /// (row, variable) pairs filled by the engine.
    pub fn imputed_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (v, col) in self.columns.iter().enumerate() {
            for (row, cell) in col.cells.iter().enumerate() {
                if matches!(cell, Cell::Imputed(_)) {
                    out.push((row, v));
                }
            }
        }
        out
    }
}

/// The M completed datasets with provenance and run metadata.
#[derive(Debug, Clone)]
pub struct CompletedSet {
    pub tables: Vec<CompletedTable>,
    pub selections: Vec<BTreeMap<String, Vec<String>>>,
    pub warnings: Vec<String>,
}

/// Imputation order: incomplete imputed-and-predictor variables, least
/// missing first, ties by declaration order.
pub fn order_variables(ds: &Dataset) -> Vec<usize> {
    let mut with_missing: Vec<(usize, usize)> = ds
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, spec)| spec.eligibility == Eligibility::ImputedAndPredictor)
        .map(|(v, _)| (v, ds.missing_count(v)))
        .filter(|&(_, miss)| miss > 0)
        .collect();
    with_missing.sort_by_key(|&(v, miss)| (miss, v));
    with_missing.into_iter().map(|(v, _)| v).collect()
}

impl<'d> ChainState<'d> {
    /// Start a chain: copy the table, then fill every Missing cell with a
    /// draw from its variable's observed marginal (bounds respected), so
    /// the first cycle sees a complete table.
    pub fn initialize(dataset: &'d Dataset, rng: ChaCha12Rng) -> Result<Self> {
        let pool_vars: Vec<usize> = dataset
            .variables()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.eligibility != Eligibility::Excluded)
            .map(|(v, _)| v)
            .collect();
        let mut state = ChainState {
            dataset,
            columns: dataset.columns().to_vec(),
            rng,
            cycle: 0,
            warnings: Vec::new(),
            selections: BTreeMap::new(),
            pool: Vec::new(),
            pool_vars,
            gram: PoolGram::empty(),
            pool_cols_of: Vec::new(),
        };

        // Restriction-depth ordering lets filters settle before the
        // variables they gate; the outer loop resolves reopened cells.
        let depth = dataset.restrictions().depth;
        for pass in 0..=depth + 1 {
            let topo: Vec<usize> = dataset.restrictions().restricted_topo().to_vec();
            sync_restricted(dataset.restrictions(), &mut state.columns, &topo);
            let pending: Vec<usize> = (0..dataset.n_variables())
                .filter(|&v| dataset.variables()[v].eligibility != Eligibility::Excluded)
                .filter(|&v| state.columns[v].cells.iter().any(|c| c.is_missing()))
                .collect();
            if pending.is_empty() {
                break;
            }
            if pass > depth {
                return Err(Error::numeric(
                    "initialization did not reach a complete table".to_string(),
                ));
            }
            for v in ordered_by_restriction_depth(dataset, pending) {
                state.marginal_fill_missing(v)?;
                let downstream: Vec<usize> =
                    dataset.restrictions().downstream_of(v).to_vec();
                sync_restricted(dataset.restrictions(), &mut state.columns, &downstream);
            }
        }
        state.rebuild_pool();
        Ok(state)
    }

    /// Fill `v`'s Missing cells from its observed donor pool.
    fn marginal_fill_missing(&mut self, v: usize) -> Result<()> {
        let donors: Vec<f64> = self.dataset.columns()[v]
            .cells
            .iter()
            .filter_map(|c| match c {
                Cell::Observed(x) => Some(*x),
                _ => None,
            })
            .collect();
        if donors.is_empty() {
            return Err(Error::validation(format!(
                "uninitializable variable `{}`: no observed donors",
                self.dataset.variables()[v].name
            )));
        }
        let rows: Vec<usize> = self.columns[v]
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_missing())
            .map(|(row, _)| row)
            .collect();
        for row in rows {
            let value = impute::donor_draw(
                &donors,
                self.dataset.bounds(row, v),
                &mut self.rng,
                &mut self.warnings,
                &self.dataset.variables()[v].name,
            );
            self.columns[v].cells[row] = Cell::Imputed(value);
        }
        Ok(())
    }

    fn rebuild_pool(&mut self) {
        self.pool = crate::selection::expand_dummies(
            self.dataset.variables(),
            &self.columns,
            &self.pool_vars,
        );
        self.gram = PoolGram::build(&self.pool, self.dataset.n_rows());
        self.pool_cols_of = vec![Vec::new(); self.dataset.n_variables()];
        for (slot, col) in self.pool.iter().enumerate() {
            self.pool_cols_of[col.source].push(slot);
        }
    }

    /// Regenerate the pool columns sourced from `v` after it was imputed,
    /// propagating the value changes into the maintained Gram.
    pub(crate) fn refresh_pool_columns(&mut self, v: usize) {
        if self.pool_cols_of.get(v).map_or(true, |c| c.is_empty()) {
            return;
        }
        let slots = self.pool_cols_of[v].clone();
        let fresh =
            crate::selection::expand_dummies(self.dataset.variables(), &self.columns, &[v]);
        debug_assert_eq!(fresh.len(), slots.len(), "column count per variable is stable");
        for (slot, new_col) in slots.into_iter().zip(fresh) {
            let old = std::mem::replace(&mut self.pool[slot], new_col);
            self.gram_update_column(slot, &old.values);
        }
    }

    /// Refresh one pool column's Gram row. Small edits (the usual case: a
    /// redraw touched only the imputed cells) use delta updates against
    /// the rows that changed; wholesale changes (a categorical reference
    /// flip) recompute the row.
    fn gram_update_column(&mut self, slot: usize, old: &[f64]) {
        let n = self.dataset.n_rows();
        let new = &self.pool[slot].values;
        let changed: Vec<usize> = (0..n).filter(|&r| new[r] != old[r]).collect();
        if changed.is_empty() {
            return;
        }
        let gi = slot + 1;
        if changed.len() * 4 < n {
            let d0: f64 = changed.iter().map(|&r| new[r] - old[r]).sum();
            self.gram.add(0, gi, d0);
            for (other, col) in self.pool.iter().enumerate() {
                if other == slot {
                    continue;
                }
                let cj = &col.values;
                let d: f64 = changed.iter().map(|&r| (new[r] - old[r]) * cj[r]).sum();
                self.gram.add(gi, other + 1, d);
            }
            let dd: f64 = changed
                .iter()
                .map(|&r| (new[r] - old[r]) * (new[r] + old[r]))
                .sum();
            self.gram.add(gi, gi, dd);
        } else {
            self.gram.put(0, gi, new.iter().sum());
            for (other, col) in self.pool.iter().enumerate() {
                let d = crate::selection::dot(new, &col.values);
                self.gram.put(gi, other + 1, d);
            }
        }
    }

    /// Fit-row Gram for a pool subset: cached all-rows entries minus the
    /// excluded rows, plus the response cross products over the fit rows.
    /// Layout matches the selection module: [intercept | subset | y].
    pub(crate) fn selection_gram(
        &self,
        subset: &[usize],
        fit_rows: &[usize],
        fit_mask: &[bool],
        y: &[f64],
    ) -> crate::selection::Sym {
        let m = subset.len();
        let dim = m + 2;
        let mut data = vec![0.0; dim * dim];
        let cache_idx = |i: usize| if i == 0 { 0 } else { subset[i - 1] + 1 };
        for i in 0..=m {
            for j in i..=m {
                data[i * dim + j] = self.gram.get(cache_idx(i), cache_idx(j));
            }
        }
        // downdate rows outside the fit set
        let mut scratch = vec![0.0f64; m + 1];
        for r in 0..self.dataset.n_rows() {
            if fit_mask[r] {
                continue;
            }
            scratch[0] = 1.0;
            for (t, &p) in subset.iter().enumerate() {
                scratch[t + 1] = self.pool[p].values[r];
            }
            for i in 0..=m {
                let vi = scratch[i];
                if vi == 0.0 {
                    continue;
                }
                let row = i * dim;
                for j in i..=m {
                    data[row + j] -= vi * scratch[j];
                }
            }
        }
        // response comes straight from the fit rows
        let yi = dim - 1;
        data[yi * dim + yi] = crate::selection::dot(y, y);
        data[yi] = y.iter().sum();
        for (t, &p) in subset.iter().enumerate() {
            let col = &self.pool[p].values;
            let s: f64 = fit_rows
                .iter()
                .zip(y)
                .map(|(&r, &yv)| col[r] * yv)
                .sum();
            data[(t + 1) * dim + yi] = s;
        }
        // mirror the strict upper triangle
        for i in 0..dim {
            for j in i + 1..dim {
                data[j * dim + i] = data[i * dim + j];
            }
        }
        crate::selection::Sym { dim, data }
    }

    pub(crate) fn pool_columns(&self) -> &[DesignColumn] {
        &self.pool
    }

    /// Run one full cycle: impute each ordered variable in turn, then
    /// resolve any cells reopened by restriction flips so no cell is left
    /// Missing.
    pub fn run_cycle(&mut self, order: &[usize], cfg: &EngineConfig) -> Result<()> {
        for &v in order {
            impute::impute_variable(self, v, cfg)?;
        }
        self.resolve_reopened(cfg)?;
        self.cycle += 1;
        Ok(())
    }

    /// Restriction flips later in a cycle can reopen cells of variables
    /// already processed (filter imputed "no" -> "yes"). One pass per
    /// nesting level settles the DAG.
    fn resolve_reopened(&mut self, cfg: &EngineConfig) -> Result<()> {
        let depth = self.dataset.restrictions().depth;
        for pass in 0..=depth + 1 {
            let topo: Vec<usize> = self.dataset.restrictions().restricted_topo().to_vec();
            sync_restricted(self.dataset.restrictions(), &mut self.columns, &topo);
            for &v in &topo {
                self.refresh_pool_columns(v);
            }
            let pending: Vec<usize> = (0..self.dataset.n_variables())
                .filter(|&v| self.dataset.variables()[v].eligibility != Eligibility::Excluded)
                .filter(|&v| self.columns[v].cells.iter().any(|c| c.is_missing()))
                .collect();
            if pending.is_empty() {
                return Ok(());
            }
            if pass > depth {
                return Err(Error::numeric(format!(
                    "cycle left missing cells in: {}",
                    pending
                        .iter()
                        .map(|&v| self.dataset.variables()[v].name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            for v in ordered_by_restriction_depth(self.dataset, pending) {
                if self.dataset.variables()[v].eligibility == Eligibility::ImputedAndPredictor {
                    impute::impute_variable(self, v, cfg)?;
                } else {
                    self.marginal_fill_missing(v)?;
                    self.refresh_pool_columns(v);
                }
            }
        }
        Ok(())
    }

    /// Snapshot the chain as one completed dataset.
    pub fn snapshot(&self) -> CompletedTable {
        CompletedTable {
            columns: self.columns.clone(),
        }
    }
}

fn ordered_by_restriction_depth(ds: &Dataset, mut vars: Vec<usize>) -> Vec<usize> {
    let topo = ds.restrictions().restricted_topo();
    let rank = |v: usize| topo.iter().position(|&t| t == v).unwrap_or(0);
    vars.sort_by_key(|&v| (rank(v), v));
    vars
}

/// Produce the M completed datasets.
pub fn run(ds: &Dataset, cfg: &EngineConfig) -> Result<CompletedSet> {
    cfg.validate()?;
    let order = order_variables(ds);

    match cfg.chain_mode {
        ChainMode::IndependentChains => {
            let chains: Vec<Result<(CompletedTable, BTreeMap<String, Vec<String>>, Vec<String>)>> =
                match cfg.threads {
                    Some(t) => rayon::ThreadPoolBuilder::new()
                        .num_threads(t.max(1))
                        .build()
                        .map_err(|e| Error::numeric(format!("thread pool: {e}")))?
                        .install(|| {
                            (0..cfg.m)
                                .into_par_iter()
                                .map(|chain| run_one_chain(ds, &order, cfg, chain))
                                .collect()
                        }),
                    None => (0..cfg.m)
                        .into_par_iter()
                        .map(|chain| run_one_chain(ds, &order, cfg, chain))
                        .collect(),
                };
            let mut tables = Vec::with_capacity(cfg.m);
            let mut selections = Vec::with_capacity(cfg.m);
            let mut warnings = Vec::new();
            for chain in chains {
                let (table, sel, warn) = chain?;
                tables.push(table);
                selections.push(sel);
                warnings.extend(warn);
            }
            Ok(CompletedSet {
                tables,
                selections,
                warnings,
            })
        }
        ChainMode::SingleChainThinned => {
            let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            let mut state = ChainState::initialize(ds, rng)?;
            let mut tables = Vec::with_capacity(cfg.m);
            let mut selections = Vec::with_capacity(cfg.m);
            for _ in 0..cfg.burn_in_cycles {
                state.run_cycle(&order, cfg)?;
            }
            tables.push(state.snapshot());
            selections.push(state.selections.clone());
            for _ in 1..cfg.m {
                for _ in 0..cfg.between_cycles {
                    state.run_cycle(&order, cfg)?;
                }
                tables.push(state.snapshot());
                selections.push(state.selections.clone());
            }
            Ok(CompletedSet {
                tables,
                selections,
                warnings: state.warnings,
            })
        }
    }
}

fn run_one_chain(
    ds: &Dataset,
    order: &[usize],
    cfg: &EngineConfig,
    chain: usize,
) -> Result<(CompletedTable, BTreeMap<String, Vec<String>>, Vec<String>)> {
    let rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ chain as u64);
    let mut state = ChainState::initialize(ds, rng)
        .map_err(|e| Error::numeric(format!("chain {chain}: {e}")))?;
    for _ in 0..cfg.burn_in_cycles {
        state
            .run_cycle(order, cfg)
            .map_err(|e| Error::numeric(format!("chain {chain}: {e}")))?;
    }
    let warnings = state
        .warnings
        .iter()
        .map(|w| format!("chain {chain}: {w}"))
        .collect();
    Ok((state.snapshot(), state.selections.clone(), warnings))
}

#[cfg(test)]
mod tests;
