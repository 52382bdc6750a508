//! Per-variable predictor screening: dummy expansion of the candidate pool,
//! collinearity removal, and forward selection under a minimum R-squared
//! increase rule with a predictor cap.
//!
//! Screening and selection both run on the Gram matrix of the candidate
//! pool (one pass over the rows), so the per-cycle cost stays linear in the
//! row count. The forward step uses the sweep operator: after sweeping the
//! selected pivots, the R-squared increase of candidate `j` is
//! `G[j,y]^2 / (G[j,j] * TSS)`, which matches a brute-force refit exactly.

use serde::{Deserialize, Serialize};

use crate::data_model::{Cell, ColumnData, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::transforms::Transform;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub min_r2_increase: f64,
    pub max_predictors: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            min_r2_increase: 0.005,
            max_predictors: 10,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_r2_increase > 0.0 && self.min_r2_increase < 1.0) {
            return Err(Error::validation(format!(
                "min_r2_increase must lie in (0, 1), got {}",
                self.min_r2_increase
            )));
        }
        if self.max_predictors < 1 {
            return Err(Error::validation(
                "max_predictors must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One candidate design column (intercept excluded; it is implicit).
#[derive(Debug, Clone)]
pub struct DesignColumn {
    pub label: String,
    /// Index of the source variable in the dataset, usize::MAX for raw
    /// test columns.
    pub source: usize,
    pub values: Vec<f64>,
}

impl DesignColumn {
    pub fn raw(label: impl Into<String>, values: Vec<f64>) -> Self {
        DesignColumn {
            label: label.into(),
            source: usize::MAX,
            values,
        }
    }
}

/// Numeric value a cell contributes to a design column: NotApplicable is a
/// structural zero, Missing contributes zero (the engine only expands
/// complete tables, so Missing should not occur mid-chain).
fn cell_value(cell: Cell) -> f64 {
    cell.value().unwrap_or(0.0)
}

/// Expand eligible predictor variables into the candidate design pool.
///
/// Categorical variables with K levels yield K-1 indicators against the
/// most frequent level; semicontinuous predictors yield a nonzero indicator
/// plus the (transformed) amount; continuous/count predictors yield one
/// column on their declared transform scale.
pub fn expand_dummies(
    specs: &[VariableSpec],
    columns: &[ColumnData],
    predictors: &[usize],
) -> Vec<DesignColumn> {
    let n_rows = columns.first().map_or(0, |c| c.cells.len());
    let mut pool = Vec::new();
    for &v in predictors {
        let spec = &specs[v];
        let cells = &columns[v].cells;
        match &spec.kind {
            VariableKind::Continuous | VariableKind::Count => {
                let values = cells
                    .iter()
                    .map(|&c| transform_or_zero(spec.transform, cell_value(c)))
                    .collect();
                pool.push(DesignColumn {
                    label: spec.name.clone(),
                    source: v,
                    values,
                });
            }
            VariableKind::Semicontinuous => {
                let mut indicator = Vec::with_capacity(n_rows);
                let mut amount = Vec::with_capacity(n_rows);
                for &c in cells {
                    let raw = cell_value(c);
                    if raw != 0.0 {
                        indicator.push(1.0);
                        amount.push(transform_or_zero(spec.transform, raw));
                    } else {
                        indicator.push(0.0);
                        amount.push(0.0);
                    }
                }
                pool.push(DesignColumn {
                    label: format!("{}.nonzero", spec.name),
                    source: v,
                    values: indicator,
                });
                pool.push(DesignColumn {
                    label: format!("{}.amount", spec.name),
                    source: v,
                    values: amount,
                });
            }
            VariableKind::Categorical { levels } => {
                let mut counts = vec![0usize; levels.len()];
                for &c in cells.iter() {
                    if let Some(val) = c.value() {
                        counts[val as usize] += 1;
                    }
                }
                let reference = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &c)| c)
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                for (level_idx, level) in levels.iter().enumerate() {
                    if level_idx == reference {
                        continue;
                    }
                    let values = cells
                        .iter()
                        .map(|&c| match c.value() {
                            Some(val) if val as usize == level_idx => 1.0,
                            _ => 0.0,
                        })
                        .collect();
                    pool.push(DesignColumn {
                        label: format!("{}={level}", spec.name),
                        source: v,
                        values,
                    });
                }
            }
        }
    }
    pool
}

fn transform_or_zero(t: Transform, v: f64) -> f64 {
    t.apply(v).unwrap_or(0.0)
}

/// Outcome of the collinearity screen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScreenResult {
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Greedy pivoted-factorization scan over the pool (intercept first): a
/// column whose residual norm after projection on the retained set falls
/// below `tol` times its own norm is dropped as (near-)collinear.
pub fn screen_collinear(pool: &[DesignColumn], tol: f64) -> ScreenResult {
    let n = pool.first().map_or(0, |c| c.values.len());
    let gram = gram_matrix(n, pool, None);
    screen_on_gram(&gram, pool.len(), tol)
}

/// Collinearity screen on a precomputed Gram of [intercept | pool].
fn screen_on_gram(gram: &Sym, k: usize, tol: f64) -> ScreenResult {
    // Incremental Cholesky over retained columns; `rows[r]` holds the
    // factor row of the r-th retained column (gram indices, intercept = 0).
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut retained_g: Vec<usize> = Vec::with_capacity(k + 1);
    let mut retained = Vec::new();
    let mut dropped = Vec::new();

    // Intercept: index 0 of the gram, always retained. An empty table
    // degenerates gracefully (norm 0).
    let g00 = gram.get(0, 0);
    rows.push(vec![g00.max(0.0).sqrt()]);
    retained_g.push(0);

    for j in 0..k {
        let gj = j + 1; // gram index
        let own = gram.get(gj, gj);
        if own <= 0.0 {
            dropped.push(j);
            continue;
        }
        // Solve L l = g(retained, j) by forward substitution.
        let mut l = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            let mut s = gram.get(retained_g[r], gj);
            for (t, lt) in l.iter().enumerate() {
                s -= row[t] * lt;
            }
            let diag = row[r];
            l.push(if diag > 0.0 { s / diag } else { 0.0 });
        }
        let res2 = (own - l.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        if res2 < tol * tol * own {
            dropped.push(j);
        } else {
            l.push(res2.sqrt());
            rows.push(l);
            retained_g.push(gj);
            retained.push(j);
        }
    }
    ScreenResult { retained, dropped }
}

/// Forward-selection output: pool indices in selection order and the
/// R-squared increase each step achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSelection {
    pub selected: Vec<usize>,
    pub r2_trace: Vec<f64>,
}

/// Greedy forward selection from an intercept-only start: repeatedly add
/// the column with the largest R-squared increase, stopping below
/// `min_r2_increase` or at `max_predictors`. Ties break by pool order.
pub fn forward_select(
    y: &[f64],
    pool: &[DesignColumn],
    cfg: &SelectionConfig,
) -> Result<ForwardSelection> {
    cfg.validate()?;
    let n = y.len();
    for col in pool {
        if col.values.len() != n {
            return Err(Error::validation(format!(
                "column `{}` has {} rows, response has {n}",
                col.label,
                col.values.len()
            )));
        }
    }
    let gram = gram_matrix(n, pool, Some(y));
    Ok(select_on_gram(gram, pool.len(), cfg))
}

/// Screen then select with a single Gram pass; the engine's per-variable
/// entry point. Returned indices refer to the original pool.
pub fn screen_and_select(
    y: &[f64],
    pool: &[DesignColumn],
    tol: f64,
    cfg: &SelectionConfig,
) -> Result<(ScreenResult, ForwardSelection)> {
    let gram = gram_matrix(y.len(), pool, Some(y));
    screen_and_select_on_gram(gram, pool.len(), tol, cfg)
}

/// Screen + select on a prebuilt [intercept | k columns | y] Gram. The
/// engine assembles these incrementally instead of re-scanning the rows.
pub(crate) fn screen_and_select_on_gram(
    gram: Sym,
    k: usize,
    tol: f64,
    cfg: &SelectionConfig,
) -> Result<(ScreenResult, ForwardSelection)> {
    cfg.validate()?;
    let screen = screen_on_gram(&gram, k, tol);
    let sub = gram.take_columns(&screen.retained, k);
    let picked = select_on_gram(sub, screen.retained.len(), cfg);
    let selected = picked
        .selected
        .iter()
        .map(|&i| screen.retained[i])
        .collect();
    Ok((
        screen,
        ForwardSelection {
            selected,
            r2_trace: picked.r2_trace,
        },
    ))
}

/// Symmetric matrix of [intercept | pool | y?] inner products. Layout:
/// index 0 = intercept, 1..=k = pool columns, k+1 = y when present.
pub(crate) struct Sym {
    pub(crate) dim: usize,
    pub(crate) data: Vec<f64>,
}

impl Sym {
    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Restrict to intercept + the given pool columns + y (y assumed last).
    fn take_columns(&self, keep_pool: &[usize], k: usize) -> Sym {
        let mut idx = Vec::with_capacity(keep_pool.len() + 2);
        idx.push(0);
        idx.extend(keep_pool.iter().map(|&j| j + 1));
        idx.push(k + 1);
        let dim = idx.len();
        let mut data = vec![0.0; dim * dim];
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                data[a * dim + b] = self.get(ia, ib);
            }
        }
        Sym { dim, data }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators give the optimizer room to vectorize
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

fn gram_matrix(n: usize, pool: &[DesignColumn], y: Option<&[f64]>) -> Sym {
    let k = pool.len();
    let dim = k + 1 + usize::from(y.is_some());
    let mut g = Sym {
        dim,
        data: vec![0.0; dim * dim],
    };
    g.set(0, 0, n as f64);
    for i in 0..k {
        let ci = &pool[i].values;
        g.set(0, i + 1, ci.iter().sum());
        for j in i..k {
            g.set(i + 1, j + 1, dot(ci, &pool[j].values));
        }
    }
    if let Some(y) = y {
        let yi = k + 1;
        g.set(0, yi, y.iter().sum());
        for i in 0..k {
            g.set(i + 1, yi, dot(&pool[i].values, y));
        }
        g.set(yi, yi, dot(y, y));
    }
    g
}

/// Sweep the symmetric matrix on pivot `k` (Goodnight's SWEEP).
fn sweep(g: &mut Sym, k: usize) {
    let dim = g.dim;
    let d = g.get(k, k);
    for i in 0..dim {
        for j in 0..dim {
            if i != k && j != k {
                let v = g.get(i, j) - g.get(i, k) * g.get(k, j) / d;
                g.data[i * dim + j] = v;
            }
        }
    }
    for i in 0..dim {
        if i != k {
            g.data[i * dim + k] /= d;
            g.data[k * dim + i] /= d;
        }
    }
    g.data[k * dim + k] = -1.0 / d;
}

fn select_on_gram(mut g: Sym, k: usize, cfg: &SelectionConfig) -> ForwardSelection {
    let y_idx = k + 1;
    let original_diag: Vec<f64> = (0..k).map(|j| g.get(j + 1, j + 1)).collect();
    let yy_raw = g.get(y_idx, y_idx);
    if g.get(0, 0) <= 0.0 {
        return ForwardSelection {
            selected: Vec::new(),
            r2_trace: Vec::new(),
        };
    }
    // Sweep the intercept; G[y,y] becomes the centered total SS.
    sweep(&mut g, 0);
    let tss = g.get(y_idx, y_idx);
    if !(tss > 1e-12 * yy_raw.max(f64::MIN_POSITIVE)) {
        // Zero-variance response: intercept-only.
        return ForwardSelection {
            selected: Vec::new(),
            r2_trace: Vec::new(),
        };
    }

    let mut selected = Vec::new();
    let mut trace = Vec::new();
    let mut in_model = vec![false; k];
    while selected.len() < cfg.max_predictors {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..k {
            if in_model[j] {
                continue;
            }
            let d = g.get(j + 1, j + 1);
            // Numerically exhausted column (collinear with the model).
            if d <= 1e-10 * original_diag[j].max(1e-300) {
                continue;
            }
            let s = g.get(j + 1, y_idx);
            let delta = (s * s) / (d * tss);
            if best.map_or(true, |(_, b)| delta > b) {
                best = Some((j, delta));
            }
        }
        match best {
            Some((j, delta)) if delta >= cfg.min_r2_increase => {
                sweep(&mut g, j + 1);
                in_model[j] = true;
                selected.push(j);
                trace.push(delta);
            }
            _ => break,
        }
    }
    ForwardSelection {
        selected,
        r2_trace: trace,
    }
}
