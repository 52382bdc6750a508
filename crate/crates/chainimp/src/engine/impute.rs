//! Per-variable imputation: predictor pool assembly, screening, forward
//! selection, model fit on the observed applicable cases, and posterior-
//! predictive draws for the missing applicable cases.
//!
//! Selection statistics come from the chain's maintained pool Gram
//! (downdated to the fit rows) so a cycle costs O(k * n) per variable
//! rather than O(k^2 * n). Semicontinuous variables run two stages: a
//! logistic model for the nonzero indicator, then a normal linear model
//! for the transformed amount, fit on the nonzero observed rows only. A
//! bracket that excludes zero forces the indicator. Every model degrades
//! to an intercept-only fit when the applicable stratum is thinner than
//! p + 5 rows, and to a marginal donor draw when fitting is impossible;
//! both paths leave a warning record.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::data_model::{sync_restricted, Cell, VariableKind};
use crate::error::{Error, Result};
use crate::regressors::{fit_glm, fit_linear, GlmFamily, GlmFit, LinearFit};
use crate::selection::screen_and_select_on_gram;
use crate::transforms::Transform;

use super::{ChainState, EngineConfig};

/// Minimum rows beyond the parameter count before a regression is trusted;
/// thinner strata degrade to intercept-only models.
const MIN_EXTRA_ROWS: usize = 5;
/// Collinearity screen tolerance (relative residual norm).
const COLLINEARITY_TOL: f64 = 1e-6;

pub(super) fn impute_variable(
    state: &mut ChainState<'_>,
    v: usize,
    cfg: &EngineConfig,
) -> Result<()> {
    let ds = state.dataset;
    let name = ds.variables()[v].name.clone();
    let draw_rows: Vec<usize> = state.columns[v]
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, Cell::Missing | Cell::Imputed(_)))
        .map(|(row, _)| row)
        .collect();
    if draw_rows.is_empty() {
        return Ok(());
    }
    let fit_rows: Vec<usize> = state.columns[v]
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_observed())
        .map(|(row, _)| row)
        .collect();
    let mut fit_mask = vec![false; ds.n_rows()];
    for &r in &fit_rows {
        fit_mask[r] = true;
    }

    // Candidate pool: every other eligible variable's columns, minus the
    // restricting variables of the target.
    let closure = ds.restrictions().restricting_closure(v);
    let subset: Vec<usize> = state
        .pool_columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.source != v && !closure.contains(&c.source))
        .map(|(slot, _)| slot)
        .collect();

    let kind = ds.variables()[v].kind.clone();
    let stage = StageInput {
        v,
        name: &name,
        fit_rows: &fit_rows,
        fit_mask: &fit_mask,
        draw_rows: &draw_rows,
        subset: &subset,
    };
    let result = match kind {
        VariableKind::Continuous => impute_continuous(state, &stage, cfg),
        VariableKind::Count => impute_count(state, &stage, cfg),
        VariableKind::Categorical { ref levels } => {
            impute_categorical(state, &stage, levels.len(), cfg)
        }
        VariableKind::Semicontinuous => impute_semicontinuous(state, &stage, cfg),
    };
    result.map_err(|e| Error::numeric(format!("imputing `{name}`: {e}")))?;

    // The pool and downstream applicability must reflect v's new values
    // before the next variable updates.
    state.refresh_pool_columns(v);
    let downstream: Vec<usize> = ds.restrictions().downstream_of(v).to_vec();
    if !downstream.is_empty() {
        sync_restricted(ds.restrictions(), &mut state.columns, &downstream);
        for &d in &downstream {
            state.refresh_pool_columns(d);
        }
    }
    Ok(())
}

struct StageInput<'a> {
    v: usize,
    name: &'a str,
    fit_rows: &'a [usize],
    fit_mask: &'a [bool],
    draw_rows: &'a [usize],
    subset: &'a [usize],
}

/// Screen + forward-select against the working response, then enforce the
/// thin-stratum rule. Returns pool slots and records the labels.
fn select_predictors(
    state: &mut ChainState<'_>,
    key: String,
    y: &[f64],
    fit_rows: &[usize],
    fit_mask: &[bool],
    subset: &[usize],
    cfg: &EngineConfig,
) -> Result<Vec<usize>> {
    let gram = state.selection_gram(subset, fit_rows, fit_mask, y);
    let (_, picked) =
        screen_and_select_on_gram(gram, subset.len(), COLLINEARITY_TOL, &cfg.selection)?;
    let mut selected: Vec<usize> = picked.selected.iter().map(|&i| subset[i]).collect();
    if y.len() < selected.len() + 1 + MIN_EXTRA_ROWS {
        selected.clear();
    }
    state.selections.insert(
        key,
        selected
            .iter()
            .map(|&s| state.pool_columns()[s].label.clone())
            .collect(),
    );
    Ok(selected)
}

fn design_from(state: &ChainState<'_>, selected: &[usize], rows: &[usize]) -> DMatrix<f64> {
    let pool = state.pool_columns();
    DMatrix::from_fn(rows.len(), selected.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            pool[selected[j - 1]].values[rows[i]]
        }
    })
}

fn x_new_at(state: &ChainState<'_>, selected: &[usize], row: usize) -> DVector<f64> {
    let pool = state.pool_columns();
    DVector::from_iterator(
        selected.len() + 1,
        std::iter::once(1.0).chain(selected.iter().map(|&s| pool[s].values[row])),
    )
}

fn impute_continuous(
    state: &mut ChainState<'_>,
    stage: &StageInput<'_>,
    cfg: &EngineConfig,
) -> Result<()> {
    let v = stage.v;
    let transform = state.dataset.variables()[v].transform;
    let y: Result<Vec<f64>> = stage
        .fit_rows
        .iter()
        .map(|&r| transform.apply(state.columns[v].cells[r].value().unwrap()))
        .collect();
    let y = y?;
    let fit = if stage.fit_rows.is_empty() {
        None
    } else {
        let selected = select_predictors(
            state,
            stage.name.to_string(),
            &y,
            stage.fit_rows,
            stage.fit_mask,
            stage.subset,
            cfg,
        )?;
        let x = design_from(state, &selected, stage.fit_rows);
        match fit_linear(&x, &DVector::from_vec(y)) {
            Ok(fit) => Some((fit, selected)),
            Err(e) => {
                state.warnings.push(format!(
                    "`{}`: linear fit failed ({e}); marginal fallback",
                    stage.name
                ));
                None
            }
        }
    };

    match fit {
        Some((fit, selected)) => {
            let params = fit.draw_params(&mut state.rng);
            for &row in stage.draw_rows {
                let x_new = x_new_at(state, &selected, row);
                let value =
                    draw_transformed(state, v, stage.name, &params, &x_new, row, transform)?;
                state.columns[v].cells[row] = Cell::Imputed(value);
            }
        }
        None => marginal_fallback(state, v, stage.name, stage.draw_rows)?,
    }
    Ok(())
}

/// Draw on the transformed scale inside the (transformed) bracket, then
/// invert and clamp back into the original-scale bracket.
fn draw_transformed(
    state: &mut ChainState<'_>,
    v: usize,
    name: &str,
    params: &crate::regressors::LinearParams,
    x_new: &DVector<f64>,
    row: usize,
    transform: Transform,
) -> Result<f64> {
    let bounds = state.dataset.bounds(row, v);
    let t_bounds = match bounds {
        Some((lo, hi)) => Some(transform.apply_interval(lo, hi)?),
        None => None,
    };
    let draw = params.draw_response(x_new, t_bounds, &mut state.rng);
    if draw.clamped {
        state.warnings.push(format!(
            "`{name}` row {row}: bracket carried negligible predictive mass; clamped to the bound"
        ));
    }
    let mut value = transform.invert(draw.value)?;
    if let Some((lo, hi)) = bounds {
        value = value.clamp(lo, hi);
    }
    Ok(value)
}

fn impute_count(
    state: &mut ChainState<'_>,
    stage: &StageInput<'_>,
    cfg: &EngineConfig,
) -> Result<()> {
    let v = stage.v;
    let y: Vec<f64> = stage
        .fit_rows
        .iter()
        .map(|&r| state.columns[v].cells[r].value().unwrap())
        .collect();
    let fit = if stage.fit_rows.is_empty() {
        None
    } else {
        let selected = select_predictors(
            state,
            stage.name.to_string(),
            &y,
            stage.fit_rows,
            stage.fit_mask,
            stage.subset,
            cfg,
        )?;
        let x = design_from(state, &selected, stage.fit_rows);
        match fit_glm(&x, &DVector::from_vec(y), GlmFamily::Poisson) {
            Ok(fit) => Some((fit, selected)),
            Err(e) => {
                state.warnings.push(format!(
                    "`{}`: poisson fit failed ({e}); marginal fallback",
                    stage.name
                ));
                None
            }
        }
    };
    match fit {
        Some((fit, selected)) => {
            let params = fit.draw_params(&mut state.rng);
            for &row in stage.draw_rows {
                let x_new = x_new_at(state, &selected, row);
                let value = params.draw_response(&x_new, &mut state.rng);
                state.columns[v].cells[row] = Cell::Imputed(value);
            }
        }
        None => marginal_fallback(state, v, stage.name, stage.draw_rows)?,
    }
    Ok(())
}

fn impute_categorical(
    state: &mut ChainState<'_>,
    stage: &StageInput<'_>,
    n_levels: usize,
    cfg: &EngineConfig,
) -> Result<()> {
    let v = stage.v;
    let y: Vec<f64> = stage
        .fit_rows
        .iter()
        .map(|&r| state.columns[v].cells[r].value().unwrap())
        .collect();
    let mut present = vec![false; n_levels];
    for &val in &y {
        present[val as usize] = true;
    }
    let distinct = present.iter().filter(|&&p| p).count();
    let fit = if stage.fit_rows.is_empty() || distinct < 2 {
        None
    } else {
        let family = if n_levels == 2 {
            GlmFamily::Bernoulli
        } else {
            GlmFamily::Multinomial(n_levels)
        };
        // Working response for screening is the level index.
        let selected = select_predictors(
            state,
            stage.name.to_string(),
            &y,
            stage.fit_rows,
            stage.fit_mask,
            stage.subset,
            cfg,
        )?;
        let x = design_from(state, &selected, stage.fit_rows);
        match fit_glm(&x, &DVector::from_vec(y), family) {
            Ok(fit) => Some((fit, selected)),
            Err(e) => {
                state.warnings.push(format!(
                    "`{}`: {family:?} fit failed ({e}); marginal fallback",
                    stage.name
                ));
                None
            }
        }
    };
    match fit {
        Some((fit, selected)) => {
            let params = fit.draw_params(&mut state.rng);
            for &row in stage.draw_rows {
                let x_new = x_new_at(state, &selected, row);
                let value = params.draw_response(&x_new, &mut state.rng);
                state.columns[v].cells[row] = Cell::Imputed(value);
            }
        }
        None => marginal_fallback(state, v, stage.name, stage.draw_rows)?,
    }
    Ok(())
}

enum IndicatorModel {
    Fitted(GlmFit, Vec<usize>),
    /// Degenerate stratum: fixed observed nonzero rate.
    Rate(f64),
}

enum AmountModel {
    Fitted(LinearFit, Vec<usize>),
    /// Donor pool of observed nonzero values.
    Donors(Vec<f64>),
}

fn impute_semicontinuous(
    state: &mut ChainState<'_>,
    stage: &StageInput<'_>,
    cfg: &EngineConfig,
) -> Result<()> {
    let v = stage.v;
    let transform = state.dataset.variables()[v].transform;
    let value_at = |state: &ChainState<'_>, r: usize| state.columns[v].cells[r].value().unwrap();

    // Stage 1: presence/absence on all observed applicable rows.
    let y_ind: Vec<f64> = stage
        .fit_rows
        .iter()
        .map(|&r| if value_at(state, r) != 0.0 { 1.0 } else { 0.0 })
        .collect();
    let nonzero_rate = y_ind.iter().sum::<f64>() / (y_ind.len() as f64).max(1.0);
    let indicator = if stage.fit_rows.is_empty() {
        IndicatorModel::Rate(0.5)
    } else if nonzero_rate == 0.0 || nonzero_rate == 1.0 {
        IndicatorModel::Rate(nonzero_rate)
    } else {
        let selected = select_predictors(
            state,
            format!("{}.nonzero", stage.name),
            &y_ind,
            stage.fit_rows,
            stage.fit_mask,
            stage.subset,
            cfg,
        )?;
        let x = design_from(state, &selected, stage.fit_rows);
        match fit_glm(&x, &DVector::from_vec(y_ind), GlmFamily::Bernoulli) {
            Ok(fit) => IndicatorModel::Fitted(fit, selected),
            Err(e) => {
                state.warnings.push(format!(
                    "`{}`: indicator fit failed ({e}); marginal rate fallback",
                    stage.name
                ));
                IndicatorModel::Rate(nonzero_rate)
            }
        }
    };

    // Stage 2: transformed amounts on the observed nonzero rows.
    let nz_rows: Vec<usize> = stage
        .fit_rows
        .iter()
        .copied()
        .filter(|&r| value_at(state, r) != 0.0)
        .collect();
    let mut nz_mask = vec![false; state.dataset.n_rows()];
    for &r in &nz_rows {
        nz_mask[r] = true;
    }
    let donors: Vec<f64> = nz_rows.iter().map(|&r| value_at(state, r)).collect();
    let amount = if nz_rows.is_empty() {
        AmountModel::Donors(donors)
    } else {
        let y_amt: Result<Vec<f64>> = nz_rows
            .iter()
            .map(|&r| transform.apply(value_at(state, r)))
            .collect();
        let y_amt = y_amt?;
        let selected = select_predictors(
            state,
            format!("{}.amount", stage.name),
            &y_amt,
            &nz_rows,
            &nz_mask,
            stage.subset,
            cfg,
        )?;
        let x = design_from(state, &selected, &nz_rows);
        match fit_linear(&x, &DVector::from_vec(y_amt)) {
            Ok(fit) => AmountModel::Fitted(fit, selected),
            Err(e) => {
                state.warnings.push(format!(
                    "`{}`: amount fit failed ({e}); donor fallback",
                    stage.name
                ));
                AmountModel::Donors(donors)
            }
        }
    };

    let ind_params = match &indicator {
        IndicatorModel::Fitted(fit, _) => Some(fit.draw_params(&mut state.rng)),
        IndicatorModel::Rate(_) => None,
    };
    let amt_params = match &amount {
        AmountModel::Fitted(fit, _) => Some(fit.draw_params(&mut state.rng)),
        AmountModel::Donors(_) => None,
    };

    for &row in stage.draw_rows {
        let bounds = state.dataset.bounds(row, v);
        // A bracket excluding zero pins the indicator.
        let forced_nonzero = matches!(bounds, Some((lo, hi)) if lo > 0.0 || hi < 0.0);
        let nonzero = forced_nonzero
            || match (&indicator, &ind_params) {
                (IndicatorModel::Fitted(_, selected), Some(params)) => {
                    let x_new = x_new_at(state, selected, row);
                    params.draw_response(&x_new, &mut state.rng) == 1.0
                }
                (IndicatorModel::Rate(rate), _) => state.rng.gen_range(0.0..1.0) < *rate,
                _ => unreachable!(),
            };
        let value = if !nonzero {
            0.0
        } else {
            match (&amount, &amt_params) {
                (AmountModel::Fitted(_, selected), Some(params)) => {
                    let x_new = x_new_at(state, selected, row);
                    draw_transformed(state, v, stage.name, params, &x_new, row, transform)?
                }
                (AmountModel::Donors(donors), _) => {
                    if donors.is_empty() {
                        state.warnings.push(format!(
                            "`{}` row {row}: nonzero drawn with no nonzero donors; stored 0",
                            stage.name
                        ));
                        0.0
                    } else {
                        donor_draw(
                            donors,
                            bounds,
                            &mut state.rng,
                            &mut state.warnings,
                            stage.name,
                        )
                    }
                }
                _ => unreachable!(),
            }
        };
        state.columns[v].cells[row] = Cell::Imputed(value);
    }
    Ok(())
}

/// Fill draw rows from the variable's observed marginal (stage-appropriate
/// handling lives in the callers; this is the plain donor path).
fn marginal_fallback(
    state: &mut ChainState<'_>,
    v: usize,
    name: &str,
    draw_rows: &[usize],
) -> Result<()> {
    let donors: Vec<f64> = state.dataset.columns()[v]
        .cells
        .iter()
        .filter_map(|c| match c {
            Cell::Observed(x) => Some(*x),
            _ => None,
        })
        .collect();
    if donors.is_empty() {
        return Err(Error::validation(format!(
            "`{name}` has no observed values to fall back on"
        )));
    }
    state
        .warnings
        .push(format!("`{name}`: imputed from the observed marginal"));
    for &row in draw_rows {
        let value = donor_draw(
            &donors,
            state.dataset.bounds(row, v),
            &mut state.rng,
            &mut state.warnings,
            name,
        );
        state.columns[v].cells[row] = Cell::Imputed(value);
    }
    Ok(())
}

/// Uniform draw over the donor pool, restricted to the bracket when one
/// exists. An unreachable bracket clamps a donor into it (with a warning)
/// so the bounds invariant still holds.
pub(crate) fn donor_draw(
    donors: &[f64],
    bounds: Option<(f64, f64)>,
    rng: &mut ChaCha12Rng,
    warnings: &mut Vec<String>,
    name: &str,
) -> f64 {
    match bounds {
        None => donors[rng.gen_range(0..donors.len())],
        Some((lo, hi)) => {
            let in_bracket: Vec<f64> = donors
                .iter()
                .copied()
                .filter(|&d| d >= lo && d <= hi)
                .collect();
            if in_bracket.is_empty() {
                warnings.push(format!(
                    "`{name}`: no donors inside bracket [{lo}, {hi}]; clamped a donor"
                ));
                donors[rng.gen_range(0..donors.len())].clamp(lo, hi)
            } else {
                in_bracket[rng.gen_range(0..in_bracket.len())]
            }
        }
    }
}
