//! Evaluation battery over completed datasets: observed-vs-completed
//! summaries, per-variable FMI tables, indicator-rate checks for
//! semicontinuous components, correlation preservation between two
//! imputation methods, Bland-Altman agreement data, and a three-way
//! regression comparison with variance ratios. Everything is emitted as
//! plot-ready CSV; no rendering here.

use std::path::Path;

use serde::Serialize;

use crate::data_model::{Cell, Dataset, Eligibility, VariableKind};
use crate::engine::{CompletedTable, RunManifest};
use crate::error::{Error, Result};
use crate::inference::{pool_scalar, PooledCoefficient, PooledEstimate};

/// Type-7 (linear interpolation) sample quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub statistic: String,
    pub obs: f64,
    pub com: f64,
    /// (com - obs) / obs, blank when obs = 0.
    pub rel_diff: Option<f64>,
}

/// Observed-only versus completed summary: n, min, max, mean, sd, and the
/// 25/50/75/90/95 percentiles.
pub fn summary_compare(observed: &[f64], completed: &[f64]) -> Result<Vec<SummaryRow>> {
    if observed.is_empty() || completed.is_empty() {
        return Err(Error::validation(
            "summary_compare needs nonempty samples".to_string(),
        ));
    }
    let mut obs = observed.to_vec();
    let mut com = completed.to_vec();
    obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    com.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    };

    let mut rows = Vec::new();
    let mut push = |statistic: &str, o: f64, c: f64| {
        let rel_diff = if o == 0.0 { None } else { Some((c - o) / o) };
        rows.push(SummaryRow {
            statistic: statistic.to_string(),
            obs: o,
            com: c,
            rel_diff,
        });
    };
    push("n", obs.len() as f64, com.len() as f64);
    push("min", obs[0], com[0]);
    push("max", *obs.last().unwrap(), *com.last().unwrap());
    push("mean", mean(&obs), mean(&com));
    push("std", sd(&obs), sd(&com));
    for &(label, p) in &[
        ("q25", 0.25),
        ("q50", 0.50),
        ("q75", 0.75),
        ("q90", 0.90),
        ("q95", 0.95),
    ] {
        push(label, quantile_sorted(&obs, p), quantile_sorted(&com, p));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FmiRow {
    pub variable: String,
    pub pooled: PooledEstimate,
}

/// FMI of the mean estimand per (non-excluded) variable, treating
/// NotApplicable amounts as structural zeros.
pub fn fmi_of_means(ds: &Dataset, tables: &[CompletedTable]) -> Result<Vec<FmiRow>> {
    let n = ds.n_rows() as f64;
    ds.variables()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.eligibility != Eligibility::Excluded)
        .map(|(v, spec)| {
            let mut estimates = Vec::with_capacity(tables.len());
            let mut variances = Vec::with_capacity(tables.len());
            for table in tables {
                let values: Vec<f64> =
                    (0..ds.n_rows()).map(|r| table.value_or_zero(r, v)).collect();
                let m = values.iter().sum::<f64>() / n;
                let s2 = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
                estimates.push(m);
                variances.push(s2 / n);
            }
            Ok(FmiRow {
                variable: spec.name.clone(),
                pooled: pool_scalar(&estimates, &variances)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct IndicatorPropsRow {
    pub variable: String,
    pub fmi_amount: f64,
    pub fmi_indicator: f64,
    pub prop_positive_obs: f64,
    /// Blank when the variable had no imputed cells in the selected table.
    pub prop_positive_imp: Option<f64>,
    pub n_missing_indicators: usize,
    /// Set when |imp - obs| exceeds the alert threshold; a documenting
    /// flag, not an error (rates legitimately differ under MAR).
    pub alert: bool,
}

/// Per-semicontinuous-variable indicator diagnostics: FMI of the amount
/// mean and of the nonzero-indicator proportion across the M tables, plus
/// observed-vs-imputed positive rates on one selected table.
pub fn indicator_props(
    ds: &Dataset,
    tables: &[CompletedTable],
    selected: usize,
    alert_threshold: f64,
) -> Result<Vec<IndicatorPropsRow>> {
    if tables.is_empty() {
        return Err(Error::validation("no completed tables".to_string()));
    }
    let n = ds.n_rows() as f64;
    let table = &tables[selected.min(tables.len() - 1)];
    let mut rows = Vec::new();
    for (v, spec) in ds.variables().iter().enumerate() {
        if !matches!(spec.kind, VariableKind::Semicontinuous) {
            continue;
        }
        let mut amount_est = Vec::new();
        let mut amount_var = Vec::new();
        let mut ind_est = Vec::new();
        let mut ind_var = Vec::new();
        for t in tables {
            let values: Vec<f64> = (0..ds.n_rows()).map(|r| t.value_or_zero(r, v)).collect();
            let m = values.iter().sum::<f64>() / n;
            let s2 = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            amount_est.push(m);
            amount_var.push(s2 / n);
            let p = values.iter().filter(|&&x| x > 0.0).count() as f64 / n;
            ind_est.push(p);
            ind_var.push((p * (1.0 - p)).max(1e-12) / n);
        }
        let fmi_amount = pool_scalar(&amount_est, &amount_var)?.fmi;
        let fmi_indicator = pool_scalar(&ind_est, &ind_var)?.fmi;

        let (mut obs_pos, mut obs_n) = (0usize, 0usize);
        let (mut imp_pos, mut imp_n) = (0usize, 0usize);
        let mut missing = 0usize;
        for row in 0..ds.n_rows() {
            match ds.cell(row, v) {
                Cell::Observed(x) => {
                    obs_n += 1;
                    if x > 0.0 {
                        obs_pos += 1;
                    }
                }
                Cell::Missing => missing += 1,
                _ => {}
            }
            if let Cell::Imputed(x) = table.cell(row, v) {
                imp_n += 1;
                if x > 0.0 {
                    imp_pos += 1;
                }
            }
        }
        let prop_positive_obs = if obs_n > 0 {
            obs_pos as f64 / obs_n as f64
        } else {
            0.0
        };
        let prop_positive_imp = if imp_n > 0 {
            Some(imp_pos as f64 / imp_n as f64)
        } else {
            None
        };
        let alert = prop_positive_imp
            .map(|p| (p - prop_positive_obs).abs() > alert_threshold)
            .unwrap_or(false);
        rows.push(IndicatorPropsRow {
            variable: spec.name.clone(),
            fmi_amount,
            fmi_indicator,
            prop_positive_obs,
            prop_positive_imp,
            n_missing_indicators: missing,
            alert,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct CorrCompare {
    pub labels: Vec<String>,
    /// Symmetric Pearson matrices averaged over each method's tables.
    pub corr_a: Vec<Vec<f64>>,
    pub corr_b: Vec<Vec<f64>>,
    /// One point per pair: (label_i, label_j, r_method_b, r_method_a).
    pub scatter: Vec<(String, String, f64, f64)>,
}

/// Pairwise correlations on the (transformed) completed values for two
/// methods over the same variables and rows. Matrices are plain averages
/// over each method's M tables.
pub fn correlation_compare(
    ds: &Dataset,
    method_a: &[CompletedTable],
    method_b: &[CompletedTable],
    vars: &[usize],
) -> Result<CorrCompare> {
    if method_a.is_empty() || method_b.is_empty() {
        return Err(Error::validation("correlation_compare needs tables".to_string()));
    }
    let labels: Vec<String> = vars
        .iter()
        .map(|&v| ds.variables()[v].name.clone())
        .collect();
    let values = |table: &CompletedTable, v: usize| -> Result<Vec<f64>> {
        let transform = ds.variables()[v].transform;
        (0..ds.n_rows())
            .map(|r| transform.apply(table.value_or_zero(r, v)))
            .collect()
    };
    let mean_corr = |tables: &[CompletedTable]| -> Result<Vec<Vec<f64>>> {
        let k = vars.len();
        let mut acc = vec![vec![0.0f64; k]; k];
        for table in tables {
            let cols: Result<Vec<Vec<f64>>> =
                vars.iter().map(|&v| values(table, v)).collect();
            let cols = cols?;
            for i in 0..k {
                acc[i][i] += 1.0;
                for j in 0..i {
                    let r = pearson(&cols[i], &cols[j]);
                    acc[i][j] += r;
                    acc[j][i] += r;
                }
            }
        }
        let m = tables.len() as f64;
        for row in &mut acc {
            for v in row.iter_mut() {
                *v /= m;
            }
        }
        Ok(acc)
    };
    let corr_a = mean_corr(method_a)?;
    let corr_b = mean_corr(method_b)?;
    let mut scatter = Vec::new();
    for i in 0..vars.len() {
        for j in 0..i {
            scatter.push((
                labels[i].clone(),
                labels[j].clone(),
                corr_b[i][j],
                corr_a[i][j],
            ));
        }
    }
    Ok(CorrCompare {
        labels,
        corr_a,
        corr_b,
        scatter,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlandAltman {
    pub means: Vec<f64>,
    pub diffs: Vec<f64>,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Agreement data for two measurements of the same rows: per-row means and
/// differences plus the mean-difference line and its +/- 2 sd limits.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::validation("bland_altman needs length >= 2".to_string()));
    }
    let means: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let sd_diff =
        (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BlandAltman {
        means,
        diffs,
        mean_diff,
        sd_diff,
        lower: mean_diff - 2.0 * sd_diff,
        upper: mean_diff + 2.0 * sd_diff,
    })
}

/// Point estimates and normal-theory intervals from one analysis.
#[derive(Debug, Clone)]
pub struct AnalysisFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionCompareRow {
    pub name: String,
    pub obs_est: f64,
    pub obs_lo: f64,
    pub obs_hi: f64,
    pub mi_est: f64,
    pub mi_lo: f64,
    pub mi_hi: f64,
    pub hd_est: f64,
    pub hd_lo: f64,
    pub hd_hi: f64,
    /// total MI variance / hot-deck variance
    pub overall_var_ratio: f64,
    /// mean within-imputation MI variance / hot-deck variance
    pub within_var_ratio: f64,
}

/// Three-way comparison of one regression: complete-case fit, pooled MI
/// fit, and the single hot-deck fit, with MI/HD variance ratios.
pub fn regression_compare(
    obs: &AnalysisFit,
    mi: &[PooledCoefficient],
    hd: &AnalysisFit,
) -> Result<Vec<RegressionCompareRow>> {
    let p = obs.names.len();
    if obs.coefficients.len() != p
        || mi.len() != p
        || hd.names.len() != p
        || hd.coefficients.len() != p
    {
        return Err(Error::validation(
            "regression_compare: formula/coefficient layout mismatch".to_string(),
        ));
    }
    let z = crate::inference::t_quantile(f64::INFINITY, 0.95);
    Ok((0..p)
        .map(|j| {
            let hd_var = hd.std_errors[j].powi(2);
            RegressionCompareRow {
                name: obs.names[j].clone(),
                obs_est: obs.coefficients[j],
                obs_lo: obs.coefficients[j] - z * obs.std_errors[j],
                obs_hi: obs.coefficients[j] + z * obs.std_errors[j],
                mi_est: mi[j].pooled.q_bar,
                mi_lo: mi[j].ci_lo,
                mi_hi: mi[j].ci_hi,
                hd_est: hd.coefficients[j],
                hd_lo: hd.coefficients[j] - z * hd.std_errors[j],
                hd_hi: hd.coefficients[j] + z * hd.std_errors[j],
                overall_var_ratio: mi[j].pooled.t / hd_var,
                within_var_ratio: mi[j].pooled.w / hd_var,
            }
        })
        .collect())
}

/// Fit the analysis regression `outcome ~ predictors` on one completed
/// table (all rows, structural zeros included, declared transforms
/// applied). Categorical predictors expand to reference-coded dummies.
pub fn completed_regression(
    ds: &Dataset,
    table: &CompletedTable,
    outcome: usize,
    predictors: &[usize],
) -> Result<AnalysisFit> {
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    regression_on_rows(ds, &table.columns, outcome, predictors, &rows, false)
}

/// Complete-case analysis on the original data: only rows where the
/// outcome is observed and no predictor is missing.
pub fn complete_case_regression(
    ds: &Dataset,
    outcome: usize,
    predictors: &[usize],
) -> Result<AnalysisFit> {
    let rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| ds.cell(r, outcome).is_observed())
        .filter(|&r| !predictors.iter().any(|&p| ds.cell(r, p).is_missing()))
        .collect();
    regression_on_rows(ds, ds.columns(), outcome, predictors, &rows, true)
}

fn regression_on_rows(
    ds: &Dataset,
    columns: &[crate::data_model::ColumnData],
    outcome: usize,
    predictors: &[usize],
    rows: &[usize],
    observed_only: bool,
) -> Result<AnalysisFit> {
    let transform = ds.variables()[outcome].transform;
    let y: Result<Vec<f64>> = rows
        .iter()
        .map(|&r| {
            let v = if observed_only {
                columns[outcome].cells[r]
                    .value()
                    .expect("row filter keeps observed outcomes")
            } else {
                columns[outcome].cells[r].value().unwrap_or(0.0)
            };
            transform.apply(v)
        })
        .collect();
    let y = y?;
    let pool = crate::selection::expand_dummies(ds.variables(), columns, predictors);
    let p = pool.len() + 1;
    if rows.len() <= p {
        return Err(Error::numeric(format!(
            "analysis regression needs more than {p} rows, got {}",
            rows.len()
        )));
    }
    let x = nalgebra::DMatrix::from_fn(rows.len(), p, |i, j| {
        if j == 0 {
            1.0
        } else {
            pool[j - 1].values[rows[i]]
        }
    });
    let fit = crate::regressors::fit_linear(&x, &nalgebra::DVector::from_vec(y))?;
    let se = fit.std_errors();
    let mut names = vec!["intercept".to_string()];
    names.extend(pool.iter().map(|c| c.label.clone()));
    Ok(AnalysisFit {
        names,
        coefficients: fit.beta_hat.iter().copied().collect(),
        std_errors: se.iter().copied().collect(),
    })
}

/// The full report payload; optional sections are skipped when absent.
#[derive(Debug, Default)]
pub struct DiagnosticsReport {
    pub summary: Option<(String, Vec<SummaryRow>)>,
    pub fmi: Vec<FmiRow>,
    pub indicator_props: Vec<IndicatorPropsRow>,
    pub correlations: Option<CorrCompare>,
    pub bland_altman: Option<(String, BlandAltman)>,
    pub regression: Option<Vec<RegressionCompareRow>>,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

impl DiagnosticsReport {
    /// Write the report directory: one CSV per diagnostic plus the
    /// manifest.
    pub fn write(&self, dir: impl AsRef<Path>, mut manifest: RunManifest) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        if let Some((variable, rows)) = &self.summary {
            let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
            w.write_record(["variable", "statistic", "obs", "com", "rel_diff"])?;
            for r in rows {
                w.write_record([
                    variable.clone(),
                    r.statistic.clone(),
                    fmt(r.obs),
                    fmt(r.com),
                    fmt_opt(r.rel_diff),
                ])?;
            }
            w.flush()?;
        }

        let mut w = csv::Writer::from_path(dir.join("fmi.csv"))?;
        w.write_record(["variable", "q_bar", "w", "b", "t", "fmi", "df"])?;
        for r in &self.fmi {
            w.write_record([
                r.variable.clone(),
                fmt(r.pooled.q_bar),
                fmt(r.pooled.w),
                fmt(r.pooled.b),
                fmt(r.pooled.t),
                fmt(r.pooled.fmi),
                fmt(r.pooled.df),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("indicator_props.csv"))?;
        w.write_record([
            "variable",
            "fmi_amount",
            "fmi_indicator",
            "prop_positive_obs",
            "prop_positive_imp",
            "n_missing_indicators",
            "alert",
        ])?;
        for r in &self.indicator_props {
            w.write_record([
                r.variable.clone(),
                fmt(r.fmi_amount),
                fmt(r.fmi_indicator),
                fmt(r.prop_positive_obs),
                fmt_opt(r.prop_positive_imp),
                r.n_missing_indicators.to_string(),
                (r.alert as u8).to_string(),
            ])?;
        }
        w.flush()?;

        if let Some(cc) = &self.correlations {
            for (name, matrix) in [("corr_method_a.csv", &cc.corr_a), ("corr_method_b.csv", &cc.corr_b)]
            {
                let mut w = csv::Writer::from_path(dir.join(name))?;
                w.write_record(["var_i", "var_j", "r"])?;
                for i in 0..cc.labels.len() {
                    for j in 0..i {
                        w.write_record([
                            cc.labels[i].clone(),
                            cc.labels[j].clone(),
                            fmt(matrix[i][j]),
                        ])?;
                    }
                }
                w.flush()?;
            }
            let mut w = csv::Writer::from_path(dir.join("corr_scatter.csv"))?;
            w.write_record(["var_i", "var_j", "r_method_b", "r_method_a"])?;
            for (i, j, rb, ra) in &cc.scatter {
                w.write_record([i.clone(), j.clone(), fmt(*rb), fmt(*ra)])?;
            }
            w.flush()?;
        }

        if let Some((variable, ba)) = &self.bland_altman {
            let mut w = csv::Writer::from_path(dir.join("bland_altman.csv"))?;
            w.write_record(["mean", "diff"])?;
            for (m, d) in ba.means.iter().zip(&ba.diffs) {
                w.write_record([fmt(*m), fmt(*d)])?;
            }
            w.flush()?;
            manifest.notes.push(format!(
                "bland_altman[{variable}]: mean_diff={}, lower={}, upper={}, sd_diff={}",
                ba.mean_diff, ba.lower, ba.upper, ba.sd_diff
            ));
        }

        if let Some(rows) = &self.regression {
            let mut w = csv::Writer::from_path(dir.join("regression_compare.csv"))?;
            w.write_record([
                "coefficient",
                "obs_est",
                "obs_lo",
                "obs_hi",
                "mi_est",
                "mi_lo",
                "mi_hi",
                "hd_est",
                "hd_lo",
                "hd_hi",
                "overall_var_ratio",
                "within_var_ratio",
            ])?;
            for r in rows {
                w.write_record([
                    r.name.clone(),
                    fmt(r.obs_est),
                    fmt(r.obs_lo),
                    fmt(r.obs_hi),
                    fmt(r.mi_est),
                    fmt(r.mi_lo),
                    fmt(r.mi_hi),
                    fmt(r.hd_est),
                    fmt(r.hd_lo),
                    fmt(r.hd_hi),
                    fmt(r.overall_var_ratio),
                    fmt(r.within_var_ratio),
                ])?;
            }
            w.flush()?;
        }

        manifest
            .notes
            .push("correlation matrices are plain averages over the M tables".to_string());
        manifest.write(dir.join("manifest.json"))?;
        Ok(())
    }
}
