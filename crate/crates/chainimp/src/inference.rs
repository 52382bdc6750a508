//! Combining rules over M completed-data analyses: pooled point estimates,
//! within/between variance decomposition, reference degrees of freedom, and
//! the fraction of missing information.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Pooled inference for one scalar estimand across M completed datasets.
///
/// Identities: `t = w + (1 + 1/m) b`, `fmi = (1 + 1/m) b / t`, and
/// `df = (m - 1) (1 + w / ((1 + 1/m) b))^2`, with `df = +inf` and
/// `fmi = 0` when the estimates agree exactly (b = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub q_bar: f64,
    pub w: f64,
    pub b: f64,
    pub t: f64,
    pub fmi: f64,
    pub df: f64,
    pub m: usize,
}

/// Pool per-dataset point estimates and their squared standard errors.
pub fn pool_scalar(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::validation(format!(
            "pooling needs at least 2 imputations, got {m}"
        )));
    }
    if variances.len() != m {
        return Err(Error::validation(format!(
            "{m} estimates but {} variances",
            variances.len()
        )));
    }
    if let Some(v) = variances.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::validation(format!("invalid variance {v}")));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().sum::<f64>() / mf;
    let w = variances.iter().sum::<f64>() / mf;
    let b = estimates.iter().map(|q| (q - q_bar).powi(2)).sum::<f64>() / (mf - 1.0);
    let inflation = 1.0 + 1.0 / mf;
    let t = w + inflation * b;
    let (fmi, df) = if b > 0.0 && t > 0.0 {
        (
            inflation * b / t,
            (mf - 1.0) * (1.0 + w / (inflation * b)).powi(2),
        )
    } else {
        (0.0, f64::INFINITY)
    };
    Ok(PooledEstimate {
        q_bar,
        w,
        b,
        t,
        fmi,
        df,
        m,
    })
}

/// Two-sided t quantile for the pooled reference distribution; infinite df
/// degrades to the normal quantile.
pub fn t_quantile(df: f64, level: f64) -> f64 {
    let p = 1.0 - (1.0 - level) / 2.0;
    if !df.is_finite() || df > 1e7 {
        Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
    } else {
        StudentsT::new(0.0, 1.0, df.max(1.0)).unwrap().inverse_cdf(p)
    }
}

impl PooledEstimate {
    /// Symmetric interval `q_bar +/- t_{df} * sqrt(t)` at the given level.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let half = t_quantile(self.df, level) * self.t.sqrt();
        (self.q_bar - half, self.q_bar + half)
    }
}

/// Coefficients and standard errors from one completed-data regression.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// One pooled regression coefficient with its 95% interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PooledCoefficient {
    pub pooled: PooledEstimate,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Coordinate-wise pooling of M regression fits with matching layouts.
pub fn pool_regression(fits: &[FitSummary]) -> Result<Vec<PooledCoefficient>> {
    let m = fits.len();
    if m < 2 {
        return Err(Error::validation(format!(
            "pooling needs at least 2 fits, got {m}"
        )));
    }
    let p = fits[0].coefficients.len();
    for (i, fit) in fits.iter().enumerate() {
        if fit.coefficients.len() != p || fit.std_errors.len() != p {
            return Err(Error::validation(format!(
                "fit {i} has a different coefficient layout ({} vs {p})",
                fit.coefficients.len()
            )));
        }
    }
    (0..p)
        .map(|j| {
            let estimates: Vec<f64> = fits.iter().map(|f| f.coefficients[j]).collect();
            let variances: Vec<f64> = fits.iter().map(|f| f.std_errors[j].powi(2)).collect();
            let pooled = pool_scalar(&estimates, &variances)?;
            let (ci_lo, ci_hi) = pooled.interval(0.95);
            Ok(PooledCoefficient { pooled, ci_lo, ci_hi })
        })
        .collect()
}
