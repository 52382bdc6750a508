//! Regression fits and posterior-predictive draws.
//!
//! Linear models are fit by QR and draws follow the flat-prior Bayesian
//! scheme: sigma^2 from the scaled inverse chi-square, coefficients from
//! Normal(beta_hat, sigma^2 (X'X)^-1), then the response from the normal
//! predictive, truncated to the cell's bracket when one exists. GLM draws
//! approximate the parameter posterior by the asymptotic normal at the MLE.

mod glm;
mod truncnorm;

pub use glm::{draw_glm_predictive, fit_glm, GlmFamily, GlmFit, GlmParams};
pub use truncnorm::{sample_truncated_normal, TruncatedDraw, NEGLIGIBLE_MASS};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floor applied to the residual sum of squares so degenerate (zero
/// residual) fits still yield a proper, near-point-mass predictive.
const RSS_FLOOR: f64 = 1e-9;

/// A fitted normal linear regression with the pieces needed for
/// posterior-predictive draws under a flat prior.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub beta_hat: DVector<f64>,
    /// Upper-triangular U with (X'X)^-1 = U U'.
    pub xtx_inv_factor: DMatrix<f64>,
    pub rss: f64,
    pub n: usize,
    pub p: usize,
}

/// One joint draw of (beta, sigma) from the flat-prior posterior.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub beta: DVector<f64>,
    pub sigma: f64,
}

/// Least squares via Householder QR. `x` must include the intercept column
/// and be full rank after collinearity screening.
pub fn fit_linear(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n != y.len() {
        return Err(Error::validation(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(Error::numeric(format!(
            "linear fit needs n > p, got n={n}, p={p}"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    // A collapsed diagonal after screening indicates a screening bug.
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..p {
        if r[(i, i)].abs() <= 1e-10 * max_diag.max(1e-300) {
            return Err(Error::numeric(
                "rank-deficient design after screening".to_string(),
            ));
        }
    }
    let q = qr.q();
    let qty = q.transpose() * y;
    let beta_hat = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::numeric("singular triangular solve".to_string()))?;
    let resid = y - x * &beta_hat;
    let rss = resid.norm_squared();
    // U = R^-1 (upper triangular), so U U' = (X'X)^-1.
    let xtx_inv_factor = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::numeric("singular triangular solve".to_string()))?;
    Ok(LinearFit {
        beta_hat,
        xtx_inv_factor,
        rss,
        n,
        p,
    })
}

impl LinearFit {
    pub fn dof(&self) -> usize {
        self.n - self.p
    }

    /// sigma^2 hat = rss / (n - p).
    pub fn sigma2_hat(&self) -> f64 {
        self.rss / self.dof() as f64
    }

    /// (X'X)^-1 reconstructed from its triangular factor.
    pub fn xtx_inv(&self) -> DMatrix<f64> {
        &self.xtx_inv_factor * self.xtx_inv_factor.transpose()
    }

    /// Classical standard errors sqrt(sigma2_hat * diag((X'X)^-1)).
    pub fn std_errors(&self) -> DVector<f64> {
        let s2 = self.sigma2_hat();
        let inv = self.xtx_inv();
        DVector::from_iterator(self.p, (0..self.p).map(|j| (s2 * inv[(j, j)]).sqrt()))
    }

    /// Draw (sigma, beta): sigma^2 = rss / chi2_{n-p}, then
    /// beta ~ Normal(beta_hat, sigma^2 (X'X)^-1).
    pub fn draw_params(&self, rng: &mut impl Rng) -> LinearParams {
        let dof = self.dof() as f64;
        let chi2 = ChiSquared::new(dof).expect("dof >= 1").sample(rng);
        let sigma2 = self.rss.max(RSS_FLOOR) / chi2.max(1e-300);
        let sigma = sigma2.sqrt();
        let z = DVector::from_iterator(
            self.p,
            (0..self.p).map(|_| {
                let s: f64 = StandardNormal.sample(rng);
                s
            }),
        );
        let beta = &self.beta_hat + (&self.xtx_inv_factor * z) * sigma;
        LinearParams { beta, sigma }
    }
}

impl LinearParams {
    /// Predictive draw for one covariate row, truncated to `bounds` on this
    /// (model) scale when given.
    pub fn draw_response(
        &self,
        x_new: &DVector<f64>,
        bounds: Option<(f64, f64)>,
        rng: &mut impl Rng,
    ) -> TruncatedDraw {
        let mu = self.beta.dot(x_new);
        match bounds {
            None => {
                let z: f64 = StandardNormal.sample(rng);
                TruncatedDraw {
                    value: mu + self.sigma * z,
                    clamped: false,
                }
            }
            Some((lo, hi)) => sample_truncated_normal(mu, self.sigma, lo, hi, rng),
        }
    }
}

/// One-shot posterior-predictive draw: parameters then response.
pub fn draw_linear_predictive(
    fit: &LinearFit,
    x_new: &DVector<f64>,
    bounds: Option<(f64, f64)>,
    rng: &mut impl Rng,
) -> Result<TruncatedDraw> {
    if fit.n <= fit.p {
        return Err(Error::numeric("predictive draw needs n - p >= 1".to_string()));
    }
    if let Some((lo, hi)) = bounds {
        if lo > hi {
            return Err(Error::validation(format!("empty bounds [{lo}, {hi}]")));
        }
    }
    Ok(fit.draw_params(rng).draw_response(x_new, bounds, rng))
}
