//! Generalized linear model fits via iteratively reweighted least squares
//! (Newton-Raphson with canonical links) and asymptotic-normal parameter
//! draws for imputation.
//!
//! Multinomial outcomes are fit as K-1 baseline-category logits (last level
//! is the baseline) with the full stacked information matrix. Separation is
//! detected by diverging coefficients and handled with a weak ridge penalty
//! on non-intercept terms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 50;
/// Ridge penalty applied to non-intercept terms on the separation fallback.
const RIDGE_LAMBDA: f64 = 1e-4;
/// Linear predictors are clamped here before link inversion.
const LINPRED_CLAMP: f64 = 30.0;
/// A fitted |linear predictor| beyond this marks a saturated (separated)
/// fit. Unlike a coefficient bound, this is invariant to covariate scale.
const ETA_SEPARATION: f64 = 25.0;
/// Runaway-coefficient bail-out inside the unpenalized iteration.
const RUNAWAY_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlmFamily {
    Bernoulli,
    /// K response categories, fit as K-1 logits against the last category.
    Multinomial(usize),
    Poisson,
}

impl GlmFamily {
    /// Number of stacked equations.
    fn equations(&self) -> usize {
        match self {
            GlmFamily::Multinomial(k) => k - 1,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    /// MLE coefficients, stacked `[eq0 | eq1 | ...]` for multinomial.
    pub beta_hat: DVector<f64>,
    /// Inverse observed information at the MLE.
    pub cov_hat: DMatrix<f64>,
    pub family: GlmFamily,
    pub converged: bool,
    pub iterations: usize,
    pub ridge_fallback: bool,
    /// Columns per equation.
    pub p: usize,
    /// Lower Cholesky factor of cov_hat, for parameter draws.
    cov_chol: DMatrix<f64>,
}

/// One asymptotic-normal draw of the GLM coefficients.
#[derive(Debug, Clone)]
pub struct GlmParams {
    pub beta: DVector<f64>,
    pub family: GlmFamily,
    pub p: usize,
}

pub(crate) fn expit(eta: f64) -> f64 {
    let e = eta.clamp(-LINPRED_CLAMP, LINPRED_CLAMP);
    1.0 / (1.0 + (-e).exp())
}

fn validate_response(y: &DVector<f64>, family: GlmFamily) -> Result<()> {
    for &v in y.iter() {
        let ok = match family {
            GlmFamily::Bernoulli => v == 0.0 || v == 1.0,
            GlmFamily::Poisson => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
            GlmFamily::Multinomial(k) => v >= 0.0 && v.fract() == 0.0 && v < k as f64,
        };
        if !ok {
            return Err(Error::validation(format!(
                "response value {v} outside the {family:?} support"
            )));
        }
    }
    Ok(())
}

/// Fit by IRLS; on separation or non-convergence retry once with the ridge
/// penalty. `x` must include an intercept as its first column.
pub fn fit_glm(x: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily) -> Result<GlmFit> {
    if x.nrows() != y.len() {
        return Err(Error::validation(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("empty design".to_string()));
    }
    if let GlmFamily::Multinomial(k) = family {
        if k < 2 {
            return Err(Error::validation("multinomial needs K >= 2".to_string()));
        }
    }
    validate_response(y, family)?;

    match irls(x, y, family, 0.0) {
        Ok(state)
            if state.converged
                && state.beta.iter().all(|b| b.is_finite())
                && max_abs_eta(x, &state.beta, family) <= ETA_SEPARATION =>
        {
            finish(x, y, family, state, false)
        }
        _ => {
            let state = irls(x, y, family, RIDGE_LAMBDA)?;
            if !state.converged {
                return Err(Error::numeric(format!(
                    "{family:?} fit did not converge in {MAX_ITERATIONS} iterations (ridge fallback)"
                )));
            }
            finish(x, y, family, state, true)
        }
    }
}

/// Largest |linear predictor| over rows and equations at `beta`.
fn max_abs_eta(x: &DMatrix<f64>, beta: &DVector<f64>, family: GlmFamily) -> f64 {
    let p = x.ncols();
    let eqs = family.equations();
    let mut max = 0.0f64;
    for i in 0..x.nrows() {
        for e in 0..eqs {
            let mut eta = 0.0;
            for j in 0..p {
                eta += x[(i, j)] * beta[e * p + j];
            }
            max = max.max(eta.abs());
        }
    }
    max
}

struct IrlsState {
    beta: DVector<f64>,
    converged: bool,
    iterations: usize,
    lambda: f64,
}

/// Penalty matrix: lambda on every non-intercept coordinate of each equation.
fn penalty_diag(p: usize, equations: usize, lambda: f64) -> DVector<f64> {
    DVector::from_fn(p * equations, |i, _| {
        if i % p == 0 {
            0.0
        } else {
            lambda
        }
    })
}

fn irls(x: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily, lambda: f64) -> Result<IrlsState> {
    let p = x.ncols();
    let eqs = family.equations();
    let dim = p * eqs;
    let penalty = penalty_diag(p, eqs, lambda);
    let mut beta = DVector::zeros(dim);
    let mut loglik = penalized_loglik(x, y, &beta, family, &penalty);
    // Tolerance scaled by the row count: the score is a sum of n terms.
    let tol = 1e-8 * (x.nrows() as f64).max(1.0);

    for iter in 1..=MAX_ITERATIONS {
        let (score, info) = score_and_info(x, y, &beta, family, &penalty);
        if score.norm() < tol {
            return Ok(IrlsState {
                beta,
                converged: true,
                iterations: iter - 1,
                lambda,
            });
        }
        let step = solve_spd(&info, &score)?;
        // Step-halving keeps Newton from overshooting on near-separated data.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let candidate = &beta + &step * scale;
            let cand_ll = penalized_loglik(x, y, &candidate, family, &penalty);
            if cand_ll.is_finite() && cand_ll >= loglik - 1e-12 {
                beta = candidate;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent direction left; treat as converged-as-far-as-possible.
            let (score, _) = score_and_info(x, y, &beta, family, &penalty);
            return Ok(IrlsState {
                beta,
                converged: score.norm() < tol,
                iterations: iter,
                lambda,
            });
        }
        if !beta.iter().all(|b| b.is_finite()) || (lambda == 0.0 && beta.amax() > RUNAWAY_LIMIT) {
            return Ok(IrlsState {
                beta,
                converged: false,
                iterations: iter,
                lambda,
            });
        }
    }
    let (score, _) = score_and_info(x, y, &beta, family, &penalty);
    Ok(IrlsState {
        beta,
        converged: score.norm() < tol,
        iterations: MAX_ITERATIONS,
        lambda,
    })
}

fn finish(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    state: IrlsState,
    ridge_fallback: bool,
) -> Result<GlmFit> {
    let penalty = penalty_diag(x.ncols(), family.equations(), state.lambda);
    let (_, info) = score_and_info(x, y, &state.beta, family, &penalty);
    let dim = info.nrows();
    let cov_hat = info
        .clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| (info + DMatrix::identity(dim, dim) * 1e-10).cholesky().map(|ch| ch.inverse()))
        .ok_or_else(|| Error::numeric("information matrix not positive definite".to_string()))?;
    let cov_chol = cov_hat
        .clone()
        .cholesky()
        .map(|ch| ch.l())
        .or_else(|| {
            (cov_hat.clone() + DMatrix::identity(dim, dim) * 1e-12)
                .cholesky()
                .map(|ch| ch.l())
        })
        .ok_or_else(|| Error::numeric("covariance not positive definite".to_string()))?;
    Ok(GlmFit {
        beta_hat: state.beta,
        cov_hat,
        family,
        converged: state.converged,
        iterations: state.iterations,
        ridge_fallback,
        p: x.ncols(),
        cov_chol,
    })
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    a.clone()
        .cholesky()
        .map(|ch| ch.solve(b))
        .or_else(|| {
            (a + DMatrix::identity(n, n) * 1e-10)
                .cholesky()
                .map(|ch| ch.solve(b))
        })
        .ok_or_else(|| Error::numeric("singular information matrix".to_string()))
}

/// Per-equation category probabilities for the multinomial at `beta`.
fn multinomial_probs(x_row: impl Fn(usize) -> f64, beta: &DVector<f64>, p: usize, eqs: usize) -> Vec<f64> {
    // probs[0..eqs] for the non-baseline categories; baseline mass implied.
    let mut etas = Vec::with_capacity(eqs);
    for e in 0..eqs {
        let mut eta = 0.0;
        for j in 0..p {
            eta += x_row(j) * beta[e * p + j];
        }
        etas.push(eta.clamp(-LINPRED_CLAMP, LINPRED_CLAMP));
    }
    let max_eta = etas.iter().cloned().fold(0.0f64, f64::max); // baseline eta = 0
    let mut denom = (0.0f64 - max_eta).exp();
    let mut exps = Vec::with_capacity(eqs);
    for &eta in &etas {
        let v = (eta - max_eta).exp();
        denom += v;
        exps.push(v);
    }
    exps.into_iter().map(|v| v / denom).collect()
}

fn penalized_loglik(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    family: GlmFamily,
    penalty: &DVector<f64>,
) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let mut ll = 0.0;
    match family {
        GlmFamily::Bernoulli => {
            for i in 0..n {
                let mut eta = 0.0;
                for j in 0..p {
                    eta += x[(i, j)] * beta[j];
                }
                let eta = eta.clamp(-LINPRED_CLAMP, LINPRED_CLAMP);
                ll += y[i] * eta - (1.0 + eta.exp()).ln();
            }
        }
        GlmFamily::Poisson => {
            for i in 0..n {
                let mut eta = 0.0;
                for j in 0..p {
                    eta += x[(i, j)] * beta[j];
                }
                let eta = eta.clamp(-LINPRED_CLAMP, LINPRED_CLAMP);
                ll += y[i] * eta - eta.exp();
            }
        }
        GlmFamily::Multinomial(_) => {
            let eqs = family.equations();
            for i in 0..n {
                let probs = multinomial_probs(|j| x[(i, j)], beta, p, eqs);
                let baseline = (1.0 - probs.iter().sum::<f64>()).max(1e-300);
                let cat = y[i] as usize;
                let prob = if cat == eqs { baseline } else { probs[cat].max(1e-300) };
                ll += prob.ln();
            }
        }
    }
    let mut pen = 0.0;
    for i in 0..beta.len() {
        pen += penalty[i] * beta[i] * beta[i];
    }
    ll - 0.5 * pen
}

/// Penalized score vector and observed information at `beta`.
fn score_and_info(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    family: GlmFamily,
    penalty: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let eqs = family.equations();
    let dim = p * eqs;
    let mut score = DVector::zeros(dim);
    let mut info = DMatrix::zeros(dim, dim);

    match family {
        GlmFamily::Bernoulli | GlmFamily::Poisson => {
            for i in 0..n {
                let mut eta = 0.0;
                for j in 0..p {
                    eta += x[(i, j)] * beta[j];
                }
                let (mu, w) = match family {
                    GlmFamily::Bernoulli => {
                        let m = expit(eta);
                        (m, (m * (1.0 - m)).max(1e-10))
                    }
                    _ => {
                        let m = eta.clamp(-LINPRED_CLAMP, LINPRED_CLAMP).exp();
                        (m, m.max(1e-10))
                    }
                };
                let resid = y[i] - mu;
                for j in 0..p {
                    score[j] += x[(i, j)] * resid;
                    for k in j..p {
                        info[(j, k)] += w * x[(i, j)] * x[(i, k)];
                    }
                }
            }
            for j in 0..p {
                for k in 0..j {
                    info[(j, k)] = info[(k, j)];
                }
            }
        }
        GlmFamily::Multinomial(_) => {
            for i in 0..n {
                let probs = multinomial_probs(|j| x[(i, j)], beta, p, eqs);
                let cat = y[i] as usize;
                for e in 0..eqs {
                    let ind = if cat == e { 1.0 } else { 0.0 };
                    let resid = ind - probs[e];
                    for j in 0..p {
                        score[e * p + j] += x[(i, j)] * resid;
                    }
                    for f in e..eqs {
                        let w = if e == f {
                            (probs[e] * (1.0 - probs[e])).max(1e-10)
                        } else {
                            -probs[e] * probs[f]
                        };
                        for j in 0..p {
                            for k in 0..p {
                                info[(e * p + j, f * p + k)] += w * x[(i, j)] * x[(i, k)];
                            }
                        }
                    }
                }
            }
            // mirror the block-upper triangle
            for e in 0..eqs {
                for f in 0..e {
                    for j in 0..p {
                        for k in 0..p {
                            info[(e * p + j, f * p + k)] = info[(f * p + k, e * p + j)];
                        }
                    }
                }
            }
        }
    }
    for i in 0..dim {
        score[i] -= penalty[i] * beta[i];
        info[(i, i)] += penalty[i];
    }
    (score, info)
}

impl GlmFit {
    /// beta* ~ Normal(beta_hat, cov_hat).
    pub fn draw_params(&self, rng: &mut impl Rng) -> GlmParams {
        let dim = self.beta_hat.len();
        let z = DVector::from_iterator(dim, (0..dim).map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            s
        }));
        GlmParams {
            beta: &self.beta_hat + &self.cov_chol * z,
            family: self.family,
            p: self.p,
        }
    }
}

impl GlmParams {
    /// Predictive draw: a 0/1 indicator, a category index, or a count.
    pub fn draw_response(&self, x_new: &DVector<f64>, rng: &mut impl Rng) -> f64 {
        match self.family {
            GlmFamily::Bernoulli => {
                let eta = self.beta.dot(x_new);
                let prob = expit(eta);
                if rng.gen_range(0.0..1.0) < prob {
                    1.0
                } else {
                    0.0
                }
            }
            GlmFamily::Poisson => {
                let eta = self.beta.dot(x_new).clamp(-LINPRED_CLAMP, LINPRED_CLAMP);
                let lambda = eta.exp().max(1e-300);
                Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
            }
            GlmFamily::Multinomial(k) => {
                let eqs = k - 1;
                let probs = multinomial_probs(|j| x_new[j], &self.beta, self.p, eqs);
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                for (cat, &pr) in probs.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        return cat as f64;
                    }
                }
                (k - 1) as f64
            }
        }
    }
}

/// One-shot asymptotic posterior-predictive draw.
pub fn draw_glm_predictive(fit: &GlmFit, x_new: &DVector<f64>, rng: &mut impl Rng) -> f64 {
    fit.draw_params(rng).draw_response(x_new, rng)
}
