//! Plain (fixed-effects) logistic regression via iteratively reweighted
//! least squares. Used for starting values of the mixed fit and as the
//! reduction target when the random-effect variance is forced to zero.

use super::linalg::{chol_inverse, chol_solve, cholesky};
use super::GlmmError;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
pub(crate) fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of a coefficient vector on a row-major design.
pub(crate) fn logistic_log_likelihood(x: &[f64], y: &[f64], p: usize, beta: &[f64]) -> f64 {
    let n = y.len();
    let mut ll = 0.0;
    for i in 0..n {
        let eta: f64 = (0..p).map(|j| x[i * p + j] * beta[j]).sum();
        ll += y[i] * eta - log1p_exp(eta);
    }
    ll
}

/// IRLS fit of y on the row-major design `x` with `p` columns.
///
/// Divergence of any coefficient beyond |30| is reported as separation
/// (monotone likelihood) rather than ground out at max iterations.
pub fn fit_logistic(x: &[f64], y: &[f64], p: usize) -> Result<LogisticFit, GlmmError> {
    let n = y.len();
    assert_eq!(x.len(), n * p, "design shape mismatch");
    if n == 0 {
        return Err(GlmmError::EmptyDesign);
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(GlmmError::DegenerateResponse);
    }

    let mut beta = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    for iter in 1..=60 {
        // accumulate X'WX and X'W z (z the working response)
        info.iter_mut().for_each(|v| *v = 0.0);
        let mut score = vec![0.0; p];
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            let eta: f64 = row.iter().zip(&beta).map(|(xi, b)| xi * b).sum();
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let z = eta + (y[i] - mu) / w;
            for a in 0..p {
                score[a] += row[a] * w * z;
                for b in 0..=a {
                    info[a * p + b] += row[a] * w * row[b];
                }
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                info[a * p + b] = info[b * p + a];
            }
        }
        let l = cholesky(&info, p).ok_or(GlmmError::SingularInformation)?;
        let new_beta = chol_solve(&l, p, &score);
        let delta = new_beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = new_beta;
        if let Some(j) = beta.iter().position(|b| b.abs() > 30.0) {
            return Err(GlmmError::Separation { column: j });
        }
        if delta < 1e-10 {
            let inv = chol_inverse(&l, p);
            let standard_errors = (0..p).map(|j| inv[j * p + j].sqrt()).collect();
            return Ok(LogisticFit {
                log_likelihood: logistic_log_likelihood(x, y, p, &beta),
                coefficients: beta,
                standard_errors,
                iterations: iter,
            });
        }
    }
    Err(GlmmError::NonConvergence {
        iterations: 60,
        gradient_norm: f64::NAN,
    })
}
