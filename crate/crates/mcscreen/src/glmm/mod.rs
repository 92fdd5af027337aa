//! Random-intercept logistic regression: correctness predicted by
//! correct-answer position, condition, and their interaction, with one
//! Gaussian random intercept per item.
//!
//! The marginal likelihood integrates the per-item random effect with
//! adaptive Gauss-Hermite quadrature: a Newton inner step locates each
//! item's posterior mode and curvature, the quadrature rule is centred and
//! scaled there, and a quasi-Newton outer loop maximises the result over the
//! fixed effects and the log random-effect standard deviation. Gradients of
//! the quadrature objective are exact (implicit differentiation through the
//! mode and scale), so tight convergence tolerances are meaningful. Standard
//! errors come from the inverse of the observed information at the optimum.
//!
//! Position is coded 0-9, uncentered; the reference condition contributes no
//! dummy. Per-item work parallelises across items, with a fixed sequential
//! reduction so results are identical for any thread count.

mod linalg;
pub mod logistic;
pub mod quad;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Cell;
use crate::stats;

pub use logistic::{fit_logistic, LogisticFit};
pub use quad::GaussHermite;

use logistic::{log1p_exp, sigmoid};

#[derive(Debug, Error)]
pub enum GlmmError {
    #[error("reference condition {0:?} not among the supplied cells")]
    ReferenceMissing(String),
    #[error("empty design (no parsed responses)")]
    EmptyDesign,
    #[error("response is single-class; model is degenerate")]
    DegenerateResponse,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("complete separation suspected in column {column}")]
    Separation { column: usize },
    #[error("did not converge in {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("fit did not converge; summary unavailable")]
    Unconverged,
}

/// Design matrix for the position x condition model, rows grouped by item.
#[derive(Debug, Clone)]
pub struct GlmmDesign {
    /// Row-major fixed-effect matrix, `n_rows x n_cols`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_items: usize,
    /// Row ranges per item: rows of item `g` are `item_starts[g]..item_starts[g+1]`.
    pub item_starts: Vec<usize>,
    pub column_names: Vec<String>,
    pub reference_condition: String,
}

/// Builds one row per parsed response across all of one model's cells.
/// Columns: intercept, position, one dummy and one position interaction per
/// non-reference condition (sorted by label). Parse failures are omitted.
pub fn build_design(cells: &[&Cell], reference: &str) -> Result<GlmmDesign, GlmmError> {
    if !cells.iter().any(|c| c.condition == reference) {
        return Err(GlmmError::ReferenceMissing(reference.to_string()));
    }
    let mut others: Vec<String> = cells
        .iter()
        .map(|c| c.condition.clone())
        .filter(|c| c != reference)
        .collect();
    others.sort();
    others.dedup();

    let mut column_names = vec!["intercept".to_string(), "position".to_string()];
    column_names.extend(others.iter().map(|c| format!("cond:{c}")));
    column_names.extend(others.iter().map(|c| format!("position:{c}")));
    let n_cols = column_names.len();

    // deterministic item order regardless of input ordering
    let mut item_ids: Vec<&str> = cells
        .iter()
        .flat_map(|c| c.entries.iter().map(|e| e.item_id.as_str()))
        .collect();
    item_ids.sort();
    item_ids.dedup();

    let mut per_cell: Vec<(usize, BTreeMap<&str, (usize, bool)>)> = Vec::new();
    let mut cell_order: Vec<usize> = (0..cells.len()).collect();
    cell_order.sort_by(|&a, &b| {
        let ka = (cells[a].condition != reference, cells[a].condition.as_str());
        let kb = (cells[b].condition != reference, cells[b].condition.as_str());
        ka.cmp(&kb)
    });
    for &ci in &cell_order {
        let map: BTreeMap<&str, (usize, bool)> = cells[ci]
            .entries
            .iter()
            .filter_map(|e| {
                e.correct()
                    .map(|ok| (e.item_id.as_str(), (e.correct_position, ok)))
            })
            .collect();
        per_cell.push((ci, map));
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut item_starts = vec![0usize];
    for item in &item_ids {
        let mut any = false;
        for (ci, map) in &per_cell {
            if let Some(&(position, ok)) = map.get(item) {
                let condition = &cells[*ci].condition;
                let mut row = vec![0.0; n_cols];
                row[0] = 1.0;
                row[1] = position as f64;
                if condition != reference {
                    let k = others.iter().position(|c| c == condition).expect("known");
                    row[2 + k] = 1.0;
                    row[2 + others.len() + k] = position as f64;
                }
                x.extend_from_slice(&row);
                y.push(if ok { 1.0 } else { 0.0 });
                any = true;
            }
        }
        if any {
            item_starts.push(y.len());
        }
    }
    let n_rows = y.len();
    if n_rows == 0 {
        return Err(GlmmError::EmptyDesign);
    }
    let n_items = item_starts.len() - 1;
    Ok(GlmmDesign {
        x,
        y,
        n_rows,
        n_cols,
        n_items,
        item_starts,
        column_names,
        reference_condition: reference.to_string(),
    })
}

/// Whether the random-effect standard deviation is estimated or pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct GlmmOptions {
    pub quad_nodes: usize,
    pub max_iterations: usize,
    /// Relative marginal log-likelihood change below which the outer loop stops.
    pub rel_tolerance: f64,
    /// Gradient max-norm required at convergence.
    pub grad_tolerance: f64,
    pub sigma: SigmaMode,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        Self {
            quad_nodes: 10,
            max_iterations: 200,
            rel_tolerance: 1e-8,
            grad_tolerance: 1e-5,
            sigma: SigmaMode::Free,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlmmFit {
    pub coefficients: Vec<Coefficient>,
    /// Random-intercept standard deviation at the optimum.
    pub sigma: f64,
    pub sigma_se: Option<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub n_rows: usize,
    pub n_items: usize,
    pub quad_nodes: usize,
    /// Marginal log-likelihood at each accepted outer iterate (non-decreasing).
    pub log_likelihood_trace: Vec<f64>,
    /// Covariance of the fixed effects (row-major `n_cols x n_cols`); None
    /// when the observed information could not be inverted.
    pub covariance: Option<Vec<f64>>,
    pub estimator: String,
    pub position_coding: String,
}

// ---------------------------------------------------------------------------
// AGH objective: marginal log-likelihood and its exact gradient.
// ---------------------------------------------------------------------------

const LN_2PI: f64 = 1.8378770664093453;

struct ItemEval {
    ll: f64,
    /// d ll / d beta
    grad_beta: Vec<f64>,
    /// d ll / d sigma (not log sigma)
    grad_sigma: f64,
}

/// One item's AGH log-likelihood contribution and gradient.
fn item_agh(
    x: &[f64],
    y: &[f64],
    n_cols: usize,
    rows: std::ops::Range<usize>,
    beta: &[f64],
    sigma: f64,
    rule: &GaussHermite,
    want_grad: bool,
) -> ItemEval {
    let row_ids: Vec<usize> = rows.collect();
    // linear predictor at u = 0 is constant through the inner iteration
    let eta0: Vec<f64> = row_ids
        .iter()
        .map(|&i| {
            let row = &x[i * n_cols..(i + 1) * n_cols];
            row.iter().zip(beta).map(|(xi, b)| xi * b).sum()
        })
        .collect();
    let ys: Vec<f64> = row_ids.iter().map(|&i| y[i]).collect();

    // Newton for the mode of f(u) = sum_j [y eta - log(1+e^eta)] - u^2/2
    let mut u_hat = 0.0f64;
    for _ in 0..100 {
        let mut s1 = 0.0;
        let mut sw = 0.0;
        for (e0, yj) in eta0.iter().zip(&ys) {
            let p = sigmoid(e0 + sigma * u_hat);
            s1 += yj - p;
            sw += p * (1.0 - p);
        }
        let g1 = sigma * s1 - u_hat;
        let h = -(sigma * sigma * sw + 1.0);
        let step = g1 / h;
        u_hat -= step;
        if step.abs() < 1e-13 * (1.0 + u_hat.abs()) {
            break;
        }
    }

    // curvature and mode-level sums for the gradient
    let mut s1 = 0.0;
    let mut sw = 0.0;
    let mut sww = 0.0;
    let mut swx = vec![0.0; if want_grad { n_cols } else { 0 }];
    let mut swwx = vec![0.0; if want_grad { n_cols } else { 0 }];
    for (idx, (&row_i, e0)) in row_ids.iter().zip(&eta0).enumerate() {
        let p = sigmoid(e0 + sigma * u_hat);
        let w = p * (1.0 - p);
        s1 += ys[idx] - p;
        sw += w;
        if want_grad {
            let ww = w * (1.0 - 2.0 * p);
            sww += ww;
            let row = &x[row_i * n_cols..(row_i + 1) * n_cols];
            for (m, &xm) in row.iter().enumerate() {
                swx[m] += w * xm;
                swwx[m] += ww * xm;
            }
        }
    }
    let a = sigma * sigma * sw + 1.0; // -f''(u_hat)
    let tau = 1.0 / a.sqrt();
    let sq2t = std::f64::consts::SQRT_2 * tau;

    // total derivatives of the mode and of A = -f''
    let (du_dbeta, du_dsigma, da_dbeta, da_dsigma);
    if want_grad {
        // d u_hat / d theta = -(d f' / d theta) / f'' evaluated at the mode
        du_dbeta = swx.iter().map(|&sm| -sigma * sm / a).collect::<Vec<f64>>();
        du_dsigma = (s1 - sigma * u_hat * sw) / a;
        da_dbeta = (0..n_cols)
            .map(|m| sigma * sigma * swwx[m] + sigma.powi(3) * sww * du_dbeta[m])
            .collect::<Vec<f64>>();
        da_dsigma =
            2.0 * sigma * sw + sigma * sigma * sww * u_hat + sigma.powi(3) * sww * du_dsigma;
    } else {
        du_dbeta = Vec::new();
        du_dsigma = 0.0;
        da_dbeta = Vec::new();
        da_dsigma = 0.0;
    }

    // quadrature pass
    let n_nodes = rule.nodes.len();
    let mut log_terms = Vec::with_capacity(n_nodes);
    let mut node_df_beta = if want_grad {
        vec![0.0; n_nodes * n_cols]
    } else {
        Vec::new()
    };
    let mut node_df_sigma = vec![0.0; if want_grad { n_nodes } else { 0 }];
    let mut node_g1 = vec![0.0; if want_grad { n_nodes } else { 0 }];
    for (k, (&z, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let u = u_hat + sq2t * z;
        let mut f = -0.5 * u * u;
        let mut s1k = 0.0;
        for (idx, (&row_i, e0)) in row_ids.iter().zip(&eta0).enumerate() {
            let eta = e0 + sigma * u;
            f += ys[idx] * eta - log1p_exp(eta);
            if want_grad {
                let p = sigmoid(eta);
                let resid = ys[idx] - p;
                s1k += resid;
                let row = &x[row_i * n_cols..(row_i + 1) * n_cols];
                for (m, &xm) in row.iter().enumerate() {
                    node_df_beta[k * n_cols + m] += resid * xm;
                }
            }
        }
        if want_grad {
            node_df_sigma[k] = s1k * u;
            node_g1[k] = sigma * s1k - u;
        }
        log_terms.push(w.ln() + z * z + f);
    }
    let max_term = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = log_terms.iter().map(|t| (t - max_term).exp()).sum();
    let lse = max_term + sum_exp.ln();
    let ll = -0.5 * LN_2PI + sq2t.ln() + lse;

    if !want_grad {
        return ItemEval {
            ll,
            grad_beta: Vec::new(),
            grad_sigma: 0.0,
        };
    }

    // softmax weights over nodes
    let omegas: Vec<f64> = log_terms
        .iter()
        .map(|t| (t - max_term).exp() / sum_exp)
        .collect();
    // (1/tau) dtau/dtheta = -dA/dtheta / (2A)
    let dlogtau_dbeta: Vec<f64> = da_dbeta.iter().map(|d| -d / (2.0 * a)).collect();
    let dlogtau_dsigma = -da_dsigma / (2.0 * a);

    let mut grad_beta = dlogtau_dbeta.clone();
    let mut grad_sigma = dlogtau_dsigma;
    for k in 0..n_nodes {
        let z = rule.nodes[k];
        let omega = omegas[k];
        let g1 = node_g1[k];
        for m in 0..n_cols {
            // du_k/dbeta = du_hat/dbeta + sqrt(2) z dtau/dbeta
            let du_k = du_dbeta[m] + std::f64::consts::SQRT_2 * z * (tau * dlogtau_dbeta[m]);
            grad_beta[m] += omega * (node_df_beta[k * n_cols + m] + g1 * du_k);
        }
        let du_k = du_dsigma + std::f64::consts::SQRT_2 * z * (tau * dlogtau_dsigma);
        grad_sigma += omega * (node_df_sigma[k] + g1 * du_k);
    }

    ItemEval {
        ll,
        grad_beta,
        grad_sigma,
    }
}

/// Marginal log-likelihood (and optionally its gradient in beta and sigma)
/// summed over items in a fixed order, so the value is identical for any
/// thread count.
fn agh_objective(
    design: &GlmmDesign,
    beta: &[f64],
    sigma: f64,
    rule: &GaussHermite,
    want_grad: bool,
) -> (f64, Vec<f64>, f64) {
    let evals: Vec<ItemEval> = (0..design.n_items)
        .into_par_iter()
        .map(|g| {
            item_agh(
                &design.x,
                &design.y,
                design.n_cols,
                design.item_starts[g]..design.item_starts[g + 1],
                beta,
                sigma,
                rule,
                want_grad,
            )
        })
        .collect();
    let mut ll = 0.0;
    let mut grad_beta = vec![0.0; if want_grad { design.n_cols } else { 0 }];
    let mut grad_sigma = 0.0;
    for e in &evals {
        ll += e.ll;
        if want_grad {
            for (g, d) in grad_beta.iter_mut().zip(&e.grad_beta) {
                *g += d;
            }
            grad_sigma += e.grad_sigma;
        }
    }
    (ll, grad_beta, grad_sigma)
}

/// Marginal log-likelihood of the random-intercept logistic model at given
/// parameters, by adaptive Gauss-Hermite quadrature with `nodes` nodes.
pub fn marginal_log_likelihood(
    design: &GlmmDesign,
    beta: &[f64],
    sigma: f64,
    nodes: usize,
) -> f64 {
    let rule = GaussHermite::new(nodes);
    agh_objective(design, beta, sigma, &rule, false).0
}

// ---------------------------------------------------------------------------
// Outer optimisation: BFGS with backtracking line search on the negative
// marginal log-likelihood over (beta, log sigma).
// ---------------------------------------------------------------------------

const LOG_SIGMA_MIN: f64 = -13.8; // sigma ~ 1e-6
const LOG_SIGMA_MAX: f64 = 5.0;

struct Packed<'a> {
    design: &'a GlmmDesign,
    rule: &'a GaussHermite,
    sigma_mode: SigmaMode,
}

impl Packed<'_> {
    fn n_params(&self) -> usize {
        match self.sigma_mode {
            SigmaMode::Free => self.design.n_cols + 1,
            SigmaMode::Fixed(_) => self.design.n_cols,
        }
    }

    fn sigma_of(&self, theta: &[f64]) -> f64 {
        match self.sigma_mode {
            SigmaMode::Free => theta[self.design.n_cols].exp(),
            SigmaMode::Fixed(s) => s,
        }
    }

    /// Negative log-likelihood and gradient in packed space.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.design.n_cols;
        let beta = &theta[..p];
        let sigma = self.sigma_of(theta);
        let (ll, grad_beta, grad_sigma) = agh_objective(self.design, beta, sigma, self.rule, true);
        let mut grad = vec![0.0; self.n_params()];
        for m in 0..p {
            grad[m] = -grad_beta[m];
        }
        if matches!(self.sigma_mode, SigmaMode::Free) {
            // chain rule: d/d(log sigma) = sigma * d/d(sigma)
            grad[p] = -grad_sigma * sigma;
        }
        (-ll, grad)
    }

    fn project(&self, theta: &mut [f64]) {
        if matches!(self.sigma_mode, SigmaMode::Free) {
            let p = self.design.n_cols;
            theta[p] = theta[p].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        }
    }

    /// Gradient max-norm with bound-pinned coordinates masked out.
    fn active_grad_norm(&self, theta: &[f64], grad: &[f64]) -> f64 {
        let p = self.design.n_cols;
        grad.iter()
            .enumerate()
            .map(|(j, g)| {
                if matches!(self.sigma_mode, SigmaMode::Free) && j == p {
                    let at_lower = theta[p] <= LOG_SIGMA_MIN + 1e-9 && *g > 0.0;
                    let at_upper = theta[p] >= LOG_SIGMA_MAX - 1e-9 && *g < 0.0;
                    if at_lower || at_upper {
                        return 0.0;
                    }
                }
                g.abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Fits the random-intercept logistic model by maximising the AGH marginal
/// likelihood. Starting values come from a plain logistic fit.
pub fn fit_random_intercept_logit(
    design: &GlmmDesign,
    options: &GlmmOptions,
) -> Result<GlmmFit, GlmmError> {
    if design.n_rows == 0 {
        return Err(GlmmError::EmptyDesign);
    }
    let ones = design.y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == design.n_rows {
        return Err(GlmmError::DegenerateResponse);
    }

    let start_beta = match fit_logistic(&design.x, &design.y, design.n_cols) {
        Ok(fit) => fit.coefficients,
        Err(GlmmError::Separation { column }) => return Err(GlmmError::Separation { column }),
        Err(_) => vec![0.0; design.n_cols],
    };

    let rule = GaussHermite::new(options.quad_nodes);
    let packed = Packed {
        design,
        rule: &rule,
        sigma_mode: options.sigma,
    };
    let n = packed.n_params();
    let mut theta = start_beta;
    if matches!(options.sigma, SigmaMode::Free) {
        theta.push(0.0); // sigma starts at 1
    }
    packed.project(&mut theta);

    let (mut f, mut grad) = packed.eval(&theta);
    let mut trace = vec![-f];
    let mut h_inv = identity(n);
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=options.max_iterations {
        iterations = iter;
        // search direction
        let mut dir = neg_mat_vec(&h_inv, &grad, n);
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            h_inv = identity(n);
            dir = grad.iter().map(|g| -g).collect();
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }
        // remaining improvement (Newton decrement) below the f64 resolution
        // of the objective means nothing further is representable
        let decrement_floor = 8.0 * f64::EPSILON * (f.abs() + 1.0);
        let at_resolution_floor = -slope < decrement_floor;

        // backtracking Armijo line search; f never increases
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut candidate: Vec<f64> =
                theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            packed.project(&mut candidate);
            let (fc, gc) = packed.eval(&candidate);
            if fc.is_finite() && fc <= f + 1e-4 * alpha * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((new_theta, new_f, new_grad)) = accepted else {
            converged = at_resolution_floor;
            break; // no descent step available at this point
        };

        // BFGS inverse-Hessian update
        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm: f64 = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            bfgs_update(&mut h_inv, &s, &yv, sy, n);
        }

        let rel_change = (f - new_f).abs() / (new_f.abs() + 1.0);
        theta = new_theta;
        f = new_f;
        grad = new_grad;
        trace.push(-f);

        if rel_change < options.rel_tolerance
            && (packed.active_grad_norm(&theta, &grad) < options.grad_tolerance
                || at_resolution_floor)
        {
            converged = true;
            break;
        }
    }

    let beta = theta[..design.n_cols].to_vec();
    if let Some(column) = beta.iter().position(|b| b.abs() > 30.0) {
        return Err(GlmmError::Separation { column });
    }
    let sigma = packed.sigma_of(&theta);
    let gradient_norm = packed.active_grad_norm(&theta, &grad);

    // observed information: central differences of the analytic gradient
    let covariance_full = observed_information_inverse(&packed, &theta, n);
    let (coefficients, sigma_se, covariance) = match &covariance_full {
        Some(cov) => {
            let coefs = design
                .column_names
                .iter()
                .enumerate()
                .map(|(j, name)| Coefficient {
                    name: name.clone(),
                    estimate: beta[j],
                    se: cov[j * n + j].max(0.0).sqrt(),
                })
                .collect();
            let sigma_se = if matches!(options.sigma, SigmaMode::Free) {
                let p = design.n_cols;
                Some(sigma * cov[p * n + p].max(0.0).sqrt())
            } else {
                None
            };
            let mut beta_cov = vec![0.0; design.n_cols * design.n_cols];
            for i in 0..design.n_cols {
                for j in 0..design.n_cols {
                    beta_cov[i * design.n_cols + j] = cov[i * n + j];
                }
            }
            (coefs, sigma_se, Some(beta_cov))
        }
        None => (
            design
                .column_names
                .iter()
                .enumerate()
                .map(|(j, name)| Coefficient {
                    name: name.clone(),
                    estimate: beta[j],
                    se: f64::NAN,
                })
                .collect(),
            None,
            None,
        ),
    };

    Ok(GlmmFit {
        coefficients,
        sigma,
        sigma_se,
        log_likelihood: -f,
        iterations,
        gradient_norm,
        converged,
        n_rows: design.n_rows,
        n_items: design.n_items,
        quad_nodes: options.quad_nodes,
        log_likelihood_trace: trace,
        covariance,
        estimator: format!(
            "adaptive Gauss-Hermite quadrature ({} nodes), BFGS over (beta, log sigma)",
            options.quad_nodes
        ),
        position_coding: "0-based, uncentered".to_string(),
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn neg_mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -(0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>())
        .collect()
}

fn bfgs_update(h_inv: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    // H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h_inv[i * n + j] * y[j]).sum::<f64>())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h_inv[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

fn observed_information_inverse(packed: &Packed, theta: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut hessian = vec![0.0; n * n];
    for j in 0..n {
        let h = 1e-4 * (1.0 + theta[j].abs());
        let mut plus = theta.to_vec();
        plus[j] += h;
        let mut minus = theta.to_vec();
        minus[j] -= h;
        let (_, gp) = packed.eval(&plus);
        let (_, gm) = packed.eval(&minus);
        for i in 0..n {
            hessian[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (hessian[i * n + j] + hessian[j * n + i]);
            hessian[i * n + j] = m;
            hessian[j * n + i] = m;
        }
    }
    linalg::robust_inverse(&hessian, n).map(|(inv, _)| inv)
}

// ---------------------------------------------------------------------------
// Wald summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct WaldRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Main position effect plus the condition's interaction, with the SE of the
/// sum from the coefficient covariance.
#[derive(Debug, Clone, Serialize)]
pub struct NetPositionEffect {
    pub condition: String,
    pub estimate: f64,
    pub se: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldSummary {
    pub alpha: f64,
    pub rows: Vec<WaldRow>,
    pub net_position_effects: Vec<NetPositionEffect>,
    pub sigma: f64,
    pub sigma_se: Option<f64>,
}

/// Per-coefficient Wald tests (two-sided normal) at `alpha`, plus the net
/// position effect (main + interaction) per non-reference condition.
pub fn wald_summary(fit: &GlmmFit, alpha: f64) -> Result<WaldSummary, GlmmError> {
    if !fit.converged {
        return Err(GlmmError::Unconverged);
    }
    let rows: Vec<WaldRow> = fit
        .coefficients
        .iter()
        .map(|c| {
            let z = if c.se > 0.0 { c.estimate / c.se } else { f64::NAN };
            let p_value = if z.is_nan() { f64::NAN } else { stats::normal_two_sided_p(z) };
            WaldRow {
                name: c.name.clone(),
                estimate: c.estimate,
                se: c.se,
                z,
                p_value,
                significant: p_value < alpha,
            }
        })
        .collect();

    let mut net = Vec::new();
    let pos_idx = fit.coefficients.iter().position(|c| c.name == "position");
    if let (Some(pi), Some(cov)) = (pos_idx, &fit.covariance) {
        let p = fit.coefficients.len();
        for (ii, coef) in fit.coefficients.iter().enumerate() {
            if let Some(condition) = coef.name.strip_prefix("position:") {
                let estimate = fit.coefficients[pi].estimate + coef.estimate;
                let var = cov[pi * p + pi] + cov[ii * p + ii] + 2.0 * cov[pi * p + ii];
                let se = var.max(0.0).sqrt();
                let z = if se > 0.0 { estimate / se } else { f64::NAN };
                net.push(NetPositionEffect {
                    condition: condition.to_string(),
                    estimate,
                    se,
                    significant: !z.is_nan() && stats::normal_two_sided_p(z) < alpha,
                });
            }
        }
    }

    Ok(WaldSummary {
        alpha,
        rows,
        net_position_effects: net,
        sigma: fit.sigma,
        sigma_se: fit.sigma_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Cell, CellEntry};
    use approx::assert_abs_diff_eq;

    fn cell(condition: &str, rows: &[(&str, usize, Option<bool>)]) -> Cell {
        let entries: Vec<CellEntry> = rows
            .iter()
            .map(|&(item, pos, outcome)| CellEntry {
                item_id: item.to_string(),
                correct_position: pos,
                chosen_position: outcome.map(|ok| if ok { pos } else { (pos + 1) % 10 }),
            })
            .collect();
        let n_total = entries.len();
        let n_parsed = entries.iter().filter(|e| e.chosen_position.is_some()).count();
        Cell {
            model_id: "m".into(),
            condition: condition.into(),
            entries,
            n_total,
            n_parsed,
        }
    }

    #[test]
    fn design_counts_rows_and_columns() {
        let h = cell("H", &[("a", 0, Some(true)), ("b", 3, Some(false)), ("c", 9, Some(true))]);
        let s = cell("S1", &[("a", 0, Some(false)), ("b", 3, Some(true)), ("c", 9, Some(false))]);
        let design = build_design(&[&h, &s], "H").unwrap();
        assert_eq!(design.n_rows, 6);
        assert_eq!(design.n_cols, 4);
        assert_eq!(design.n_items, 3);
        assert_eq!(
            design.column_names,
            vec!["intercept", "position", "cond:S1", "position:S1"]
        );
    }

    #[test]
    fn design_omits_parse_failures() {
        let h = cell("H", &[("a", 0, Some(true)), ("b", 3, None)]);
        let s = cell("S1", &[("a", 0, Some(false)), ("b", 3, Some(true))]);
        let design = build_design(&[&h, &s], "H").unwrap();
        assert_eq!(design.n_rows, 3);
        assert_eq!(design.n_items, 2);
    }

    #[test]
    fn design_is_invariant_to_cell_order() {
        let h = cell("H", &[("a", 0, Some(true)), ("b", 3, Some(false))]);
        let s1 = cell("S1", &[("a", 0, Some(false)), ("b", 3, Some(true))]);
        let s2 = cell("S2", &[("a", 0, Some(true)), ("b", 3, Some(true))]);
        let forward = build_design(&[&h, &s1, &s2], "H").unwrap();
        let shuffled = build_design(&[&s2, &h, &s1], "H").unwrap();
        assert_eq!(forward.x, shuffled.x);
        assert_eq!(forward.y, shuffled.y);
        assert_eq!(forward.column_names, shuffled.column_names);
    }

    #[test]
    fn design_requires_reference() {
        let s = cell("S1", &[("a", 0, Some(true))]);
        assert!(matches!(
            build_design(&[&s], "H"),
            Err(GlmmError::ReferenceMissing(_))
        ));
    }

    fn tiny_design() -> GlmmDesign {
        // 3 items x 4 rows, intercept + position columns
        let rows: Vec<(usize, [f64; 2], f64)> = vec![
            (0, [1.0, 0.0], 1.0),
            (0, [1.0, 3.0], 0.0),
            (0, [1.0, 6.0], 1.0),
            (0, [1.0, 9.0], 0.0),
            (1, [1.0, 1.0], 0.0),
            (1, [1.0, 4.0], 0.0),
            (1, [1.0, 7.0], 1.0),
            (1, [1.0, 8.0], 1.0),
            (2, [1.0, 2.0], 1.0),
            (2, [1.0, 5.0], 1.0),
            (2, [1.0, 5.0], 0.0),
            (2, [1.0, 9.0], 0.0),
        ];
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut item_starts = vec![0usize];
        let mut current = 0usize;
        for (item, row, yi) in rows {
            if item != current {
                item_starts.push(y.len());
                current = item;
            }
            x.extend_from_slice(&row);
            y.push(yi);
        }
        item_starts.push(y.len());
        GlmmDesign {
            x,
            y,
            n_rows: 12,
            n_cols: 2,
            n_items: 3,
            item_starts,
            column_names: vec!["intercept".into(), "position".into()],
            reference_condition: "H".into(),
        }
    }

    #[test]
    fn marginal_loglik_matches_dense_integration() {
        // oracle: brute-force trapezoid integration of each item's integrand
        let design = tiny_design();
        let beta = [-0.4, 0.08];
        let sigma = 0.9;
        let mut oracle = 0.0;
        for g in 0..design.n_items {
            let rows = design.item_starts[g]..design.item_starts[g + 1];
            let grid = 160_001;
            let (lo, hi) = (-12.0f64, 12.0f64);
            let step = (hi - lo) / (grid - 1) as f64;
            let mut total = 0.0;
            for t in 0..grid {
                let u = lo + t as f64 * step;
                let mut ll = 0.0;
                for i in rows.clone() {
                    let eta = design.x[i * 2] * beta[0] + design.x[i * 2 + 1] * beta[1] + sigma * u;
                    ll += design.y[i] * eta - log1p_exp(eta);
                }
                let val = (ll - 0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let w = if t == 0 || t == grid - 1 { 0.5 } else { 1.0 };
                total += w * val * step;
            }
            oracle += total.ln();
        }
        // the same integral computed independently with adaptive quadrature
        assert_abs_diff_eq!(oracle, -9.365483001038662, epsilon = 1e-9);
        let agh = marginal_log_likelihood(&design, &beta, sigma, 20);
        assert_abs_diff_eq!(agh, oracle, epsilon = 1e-8);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let design = tiny_design();
        let rule = GaussHermite::new(10);
        let beta = vec![-0.3, 0.05];
        let sigma: f64 = 0.7;
        let (_, grad_beta, grad_sigma) = agh_objective(&design, &beta, sigma, &rule, true);
        let h = 1e-6;
        for m in 0..2 {
            let mut bp = beta.clone();
            bp[m] += h;
            let mut bm = beta.clone();
            bm[m] -= h;
            let fd = (agh_objective(&design, &bp, sigma, &rule, false).0
                - agh_objective(&design, &bm, sigma, &rule, false).0)
                / (2.0 * h);
            assert_abs_diff_eq!(grad_beta[m], fd, epsilon = 1e-6);
        }
        let fd = (agh_objective(&design, &beta, sigma + h, &rule, false).0
            - agh_objective(&design, &beta, sigma - h, &rule, false).0)
            / (2.0 * h);
        assert_abs_diff_eq!(grad_sigma, fd, epsilon = 1e-6);
    }

    #[test]
    fn node_count_increments_shrink_and_estimates_stabilise() {
        let design = tiny_design();
        let beta = [-0.4, 0.08];
        let sigma = 0.9;
        let ll: Vec<f64> = [5usize, 10, 20, 40]
            .iter()
            .map(|&k| marginal_log_likelihood(&design, &beta, sigma, k))
            .collect();
        let d1 = (ll[1] - ll[0]).abs();
        let d2 = (ll[2] - ll[1]).abs();
        let d3 = (ll[3] - ll[2]).abs();
        assert!(d2 <= d1 + 1e-12, "increment grew: {d1} -> {d2}");
        assert!(d3 <= d2 + 1e-12, "increment grew: {d2} -> {d3}");

        let fit10 = fit_random_intercept_logit(
            &design,
            &GlmmOptions { quad_nodes: 10, ..Default::default() },
        )
        .unwrap();
        let fit20 = fit_random_intercept_logit(
            &design,
            &GlmmOptions { quad_nodes: 20, ..Default::default() },
        )
        .unwrap();
        for (a, b) in fit10.coefficients.iter().zip(&fit20.coefficients) {
            assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-4);
        }
    }

    #[test]
    fn sigma_fixed_at_zero_reduces_to_plain_logistic() {
        let design = tiny_design();
        let plain = fit_logistic(&design.x, &design.y, design.n_cols).unwrap();
        let fit = fit_random_intercept_logit(
            &design,
            &GlmmOptions { sigma: SigmaMode::Fixed(0.0), ..Default::default() },
        )
        .unwrap();
        assert!(fit.converged);
        for (c, expected) in fit.coefficients.iter().zip(&plain.coefficients) {
            assert_abs_diff_eq!(c.estimate, expected, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(fit.log_likelihood, plain.log_likelihood, epsilon = 1e-8);
    }

    #[test]
    fn tiny_sigma_is_continuous_with_plain_fit() {
        let design = tiny_design();
        let plain = fit_logistic(&design.x, &design.y, design.n_cols).unwrap();
        let fit = fit_random_intercept_logit(
            &design,
            &GlmmOptions { sigma: SigmaMode::Fixed(1e-4), ..Default::default() },
        )
        .unwrap();
        for (c, expected) in fit.coefficients.iter().zip(&plain.coefficients) {
            assert_abs_diff_eq!(c.estimate, expected, epsilon = 1e-3);
        }
    }

    #[test]
    fn loglik_trace_is_non_decreasing() {
        let design = tiny_design();
        let fit = fit_random_intercept_logit(&design, &GlmmOptions::default()).unwrap();
        for pair in fit.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "log-likelihood decreased");
        }
        assert!(fit.converged);
        assert!(fit.gradient_norm < 1e-5);
    }

    #[test]
    fn wald_summary_flags_at_alpha() {
        let design = tiny_design();
        let mut fit = fit_random_intercept_logit(&design, &GlmmOptions::default()).unwrap();
        // force a known row: estimate 0, se 1 -> p = 1
        fit.coefficients[1].estimate = 0.0;
        fit.coefficients[1].se = 1.0;
        let summary = wald_summary(&fit, 0.01).unwrap();
        assert_abs_diff_eq!(summary.rows[1].p_value, 1.0, epsilon = 1e-12);
        assert!(!summary.rows[1].significant);
    }

    #[test]
    fn unconverged_fit_refuses_summary() {
        let design = tiny_design();
        let fit = fit_random_intercept_logit(
            &design,
            &GlmmOptions { max_iterations: 1, ..Default::default() },
        )
        .unwrap();
        if !fit.converged {
            assert!(matches!(wald_summary(&fit, 0.01), Err(GlmmError::Unconverged)));
        }
    }
}
