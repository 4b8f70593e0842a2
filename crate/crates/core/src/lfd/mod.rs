//! Least-favourable post-change distribution over a Wasserstein ball.
//!
//! For a ball of radius `r` (order `s`) around the empirical measure of the
//! training samples `w_1..w_n`, the KL-closest member to the pre-change law
//! `Q` has density `q(x) exp(-C(x)) / eta`, where
//!
//! ```text
//! C(x)   = min_i { lambda c^s(x, w_i) - u_i }
//! eta    = integral of q(x) exp(-C(x)) dx
//! ```
//!
//! and `(lambda, u)` maximise the concave dual
//! `-lambda r^s + mean(u) - log eta(lambda, u)` over `lambda >= 0`. The
//! optimal value is `KL(P* || Q)`, and the per-sample log-likelihood ratio
//! used by the detector is `-C(x) - log eta`.

mod analytic;
mod eta;
mod scorer;
mod solver;

use serde::{Deserialize, Serialize};

use crate::distributions::{check_dim, CostMetric, EmpiricalDistribution, PreChangeModel};
use crate::error::{invalid, Result};

pub use analytic::{closed_form_lambda_n1, eta_gaussian_analytic, inner_min_oracle, log_eta_gaussian_analytic};
pub use eta::EtaConfig;
pub use scorer::{LfdSampler, LfdScorer, ScorerFile};
pub use solver::{solve_dual, SolverOptions};

/// A feasible dual point: `lambda >= 0` and one `u_i` per training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda: f64,
    pub u: Vec<f64>,
}

impl DualPoint {
    pub fn new(lambda: f64, u: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda must be a finite non-negative number, got {lambda}"));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return invalid("u must be finite");
        }
        Ok(Self { lambda, u })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub point: DualPoint,
    pub log_eta: f64,
    /// Attained dual objective, equal to `KL(P* || Q)` at the optimum.
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `C(x) = min_i { lambda c^s(x, w_i) - u_i }`.
pub fn compute_c(point: &DualPoint, metric: &CostMetric, training: &EmpiricalDistribution, x: &[f64]) -> Result<f64> {
    if point.u.len() != training.len() {
        return invalid(format!("u has length {}, expected {}", point.u.len(), training.len()));
    }
    check_dim(training.dim(), x.len())?;
    Ok(training
        .samples()
        .iter()
        .zip(&point.u)
        .map(|(w, u)| point.lambda * metric.cost_power_unchecked(x, w) - u)
        .fold(f64::INFINITY, f64::min))
}

fn merged_point(point: &DualPoint, training: &EmpiricalDistribution) -> (Vec<crate::distributions::Observation>, Vec<f64>) {
    let (atoms, _) = training.merged();
    let index = training.merge_index(&atoms);
    // duplicates: the largest u wins the minimum in C
    let mut u = vec![f64::NEG_INFINITY; atoms.len()];
    for (k, &i) in index.iter().enumerate() {
        u[i] = u[i].max(point.u[k]);
    }
    (atoms, u)
}

/// `log eta(lambda, u)` through the default numerical route: quadrature for
/// one-dimensional densities, sample averages otherwise.
pub fn log_eta_with(
    point: &DualPoint,
    prechange: &PreChangeModel,
    metric: &CostMetric,
    training: &EmpiricalDistribution,
    cfg: &EtaConfig,
) -> Result<f64> {
    if point.lambda < 0.0 {
        return invalid("lambda must be non-negative");
    }
    if point.u.len() != training.len() {
        return invalid(format!("u has length {}, expected {}", point.u.len(), training.len()));
    }
    let (atoms, u) = merged_point(point, training);
    let engine = eta::EtaEngine::new(prechange, *metric, &atoms, cfg)?;
    Ok(engine.evaluate(point.lambda, &u)?.log_eta)
}

/// `eta(lambda, u) = integral of q(x) exp(-C(x))`.
pub fn eta(point: &DualPoint, prechange: &PreChangeModel, metric: &CostMetric, training: &EmpiricalDistribution) -> Result<f64> {
    log_eta_with(point, prechange, metric, training, &EtaConfig::default()).map(f64::exp)
}

/// Dual objective `-lambda r^s + mean(u) - log eta(lambda, u)`.
pub fn dual_objective(
    point: &DualPoint,
    radius: f64,
    prechange: &PreChangeModel,
    metric: &CostMetric,
    training: &EmpiricalDistribution,
) -> Result<f64> {
    if !(radius > 0.0) {
        return invalid("radius must be strictly positive");
    }
    let le = log_eta_with(point, prechange, metric, training, &EtaConfig::default())?;
    let mean_u = point.u.iter().sum::<f64>() / point.u.len() as f64;
    Ok(-point.lambda * radius.powf(metric.order_s) + mean_u - le)
}
