use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::{check_dim, CostMetric, EmpiricalDistribution, Observation, PreChangeModel, Sampler};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

use super::solver::{solve_dual, SolverOptions};
use super::{DualPoint, DualSolution};

pub const SCORER_FORMAT: &str = "drcusum-lfd-scorer/1";

/// A solved least-favourable distribution, ready to score observations.
///
/// Immutable after construction and safe to share between threads.
#[derive(Clone, Debug)]
pub struct LfdScorer {
    prechange: Option<PreChangeModel>,
    prechange_spec: String,
    training: EmpiricalDistribution,
    metric: CostMetric,
    radius: f64,
    solution: DualSolution,
    flat: Vec<f64>,
    dim: usize,
}

/// On-disk form of an [`LfdScorer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerFile {
    pub format: String,
    pub lambda: f64,
    pub u: Vec<f64>,
    pub log_eta: f64,
    pub dual_value: f64,
    pub radius: f64,
    pub order_s: f64,
    pub metric: String,
    pub training_samples: Vec<Vec<f64>>,
    /// Pre-change model string; `empirical:n=<N>` models cannot be rebuilt
    /// from the file, which only limits `lfd_log_density` and sampling.
    pub prechange: String,
    pub iterations: usize,
    pub converged: bool,
}

impl LfdScorer {
    pub fn fit(
        prechange: PreChangeModel,
        training: EmpiricalDistribution,
        metric: CostMetric,
        radius: f64,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let solution = solve_dual(&prechange, metric, &training, radius, opts)?;
        let spec = prechange.describe();
        Self::from_parts(Some(prechange), spec, training, metric, radius, solution)
    }

    /// Builds a scorer from an already known dual solution.
    pub fn from_parts(
        prechange: Option<PreChangeModel>,
        prechange_spec: String,
        training: EmpiricalDistribution,
        metric: CostMetric,
        radius: f64,
        solution: DualSolution,
    ) -> Result<Self> {
        if solution.point.u.len() != training.len() {
            return invalid(format!("u has length {}, expected {}", solution.point.u.len(), training.len()));
        }
        if let Some(q) = &prechange {
            check_dim(q.dim(), training.dim())?;
        }
        let dim = training.dim();
        let flat = training.samples().iter().flat_map(|s| s.iter().copied()).collect();
        Ok(Self { prechange, prechange_spec, training, metric, radius, solution, flat, dim })
    }

    pub fn solution(&self) -> &DualSolution {
        &self.solution
    }

    pub fn point(&self) -> &DualPoint {
        &self.solution.point
    }

    pub fn dual_value(&self) -> f64 {
        self.solution.dual_value
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn metric(&self) -> &CostMetric {
        &self.metric
    }

    pub fn training(&self) -> &EmpiricalDistribution {
        &self.training
    }

    pub fn prechange(&self) -> Option<&PreChangeModel> {
        self.prechange.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `C(x)` at the fitted dual point, without the dimension check.
    #[inline]
    pub(crate) fn c_unchecked(&self, x: &[f64]) -> f64 {
        let p = &self.solution.point;
        let mut best = f64::INFINITY;
        for (w, u) in self.flat.chunks_exact(self.dim).zip(&p.u) {
            let v = p.lambda * self.metric.cost_power_unchecked(x, w) - u;
            if v < best {
                best = v;
            }
        }
        best
    }

    /// `log(p*(x) / q(x)) = -C(x) - log eta`.
    pub fn llr(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.llr_unchecked(x))
    }

    #[inline]
    pub(crate) fn llr_unchecked(&self, x: &[f64]) -> f64 {
        -self.c_unchecked(x) - self.solution.log_eta
    }

    /// `log p*(x) = log q(x) + llr(x)`.
    pub fn lfd_log_density(&self, x: &[f64]) -> Result<f64> {
        let q = self.prechange.as_ref().ok_or_else(|| {
            Error::DensityUnavailable(format!("pre-change model '{}' was not restored", self.prechange_spec))
        })?;
        Ok(q.log_density(x)? + self.llr(x)?)
    }

    /// Rejection sampler for the least-favourable distribution.
    pub fn sampler(&self) -> Result<LfdSampler<'_>> {
        let q = self.prechange.as_ref().ok_or_else(|| {
            Error::DensityUnavailable(format!("pre-change model '{}' was not restored", self.prechange_spec))
        })?;
        let max_u = self.solution.point.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(LfdSampler { scorer: self, q, max_u })
    }

    pub fn to_file(&self) -> ScorerFile {
        let p = &self.solution.point;
        ScorerFile {
            format: SCORER_FORMAT.into(),
            lambda: p.lambda,
            u: p.u.clone(),
            log_eta: self.solution.log_eta,
            dual_value: self.solution.dual_value,
            radius: self.radius,
            order_s: self.metric.order_s,
            metric: "euclidean".into(),
            training_samples: self.training.samples().iter().map(|s| s.to_vec()).collect(),
            prechange: self.prechange_spec.clone(),
            iterations: self.solution.iterations,
            converged: self.solution.converged,
        }
    }

    pub fn from_file(file: ScorerFile) -> Result<Self> {
        if file.format != SCORER_FORMAT {
            return Err(Error::Data(format!("unsupported scorer format '{}'", file.format)));
        }
        if file.metric != "euclidean" {
            return Err(Error::Data(format!("unsupported metric '{}'", file.metric)));
        }
        let metric = CostMetric::euclidean(file.order_s)?;
        let samples = file.training_samples.into_iter().map(Observation::new).collect::<Result<Vec<_>>>()?;
        let training = EmpiricalDistribution::new(samples)?;
        let prechange = if file.prechange.starts_with("empirical:") {
            None
        } else {
            Some(PreChangeModel::parse(&file.prechange)?)
        };
        let point = DualPoint::new(file.lambda, file.u)?;
        let solution = DualSolution {
            point,
            log_eta: file.log_eta,
            dual_value: file.dual_value,
            iterations: file.iterations,
            converged: file.converged,
        };
        Self::from_parts(prechange, file.prechange, training, metric, file.radius, solution)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draws from `p*` by accepting `x ~ Q` with probability
/// `exp(-C(x) - max u) <= 1`.
pub struct LfdSampler<'a> {
    scorer: &'a LfdScorer,
    q: &'a PreChangeModel,
    max_u: f64,
}

impl Sampler for LfdSampler<'_> {
    fn dim(&self) -> usize {
        self.scorer.dim
    }

    fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]) {
        use rand::Rng;
        loop {
            self.q.draw_into(rng, out);
            let accept = (-self.scorer.c_unchecked(out) - self.max_u).exp();
            if rng.random::<f64>() < accept {
                return;
            }
        }
    }
}
