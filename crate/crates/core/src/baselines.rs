//! Comparator detectors: CuSum with the true post-change density, CuSum
//! with a Gaussian fitted to the training samples, and a windowed
//! kernel-density GLR test that also uses the training samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::detector::{LlrScorer, SequentialDetector};
use crate::distributions::{check_dim, EmpiricalDistribution, Observation, PreChangeModel};
use crate::error::{invalid, Error, Result};

/// `log p(x) - log q(x)`.
pub fn exact_cusum_llr(q: &PreChangeModel, p: &PreChangeModel, x: &[f64]) -> Result<f64> {
    Ok(p.log_density(x)? - q.log_density(x)?)
}

/// Likelihood ratio of two density models; serves as the exact CuSum
/// scorer and, with a fitted post-change model, as the Gaussian-MLE CuSum.
#[derive(Clone, Debug)]
pub struct DensityRatioScorer {
    p: PreChangeModel,
    q: PreChangeModel,
}

impl DensityRatioScorer {
    pub fn new(p: PreChangeModel, q: PreChangeModel) -> Result<Self> {
        check_dim(q.dim(), p.dim())?;
        if !(p.has_density() && q.has_density()) {
            return Err(Error::DensityUnavailable("both models need a density".into()));
        }
        Ok(Self { p, q })
    }
}

impl LlrScorer for DensityRatioScorer {
    fn dim(&self) -> usize {
        self.q.dim()
    }
    fn llr(&self, x: &[f64]) -> Result<f64> {
        exact_cusum_llr(&self.q, &self.p, x)
    }
}

/// Per-coordinate maximum-likelihood Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMleFit {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianMleFit {
    pub fn model(&self) -> Result<PreChangeModel> {
        if self.mean.len() == 1 {
            PreChangeModel::gaussian(self.mean[0], self.variance[0])
        } else {
            PreChangeModel::gaussian_diag(self.mean.clone(), self.variance.clone())
        }
    }
}

/// Sample mean and biased (`1/n`) variance per coordinate.
pub fn fit_gaussian_mle(training: &EmpiricalDistribution) -> Result<GaussianMleFit> {
    let n = training.len();
    if n < 2 {
        return invalid(format!("Gaussian MLE needs at least 2 samples, got {n}"));
    }
    let d = training.dim();
    let mut mean = vec![0.0; d];
    for s in training.samples() {
        for (m, x) in mean.iter_mut().zip(s.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut variance = vec![0.0; d];
    for s in training.samples() {
        for k in 0..d {
            variance[k] += (s[k] - mean[k]).powi(2);
        }
    }
    variance.iter_mut().for_each(|v| *v /= n as f64);
    if variance.iter().any(|&v| !(v > 0.0)) {
        return invalid("degenerate training samples: zero variance in some coordinate");
    }
    Ok(GaussianMleFit { mean, variance })
}

/// Gaussian product-kernel settings for the windowed GLR test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidths: Vec<f64>,
    pub window: usize,
}

impl KdeConfig {
    pub fn new(bandwidths: Vec<f64>, window: usize) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return invalid("bandwidths must be positive");
        }
        if window < 2 {
            return invalid(format!("window must be at least 2, got {window}"));
        }
        Ok(Self { bandwidths, window })
    }

    fn log_norm(&self) -> f64 {
        let d = self.bandwidths.len() as f64;
        -0.5 * d * (2.0 * std::f64::consts::PI).ln() - self.bandwidths.iter().map(|h| h.ln()).sum::<f64>()
    }

    /// `prod_m K((x_m - y_m) / h_m) / prod_m h_m`.
    #[inline]
    fn kernel(&self, x: &[f64], y: &[f64], log_norm: f64) -> f64 {
        let mut e = 0.0;
        for ((a, b), h) in x.iter().zip(y).zip(&self.bandwidths) {
            let z = (a - b) / h;
            e += z * z;
        }
        (log_norm - 0.5 * e).exp()
    }
}

/// Rule-of-thumb bandwidths `W^(-1/(d+4)) sigma_m` from pre-change samples.
pub fn bandwidth_rule(window: usize, prechange_samples: &EmpiricalDistribution) -> Result<Vec<f64>> {
    let n = prechange_samples.len();
    if n < 2 {
        return invalid("need at least two pre-change samples to estimate a scale");
    }
    let d = prechange_samples.dim();
    let mut sigma = Vec::with_capacity(d);
    for k in 0..d {
        let mean = prechange_samples.samples().iter().map(|s| s[k]).sum::<f64>() / n as f64;
        let var = prechange_samples.samples().iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sigma.push(var.sqrt());
    }
    bandwidth_from_sigma(window, &sigma)
}

/// `W^(-1/(d+4)) sigma_m` for given scales.
pub fn bandwidth_from_sigma(window: usize, sigma: &[f64]) -> Result<Vec<f64>> {
    if window == 0 {
        return invalid("window must be positive");
    }
    if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return invalid("scale estimates must be positive");
    }
    let factor = (window as f64).powf(-1.0 / (sigma.len() as f64 + 4.0));
    Ok(sigma.iter().map(|s| factor * s).collect())
}

/// Kernel density at `x` from the window samples (skipping index
/// `exclude`, if any) and all training samples, normalised by the number
/// of contributors.
pub fn kde_loo_density(
    window: &[Observation],
    exclude: Option<usize>,
    training: &EmpiricalDistribution,
    config: &KdeConfig,
    x: &[f64],
) -> Result<f64> {
    let d = config.bandwidths.len();
    check_dim(d, x.len())?;
    check_dim(d, training.dim())?;
    let ln = config.log_norm();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, w) in window.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        check_dim(d, w.dim())?;
        sum += config.kernel(w, x, ln);
        count += 1;
    }
    for w in training.samples() {
        sum += config.kernel(w, x, ln);
        count += 1;
    }
    if count == 0 {
        return invalid("no contributors left for the density estimate");
    }
    Ok(sum / count as f64)
}

/// Windowed GLR statistic at the last observation of `history`, by direct
/// summation.
///
/// Window `l..=k` scores each `X_j` with the leave-one-out density of the
/// other window points plus the training samples, and each training
/// sample with the density of the whole window plus the training samples.
pub fn nglr_statistic(
    history: &[Observation],
    training: &EmpiricalDistribution,
    config: &KdeConfig,
    q: &PreChangeModel,
) -> Result<f64> {
    let k = history.len();
    if k == 0 {
        return invalid("history must contain at least one observation");
    }
    let mut best = f64::NEG_INFINITY;
    for len in 1..=config.window.min(k) {
        let win = &history[k - len..];
        let mut total = 0.0;
        for (j, x) in win.iter().enumerate() {
            total += kde_loo_density(win, Some(j), training, config, x)?.ln() - q.log_density(x)?;
        }
        for w in training.samples() {
            total += kde_loo_density(win, None, training, config, w)?.ln() - q.log_density(w)?;
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Streaming form of [`nglr_statistic`] with cached kernel values.
#[derive(Clone, Debug)]
pub struct NglrDetector {
    config: KdeConfig,
    log_norm: f64,
    q: PreChangeModel,
    training: Vec<Observation>,
    train_log_q: Vec<f64>,
    /// `sum_i' K(w_i, w_i')` per training sample.
    train_self: Vec<f64>,
    /// Newest observation last.
    buf: VecDeque<Entry>,
}

#[derive(Clone, Debug)]
struct Entry {
    x: Vec<f64>,
    log_q: f64,
    /// Kernel against every training sample.
    k_train: Vec<f64>,
    /// `sum_i K(x, w_i)`.
    train_sum: f64,
    /// Kernel against the older buffer entries, oldest first.
    k_prev: Vec<f64>,
}

impl NglrDetector {
    pub fn new(q: PreChangeModel, training: &EmpiricalDistribution, config: KdeConfig) -> Result<Self> {
        let d = config.bandwidths.len();
        check_dim(d, training.dim())?;
        check_dim(d, q.dim())?;
        if !q.has_density() {
            return Err(Error::DensityUnavailable("the windowed GLR test needs a pre-change density".into()));
        }
        let log_norm = config.log_norm();
        let train: Vec<Observation> = training.samples().to_vec();
        let train_log_q = train.iter().map(|w| q.log_density_unchecked(w)).collect();
        let train_self = train
            .iter()
            .map(|a| train.iter().map(|b| config.kernel(a, b, log_norm)).sum())
            .collect();
        Ok(Self { config, log_norm, q, training: train, train_log_q, train_self, buf: VecDeque::new() })
    }

    fn push(&mut self, x: &[f64]) {
        if self.buf.len() == self.config.window {
            self.buf.pop_front();
            for e in &mut self.buf {
                e.k_prev.remove(0);
            }
        }
        let k_train: Vec<f64> = self.training.iter().map(|w| self.config.kernel(x, w, self.log_norm)).collect();
        let k_prev = self.buf.iter().map(|e| self.config.kernel(x, &e.x, self.log_norm)).collect();
        self.buf.push_back(Entry {
            x: x.to_vec(),
            log_q: self.q.log_density_unchecked(x),
            train_sum: k_train.iter().sum(),
            k_train,
            k_prev,
        });
    }

    fn statistic(&self) -> f64 {
        let len = self.buf.len();
        let n = self.training.len();
        // numerators for the window {start..len}, grown backwards from the newest point
        let mut win_num: Vec<f64> = vec![0.0; len];
        let mut train_num: Vec<f64> = self.train_self.clone();
        let mut best = f64::NEG_INFINITY;
        for start in (0..len).rev() {
            let e = &self.buf[start];
            // the new point `start` is older than every current window member
            let mut own = e.train_sum;
            for j in start + 1..len {
                let kv = self.buf[j].k_prev[start];
                win_num[j] += kv;
                own += kv;
            }
            win_num[start] = own;
            for (t, kv) in train_num.iter_mut().zip(&e.k_train) {
                *t += kv;
            }
            let m = len - start;
            let win_den = ((m - 1 + n) as f64).ln();
            let train_den = ((m + n) as f64).ln();
            let mut total = 0.0;
            for j in start..len {
                total += win_num[j].ln() - win_den - self.buf[j].log_q;
            }
            for (t, lq) in train_num.iter().zip(&self.train_log_q) {
                total += t.ln() - train_den - lq;
            }
            best = best.max(total);
        }
        best
    }
}

impl SequentialDetector for NglrDetector {
    fn dim(&self) -> usize {
        self.config.bandwidths.len()
    }
    fn reset(&mut self) {
        self.buf.clear();
    }
    fn fresh(&self) -> Box<dyn SequentialDetector> {
        let mut d = self.clone();
        d.reset();
        Box::new(d)
    }
    fn step(&mut self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.push(x);
        Ok(self.statistic())
    }
}
