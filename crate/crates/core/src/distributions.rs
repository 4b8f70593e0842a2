//! Probability models shared by the solver, detectors and simulation harness:
//! observations, the ground cost, empirical measures and pre-change models.

use std::fmt;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A point in R^d with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("observation must have at least one coordinate");
        }
        if let Some(bad) = coords.iter().find(|v| !v.is_finite()) {
            return invalid(format!("observation coordinate {bad} is not finite"));
        }
        Ok(Self(coords))
    }

    /// One-dimensional observation. Panics on a non-finite value.
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "observation must be finite");
        Self(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Observation {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Observation> for Vec<f64> {
    fn from(o: Observation) -> Self {
        o.0
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    EuclideanL2,
}

/// Ground metric together with the Wasserstein order `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMetric {
    pub kind: MetricKind,
    pub order_s: f64,
}

impl CostMetric {
    pub fn euclidean(order_s: f64) -> Result<Self> {
        if !(order_s.is_finite() && order_s >= 1.0) {
            return invalid(format!("Wasserstein order must be >= 1, got {order_s}"));
        }
        Ok(Self { kind: MetricKind::EuclideanL2, order_s })
    }

    /// `c(x, y)^s`.
    pub fn cost_power(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.cost_power_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn cost_power_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            MetricKind::EuclideanL2 => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                pow_from_squared(sq, self.order_s)
            }
        }
    }

    /// Cost power between two scalars.
    #[inline]
    pub(crate) fn cost_power_1d(&self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        if self.order_s == 2.0 {
            d * d
        } else if self.order_s == 1.0 {
            d
        } else {
            d.powf(self.order_s)
        }
    }

    /// Derivative in `x` of `|x - y|^s`.
    #[inline]
    pub(crate) fn cost_power_deriv_1d(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        let s = self.order_s;
        if s == 2.0 {
            2.0 * d
        } else {
            s * d.abs().powf(s - 1.0) * d.signum()
        }
    }
}

#[inline]
fn pow_from_squared(sq: f64, s: f64) -> f64 {
    if s == 2.0 {
        sq
    } else if s == 1.0 {
        sq.sqrt()
    } else {
        sq.powf(0.5 * s)
    }
}

/// Uniform empirical measure over `n >= 1` samples of a common dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Observation>", into = "Vec<Observation>")]
pub struct EmpiricalDistribution {
    samples: Vec<Observation>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<Observation>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return invalid("empirical distribution needs at least one sample");
        };
        let d = first.dim();
        for s in &samples {
            check_dim(d, s.dim())?;
        }
        Ok(Self { samples })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Observation::new(vec![v])).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[Observation] {
        &self.samples
    }

    /// Distinct atoms with aggregated weights, in first-occurrence order.
    pub fn merged(&self) -> (Vec<Observation>, Vec<f64>) {
        let n = self.samples.len() as f64;
        let mut atoms: Vec<Observation> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for s in &self.samples {
            match atoms.iter().position(|a| a == s) {
                Some(i) => counts[i] += 1,
                None => {
                    atoms.push(s.clone());
                    counts.push(1);
                }
            }
        }
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        (atoms, weights)
    }

    /// Index of each original sample into the merged atom list.
    pub(crate) fn merge_index(&self, atoms: &[Observation]) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| atoms.iter().position(|a| a == s).expect("atom present"))
            .collect()
    }
}

impl TryFrom<Vec<Observation>> for EmpiricalDistribution {
    type Error = Error;
    fn try_from(v: Vec<Observation>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmpiricalDistribution> for Vec<Observation> {
    fn from(e: EmpiricalDistribution) -> Self {
        e.samples
    }
}

/// Anything that can draw observations from a fixed law.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;
    fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]);
}

/// A user-provided density with a sampler.
///
/// The one-dimensional quadrature path uses `support`, `location` and
/// `scale` to choose its integration window.
pub trait DensityModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]);
    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn location(&self) -> f64;
    fn scale(&self) -> f64;
    /// Model string in the `name:key=value,...` grammar.
    fn describe(&self) -> String;
}

/// Beta(a, b) on [0, 1].
#[derive(Clone, Debug)]
pub struct BetaDensity {
    a: f64,
    b: f64,
    log_norm: f64,
    sampler: rand_distr::Beta<f64>,
}

impl BetaDensity {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return invalid(format!("beta parameters must be positive, got a={a}, b={b}"));
        }
        use statrs::function::gamma::ln_gamma;
        let sampler = rand_distr::Beta::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { a, b, log_norm: ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b), sampler })
    }
}

impl DensityModel for BetaDensity {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let x = x[0];
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let t1 = if self.a == 1.0 { 0.0 } else { (self.a - 1.0) * x.ln() };
        let t2 = if self.b == 1.0 { 0.0 } else { (self.b - 1.0) * (1.0 - x).ln() };
        self.log_norm + t1 + t2
    }
    fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]) {
        out[0] = self.sampler.sample(rng);
    }
    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn location(&self) -> f64 {
        self.a / (self.a + self.b)
    }
    fn scale(&self) -> f64 {
        let s = self.a + self.b;
        (self.a * self.b / (s * s * (s + 1.0))).sqrt()
    }
    fn describe(&self) -> String {
        format!("beta:a={},b={}", self.a, self.b)
    }
}

/// The pre-change law `Q`.
#[derive(Clone, Debug)]
pub enum PreChangeModel {
    Gaussian1D { mean: f64, variance: f64 },
    GaussianDiag { mean: Vec<f64>, variance: Vec<f64> },
    Generic(Arc<dyn DensityModel>),
    /// Historical pre-change samples; no pointwise density.
    Empirical(EmpiricalDistribution),
}

impl PreChangeModel {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return invalid(format!("gaussian needs finite mean and positive variance, got {mean}, {variance}"));
        }
        Ok(Self::Gaussian1D { mean, variance })
    }

    pub fn gaussian_diag(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return invalid("gaussian-diag needs at least one coordinate");
        }
        check_dim(mean.len(), variance.len())?;
        if variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return invalid("gaussian-diag needs finite means and positive variances");
        }
        Ok(Self::GaussianDiag { mean, variance })
    }

    pub fn standard_normal() -> Self {
        Self::Gaussian1D { mean: 0.0, variance: 1.0 }
    }

    pub fn generic(model: Arc<dyn DensityModel>) -> Self {
        Self::Generic(model)
    }

    pub fn empirical(samples: EmpiricalDistribution) -> Self {
        Self::Empirical(samples)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian1D { .. } => 1,
            Self::GaussianDiag { mean, .. } => mean.len(),
            Self::Generic(m) => m.dim(),
            Self::Empirical(e) => e.dim(),
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, Self::Empirical(_))
    }

    /// `log q(x)`; `-inf` where the density vanishes.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match self {
            Self::Empirical(_) => Err(Error::DensityUnavailable(
                "an empirical pre-change model; use the sample-average path".into(),
            )),
            _ => Ok(self.log_density_unchecked(x)),
        }
    }

    /// Caller guarantees the dimension and that a density exists.
    #[inline]
    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian1D { mean, variance } => {
                let z = x[0] - mean;
                -0.5 * (LN_2PI + variance.ln()) - 0.5 * z * z / variance
            }
            Self::GaussianDiag { mean, variance } => x
                .iter()
                .zip(mean)
                .zip(variance)
                .map(|((xi, m), v)| {
                    let z = xi - m;
                    -0.5 * (LN_2PI + v.ln()) - 0.5 * z * z / v
                })
                .sum(),
            Self::Generic(m) => m.log_density(x),
            Self::Empirical(_) => f64::NAN,
        }
    }

    /// `count` i.i.d. draws from stream 0 of `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<Observation>> {
        if count == 0 {
            return invalid("sample count must be at least 1");
        }
        let mut rng = seeded(seed);
        Ok(self.sample_with(&mut rng, count))
    }

    pub fn sample_with(&self, rng: &mut SimRng, count: usize) -> Vec<Observation> {
        let d = self.dim();
        (0..count)
            .map(|_| {
                let mut buf = vec![0.0; d];
                self.draw(rng, &mut buf);
                Observation(buf)
            })
            .collect()
    }

    #[inline]
    fn draw(&self, rng: &mut SimRng, out: &mut [f64]) {
        match self {
            Self::Gaussian1D { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                out[0] = mean + variance.sqrt() * z;
            }
            Self::GaussianDiag { mean, variance } => {
                for ((o, m), v) in out.iter_mut().zip(mean).zip(variance) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + v.sqrt() * z;
                }
            }
            Self::Generic(m) => m.draw_into(rng, out),
            Self::Empirical(e) => {
                let i = rng.random_range(0..e.len());
                out.copy_from_slice(&e.samples()[i]);
            }
        }
    }

    /// Location and scale used to place one-dimensional quadrature windows.
    pub(crate) fn location_scale_1d(&self) -> Option<(f64, f64)> {
        match self {
            Self::Gaussian1D { mean, variance } => Some((*mean, variance.sqrt())),
            Self::GaussianDiag { mean, variance } if mean.len() == 1 => Some((mean[0], variance[0].sqrt())),
            Self::Generic(m) if m.dim() == 1 => Some((m.location(), m.scale())),
            _ => None,
        }
    }

    pub(crate) fn support_1d(&self) -> (f64, f64) {
        match self {
            Self::Generic(m) => m.support(),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Model string in the grammar accepted by [`PreChangeModel::parse`].
    /// Empirical models report their size only and cannot be re-parsed.
    pub fn describe(&self) -> String {
        match self {
            Self::Gaussian1D { mean, variance } => format!("gaussian:mu={},sigma={}", mean, variance.sqrt()),
            Self::GaussianDiag { mean, variance } => format!("gaussian-diag:mean={},var={}", join(mean), join(variance)),
            Self::Generic(m) => m.describe(),
            Self::Empirical(e) => format!("empirical:n={}", e.len()),
        }
    }

    /// Parses a model string:
    ///
    /// * `gaussian:mu=0,sigma=1` (or `var=` instead of `sigma=`)
    /// * `gaussian-diag:mean=0/0/0,var=1/1/1`
    /// * `beta:a=2,b=3`
    /// * `empirical:<csv path>`
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let name = name.trim();
        if name == "empirical" {
            let path = rest.trim();
            if path.is_empty() || path.starts_with("n=") {
                return invalid("empirical model needs a CSV path: empirical:<path>");
            }
            let samples = crate::io::read_observations_path(Path::new(path))?;
            return Ok(Self::Empirical(EmpiricalDistribution::new(samples)?));
        }
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value in model spec, got '{part}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("model spec '{spec}' is missing '{k}'")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number for '{k}': {e}")))
        };
        let vec = |k: &str| -> Result<Vec<f64>> {
            kv.get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("model spec '{spec}' is missing '{k}'")))?
                .split('/')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number in '{k}': {e}"))))
                .collect()
        };
        match name {
            "gaussian" | "normal" => {
                let mu = if kv.contains_key("mu") { num("mu")? } else { 0.0 };
                let var = match (kv.contains_key("sigma"), kv.contains_key("var")) {
                    (true, false) => num("sigma")?.powi(2),
                    (false, true) => num("var")?,
                    (false, false) => 1.0,
                    (true, true) => return invalid("give either sigma or var, not both"),
                };
                Self::gaussian(mu, var)
            }
            "gaussian-diag" => Self::gaussian_diag(vec("mean")?, vec("var")?),
            "beta" => Ok(Self::Generic(Arc::new(BetaDensity::new(num("a")?, num("b")?)?))),
            other => invalid(format!("unknown model family '{other}'")),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/")
}

impl Sampler for PreChangeModel {
    fn dim(&self) -> usize {
        PreChangeModel::dim(self)
    }
    fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]) {
        self.draw(rng, out)
    }
}
