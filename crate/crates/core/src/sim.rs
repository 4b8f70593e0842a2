//! Monte-Carlo estimation of mean time to false alarm (MTFA) and worst-case
//! detection delay (WADD), threshold calibration, and the experiment
//! recipes that sweep them.
//!
//! Every trial runs its detector once and keeps the running-maximum
//! records of the detection statistic. The alarm time for any threshold
//! `b` is the first record at or above `b`, so one run serves a whole
//! threshold grid and the estimated MTFA is monotone in `b`. Trial `t`
//! draws from its own substream, so results do not depend on the number
//! of worker threads.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gaussian_mle, DensityRatioScorer, KdeConfig, NglrDetector};
use crate::detector::{CusumDetector, LlrScorer, ScenarioScorer, SequentialDetector};
use crate::distributions::{CostMetric, EmpiricalDistribution, PreChangeModel, Sampler};
use crate::error::{invalid, Error, Result};
use crate::lfd::{LfdScorer, SolverOptions};
use crate::rng::{derive_seed, substream, SimRng};

const TAG_TRAIN: u64 = 0x7261_696e;
const TAG_MTFA: u64 = 0x6d74_6661;
const TAG_WADD: u64 = 0x7761_6464;

/// Running-maximum records `(statistic, time)` of one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialRecords {
    records: Vec<(f64, u64)>,
    pub steps: u64,
}

impl TrialRecords {
    /// First time the statistic reached `b`, if it did before the run ended.
    pub fn first_passage(&self, b: f64) -> Option<u64> {
        let i = self.records.partition_point(|r| r.0 < b);
        self.records.get(i).map(|r| r.1)
    }
}

/// Feeds `det` with draws from `law` until its statistic reaches `stop_at`
/// or `cap` observations have been used.
pub fn run_trial(
    det: &mut dyn SequentialDetector,
    law: &dyn Sampler,
    rng: &mut SimRng,
    stop_at: f64,
    cap: u64,
) -> Result<TrialRecords> {
    let mut x = vec![0.0; law.dim()];
    let mut out = TrialRecords::default();
    let mut best = f64::NEG_INFINITY;
    while out.steps < cap {
        law.draw_into(rng, &mut x);
        let s = det.step(&x)?;
        out.steps += 1;
        if s > best {
            best = s;
            out.records.push((s, out.steps));
            if s >= stop_at {
                break;
            }
        }
    }
    Ok(out)
}

/// Trials for one detector on one stream law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trials: usize,
    pub cap: u64,
    pub seed: u64,
}

impl TrialPlan {
    pub fn new(trials: usize, cap: u64, seed: u64) -> Result<Self> {
        if trials == 0 || cap == 0 {
            return invalid("trial count and cap must be positive");
        }
        Ok(Self { trials, cap, seed })
    }
}

/// Runs `plan.trials` independent trials in parallel.
pub fn run_trials(det: &dyn SequentialDetector, law: &dyn Sampler, stop_at: f64, plan: &TrialPlan) -> Result<Vec<TrialRecords>> {
    if det.dim() != law.dim() {
        return Err(Error::DimensionMismatch { expected: det.dim(), got: law.dim() });
    }
    (0..plan.trials)
        .into_par_iter()
        .map(|t| {
            let mut d = det.fresh();
            let mut rng = substream(plan.seed, t as u64);
            run_trial(d.as_mut(), law, &mut rng, stop_at, plan.cap)
        })
        .collect()
}

/// Sample mean of stopping times with its standard error. Censored
/// trials count as the cap, so any censoring makes `mean` a lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub censored: usize,
    pub trials: usize,
    pub cap: u64,
}

impl Estimate {
    pub fn is_lower_bound(&self) -> bool {
        self.censored > 0
    }

    pub fn all_censored(&self) -> bool {
        self.censored == self.trials
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.all_censored() {
            write!(f, "> {} (all {} trials censored)", self.cap, self.trials)
        } else if self.is_lower_bound() {
            write!(f, ">= {:.3} ± {:.3} ({} of {} censored)", self.mean, self.se, self.censored, self.trials)
        } else {
            write!(f, "{:.3} ± {:.3}", self.mean, self.se)
        }
    }
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate at threshold `b` from trial records.
pub fn estimate_at(records: &[TrialRecords], b: f64, cap: u64) -> Estimate {
    let mut censored = 0;
    let times: Vec<f64> = records
        .iter()
        .map(|r| match r.first_passage(b) {
            Some(t) => t as f64,
            None => {
                censored += 1;
                cap as f64
            }
        })
        .collect();
    let (mean, se) = mean_se(&times);
    Estimate { mean, se, censored, trials: records.len(), cap }
}

fn estimate_grid(det: &dyn SequentialDetector, law: &dyn Sampler, thresholds: &[f64], plan: &TrialPlan) -> Result<Vec<Estimate>> {
    if thresholds.is_empty() || thresholds.iter().any(|b| !b.is_finite()) {
        return invalid("thresholds must be a non-empty list of finite numbers");
    }
    let top = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recs = run_trials(det, law, top, plan)?;
    Ok(thresholds.iter().map(|&b| estimate_at(&recs, b, plan.cap)).collect())
}

/// MTFA per threshold from streams that never change (`q` throughout).
pub fn estimate_mtfa(det: &dyn SequentialDetector, q: &dyn Sampler, thresholds: &[f64], plan: &TrialPlan) -> Result<Vec<Estimate>> {
    estimate_grid(det, q, thresholds, plan)
}

/// Detection delay per threshold with the change at time 1 (`p`
/// throughout); the delay is the stopping time itself.
pub fn estimate_wadd(det: &dyn SequentialDetector, p: &dyn Sampler, thresholds: &[f64], plan: &TrialPlan) -> Result<Vec<Estimate>> {
    estimate_grid(det, p, thresholds, plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub b: f64,
    pub mtfa: Estimate,
    pub target: f64,
    pub warning: Option<String>,
}

/// Smallest threshold in `bracket` whose estimated MTFA reaches `target`.
///
/// All thresholds share the same trials, so the estimate is monotone in
/// `b` and bisection is exact up to `1e-9` in `b`. If the target lies
/// outside what the bracket can reach, the nearer endpoint is returned
/// with a warning.
pub fn calibrate_threshold(
    det: &dyn SequentialDetector,
    q: &dyn Sampler,
    target: f64,
    bracket: (f64, f64),
    plan: &TrialPlan,
) -> Result<Calibration> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Bracket(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(target > 0.0) {
        return invalid("target MTFA must be positive");
    }
    let recs = run_trials(det, q, hi, plan)?;
    let at = |b: f64| estimate_at(&recs, b, plan.cap);
    let top = at(hi);
    if top.mean < target {
        let warning = Some(format!("target {target} exceeds the MTFA {:.3} reached at the bracket top", top.mean));
        return Ok(Calibration { b: hi, mtfa: top, target, warning });
    }
    let bottom = at(lo);
    if bottom.mean >= target {
        let warning = Some(format!("target {target} is already met at the bracket bottom"));
        return Ok(Calibration { b: lo, mtfa: bottom, target, warning });
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if at(mid).mean >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mtfa = at(hi);
    let warning = (top.censored > 0).then(|| format!("{} trials censored at cap {}", top.censored, plan.cap));
    let warning = if (mtfa.mean - target).abs() > 0.1 * target {
        Some(format!("closest achievable MTFA {:.3} is more than 10% from the target", mtfa.mean))
    } else {
        warning
    };
    Ok(Calibration { b: hi, mtfa, target, warning })
}

fn default_order() -> f64 {
    2.0
}

fn default_scenario() -> Vec<usize> {
    vec![1]
}

/// Detector entry of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    /// CuSum with the true post-change density.
    Exact {
        #[serde(default)]
        name: Option<String>,
    },
    /// CuSum with a Gaussian fitted to the training samples of `scenario`.
    GaussianMle {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "one")]
        scenario: usize,
    },
    /// Distributionally robust CuSum over the listed scenarios.
    DrCusum {
        #[serde(default)]
        name: Option<String>,
        radius: f64,
        #[serde(default = "default_order")]
        order_s: f64,
        #[serde(default = "default_scenario")]
        scenarios: Vec<usize>,
    },
    /// Windowed kernel GLR with training samples of `scenario`.
    Nglr {
        #[serde(default)]
        name: Option<String>,
        window: usize,
        bandwidths: Vec<f64>,
        #[serde(default = "one")]
        scenario: usize,
    },
}

fn one() -> usize {
    1
}

impl DetectorSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Exact { name } => name.clone().unwrap_or_else(|| "exact".into()),
            Self::GaussianMle { name, .. } => name.clone().unwrap_or_else(|| "gaussian_mle".into()),
            Self::DrCusum { name, radius, scenarios, .. } => {
                name.clone().unwrap_or_else(|| format!("dr_cusum(r={radius},M={})", scenarios.len()))
            }
            Self::Nglr { name, window, .. } => name.clone().unwrap_or_else(|| format!("nglr(W={window})")),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Self::DrCusum { radius, .. } => Some(*radius),
            _ => None,
        }
    }
}

/// An experiment recipe, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: String,
    pub seed: u64,
    /// Pre-change model string.
    pub prechange: String,
    /// Law of the stream after the change.
    pub postchange: String,
    /// Laws the training samples of each scenario are drawn from; defaults
    /// to the post-change law alone.
    #[serde(default)]
    pub scenarios: Vec<String>,
    /// Training samples per scenario.
    pub n: usize,
    #[serde(default = "one")]
    pub training_sets: usize,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub mtfa_trials: usize,
    #[serde(default)]
    pub wadd_trials: usize,
    /// Censoring cap; defaults to 50 times `e^b` at the largest threshold.
    #[serde(default)]
    pub cap: Option<u64>,
    #[serde(default)]
    pub detectors: Vec<DetectorSpec>,
    /// Radius grid of the KL curve.
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default = "default_order")]
    pub order_s: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check_common()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn check_common(&self) -> Result<()> {
        if self.n == 0 || self.training_sets == 0 {
            return Err(Error::Config("n and training_sets must be positive".into()));
        }
        PreChangeModel::parse(&self.prechange)?;
        PreChangeModel::parse(&self.postchange)?;
        for s in &self.scenarios {
            PreChangeModel::parse(s)?;
        }
        let m = self.scenario_laws()?.len();
        for d in &self.detectors {
            let ids: &[usize] = match d {
                DetectorSpec::Exact { .. } => &[],
                DetectorSpec::GaussianMle { scenario, .. } | DetectorSpec::Nglr { scenario, .. } => std::slice::from_ref(scenario),
                DetectorSpec::DrCusum { scenarios, radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::Config(format!("radius must be positive, got {radius}")));
                    }
                    if scenarios.is_empty() {
                        return Err(Error::Config("a robust detector needs at least one scenario".into()));
                    }
                    scenarios
                }
            };
            if ids.iter().any(|&i| i == 0 || i > m) {
                return Err(Error::Config(format!("detector '{}' names a scenario outside 1..={m}", d.label())));
            }
        }
        Ok(())
    }

    /// Checks the fields an operating-characteristic run needs.
    pub fn check_oc(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.detectors.is_empty() {
            return Err(Error::Config("thresholds and detectors must be non-empty".into()));
        }
        if self.thresholds.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if self.mtfa_trials == 0 && self.wadd_trials == 0 {
            return Err(Error::Config("set mtfa_trials or wadd_trials".into()));
        }
        Ok(())
    }

    pub fn scenario_laws(&self) -> Result<Vec<PreChangeModel>> {
        if self.scenarios.is_empty() {
            Ok(vec![PreChangeModel::parse(&self.postchange)?])
        } else {
            self.scenarios.iter().map(|s| PreChangeModel::parse(s)).collect()
        }
    }

    pub fn cap(&self) -> u64 {
        self.cap.unwrap_or_else(|| {
            let top = self.thresholds.iter().copied().fold(0.0, f64::max);
            (50.0 * top.exp()).ceil().clamp(1000.0, 1e9) as u64
        })
    }

    /// Training samples of every scenario for training set `set`.
    pub fn training(&self, set: usize) -> Result<Vec<EmpiricalDistribution>> {
        self.scenario_laws()?
            .iter()
            .enumerate()
            .map(|(m, law)| {
                let seed = derive_seed(derive_seed(self.seed, TAG_TRAIN), m as u64);
                let mut rng = substream(seed, set as u64);
                EmpiricalDistribution::new(law.sample_with(&mut rng, self.n))
            })
            .collect()
    }

    /// Builds a detector for one training set.
    pub fn build_detector(&self, spec: &DetectorSpec, training: &[EmpiricalDistribution]) -> Result<Box<dyn SequentialDetector>> {
        let q = PreChangeModel::parse(&self.prechange)?;
        Ok(match spec {
            DetectorSpec::Exact { .. } => {
                let p = PreChangeModel::parse(&self.postchange)?;
                let s: Arc<dyn LlrScorer> = Arc::new(DensityRatioScorer::new(p, q)?);
                Box::new(CusumDetector::new(ScenarioScorer::numbered(vec![s]))?)
            }
            DetectorSpec::GaussianMle { scenario, .. } => {
                let fit = fit_gaussian_mle(&training[scenario - 1])?;
                let s: Arc<dyn LlrScorer> = Arc::new(DensityRatioScorer::new(fit.model()?, q)?);
                Box::new(CusumDetector::new(ScenarioScorer::numbered(vec![s]))?)
            }
            DetectorSpec::DrCusum { radius, order_s, scenarios, .. } => {
                let metric = CostMetric::euclidean(*order_s)?;
                let mut scorers: Vec<Arc<dyn LlrScorer>> = Vec::with_capacity(scenarios.len());
                for &m in scenarios {
                    let fit = LfdScorer::fit(q.clone(), training[m - 1].clone(), metric, *radius, &SolverOptions::default())?;
                    scorers.push(Arc::new(fit));
                }
                Box::new(CusumDetector::new(ScenarioScorer::numbered(scorers))?)
            }
            DetectorSpec::Nglr { window, bandwidths, scenario, .. } => {
                let cfg = KdeConfig::new(bandwidths.clone(), *window)?;
                Box::new(NglrDetector::new(q, &training[scenario - 1], cfg)?)
            }
        })
    }
}

/// Results of one detector on one training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetCurve {
    pub detector: usize,
    pub set: usize,
    /// One entry per threshold; `None` when that estimate was not run.
    pub mtfa: Vec<Option<Estimate>>,
    pub wadd: Vec<Option<Estimate>>,
}

/// One row of the operating-characteristic table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcPoint {
    pub detector: String,
    pub b: f64,
    pub mtfa: Option<f64>,
    pub mtfa_se: Option<f64>,
    pub wadd: Option<f64>,
    pub wadd_se: Option<f64>,
    pub censored: usize,
    pub radius: Option<f64>,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcResult {
    pub labels: Vec<String>,
    pub thresholds: Vec<f64>,
    pub curves: Vec<SetCurve>,
    pub points: Vec<OcPoint>,
    pub cap: u64,
}

/// Averages per-set estimates. With several training sets the standard
/// error is that of the mean over sets, which includes the variation
/// between training sets; with one set it is the trial-level error.
fn pool(ests: &[Estimate]) -> (f64, f64, usize) {
    let censored = ests.iter().map(|e| e.censored).sum();
    if ests.len() == 1 {
        return (ests[0].mean, ests[0].se, censored);
    }
    let means: Vec<f64> = ests.iter().map(|e| e.mean).collect();
    let (m, se) = mean_se(&means);
    (m, se, censored)
}

/// Sweeps the threshold grid for every detector and training set.
pub fn run_oc_curve(cfg: &ExperimentConfig) -> Result<OcResult> {
    cfg.check_oc()?;
    let q = PreChangeModel::parse(&cfg.prechange)?;
    let p = PreChangeModel::parse(&cfg.postchange)?;
    let cap = cfg.cap();
    let mut curves = Vec::new();
    for set in 0..cfg.training_sets {
        let training = cfg.training(set)?;
        let mtfa_plan = TrialPlan { trials: cfg.mtfa_trials, cap, seed: derive_seed(derive_seed(cfg.seed, TAG_MTFA), set as u64) };
        let wadd_plan = TrialPlan { trials: cfg.wadd_trials, cap, seed: derive_seed(derive_seed(cfg.seed, TAG_WADD), set as u64) };
        for (k, spec) in cfg.detectors.iter().enumerate() {
            let det = cfg.build_detector(spec, &training)?;
            let mtfa = if cfg.mtfa_trials > 0 {
                estimate_mtfa(det.as_ref(), &q, &cfg.thresholds, &mtfa_plan)?.into_iter().map(Some).collect()
            } else {
                vec![None; cfg.thresholds.len()]
            };
            let wadd = if cfg.wadd_trials > 0 {
                estimate_wadd(det.as_ref(), &p, &cfg.thresholds, &wadd_plan)?.into_iter().map(Some).collect()
            } else {
                vec![None; cfg.thresholds.len()]
            };
            curves.push(SetCurve { detector: k, set, mtfa, wadd });
        }
    }
    let mut points = Vec::new();
    for (k, spec) in cfg.detectors.iter().enumerate() {
        for (i, &b) in cfg.thresholds.iter().enumerate() {
            let mine: Vec<&SetCurve> = curves.iter().filter(|c| c.detector == k).collect();
            let m: Vec<Estimate> = mine.iter().filter_map(|c| c.mtfa[i]).collect();
            let w: Vec<Estimate> = mine.iter().filter_map(|c| c.wadd[i]).collect();
            let (mtfa, mtfa_se, c1) = if m.is_empty() { (None, None, 0) } else { let (a, s, c) = pool(&m); (Some(a), Some(s), c) };
            let (wadd, wadd_se, c2) = if w.is_empty() { (None, None, 0) } else { let (a, s, c) = pool(&w); (Some(a), Some(s), c) };
            points.push(OcPoint {
                detector: spec.label(),
                b,
                mtfa,
                mtfa_se,
                wadd,
                wadd_se,
                censored: c1 + c2,
                radius: spec.radius(),
                n: cfg.n,
                seed: cfg.seed,
            });
        }
    }
    Ok(OcResult {
        labels: cfg.detectors.iter().map(DetectorSpec::label).collect(),
        thresholds: cfg.thresholds.clone(),
        curves,
        points,
        cap,
    })
}

/// Writes the operating-characteristic table as CSV.
pub fn write_oc_csv<W: Write>(points: &[OcPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["detector", "b", "mtfa", "mtfa_se", "wadd", "wadd_se", "censored", "radius", "n", "seed"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        w.write_record([
            p.detector.clone(),
            p.b.to_string(),
            opt(p.mtfa),
            opt(p.mtfa_se),
            opt(p.wadd),
            opt(p.wadd_se),
            p.censored.to_string(),
            opt(p.radius),
            p.n.to_string(),
            p.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Delay at a given MTFA by linear interpolation in `log MTFA` along one
/// curve. Points with censored MTFA trials are skipped; targets outside
/// the curve's range give `None`.
pub fn matched_wadd(curve: &SetCurve, target_mtfa: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .mtfa
        .iter()
        .zip(&curve.wadd)
        .filter_map(|(m, w)| match (m, w) {
            (Some(m), Some(w)) if m.censored == 0 && m.mean > 0.0 => Some((m.mean.ln(), w.mean)),
            _ => None,
        })
        .collect();
    let t = target_mtfa.ln();
    for seg in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        if (x0..=x1).contains(&t) {
            if x1 == x0 {
                return Some(0.5 * (y0 + y1));
            }
            return Some(y0 + (y1 - y0) * (t - x0) / (x1 - x0));
        }
    }
    None
}

/// Matched-MTFA delay of one detector averaged over training sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matched {
    pub mean: f64,
    pub se: f64,
    pub sets: usize,
}

pub fn matched_summary(result: &OcResult, detector: usize, target_mtfa: f64) -> Option<Matched> {
    let v: Vec<f64> = result
        .curves
        .iter()
        .filter(|c| c.detector == detector)
        .filter_map(|c| matched_wadd(c, target_mtfa))
        .collect();
    if v.is_empty() {
        return None;
    }
    let (mean, se) = mean_se(&v);
    Some(Matched { mean, se, sets: v.len() })
}

/// Mean over training sets of `wadd(a) - wadd(b)` at matched MTFA, using
/// only sets where both curves reach the target.
pub fn compare_matched(result: &OcResult, a: usize, b: usize, target_mtfa: f64) -> Option<Matched> {
    let sets = result.curves.iter().map(|c| c.set).max()? + 1;
    let mut diffs = Vec::new();
    for s in 0..sets {
        let find = |k: usize| result.curves.iter().find(|c| c.detector == k && c.set == s);
        if let (Some(ca), Some(cb)) = (find(a), find(b)) {
            if let (Some(wa), Some(wb)) = (matched_wadd(ca, target_mtfa), matched_wadd(cb, target_mtfa)) {
                diffs.push(wa - wb);
            }
        }
    }
    if diffs.is_empty() {
        return None;
    }
    let (mean, se) = mean_se(&diffs);
    Some(Matched { mean, se, sets: diffs.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub set: usize,
    pub radius: f64,
    pub dual_value: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-favourable KL divergence over the radius grid, for each training
/// set of the first scenario.
pub fn run_kl_curve(cfg: &ExperimentConfig) -> Result<Vec<KlRow>> {
    if cfg.radii.is_empty() {
        return Err(Error::Config("radii must be non-empty".into()));
    }
    if cfg.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::Config("radii must be positive".into()));
    }
    let q = PreChangeModel::parse(&cfg.prechange)?;
    let metric = CostMetric::euclidean(cfg.order_s)?;
    let mut rows = Vec::new();
    for set in 0..cfg.training_sets {
        let training = cfg.training(set)?.swap_remove(0);
        let sols: Vec<Result<KlRow>> = cfg
            .radii
            .par_iter()
            .map(|&r| {
                let s = crate::lfd::solve_dual(&q, metric, &training, r, &SolverOptions::default())?;
                Ok(KlRow {
                    set,
                    radius: r,
                    dual_value: s.dual_value,
                    lambda: s.point.lambda,
                    iterations: s.iterations,
                    converged: s.converged,
                })
            })
            .collect();
        for s in sols {
            rows.push(s?);
        }
    }
    Ok(rows)
}

pub fn write_kl_csv<W: Write>(rows: &[KlRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
