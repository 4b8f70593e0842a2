//! CuSum recursions over one or several post-change scenarios.
//!
//! Each scenario `m` keeps `S_k(m) = max(S_{k-1}(m), 0) + llr_m(X_k)`, and the
//! detector alarms at the first `k` with `max_m S_k(m) >= b`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{check_dim, Observation};
use crate::error::{invalid, Error, Result};
use crate::lfd::LfdScorer;

/// Per-sample log-likelihood ratio `log p(x) / q(x)` of some post-change model.
pub trait LlrScorer: Send + Sync {
    fn dim(&self) -> usize;
    fn llr(&self, x: &[f64]) -> Result<f64>;
}

impl LlrScorer for LfdScorer {
    fn dim(&self) -> usize {
        LfdScorer::dim(self)
    }
    fn llr(&self, x: &[f64]) -> Result<f64> {
        LfdScorer::llr(self, x)
    }
}

impl<T: LlrScorer + ?Sized> LlrScorer for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn llr(&self, x: &[f64]) -> Result<f64> {
        (**self).llr(x)
    }
}

/// A scorer tagged with its scenario number (1-based).
#[derive(Clone)]
pub struct ScenarioScorer {
    pub id: usize,
    pub scorer: Arc<dyn LlrScorer>,
}

impl ScenarioScorer {
    pub fn new(id: usize, scorer: Arc<dyn LlrScorer>) -> Self {
        Self { id, scorer }
    }

    /// Numbers the scorers `1..=M` in order.
    pub fn numbered(scorers: Vec<Arc<dyn LlrScorer>>) -> Vec<Self> {
        scorers.into_iter().enumerate().map(|(i, s)| Self::new(i + 1, s)).collect()
    }
}

impl std::fmt::Debug for ScenarioScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioScorer").field("id", &self.id).field("dim", &self.scorer.dim()).finish()
    }
}

fn validate(scorers: &[ScenarioScorer]) -> Result<usize> {
    let Some(first) = scorers.first() else {
        return invalid("at least one scenario scorer is required");
    };
    let dim = first.scorer.dim();
    let mut ids: Vec<usize> = scorers.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) || ids[0] == 0 {
        return invalid("scenario ids must be unique and start at 1");
    }
    for s in scorers {
        check_dim(dim, s.scorer.dim())?;
    }
    Ok(dim)
}

/// `max(S_prev, 0) + llr`.
pub fn cusum_step(s_prev: f64, llr: f64) -> Result<f64> {
    if !llr.is_finite() {
        return Err(Error::NonFiniteLlr(llr));
    }
    Ok(s_prev.max(0.0) + llr)
}

/// `b = log(M gamma)`, the threshold that keeps the mean time to false
/// alarm above `gamma` for an `M`-scenario detector.
pub fn threshold_for_mtfa(gamma: f64, scenarios: usize) -> Result<f64> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return invalid(format!("gamma must exceed 1, got {gamma}"));
    }
    if scenarios == 0 {
        return invalid("need at least one scenario");
    }
    Ok((scenarios as f64 * gamma).ln())
}

/// Inverse of [`threshold_for_mtfa`]: `gamma = e^b / M`.
pub fn mtfa_for_threshold(b: f64, scenarios: usize) -> f64 {
    b.exp() / scenarios as f64
}

/// Compensated CuSum accumulator: the positive-part reset clears the
/// running error term together with the sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn value(&self) -> f64 {
        self.sum + self.comp
    }

    fn cusum(&mut self, llr: f64) {
        if self.value() <= 0.0 {
            *self = Self::default();
        }
        let t = self.sum + llr;
        if self.sum.abs() >= llr.abs() {
            self.comp += (self.sum - t) + llr;
        } else {
            self.comp += (llr - t) + self.sum;
        }
        self.sum = t;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState {
    acc: Vec<Compensated>,
    pub step: u64,
    pub threshold_b: f64,
    pub stopped_at: Option<u64>,
    /// 1-based scenario id attaining the maximum at the alarm.
    pub argmax_scenario: Option<usize>,
}

impl DetectorState {
    pub fn new(scenarios: usize, threshold_b: f64) -> Self {
        Self {
            acc: vec![Compensated::default(); scenarios],
            step: 0,
            threshold_b,
            stopped_at: None,
            argmax_scenario: None,
        }
    }

    pub fn stats(&self) -> Vec<f64> {
        self.acc.iter().map(Compensated::value).collect()
    }

    /// `max_m S_k(m)` and the lowest-index scenario attaining it.
    pub fn max_stat(&self) -> (f64, usize) {
        let mut best = 0;
        for (i, a) in self.acc.iter().enumerate() {
            if a.value() > self.acc[best].value() {
                best = i;
            }
        }
        (self.acc.get(best).map_or(f64::NEG_INFINITY, Compensated::value), best)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped_at.is_some()
    }

    /// Feeds one observation; returns `true` if this step raised the alarm.
    pub fn advance(&mut self, x: &[f64], scorers: &[ScenarioScorer]) -> Result<bool> {
        if self.is_stopped() {
            return invalid("detector already stopped");
        }
        if scorers.len() != self.acc.len() {
            return invalid(format!("expected {} scenario scorers, got {}", self.acc.len(), scorers.len()));
        }
        if scorers.len() == 1 {
            let v = scorers[0].scorer.llr(x)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLlr(v));
            }
            self.acc[0].cusum(v);
        } else {
            let mut llrs = Vec::with_capacity(scorers.len());
            for s in scorers {
                let v = s.scorer.llr(x)?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteLlr(v));
                }
                llrs.push(v);
            }
            for (a, v) in self.acc.iter_mut().zip(llrs) {
                a.cusum(v);
            }
        }
        self.step += 1;
        let (max, idx) = self.max_stat();
        if max >= self.threshold_b {
            self.stopped_at = Some(self.step);
            self.argmax_scenario = Some(scorers[idx].id);
            return Ok(true);
        }
        Ok(false)
    }
}

/// A detector whose statistic can be fed one observation at a time.
///
/// `step` returns the detection statistic after the observation; the
/// alarm time for threshold `b` is the first step whose statistic is `>= b`.
pub trait SequentialDetector: Send + Sync {
    fn dim(&self) -> usize;
    fn reset(&mut self);
    /// A copy in the initial state.
    fn fresh(&self) -> Box<dyn SequentialDetector>;
    fn step(&mut self, x: &[f64]) -> Result<f64>;
}

/// Multi-scenario CuSum as a [`SequentialDetector`].
#[derive(Clone, Debug)]
pub struct CusumDetector {
    scorers: Vec<ScenarioScorer>,
    state: DetectorState,
}

impl CusumDetector {
    pub fn new(scorers: Vec<ScenarioScorer>) -> Result<Self> {
        validate(&scorers)?;
        let state = DetectorState::new(scorers.len(), f64::INFINITY);
        Ok(Self { scorers, state })
    }

    pub fn scenarios(&self) -> usize {
        self.scorers.len()
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }
}

impl SequentialDetector for CusumDetector {
    fn dim(&self) -> usize {
        self.scorers[0].scorer.dim()
    }
    fn reset(&mut self) {
        self.state = DetectorState::new(self.scorers.len(), f64::INFINITY);
    }
    fn fresh(&self) -> Box<dyn SequentialDetector> {
        let mut d = self.clone();
        d.reset();
        Box::new(d)
    }
    fn step(&mut self, x: &[f64]) -> Result<f64> {
        self.state.advance(x, &self.scorers)?;
        Ok(self.state.max_stat().0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamStatus {
    Alarm,
    /// Reached the cap without an alarm.
    Censored,
    /// The stream ended before an alarm or the cap.
    Exhausted,
}

/// Outcome of running a detector over a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub status: StreamStatus,
    /// Alarm time when `status` is `alarm`, otherwise `null`.
    pub stopping_time: Option<u64>,
    pub argmax_scenario: Option<usize>,
    pub steps: u64,
    pub threshold_b: f64,
    pub final_stats: Vec<f64>,
}

/// Runs the multi-scenario CuSum over `stream` until an alarm, `cap`
/// observations, or the end of the stream.
pub fn run_stream<I>(scorers: &[ScenarioScorer], b: f64, stream: I, cap: u64) -> Result<AlarmRecord>
where
    I: IntoIterator<Item = Result<Observation>>,
{
    if cap == 0 {
        return invalid("cap must be at least 1");
    }
    let dim = validate(scorers)?;
    let mut state = DetectorState::new(scorers.len(), b);
    let mut status = StreamStatus::Exhausted;
    for obs in stream {
        let obs = obs?;
        check_dim(dim, obs.dim())?;
        if state.advance(&obs, scorers)? {
            status = StreamStatus::Alarm;
            break;
        }
        if state.step >= cap {
            status = StreamStatus::Censored;
            break;
        }
    }
    Ok(AlarmRecord {
        status,
        stopping_time: state.stopped_at,
        argmax_scenario: state.argmax_scenario,
        steps: state.step,
        threshold_b: b,
        final_stats: state.stats(),
    })
}
