//! `drcusum` command-line front end.

mod man;

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use drcusum::detector::{run_stream, threshold_for_mtfa, LlrScorer, ScenarioScorer};
use drcusum::distributions::{CostMetric, EmpiricalDistribution, PreChangeModel};
use drcusum::io::{read_observations_path, ObservationReader};
use drcusum::lfd::{LfdScorer, SolverOptions};
use drcusum::radius::{
    radius_lower_bound, radius_upper_bound, min_samples, report_from, ts_constant, wasserstein_to_prechange, TransportConstant,
};
use drcusum::sim::{self, ExperimentConfig, TrialPlan};
use drcusum::Error;

const MODEL_HELP: &str = "Model specs: gaussian:mu=M,sigma=S | gaussian-diag:mean=A/B/..,var=V1/V2/.. | beta:a=A,b=B | empirical:<csv>";

#[derive(Parser, Debug)]
#[command(name = "drcusum", version, about = "Distributionally robust CuSum change detection", after_help = MODEL_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the least-favourable post-change law and write a scorer file
    LfdSolve(LfdSolveArgs),
    /// Run a CuSum over a stream with one or more scorer files
    Detect(DetectArgs),
    /// Estimate the mean time to false alarm over a recipe's threshold grid
    SimMtfa(SimArgs),
    /// Estimate the detection delay over a recipe's threshold grid
    SimWadd(SimArgs),
    /// Estimate both over a recipe's threshold grid
    OcCurve(SimArgs),
    /// Least-favourable divergence over a recipe's radius grid
    KlCurve(KlArgs),
    /// Radius selection bounds as JSON
    Radius(RadiusArgs),
    /// Find the threshold reaching a target mean time to false alarm
    Calibrate(CalibrateArgs),
    /// Print the man page in roff format
    Man,
}

#[derive(Args, Debug)]
struct LfdSolveArgs {
    /// Pre-change model spec
    #[arg(long)]
    pre: String,
    /// CSV of post-change training samples
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 2.0)]
    order_s: f64,
    /// Output scorer JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("level").required(true).args(["threshold", "gamma"])))]
struct DetectArgs {
    /// Scorer JSON; repeat once per scenario
    #[arg(long, required = true)]
    scorer: Vec<PathBuf>,
    /// Alarm threshold b
    #[arg(long)]
    threshold: Option<f64>,
    /// Target mean time to false alarm; sets b = log(M gamma)
    #[arg(long)]
    gamma: Option<f64>,
    /// Observation CSV, or - for standard input
    #[arg(long, default_value = "-")]
    stream: String,
    /// Stop after this many observations
    #[arg(long, default_value_t = u64::MAX)]
    cap: u64,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Recipe TOML
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; the run manifest goes to <out>.manifest.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mtfa_trials: Option<usize>,
    #[arg(long)]
    wadd_trials: Option<usize>,
    #[arg(long)]
    training_sets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct KlArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RadiusArgs {
    /// Confidence level: the ball holds the true law with probability 1 - delta
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    order_s: f64,
    /// Transport-inequality constant; derived from --pre when omitted
    #[arg(long)]
    tc: Option<f64>,
    /// Number of training samples
    #[arg(long)]
    n: Option<usize>,
    /// W_s(P, Q) between the post- and pre-change laws
    #[arg(long)]
    wpq: Option<f64>,
    /// Estimate W_s(Q, P_n) from --pre and --train by Monte Carlo
    #[arg(long, requires_all = ["pre", "train"])]
    estimate_wpq: bool,
    #[arg(long, default_value_t = 512)]
    mc_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    pre: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Target mean time to false alarm
    #[arg(long)]
    target: f64,
    /// Detector index in the recipe (0-based)
    #[arg(long, default_value_t = 0)]
    detector: usize,
    /// Training set used to build the detector
    #[arg(long, default_value_t = 0)]
    set: usize,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    /// Upper end of the bracket; defaults to log(M target) + 1
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Bracket(_) => 2,
            Error::Quadrature { .. } | Error::NonFinite { .. } => 4,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

/// Writes through a temporary file in the target directory so a failed
/// command never leaves a partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn manifest(command: &str, inputs: Value) -> Value {
    json!({
        "tool": "drcusum",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "inputs": inputs,
    })
}

fn echo(m: &Value) {
    eprintln!("manifest: {m}");
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn lfd_solve(a: &LfdSolveArgs) -> Outcome {
    let m = manifest("lfd-solve", json!({"pre": a.pre, "train": a.train, "radius": a.radius, "order_s": a.order_s, "out": a.out}));
    echo(&m);
    let q = PreChangeModel::parse(&a.pre)?;
    let train = EmpiricalDistribution::new(read_observations_path(&a.train)?)?;
    let metric = CostMetric::euclidean(a.order_s)?;
    let scorer = LfdScorer::fit(q, train, metric, a.radius, &SolverOptions::default())?;
    let sol = scorer.solution();
    let summary = json!({
        "dual_value": sol.dual_value,
        "lambda": sol.point.lambda,
        "iterations": sol.iterations,
        "converged": sol.converged,
    });
    if !sol.converged {
        return Err(Failure { code: 4, message: format!("solver did not converge: {summary}") });
    }
    write_atomic(&a.out, scorer.to_json()?.as_bytes())?;
    print!("{}", pretty(&summary));
    Ok(())
}

fn detect(a: &DetectArgs) -> Outcome {
    let mut scorers: Vec<Arc<dyn LlrScorer>> = Vec::new();
    for p in &a.scorer {
        scorers.push(Arc::new(LfdScorer::load(p).map_err(|e| Failure::from(e).with_context(p))?));
    }
    let scorers = ScenarioScorer::numbered(scorers);
    let b = match (a.threshold, a.gamma) {
        (Some(b), _) => b,
        (None, Some(g)) => threshold_for_mtfa(g, scorers.len())?,
        _ => unreachable!("clap enforces one of the two"),
    };
    let m = manifest(
        "detect",
        json!({"scorer": a.scorer, "threshold": a.threshold, "gamma": a.gamma, "threshold_b": b, "stream": a.stream, "cap": a.cap}),
    );
    echo(&m);
    let input: Box<dyn Read> = if a.stream == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(&a.stream).map_err(|e| Failure { code: 3, message: format!("{}: {e}", a.stream) })?))
    };
    let stream = ObservationReader::new(input).map(|r| {
        r.and_then(|(line, obs)| {
            let d = scorers[0].scorer.dim();
            if obs.dim() != d {
                return Err(Error::Data(format!("line {line}: expected {d} columns, found {}", obs.dim())));
            }
            Ok(obs)
        })
    });
    let rec = run_stream(&scorers, b, stream, a.cap)?;
    print!("{}", pretty(&rec));
    Ok(())
}

impl Failure {
    fn with_context(mut self, p: &Path) -> Self {
        self.message = format!("{}: {}", p.display(), self.message);
        self
    }
}

#[derive(Clone, Copy, PartialEq)]
enum SimKind {
    Mtfa,
    Wadd,
    Both,
}

fn load_config(path: &Path) -> std::result::Result<(ExperimentConfig, String), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| Failure::from(e).with_context(path))?;
    Ok((cfg, text))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn simulate(a: &SimArgs, kind: SimKind) -> Outcome {
    let (mut cfg, _) = load_config(&a.config)?;
    if let Some(t) = a.mtfa_trials {
        cfg.mtfa_trials = t;
    }
    if let Some(t) = a.wadd_trials {
        cfg.wadd_trials = t;
    }
    if let Some(s) = a.training_sets {
        cfg.training_sets = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match kind {
        SimKind::Mtfa => cfg.wadd_trials = 0,
        SimKind::Wadd => cfg.mtfa_trials = 0,
        SimKind::Both => {}
    }
    let name = match kind {
        SimKind::Mtfa => "sim-mtfa",
        SimKind::Wadd => "sim-wadd",
        SimKind::Both => "oc-curve",
    };
    let m = manifest(
        name,
        json!({"config_path": a.config, "config": cfg, "cap": cfg.cap(), "out": a.out}),
    );
    echo(&m);
    let res = sim::run_oc_curve(&cfg)?;
    let mut csv = Vec::new();
    sim::write_oc_csv(&res.points, &mut csv)?;
    write_atomic(&a.out, &csv)?;
    write_atomic(&manifest_path(&a.out), pretty(&m).as_bytes())?;
    Ok(())
}

fn kl_curve(a: &KlArgs) -> Outcome {
    let (cfg, _) = load_config(&a.config)?;
    let m = manifest("kl-curve", json!({"config_path": a.config, "config": cfg, "out": a.out}));
    echo(&m);
    let rows = sim::run_kl_curve(&cfg)?;
    let mut csv = Vec::new();
    sim::write_kl_csv(&rows, &mut csv)?;
    write_atomic(&a.out, &csv)?;
    write_atomic(&manifest_path(&a.out), pretty(&m).as_bytes())?;
    if rows.iter().any(|r| !r.converged) {
        return Err(Failure { code: 4, message: "solver did not converge for some radii; see the converged column".into() });
    }
    Ok(())
}

fn radius(a: &RadiusArgs) -> Outcome {
    let m = manifest(
        "radius",
        json!({"delta": a.delta, "order_s": a.order_s, "tc": a.tc, "n": a.n, "wpq": a.wpq, "estimate_wpq": a.estimate_wpq,
               "mc_size": a.mc_size, "seed": a.seed, "pre": a.pre, "train": a.train}),
    );
    echo(&m);
    let pre = a.pre.as_deref().map(PreChangeModel::parse).transpose()?;
    let train = match &a.train {
        Some(p) => Some(EmpiricalDistribution::new(read_observations_path(p)?)?),
        None => None,
    };
    let tc = match (a.tc, &pre) {
        (Some(c), _) => TransportConstant::user(c)?,
        (None, Some(q)) => ts_constant(q, None)?,
        (None, None) => return Err(usage("give --tc or a --pre model with a known transport constant")),
    };
    let n = a.n.or(train.as_ref().map(|t| t.len())).ok_or_else(|| usage("give --n or --train"))?;
    let metric = CostMetric::euclidean(a.order_s)?;
    let empirical = if a.estimate_wpq {
        let (q, t) = (pre.as_ref().expect("clap requires --pre"), train.as_ref().expect("clap requires --train"));
        Some(wasserstein_to_prechange(q, t, &metric, a.mc_size, a.seed)?)
    } else {
        None
    };
    let lower = radius_lower_bound(a.delta, &tc, a.order_s, n)?;
    let wpq = a.wpq.or(empirical);
    let (upper, n_min) = match wpq {
        Some(w) => (radius_upper_bound(w, a.delta, &tc, a.order_s, n)?, min_samples(a.delta, &tc, a.order_s, w)?),
        None => (f64::INFINITY, f64::NAN),
    };
    let report = report_from(lower, upper, n_min, empirical.unwrap_or(f64::INFINITY));
    let out = json!({
        "lower": report.lower,
        "upper": finite(report.upper),
        "n_min": finite(report.n_min),
        "empirical_cap": finite(report.empirical_cap),
        "feasible": report.feasible,
        "tc": tc.c,
        "tc_source": format!("{:?}", tc.source),
        "n": n,
    });
    print!("{}", pretty(&out));
    Ok(())
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn calibrate(a: &CalibrateArgs) -> Outcome {
    let (cfg, _) = load_config(&a.config)?;
    let spec = cfg.detectors.get(a.detector).ok_or_else(|| usage(format!("recipe has no detector {}", a.detector)))?;
    if a.set >= cfg.training_sets {
        return Err(usage(format!("recipe has {} training sets", cfg.training_sets)));
    }
    let trials = a.trials.unwrap_or(cfg.mtfa_trials);
    let scenarios = match spec {
        sim::DetectorSpec::DrCusum { scenarios, .. } => scenarios.len(),
        _ => 1,
    };
    let hi = match a.hi {
        Some(h) => h,
        None => threshold_for_mtfa(a.target, scenarios)? + 1.0,
    };
    let cap = cfg.cap.unwrap_or_else(|| ((50.0 * a.target).ceil() as u64).max(1000));
    let seed = drcusum::rng::derive_seed(cfg.seed, 0x6361_6c69);
    let m = manifest(
        "calibrate",
        json!({"config_path": a.config, "config": cfg, "detector": a.detector, "set": a.set, "target": a.target,
               "trials": trials, "bracket": [a.lo, hi], "cap": cap, "seed": seed}),
    );
    echo(&m);
    let plan = TrialPlan::new(trials, cap, seed)?;
    let training = cfg.training(a.set)?;
    let det = cfg.build_detector(spec, &training)?;
    let q = PreChangeModel::parse(&cfg.prechange)?;
    let cal = sim::calibrate_threshold(det.as_ref(), &q, a.target, (a.lo, hi), &plan)?;
    if let Some(w) = &cal.warning {
        eprintln!("warning: {w}");
    }
    let text = pretty(&json!({"detector": spec.label(), "calibration": cal}));
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::LfdSolve(a) => lfd_solve(a),
        Command::Detect(a) => detect(a),
        Command::SimMtfa(a) => simulate(a, SimKind::Mtfa),
        Command::SimWadd(a) => simulate(a, SimKind::Wadd),
        Command::OcCurve(a) => simulate(a, SimKind::Both),
        Command::KlCurve(a) => kl_curve(a),
        Command::Radius(a) => radius(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Man => {
            print!("{}", man::render(&Cli::command()));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
