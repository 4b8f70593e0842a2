//! Ascent on the concave dual: damped Newton where the eta engine supplies
//! an exact Hessian, spectral projected gradient otherwise.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{CostMetric, EmpiricalDistribution, PreChangeModel};
use crate::error::{invalid, Error, Result};

use super::eta::{EtaConfig, EtaEngine};
use super::{DualPoint, DualSolution};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Stop when the projected-gradient sup-norm is below `tol * (1 + |objective|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
    /// Objectives at or below this are reported as the exact zero solution
    /// `lambda = 0, u = 0` (the ball then contains Q up to quadrature error).
    pub zero_tol: f64,
    pub eta: EtaConfig,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000, lambda0: 1.0, zero_tol: 1e-9, eta: EtaConfig::default() }
    }
}

struct Problem<'a> {
    engine: EtaEngine<'a>,
    weights: Vec<f64>,
    radius_pow: f64,
}

/// Objective, ascent gradient and log eta at one point.
struct Eval {
    f: f64,
    g: Vec<f64>,
    log_eta: f64,
    hessian: Option<Vec<f64>>,
}

impl Problem<'_> {
    /// Evaluates at `x = (lambda r^s, u)`.
    ///
    /// Measuring `lambda` in units of `1 / r^s` puts its curvature on the
    /// same scale as that of `u`. The Hessian, when requested, is that of
    /// `log eta` in the same coordinates.
    fn eval_full(&self, x: &[f64], hessian: bool) -> Result<Eval> {
        let lambda = x[0] / self.radius_pow;
        let u = &x[1..];
        let e = self.engine.evaluate_full(lambda, u, hessian)?;
        let wu: f64 = self.weights.iter().zip(u).map(|(w, v)| w * v).sum();
        let f = -x[0] + wu - e.log_eta;
        let mut g = Vec::with_capacity(x.len());
        g.push(e.mean_cost / self.radius_pow - 1.0);
        g.extend(self.weights.iter().zip(&e.cell_mass).map(|(w, m)| w - m));
        let hessian = e.hessian.map(|mut h| {
            let dim = x.len();
            for k in 0..dim {
                h[k] /= self.radius_pow;
                h[k * dim] /= self.radius_pow;
            }
            h
        });
        Ok(Eval { f, g, log_eta: e.log_eta, hessian })
    }

    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
        let e = self.eval_full(x, false)?;
        Ok((e.f, e.g, e.log_eta))
    }
}

fn project(x: &mut [f64]) {
    if x[0] < 0.0 {
        x[0] = 0.0;
    }
}

fn pg_norm(x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
    project(&mut y);
    y.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// A stalled line search at a projected gradient below `sqrt(tol)` has hit
/// the accuracy of the eta evaluation.
fn stalled_ok(x: &[f64], g: &[f64], f: f64, tol: f64) -> bool {
    pg_norm(x, g) <= tol.sqrt() * (1.0 + f.abs())
}

/// Best point reached by one ascent run.
struct Run {
    x: Vec<f64>,
    f: f64,
    log_eta: f64,
    iterations: usize,
    converged: bool,
}

/// Solves `(H + shift) d = g` for the Hessian `H` of `log eta`. `H` is
/// singular along `(0, 1, ..., 1)` because shifting every `u_i` by the same
/// constant leaves the objective unchanged; a rank-one term on that
/// direction makes it definite without changing the step, since the
/// gradient is orthogonal to it.
fn newton_direction(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let dim = g.len();
    let mut m = DMatrix::from_row_slice(dim, dim, h);
    let scale = (1..dim).map(|i| m[(i, i)].abs()).sum::<f64>() / (dim - 1).max(1) as f64;
    for r in 1..dim {
        for c in 1..dim {
            m[(r, c)] += scale / (dim - 1) as f64;
        }
    }
    let diag: Vec<f64> = (0..dim).map(|i| m[(i, i)].abs().max(1e-300)).collect();
    let rhs = DVector::from_column_slice(g);
    let mut damping = 1e-12;
    while damping < 1.0 {
        let mut a = m.clone();
        for (i, d) in diag.iter().enumerate() {
            a[(i, i)] += damping * d;
        }
        if let Some(ch) = a.cholesky() {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.as_slice().to_vec());
            }
        }
        damping *= 100.0;
    }
    None
}

fn newton(problem: &Problem, x0: Vec<f64>, opts: &SolverOptions) -> Result<Run> {
    // largest change of any u_i per step, and of log(lambda) scaled by 1/4
    const MAX_STEP: f64 = 2.0;
    const ARMIJO: f64 = 1e-4;
    let mut x = x0;
    let mut e = problem.eval_full(&x, true)?;
    if !e.f.is_finite() {
        return Err(Error::NonFinite { lambda: x[0], u: x[1..].to_vec() });
    }
    let mut run = Run { x: x.clone(), f: e.f, log_eta: e.log_eta, iterations: 0, converged: false };
    for it in 0..opts.max_iter {
        run.iterations = it;
        if pg_norm(&x, &e.g) <= opts.tol * (1.0 + e.f.abs()) {
            run.converged = true;
            break;
        }
        if x[0] == 0.0 && e.f <= opts.zero_tol {
            break;
        }
        let Some(mut d) = e.hessian.as_deref().and_then(|h| newton_direction(h, &e.g)) else {
            break;
        };
        let reach = d[1..].iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(d[0].abs() / (x[0] + 1e-300) / 4.0);
        if reach > MAX_STEP {
            d.iter_mut().for_each(|v| *v *= MAX_STEP / reach);
        }
        let gd: f64 = e.g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(gd > 0.0) {
            run.converged = stalled_ok(&x, &e.g, e.f, opts.tol);
            break;
        }
        // stay inside lambda > 0, at most halving the distance to it
        let mut t: f64 = 1.0;
        if d[0] < 0.0 {
            t = t.min(0.5 * x[0] / -d[0]);
        }
        let accepted = loop {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            match problem.eval_full(&xn, true) {
                Ok(en) if en.f.is_finite() && en.f >= e.f + ARMIJO * t * gd => break Some((xn, en)),
                Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Quadrature { .. }) => t *= 0.5,
                Err(err) => return Err(err),
            }
            if t < 1e-12 {
                break None;
            }
        };
        let Some((xn, en)) = accepted else {
            run.converged = stalled_ok(&x, &e.g, e.f, opts.tol);
            break;
        };
        x = xn;
        e = en;
        run.iterations = it + 1;
        if e.f > run.f {
            run.x = x.clone();
            run.f = e.f;
            run.log_eta = e.log_eta;
        }
    }
    Ok(run)
}

fn spg(problem: &Problem, x0: Vec<f64>, opts: &SolverOptions) -> Result<Run> {
    const MEMORY: usize = 10;
    const ARMIJO: f64 = 1e-4;
    let mut x = x0;
    let (mut f, mut g, mut log_eta) = problem.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { lambda: x[0], u: x[1..].to_vec() });
    }
    let mut run = Run { x: x.clone(), f, log_eta, iterations: 0, converged: false };
    let mut history = vec![f];
    let pg0 = pg_norm(&x, &g);
    let mut alpha = if pg0 > 0.0 { (1.0 / pg0).clamp(1e-10, 1e10) } else { 1.0 };

    for it in 0..opts.max_iter {
        run.iterations = it;
        if pg_norm(&x, &g) <= opts.tol * (1.0 + f.abs()) {
            run.converged = true;
            break;
        }
        let mut trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + alpha * b).collect();
        project(&mut trial);
        let d: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if gd <= 0.0 {
            // numerically flat direction
            run.converged = stalled_ok(&x, &g, f, opts.tol);
            break;
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let accepted = loop {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            match problem.eval(&xn) {
                Ok((fn_, gn, le)) if fn_.is_finite() && fn_ >= reference + ARMIJO * t * gd => {
                    break Some((xn, fn_, gn, le));
                }
                Ok((fn_, _, _)) if fn_.is_finite() => {
                    // safeguarded quadratic interpolation for a concave model
                    let c = (fn_ - f - t * gd) / (t * t);
                    let tq = if c < 0.0 { -gd / (2.0 * c) } else { 0.5 * t };
                    t = tq.clamp(0.1 * t, 0.5 * t);
                }
                Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Quadrature { .. }) => t *= 0.25,
                Err(e) => return Err(e),
            }
            if t < 1e-14 {
                break None;
            }
        };
        let Some((xn, fn_, gn, le)) = accepted else {
            run.converged = stalled_ok(&x, &g, f, opts.tol);
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        // curvature of -f along s
        let sy: f64 = s.iter().zip(g.iter().zip(&gn)).map(|(si, (g0, g1))| si * (g0 - g1)).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        x = xn;
        f = fn_;
        g = gn;
        log_eta = le;
        if f > run.f {
            run.x = x.clone();
            run.f = f;
            run.log_eta = log_eta;
        }
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        run.iterations = it + 1;
    }
    Ok(run)
}

/// Maximises `-lambda r^s + sum_i w_i u_i - log eta(lambda, u)` over
/// `lambda >= 0`, `u` real, with duplicate training samples merged.
pub fn solve_dual(
    prechange: &PreChangeModel,
    metric: CostMetric,
    training: &EmpiricalDistribution,
    radius: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    if !(radius > 0.0 && radius.is_finite()) {
        return invalid(format!("radius must be strictly positive, got {radius}"));
    }
    crate::distributions::check_dim(prechange.dim(), training.dim())?;
    let (atoms, weights) = training.merged();
    let index = training.merge_index(&atoms);
    let k = atoms.len();
    let problem = Problem {
        engine: EtaEngine::new(prechange, metric, &atoms, &opts.eta)?,
        weights,
        radius_pow: radius.powf(metric.order_s),
    };

    let mut x = vec![0.0; k + 1];
    x[0] = opts.lambda0.max(0.0) * problem.radius_pow;
    let mut run = if problem.engine.has_hessian() && x[0] > 0.0 { newton(&problem, x.clone(), opts)? } else { spg(&problem, x, opts)? };
    if !run.converged && run.f > opts.zero_tol && problem.engine.has_hessian() {
        let mut rest = spg(&problem, run.x.clone(), opts)?;
        rest.iterations += run.iterations;
        if rest.f >= run.f || rest.converged {
            run = rest;
        }
    }
    let iterations = run.iterations;
    if run.f <= opts.zero_tol {
        let u = vec![0.0; training.len()];
        return Ok(DualSolution {
            point: DualPoint { lambda: 0.0, u },
            log_eta: 0.0,
            dual_value: 0.0,
            iterations,
            converged: true,
        });
    }
    let lambda = run.x[0] / problem.radius_pow;
    let u: Vec<f64> = index.iter().map(|&i| run.x[1 + i]).collect();
    let mean_u = u.iter().sum::<f64>() / u.len() as f64;
    let dual_value = -lambda * problem.radius_pow + mean_u - run.log_eta;
    Ok(DualSolution { point: DualPoint { lambda, u }, log_eta: run.log_eta, dual_value, iterations, converged: run.converged })
}
