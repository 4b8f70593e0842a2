//! Evaluation of the tilting normaliser `eta(lambda, u)` and the tilted
//! moments that make up its gradient.
//!
//! Two routes are provided. One-dimensional models with a density integrate
//! `q(x) exp(-C(x))` cell by cell: for `lambda > 0` the minimising atom in
//! `C` is piecewise constant on intervals ordered like the atoms, so each
//! cell contributes a smooth integral that adaptive Simpson resolves
//! quickly. Everything else (empirical pre-change samples and `d > 1`) uses
//! a sample average over a fixed point set.

use rayon::prelude::*;

use crate::distributions::{CostMetric, Observation, PreChangeModel};
use crate::error::{Error, Result};
use crate::quad::integrate_vec;
use crate::rng::seeded;

/// `log eta` plus the tilted moments.
#[derive(Clone, Debug)]
pub(crate) struct EtaEval {
    pub log_eta: f64,
    /// E_{p}[c^s(X, atom(X))] under the tilted law.
    pub mean_cost: f64,
    /// Tilted probability of each atom's cell.
    pub cell_mass: Vec<f64>,
    /// Hessian of `log eta` in `(lambda, u)`, row-major, when requested on
    /// the quadrature route.
    pub hessian: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct EtaConfig {
    /// Absolute tolerance of the (peak-scaled) adaptive Simpson integrals.
    pub quad_tol: f64,
    /// Number of pre-change draws for the sample-average route when `d > 1`.
    pub mc_size: usize,
    pub mc_seed: u64,
}

impl Default for EtaConfig {
    fn default() -> Self {
        Self { quad_tol: 1e-10, mc_size: 200_000, mc_seed: 0x5eed_e7a0 }
    }
}

enum Route<'a> {
    Quadrature {
        q: &'a PreChangeModel,
        lo: f64,
        hi: f64,
        loc: f64,
        scale: f64,
        /// atom indices sorted by coordinate
        order: Vec<usize>,
        coords: Vec<f64>,
    },
    Samples {
        points: Vec<f64>,
        count: usize,
    },
}

pub(crate) struct EtaEngine<'a> {
    metric: CostMetric,
    dim: usize,
    atoms: Vec<f64>,
    n_atoms: usize,
    route: Route<'a>,
    quad_tol: f64,
}

impl<'a> EtaEngine<'a> {
    /// `atoms` must be distinct.
    pub fn new(q: &'a PreChangeModel, metric: CostMetric, atoms: &[Observation], cfg: &EtaConfig) -> Result<Self> {
        let dim = q.dim();
        for a in atoms {
            crate::distributions::check_dim(dim, a.dim())?;
        }
        let flat: Vec<f64> = atoms.iter().flat_map(|a| a.iter().copied()).collect();
        let route = match (q, q.location_scale_1d()) {
            (PreChangeModel::Empirical(e), _) => Route::Samples {
                points: e.samples().iter().flat_map(|s| s.iter().copied()).collect(),
                count: e.len(),
            },
            (_, Some((loc, scale))) => {
                let coords: Vec<f64> = atoms.iter().map(|a| a[0]).collect();
                let mut order: Vec<usize> = (0..coords.len()).collect();
                order.sort_by(|&i, &j| coords[i].total_cmp(&coords[j]));
                let cmin = coords.iter().copied().fold(loc, f64::min);
                let cmax = coords.iter().copied().fold(loc, f64::max);
                let (slo, shi) = q.support_1d();
                let lo = (cmin - 10.0 * scale).max(slo);
                let hi = (cmax + 10.0 * scale).min(shi);
                Route::Quadrature { q, lo, hi, loc, scale, order, coords }
            }
            _ => {
                if cfg.mc_size == 0 {
                    return Err(Error::InvalidArgument("mc_size must be positive".into()));
                }
                let mut rng = seeded(cfg.mc_seed);
                let pts = q.sample_with(&mut rng, cfg.mc_size);
                Route::Samples { points: pts.into_iter().flat_map(|o| o.into_inner()).collect(), count: cfg.mc_size }
            }
        };
        Ok(Self { metric, dim, atoms: flat, n_atoms: atoms.len(), route, quad_tol: cfg.quad_tol })
    }

    #[inline]
    fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    /// Lowest-index maximiser of `u`.
    fn argmax(u: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in u.iter().enumerate() {
            if *v > u[best] {
                best = i;
            }
        }
        best
    }

    pub fn evaluate(&self, lambda: f64, u: &[f64]) -> Result<EtaEval> {
        self.evaluate_full(lambda, u, false)
    }

    /// Whether [`Self::evaluate_full`] can supply an exact Hessian.
    pub fn has_hessian(&self) -> bool {
        matches!(self.route, Route::Quadrature { .. })
    }

    pub fn evaluate_full(&self, lambda: f64, u: &[f64], hessian: bool) -> Result<EtaEval> {
        debug_assert_eq!(u.len(), self.n_atoms);
        match &self.route {
            Route::Samples { points, count } => Ok(self.eval_samples(points, *count, lambda, u)),
            Route::Quadrature { q, lo, hi, loc, scale, order, coords } => {
                self.eval_quadrature(q, *lo, *hi, *loc, *scale, order, coords, lambda, u, hessian)
            }
        }
    }

    fn eval_samples(&self, points: &[f64], count: usize, lambda: f64, u: &[f64]) -> EtaEval {
        let d = self.dim;
        let n = self.n_atoms;
        // per chunk: (max exponent, sum of scaled weights, weighted cost, per-cell weights)
        const CHUNK: usize = 4096;
        let partials: Vec<(f64, f64, f64, Vec<f64>)> = points
            .par_chunks(CHUNK * d)
            .map(|chunk| {
                let m = chunk.len() / d;
                let mut expo = Vec::with_capacity(m);
                let mut cost = Vec::with_capacity(m);
                let mut cell = Vec::with_capacity(m);
                for j in 0..m {
                    let x = &chunk[j * d..(j + 1) * d];
                    let (c, i, cs) = self.min_cost(lambda, u, x);
                    expo.push(-c);
                    cost.push(cs);
                    cell.push(i);
                }
                let mx = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                let mut sc = 0.0;
                let mut per = vec![0.0; n];
                for j in 0..m {
                    let w = (expo[j] - mx).exp();
                    s += w;
                    sc += w * cost[j];
                    per[cell[j]] += w;
                }
                (mx, s, sc, per)
            })
            .collect();
        let mx = partials.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        let mut sc = 0.0;
        let mut per = vec![0.0; n];
        for (m, ps, pc, pp) in &partials {
            let f = (m - mx).exp();
            s += f * ps;
            sc += f * pc;
            for (a, b) in per.iter_mut().zip(pp) {
                *a += f * b;
            }
        }
        for p in &mut per {
            *p /= s;
        }
        EtaEval { log_eta: mx + s.ln() - (count as f64).ln(), mean_cost: sc / s, cell_mass: per, hessian: None }
    }

    /// `(C(x), argmin atom, c^s(x, argmin atom))` with lowest-index ties.
    #[inline]
    fn min_cost(&self, lambda: f64, u: &[f64], x: &[f64]) -> (f64, usize, f64) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        let mut arg_cost = 0.0;
        for i in 0..self.n_atoms {
            let cs = self.metric.cost_power_unchecked(x, self.atom(i));
            let v = lambda * cs - u[i];
            if v < best {
                best = v;
                arg = i;
                arg_cost = cs;
            }
        }
        (best, arg, arg_cost)
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_quadrature(
        &self,
        q: &PreChangeModel,
        lo: f64,
        hi: f64,
        loc: f64,
        scale: f64,
        order: &[usize],
        coords: &[f64],
        lambda: f64,
        u: &[f64],
        want_hessian: bool,
    ) -> Result<EtaEval> {
        let n = self.n_atoms;
        if lambda == 0.0 {
            // C = -max u everywhere; the tilted law is Q itself
            let top = Self::argmax(u);
            let w = coords[top];
            let [mass, mc, _] = self.integrate_piece(lo, hi, loc, scale, |x| {
                let c = self.metric.cost_power_1d(x, w);
                (q.log_density_unchecked(&[x]), c)
            })?
            .map_or([1.0, 0.0, 0.0], |(s, v)| v.map(|x| x * s.exp()));
            let mut cell_mass = vec![0.0; n];
            cell_mass[top] = 1.0;
            return Ok(EtaEval { log_eta: u[top], mean_cost: mc / mass, cell_mass, hessian: None });
        }
        let cells = envelope_cells(&self.metric, coords, order, lambda, u);
        let mut pieces: Vec<(usize, f64, [f64; 3])> = Vec::with_capacity(2 * cells.len());
        for &(i, l, r) in &cells {
            let (a, b) = (l.max(lo), r.min(hi));
            if !(b > a) {
                continue;
            }
            let w = coords[i];
            let ui = u[i];
            let f = |x: f64| {
                let c = self.metric.cost_power_1d(x, w);
                (q.log_density_unchecked(&[x]) - lambda * c + ui, c)
            };
            let splits: Vec<f64> = if w > a && w < b { vec![a, w, b] } else { vec![a, b] };
            for seg in splits.windows(2) {
                if let Some((shift, v)) = self.integrate_piece(seg[0], seg[1], loc, scale, f)? {
                    pieces.push((i, shift, v));
                }
            }
        }
        let top = pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::NonFinite { lambda, u: u.to_vec() });
        }
        let mut total = 0.0;
        let mut cost = 0.0;
        let mut cost2 = 0.0;
        let mut cell_mass = vec![0.0; n];
        let mut cell_cost = vec![0.0; n];
        for (i, shift, v) in &pieces {
            let f = (shift - top).exp();
            total += f * v[0];
            cost += f * v[1];
            cost2 += f * v[2];
            cell_mass[*i] += f * v[0];
            cell_cost[*i] += f * v[1];
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NonFinite { lambda, u: u.to_vec() });
        }
        for m in cell_mass.iter_mut().chain(cell_cost.iter_mut()) {
            *m /= total;
        }
        let mean_cost = cost / total;
        let hessian = want_hessian.then(|| {
            let dim = n + 1;
            let mut h = vec![0.0; dim * dim];
            h[0] = cost2 / total;
            for i in 0..n {
                h[(i + 1) * dim + i + 1] = cell_mass[i];
                h[i + 1] = -cell_cost[i];
                h[(i + 1) * dim] = -cell_cost[i];
            }
            // moving cell boundaries: a rank-one term per junction
            for pair in cells.windows(2) {
                let ((a, _, xb), (b, _, _)) = (pair[0], pair[1]);
                if !(xb > lo && xb < hi) {
                    continue;
                }
                let (wa, wb) = (coords[a], coords[b]);
                let slope = lambda * (self.metric.cost_power_deriv_1d(xb, wa) - self.metric.cost_power_deriv_1d(xb, wb));
                if !(slope > 0.0) {
                    continue;
                }
                let ca = self.metric.cost_power_1d(xb, wa);
                let cb = self.metric.cost_power_1d(xb, wb);
                let log_phi = q.log_density_unchecked(&[xb]) - lambda * ca + u[a];
                let k = (log_phi - top).exp() / total / slope;
                let g = [(0, -(ca - cb)), (a + 1, 1.0), (b + 1, -1.0)];
                for &(r, gr) in &g {
                    for &(c, gc) in &g {
                        h[r * dim + c] += k * gr * gc;
                    }
                }
            }
            // subtract the outer product of the gradient (-mean_cost, cell_mass)
            let grad: Vec<f64> = std::iter::once(-mean_cost).chain(cell_mass.iter().copied()).collect();
            for r in 0..dim {
                for c in 0..dim {
                    h[r * dim + c] -= grad[r] * grad[c];
                }
            }
            h
        });
        Ok(EtaEval { log_eta: top + total.ln(), mean_cost, cell_mass, hessian })
    }

    /// Integrates `[exp(g), c exp(g), c^2 exp(g)]` over `[a, b]` where `f(x) = (g(x), c(x))`,
    /// scaled by `exp(-shift)`. Returns `None` when the piece carries no mass.
    fn integrate_piece<F: Fn(f64) -> (f64, f64)>(
        &self,
        a: f64,
        b: f64,
        loc: f64,
        scale: f64,
        f: F,
    ) -> Result<Option<(f64, [f64; 3])>> {
        // probe for the peak of the log-integrand
        let mut shift = f64::NEG_INFINITY;
        let probes = 16;
        for k in 0..=probes {
            let x = a + (b - a) * k as f64 / probes as f64;
            shift = shift.max(f(x).0);
        }
        if loc > a && loc < b {
            shift = shift.max(f(loc).0);
        }
        if !shift.is_finite() {
            if shift.is_nan() || shift == f64::INFINITY {
                return Err(Error::Quadrature { a, b, estimate: f64::NAN });
            }
            return Ok(None);
        }
        let panels = (((b - a) / scale).ceil() as usize).clamp(2, 64);
        let v = integrate_vec(
            |x| {
                let (g, c) = f(x);
                let e = (g - shift).exp();
                [e, c * e, c * c * e]
            },
            a,
            b,
            panels,
            self.quad_tol,
        )?;
        if v[0] <= 0.0 {
            return Ok(None);
        }
        Ok(Some((shift, v)))
    }
}

/// Crossing point of the branches of atoms `a < b` (by coordinate): left of
/// it atom `a` attains the smaller value of `lambda c^s - u`.
fn crossing(metric: &CostMetric, wa: f64, wb: f64, ua: f64, ub: f64, lambda: f64) -> f64 {
    let s = metric.order_s;
    let du = ua - ub;
    if s == 2.0 {
        return 0.5 * (wa + wb) + du / (2.0 * lambda * (wb - wa));
    }
    if s == 1.0 {
        let span = lambda * (wb - wa);
        if -span - du >= 0.0 {
            return f64::NEG_INFINITY;
        }
        if span - du <= 0.0 {
            return f64::INFINITY;
        }
        return 0.5 * (wa + wb) + du / (2.0 * lambda);
    }
    // s in (1, inf): the branch difference is strictly increasing in x
    let g = |x: f64| lambda * (metric.cost_power_1d(x, wa) - metric.cost_power_1d(x, wb)) - du;
    let mut step = (wb - wa).max(1.0);
    let (mut lo, mut hi) = (wa - step, wb + step);
    while g(lo) > 0.0 {
        step *= 2.0;
        lo = wa - step;
        if !lo.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    step = (wb - wa).max(1.0);
    while g(hi) < 0.0 {
        step *= 2.0;
        hi = wb + step;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lower envelope of `lambda c^s(x, w_i) - u_i` over the real line as a list
/// of `(atom, left, right)` cells, for `lambda > 0` and distinct atoms.
pub(crate) fn envelope_cells(metric: &CostMetric, coords: &[f64], order: &[usize], lambda: f64, u: &[f64]) -> Vec<(usize, f64, f64)> {
    let mut stack: Vec<(usize, f64)> = Vec::with_capacity(order.len());
    for &b in order {
        loop {
            let Some(&(a, left_a)) = stack.last() else {
                stack.push((b, f64::NEG_INFINITY));
                break;
            };
            let x = crossing(metric, coords[a], coords[b], u[a], u[b], lambda);
            if x == f64::INFINITY {
                break;
            }
            if x <= left_a {
                stack.pop();
                continue;
            }
            stack.push((b, x));
            break;
        }
    }
    let mut cells = Vec::with_capacity(stack.len());
    for k in 0..stack.len() {
        let right = stack.get(k + 1).map_or(f64::INFINITY, |c| c.1);
        cells.push((stack[k].0, stack[k].1, right));
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_argmin(metric: &CostMetric, coords: &[f64], lambda: f64, u: &[f64], x: f64) -> usize {
        let mut best = 0;
        for i in 0..coords.len() {
            if lambda * metric.cost_power_1d(x, coords[i]) - u[i] < lambda * metric.cost_power_1d(x, coords[best]) - u[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn envelope_matches_brute_force() {
        use rand::Rng;
        let mut rng = seeded(3);
        for &s in &[1.0, 1.5, 2.0, 3.0] {
            let metric = CostMetric::euclidean(s).unwrap();
            for _ in 0..30 {
                let n = rng.random_range(1..8);
                let coords: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let lambda = rng.random_range(0.05..3.0);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&i, &j| coords[i].total_cmp(&coords[j]));
                let cells = envelope_cells(&metric, &coords, &order, lambda, &u);
                for k in 0..400 {
                    let x = -8.0 + 16.0 * (k as f64 + 0.37) / 400.0;
                    let cell = cells.iter().find(|c| x >= c.1 && x < c.2).expect("covered");
                    let brute = brute_argmin(&metric, &coords, lambda, &u, x);
                    let vc = lambda * metric.cost_power_1d(x, coords[cell.0]) - u[cell.0];
                    let vb = lambda * metric.cost_power_1d(x, coords[brute]) - u[brute];
                    assert!((vc - vb).abs() < 1e-9, "s={s} x={x} cell={} brute={brute}", cell.0);
                }
            }
        }
    }

    fn grad(e: &EtaEval) -> Vec<f64> {
        let mut g = vec![-e.mean_cost];
        g.extend(&e.cell_mass);
        g
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let cases = [
            (PreChangeModel::standard_normal(), 2.0, vec![-0.7, 0.1, 0.4, 1.3], 0.8, vec![0.2, -0.1, 0.3, 0.0]),
            (PreChangeModel::parse("beta:a=2,b=3").unwrap(), 1.5, vec![0.2, 0.5, 0.55, 0.9], 3.0, vec![0.0, 0.1, -0.05, 0.2]),
        ];
        for (q, s, coords, lambda, u) in cases {
            let metric = CostMetric::euclidean(s).unwrap();
            let atoms: Vec<Observation> = coords.iter().map(|&c| Observation::new(vec![c]).unwrap()).collect();
            let engine = EtaEngine::new(&q, metric, &atoms, &EtaConfig::default()).unwrap();
            assert!(engine.has_hessian());
            let h = engine.evaluate_full(lambda, &u, true).unwrap().hessian.unwrap();
            let dim = u.len() + 1;
            let step = 1e-5;
            for j in 0..dim {
                let shifted = |sign: f64| {
                    let mut l = lambda;
                    let mut v = u.clone();
                    if j == 0 {
                        l += sign * step;
                    } else {
                        v[j - 1] += sign * step;
                    }
                    grad(&engine.evaluate(l, &v).unwrap())
                };
                let (gp, gm) = (shifted(1.0), shifted(-1.0));
                for i in 0..dim {
                    let fd = (gp[i] - gm[i]) / (2.0 * step);
                    let an = h[i * dim + j];
                    assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "s={s} ({i},{j}) fd={fd} an={an}");
                }
            }
        }
    }
}
