//! Closed-form special cases for a Gaussian pre-change law with order-2
//! Euclidean cost in one dimension.

use statrs::function::erf::{erf, erfc};

use crate::distributions::{EmpiricalDistribution, PreChangeModel};
use crate::error::{invalid, Result};

use super::DualPoint;

/// `eta(lambda, u)` for a one-dimensional Gaussian pre-change model and
/// `s = 2`, by splitting the line into the intervals on which each atom
/// attains the minimum in `C` and integrating the Gaussian on each interval
/// with the error function.
///
/// Data are standardised by the pre-change mean and scale first; `lambda`
/// rescales by the variance.
pub fn eta_gaussian_analytic(point: &DualPoint, training: &EmpiricalDistribution, gaussian: &PreChangeModel) -> Result<f64> {
    log_eta_gaussian_analytic(point, training, gaussian).map(f64::exp)
}

pub fn log_eta_gaussian_analytic(point: &DualPoint, training: &EmpiricalDistribution, gaussian: &PreChangeModel) -> Result<f64> {
    let PreChangeModel::Gaussian1D { mean, variance } = gaussian else {
        return invalid("analytic eta requires a one-dimensional Gaussian pre-change model");
    };
    if training.dim() != 1 {
        return invalid("analytic eta requires one-dimensional training data");
    }
    if point.u.len() != training.len() {
        return invalid(format!("u has length {}, expected {}", point.u.len(), training.len()));
    }
    if point.lambda < 0.0 {
        return invalid("lambda must be non-negative");
    }
    let u = &point.u;
    if point.lambda == 0.0 {
        return Ok(u.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let sd = variance.sqrt();
    let lam = point.lambda * variance;
    // duplicate atoms: only the largest u can attain the minimum
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (s, &ui) in training.samples().iter().zip(u) {
        let w = (s[0] - mean) / sd;
        match atoms.iter_mut().find(|a| a.0 == w) {
            Some(a) => a.1 = a.1.max(ui),
            None => atoms.push((w, ui)),
        }
    }
    let t = 1.0 + 2.0 * lam;
    let denom = (4.0 * lam + 2.0).sqrt();
    let mut terms = Vec::with_capacity(atoms.len());
    for &(wi, ui) in &atoms {
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for &(wj, uj) in &atoms {
            let boundary = (ui - uj) / (2.0 * lam * (wj - wi)) + 0.5 * (wj + wi);
            if wj < wi {
                lower = lower.max(boundary);
            } else if wj > wi {
                upper = upper.min(boundary);
            }
        }
        if !(lower < upper) {
            continue;
        }
        let za = if lower.is_finite() { (2.0 * lam * (lower - wi) + lower) / denom } else { f64::NEG_INFINITY };
        let zb = if upper.is_finite() { (2.0 * lam * (upper - wi) + upper) / denom } else { f64::INFINITY };
        let log_diff = log_erf_diff(za, zb);
        if log_diff == f64::NEG_INFINITY {
            continue;
        }
        terms.push(ui - lam * wi * wi / t - (2.0 * t.sqrt()).ln() + log_diff);
    }
    Ok(log_sum_exp(&terms))
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln erfc(z)`, stable for large positive `z`.
fn log_erfc(z: f64) -> f64 {
    if z < 25.0 {
        return erfc(z).ln();
    }
    // asymptotic expansion: erfc(z) = exp(-z^2)/(z sqrt(pi)) * sum_k (-1)^k (2k-1)!! / (2z^2)^k
    let z2 = z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) / (2.0 * z2);
        sum += term;
    }
    -z2 - (z * std::f64::consts::PI.sqrt()).ln() + sum.ln()
}

/// `ln(erf(b) - erf(a))` for `a <= b`, avoiding cancellation in the tails.
fn log_erf_diff(a: f64, b: f64) -> f64 {
    if !(b > a) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        // erfc(a) - erfc(b)
        let la = log_erfc(a);
        let lb = log_erfc(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        log_erf_diff(-b, -a)
    } else {
        (erf(b) - erf(a)).ln()
    }
}

/// Optimal `lambda` of the dual for one training atom `omega1` under a
/// standard normal pre-change law and `s = 2`.
///
/// The closed form is `omega1^2 / (sqrt(1 + 4 R omega1^2) - 1) - 1/2` where
/// `R = radius^2` is the squared order-2 radius, i.e. the quantity that
/// multiplies `lambda` in the dual objective. Setting the derivative of
/// `-lambda R + lambda omega1^2 / (1 + 2 lambda) + ln(1 + 2 lambda) / 2` to
/// zero gives the same root, written here as `(1 + sqrt(1 + 4 R omega1^2)) /
/// (4R) - 1/2` so that `omega1 = 0` needs no special case. The optimum is
/// zero once `R >= 1 + omega1^2`, where the ball around the atom contains Q.
pub fn closed_form_lambda_n1(omega1: f64, radius: f64) -> f64 {
    let r2 = radius * radius;
    if r2 >= 1.0 + omega1 * omega1 {
        return 0.0;
    }
    let v = (1.0 + (1.0 + 4.0 * r2 * omega1 * omega1).sqrt()) / (4.0 * r2) - 0.5;
    v.max(0.0)
}

/// Optimal value of `min_{a >= 0} (sum a) ln(sum a) + sum c_i a_i`, which is
/// `-exp(-min_i c_i - 1)`.
pub fn inner_min_oracle(costs: &[f64]) -> f64 {
    let m = costs.iter().copied().fold(f64::INFINITY, f64::min);
    -(-m - 1.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_diff_tails() {
        let direct = (erf(0.7) - erf(-0.2)).ln();
        assert!((log_erf_diff(-0.2, 0.7) - direct).abs() < 1e-14);
        let direct = (erfc(3.0) - erfc(4.0)).ln();
        assert!((log_erf_diff(3.0, 4.0) - direct).abs() < 1e-12);
        // far tail is finite instead of ln(0)
        assert!(log_erf_diff(40.0, 41.0).is_finite());
        assert!((log_erfc(25.0) - erfc(25.0).ln()).abs() < 1e-9);
        assert_eq!(log_erf_diff(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn lambda_zero_is_max_u() {
        let train = EmpiricalDistribution::from_scalars(&[0.3, -1.0]).unwrap();
        let p = DualPoint { lambda: 0.0, u: vec![1.0, 2.0] };
        let v = eta_gaussian_analytic(&p, &train, &PreChangeModel::standard_normal()).unwrap();
        assert_eq!(v, 2f64.exp());
    }

    #[test]
    fn single_atom_display() {
        let train = EmpiricalDistribution::from_scalars(&[1.0]).unwrap();
        let p = DualPoint { lambda: 1.0, u: vec![0.0] };
        let v = eta_gaussian_analytic(&p, &train, &PreChangeModel::standard_normal()).unwrap();
        let expect = (-1.0f64 / 3.0).exp() / 3f64.sqrt();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.4137).abs() < 1e-4);
    }

    #[test]
    fn oracle_values() {
        assert!((inner_min_oracle(&[0.0]) + (-1.0f64).exp()).abs() < 1e-16);
        assert!((inner_min_oracle(&[0.0]) + 0.36788).abs() < 1e-5);
        assert_eq!(inner_min_oracle(&[1.0, 2.0]), -(-2.0f64).exp());
        assert_eq!(inner_min_oracle(&[1.0, 1.0]), -(-2.0f64).exp());
    }

    #[test]
    fn closed_form_threshold() {
        // R = 1 + w^2 is the boundary
        assert_eq!(closed_form_lambda_n1(1.0, 2f64.sqrt()), 0.0);
        assert_eq!(closed_form_lambda_n1(1.0, 3.0), 0.0);
        assert!(closed_form_lambda_n1(1.0, 1.0) > 0.0);
        // equals the display form away from omega = 0
        let (w, r) = (1.3f64, 0.6f64);
        let display = w * w / ((1.0 + 4.0 * r * r * w * w).sqrt() - 1.0) - 0.5;
        assert!((closed_form_lambda_n1(w, r) - display).abs() < 1e-12);
    }
}
