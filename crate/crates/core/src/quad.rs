//! Adaptive Simpson quadrature for scalar and small vector integrands.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

struct Acc {
    unresolved: f64,
}

fn simpson_rec<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: &F,
    a: f64,
    b: f64,
    fa: [f64; N],
    fm: [f64; N],
    fb: [f64; N],
    whole: [f64; N],
    tol: f64,
    depth: u32,
    acc: &mut Acc,
) -> [f64; N] {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let h6 = (b - a) / 12.0;
    let mut left = [0.0; N];
    let mut right = [0.0; N];
    let mut err = 0.0_f64;
    for k in 0..N {
        left[k] = h6 * (fa[k] + 4.0 * flm[k] + fm[k]);
        right[k] = h6 * (fm[k] + 4.0 * frm[k] + fb[k]);
        err = err.max((left[k] + right[k] - whole[k]).abs());
    }
    if err <= 15.0 * tol || depth >= MAX_DEPTH || (m - a) <= f64::EPSILON * m.abs().max(1.0) {
        if err > 15.0 * tol {
            acc.unresolved += err / 15.0;
        }
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = left[k] + right[k] + (left[k] + right[k] - whole[k]) / 15.0;
        }
        return out;
    }
    let l = simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, acc);
    let r = simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, acc);
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = l[k] + r[k];
    }
    out
}

/// Integrates a vector-valued `f` over `[a, b]` split into `panels` equal
/// panels, to absolute tolerance `tol` in every component.
pub fn integrate_vec<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    tol: f64,
) -> Result<[f64; N]> {
    let mut total = [0.0; N];
    if !(b > a) {
        return Ok(total);
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut acc = Acc { unresolved: 0.0 };
    let mut fa = f(a);
    for p in 0..panels {
        let lo = a + width * p as f64;
        let hi = if p + 1 == panels { b } else { a + width * (p + 1) as f64 };
        let m = 0.5 * (lo + hi);
        let fm = f(m);
        let fb = f(hi);
        let mut whole = [0.0; N];
        for k in 0..N {
            whole[k] = (hi - lo) / 6.0 * (fa[k] + 4.0 * fm[k] + fb[k]);
        }
        let part = simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol * (hi - lo) / (b - a), 0, &mut acc);
        for k in 0..N {
            total[k] += part[k];
        }
        fa = fb;
    }
    if total.iter().any(|v| !v.is_finite()) || acc.unresolved > 10.0 * tol.max(1e-300) {
        return Err(Error::Quadrature { a, b, estimate: acc.unresolved });
    }
    Ok(total)
}

/// Scalar adaptive Simpson over `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_vec(|x| [f(x)], a, b, 16, tol).map(|v| v[0])
}
