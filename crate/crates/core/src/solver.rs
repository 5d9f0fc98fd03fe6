//! Bracketed scalar root solving for monotone score functions.

use crate::error::{Error, Result};

/// Find the root of a nonincreasing function on [lo, hi].
///
/// Secant steps are taken whenever the candidate stays strictly inside the
/// current bracket and the bracket keeps contracting; otherwise the step
/// falls back to bisection. The bracket endpoints must satisfy
/// f(lo) >= 0 >= f(hi). Terminates once the bracket is narrower than `tol`.
pub fn root_nonincreasing<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    assert!(lo < hi && tol > 0.0);
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo < 0.0 || fhi > 0.0 {
        return Err(Error::NoRootInBracket { lo, hi });
    }

    let mut a = lo; // f(a) > 0
    let mut b = hi; // f(b) < 0
    let mut fa = flo;
    let mut fb = fhi;
    let mut width_at_check = b - a;

    for iter in 0..256 {
        if b - a <= tol {
            break;
        }
        // Force a bisection step if two rounds of secant failed to halve
        // the bracket.
        let force_bisect = iter % 2 == 0 && {
            let halved = (b - a) <= 0.5 * width_at_check;
            width_at_check = b - a;
            iter > 0 && !halved
        };
        let mut x = if force_bisect { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
        if !x.is_finite() || x <= a || x >= b {
            x = 0.5 * (a + b);
        }
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_linear_root() {
        let r = root_nonincreasing(|x| 3.0 - x, 0.0, 10.0, 1e-12).unwrap();
        assert!((r - 3.0).abs() < 1e-10);
    }

    #[test]
    fn finds_flat_then_steep_root() {
        // Nonincreasing with a long flat shoulder.
        let f = |x: f64| if x < 4.0 { 1.0 } else { 1.0 - (x - 4.0).powi(3) };
        let r = root_nonincreasing(f, -20.0, 20.0, 1e-11).unwrap();
        assert!((r - 5.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_same_sign_bracket() {
        let err = root_nonincreasing(|x| 1.0 + (-x).exp(), -5.0, 5.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoRootInBracket { .. }));
    }

    #[test]
    fn endpoint_root_is_returned() {
        let r = root_nonincreasing(|x| -x, 0.0, 1.0, 1e-10).unwrap();
        assert_eq!(r, 0.0);
    }
}
