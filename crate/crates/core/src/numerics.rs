//! Finite differences, root bracketing, and small grid utilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-difference configuration.
///
/// `relative` scales the step by `max(1, |coordinate|)`; `richardson`
/// combines the `h` and `h/2` central differences to cancel the leading
/// truncation term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FdScheme {
    pub step: f64,
    pub richardson: bool,
    pub relative: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        FdScheme {
            step: 1e-4,
            richardson: true,
            relative: true,
        }
    }
}

impl FdScheme {
    pub fn new(step: f64, richardson: bool, relative: bool) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Argument(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        Ok(FdScheme {
            step,
            richardson,
            relative,
        })
    }

    /// Absolute step used at a coordinate value.
    pub fn step_at(&self, coordinate: f64) -> f64 {
        if self.relative {
            self.step * coordinate.abs().max(1.0)
        } else {
            self.step
        }
    }
}

/// Central difference of `f` at `x0`, following the scheme.
///
/// Evaluation failures propagate: derivative evaluation is only attempted
/// where both stencil points are valid inputs.
pub fn fd_partial<F>(f: F, x0: f64, scheme: &FdScheme) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let h = scheme.step_at(x0);
    let coarse = central(&f, x0, h)?;
    if !scheme.richardson {
        return Ok(coarse);
    }
    let fine = central(&f, x0, h / 2.0)?;
    // O(h^2) leading error: Richardson weight 4/3, -1/3.
    Ok((4.0 * fine - coarse) / 3.0)
}

fn central<F>(f: &F, x0: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let hi = f(x0 + h)?;
    let lo = f(x0 - h)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Finds the leftmost `y` with `f(y) >= level` on `[lo, hi]` by bisection.
///
/// Requires `f(lo) < level` and `f(hi) >= level` for a nondecreasing `f`;
/// used to invert CDFs, where flats at the level resolve to their left edge.
pub fn bisect_leftmost<F>(f: F, lo: f64, hi: f64, level: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(Error::Bracketing(format!("empty bracket [{lo}, {hi}]")));
    }
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo >= level {
        // The level is attained at or before the bracket start.
        return if f_lo == level || level <= f_lo {
            Ok(lo)
        } else {
            Err(Error::Bracketing(format!(
                "f({lo}) = {f_lo} already >= level {level}"
            )))
        };
    }
    if f_hi < level {
        return Err(Error::Bracketing(format!(
            "level {level} not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    let mut a = lo;
    let mut b = hi;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break; // floating-point resolution reached
        }
        if f(mid)? >= level {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// `count` equally spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && hi > lo);
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|k| {
            if k + 1 == count {
                hi
            } else {
                lo + k as f64 * step
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_quadratic() {
        let scheme = FdScheme::new(1e-3, false, false).unwrap();
        let d = fd_partial(|t| Ok(t * t), 3.0, &scheme).unwrap();
        assert!((d - 6.0).abs() < 1e-6, "got {d}");
    }

    #[test]
    fn fd_sin_with_richardson() {
        let scheme = FdScheme::new(1e-3, true, false).unwrap();
        let d = fd_partial(|t| Ok(t.sin()), 0.0, &scheme).unwrap();
        assert!((d - 1.0).abs() < 1e-10, "got {d}");
    }

    #[test]
    fn fd_constant_is_exactly_zero() {
        let scheme = FdScheme::default();
        let d = fd_partial(|_| Ok(4.25), 1.0, &scheme).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn fd_rejects_zero_step() {
        assert!(FdScheme::new(0.0, true, true).is_err());
    }

    #[test]
    fn fd_propagates_evaluation_failure() {
        let scheme = FdScheme::default();
        let r = fd_partial(
            |t| {
                if t > 1.0 {
                    Err(Error::Domain("beyond support".into()))
                } else {
                    Ok(t)
                }
            },
            1.0,
            &scheme,
        );
        assert!(r.is_err());
    }

    #[test]
    fn bisect_finds_leftmost_crossing() {
        // Flat at 0.5 on [2, 3]: the leftmost solution is 2.
        let f = |y: f64| {
            Ok(if y < 2.0 {
                0.25 * y
            } else if y <= 3.0 {
                0.5
            } else {
                0.5 + (y - 3.0)
            })
        };
        let root = bisect_leftmost(f, 0.0, 4.0, 0.5, 1e-12).unwrap();
        assert!((root - 2.0).abs() < 1e-10, "got {root}");
    }

    #[test]
    fn bisect_reports_missing_bracket() {
        assert!(bisect_leftmost(|y| Ok(y), 0.0, 1.0, 2.0, 1e-10).is_err());
    }

    #[test]
    fn linspace_hits_endpoints() {
        let g = linspace(1.0, 2.0, 11);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[10], 2.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
