//! Principal branch of the Lambert W function.
//!
//! `lambert_w0(x)` returns the `w >= -1` solving `w * exp(w) = x` for
//! `x >= -1/e`. The closed-form time-share updates evaluate it with
//! arguments that can graze the branch point `-1/e` through rounding,
//! so inputs within `1e-15` below the branch point are clamped.

use crate::error::{Error, Result};

/// `-1/e`, the left edge of the principal-branch domain.
pub const BRANCH_POINT: f64 = -1.0 / std::f64::consts::E;

const CLAMP_BELOW: f64 = 1e-15;
const MAX_HALLEY_ITERS: usize = 40;

/// Principal-branch Lambert W.
///
/// Accurate to a relative residual of about `1e-14`: the returned `w`
/// satisfies `|w*exp(w) - x| <= 1e-12 * max(1, |x|)` across the domain.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("lambert_w0({x}) is not finite")));
    }
    if x < BRANCH_POINT {
        if x >= BRANCH_POINT - CLAMP_BELOW {
            return Ok(-1.0);
        }
        return Err(Error::Domain(format!(
            "lambert_w0({x}) below the branch point -1/e = {BRANCH_POINT}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    // p parameterizes the distance from the branch point: w(-1/e + t) has a
    // series in p = sqrt(2*e*t).
    let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
    if p < 1e-4 {
        // So close to the branch point that Halley's division by (1+w)
        // would be ill-conditioned; the truncation error is O(p^5).
        return Ok(branch_point_series(p));
    }

    let w0 = if x < -0.25 {
        branch_point_series(p)
    } else if x < 2.0 {
        // Crude Pade-like start; Halley contracts cubically from here.
        x / (1.0 + x * (1.0 + x / (2.0 + x)))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    Ok(halley(x, w0))
}

fn branch_point_series(p: f64) -> f64 {
    -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0))))
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let d1 = (w + 1.0) * ew;
        let step = f / (d1 - f * (w + 2.0) / (2.0 * (w + 1.0)));
        w -= step;
        if step.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    w.max(-1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent bisection on w*exp(w) = x, used to freeze expected values.
    fn bisect_w0(x: f64) -> f64 {
        let mut lo = -1.0f64;
        let mut hi = if x > std::f64::consts::E { x } else { std::f64::consts::E };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > x {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    }

    #[test]
    fn branch_point_maps_to_minus_one() {
        assert!((lambert_w0(BRANCH_POINT).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn unit_argument() {
        // bisect_w0(1.0) = 0.5671432904097838 (the omega constant).
        let w = lambert_w0(1.0).unwrap();
        assert!((w - 0.5671432904097838).abs() < 1e-13);
        assert!((w - bisect_w0(1.0)).abs() < 1e-12);
    }

    #[test]
    fn below_branch_point_rejected() {
        assert!(lambert_w0(BRANCH_POINT - 1e-9).is_err());
        // ... but rounding-level grazing is clamped.
        assert_eq!(lambert_w0(BRANCH_POINT - 0.9e-15).unwrap(), -1.0);
    }

    #[test]
    fn round_trip_residual_across_domain() {
        let n = 10_000;
        // Log-spaced positive magnitudes up to 1e6 plus a dense negative strip.
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let x = if i % 2 == 0 {
                10f64.powf(-8.0 + 14.0 * t)
            } else {
                BRANCH_POINT * (1.0 - t)
            };
            let w = lambert_w0(x).unwrap();
            let resid = (w * w.exp() - x).abs();
            assert!(
                resid <= 1e-12 * x.abs().max(1.0),
                "x={x:e} w={w} resid={resid:e}"
            );
            assert!(w >= -1.0);
        }
    }

    #[test]
    fn strictly_increasing_on_sorted_samples() {
        let mut prev = -1.0;
        for i in 1..2000 {
            let x = BRANCH_POINT + (i as f64 / 2000.0).powi(2) * 1e4;
            let w = lambert_w0(x).unwrap();
            assert!(w > prev, "not increasing at x={x}");
            prev = w;
        }
    }

    #[test]
    fn matches_bisection_on_random_arguments() {
        for i in 0..200 {
            let x = BRANCH_POINT + 1e-3 + (i as f64) * 0.37;
            let w = lambert_w0(x).unwrap();
            assert!((w - bisect_w0(x)).abs() <= 1e-10 * (1.0 + w.abs()));
        }
    }
}
