//! Small quadrature kit for the hypothesis checker: double-exponential
//! (tanh-sinh) rule for endpoint-singular integrands on finite intervals,
//! plus plain composite Simpson for piecewise-smooth tabulated data.

use std::f64::consts::FRAC_PI_2;

/// Tanh-sinh quadrature of f over (a, b). Tolerates integrable endpoint
/// singularities; abscissae approach the endpoints double-exponentially and
/// are computed from the endpoint distance, not by cancellation.
pub(crate) fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    debug_assert!(b > a);
    let c = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    let h = 1.0 / 64.0;
    let mut sum = 0.0;
    let mut k = 0i64;
    loop {
        // symmetric pair of nodes at t = ±k·h (k = 0 counted once)
        let t = k as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        if 2.0 * u > 700.0 {
            break;
        }
        let w = h * c * FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        if w == 0.0 {
            break;
        }
        // the nodes at ±t sit at the same stable endpoint distance
        // c(1 − tanh u) = 2c/(e^{2u} + 1)
        let dist = 2.0 * c / ((2.0 * u).exp() + 1.0);
        if k == 0 {
            sum += w * f(m);
        } else if dist > 0.0 {
            sum += w * (f(b - dist) + f(a + dist));
        }
        k += 1;
    }
    sum
}

/// Composite Simpson on [a, b] with `panels` even subdivisions; for smooth
/// integrands only.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    debug_assert!(panels >= 2 && panels % 2 == 0 && b > a);
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}
