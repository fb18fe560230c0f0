//! Central finite-difference gradient verification. The differencing oracle
//! only ever calls the supplied closure; it never inspects tape internals,
//! so it stays independent of the backward implementation it checks.

use crate::scalar::Scalar;

/// Relative error between an analytic and a finite-difference derivative,
/// floored so that near-zero pairs compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Result of checking one coordinate.
#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Central-difference check of `analytic_grad` against the scalar function
/// `f` evaluated at `point`, probing `indices` (all coordinates when empty).
/// Returns the worst entry.
pub fn check_gradient<S, F>(
    point: &[S],
    analytic_grad: &[S],
    indices: &[usize],
    step: f64,
    mut f: F,
) -> CheckEntry
where
    S: Scalar,
    F: FnMut(&[S]) -> f64,
{
    assert_eq!(point.len(), analytic_grad.len());
    let all: Vec<usize>;
    let probe: &[usize] = if indices.is_empty() {
        all = (0..point.len()).collect();
        &all
    } else {
        indices
    };
    let mut worst = CheckEntry {
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel_error: 0.0,
    };
    let mut buf: Vec<S> = point.to_vec();
    for &i in probe {
        let orig = buf[i];
        buf[i] = orig + S::from_f64(step);
        let up = f(&buf);
        buf[i] = orig - S::from_f64(step);
        let down = f(&buf);
        buf[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = analytic_grad[i].to_f64();
        let rel = relative_error(analytic, numeric, 1e-4);
        if rel > worst.rel_error {
            worst = CheckEntry {
                index: i,
                analytic,
                numeric,
                rel_error: rel,
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(x) = Σ x², ∇f = 2x
        let x = vec![0.3f64, -1.2, 2.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let worst = check_gradient(&x, &grad, &[], 1e-6, |p| {
            p.iter().map(|v| v * v).sum::<f64>()
        });
        assert!(worst.rel_error < 1e-8, "{worst:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = vec![1.0f64, 2.0];
        let bad_grad = vec![2.0f64, 3.9]; // true is [2, 4]
        let worst = check_gradient(&x, &bad_grad, &[], 1e-6, |p| {
            p.iter().map(|v| v * v).sum::<f64>()
        });
        assert!(worst.rel_error > 1e-3, "{worst:?}");
    }
}
