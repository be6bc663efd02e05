//! Exact minimizer of a separable quadratic plus a group norm:
//!
//! minimize  sum_m (a_m / 2) x_m^2 - b_m x_m + kappa * ||x||_2,   a_m >= 0.

use crate::error::SolverError;

pub(crate) fn block_minimize(a: &[f64], b: &[f64], kappa: f64, out: &mut [f64]) -> Result<(), SolverError> {
    debug_assert_eq!(a.len(), b.len());
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if kappa <= 0.0 {
        for m in 0..a.len() {
            out[m] = if a[m] > 0.0 { b[m] / a[m] } else { 0.0 };
        }
        return Ok(());
    }
    if bnorm <= kappa {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let amax = a.iter().cloned().fold(0.0, f64::max);
    let r = if amax - amin <= 1e-14 * amax.max(1.0) {
        if amax <= 0.0 {
            return Err(SolverError::InvalidInput(
                "group objective is unbounded below (zero curvature)".into(),
            ));
        }
        (bnorm - kappa) / amax
    } else {
        let tail: f64 = a
            .iter()
            .zip(b)
            .filter(|(&am, _)| am <= 0.0)
            .map(|(_, &bm)| bm * bm)
            .sum::<f64>();
        if tail >= kappa * kappa {
            return Err(SolverError::InvalidInput(
                "group objective is unbounded below (zero curvature)".into(),
            ));
        }
        // f(r) = sum b^2 / (a r + kappa)^2 is convex and decreasing; Newton from
        // the left increases monotonically to the root of f(r) = 1.
        let mut r = 0.0_f64;
        for _ in 0..100 {
            let mut f = 0.0;
            let mut df = 0.0;
            for m in 0..a.len() {
                let d = a[m] * r + kappa;
                let t = b[m] * b[m] / (d * d);
                f += t;
                df -= 2.0 * t * a[m] / d;
            }
            let step = (f - 1.0) / df;
            let next = r - step;
            if !(next > r) || (next - r) <= 1e-15 * next.max(1e-300) {
                r = next.max(r);
                break;
            }
            r = next;
        }
        r
    };
    for m in 0..a.len() {
        out[m] = b[m] * r / (a[m] * r + kappa);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_curvature_matches_block_soft_threshold() {
        let mut out = [0.0; 2];
        block_minimize(&[1.0, 1.0], &[3.0, 4.0], 1.0, &mut out).unwrap();
        assert!((out[0] - 2.4).abs() < 1e-12 && (out[1] - 3.2).abs() < 1e-12);
    }

    #[test]
    fn unequal_curvature_satisfies_stationarity() {
        let a = [0.5, 2.0, 1.3];
        let b = [1.0, -3.0, 0.7];
        let kappa = 0.8;
        let mut x = [0.0; 3];
        block_minimize(&a, &b, kappa, &mut x).unwrap();
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for m in 0..3 {
            let g = a[m] * x[m] - b[m] + kappa * x[m] / nrm;
            assert!(g.abs() < 1e-10, "{g}");
        }
    }

    #[test]
    fn small_linear_term_gives_zero() {
        let mut x = [9.0; 2];
        block_minimize(&[1.0, 2.0], &[0.3, 0.4], 0.5, &mut x).unwrap();
        assert_eq!(x, [0.0, 0.0]);
    }
}
