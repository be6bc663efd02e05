use dsilt::dist::{chi2_sf, normal_sf};
use dsilt::federation::Round1Summary;
use dsilt::glm::{Dataset, LinkFamily};
use dsilt::solvers::{group_lasso_quad, GroupLassoProblem, GroupLassoSpec};
use dsilt::tuning::{
    calibration_points, cv_lambda_local, degrees_of_freedom, gic_select, lambda_m_rate, lambda_rate, log_spaced,
    null_combination, tau_distance, tau_rate, tau_select, TuningGrids,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    Dataset::new(0, x, y).unwrap()
}

// ---------- grids and rates ----------

#[test]
fn grids_and_rates() {
    let g = log_spaced(0.1, 10.0, 10);
    assert_eq!(g.len(), 10);
    assert!((g[0] - 0.1).abs() < 1e-15 && (g[9] - 10.0).abs() < 1e-12);
    for w in g.windows(2) {
        assert!((w[1] / w[0] - 10f64.powf(2.0 / 9.0)).abs() < 1e-12);
    }
    assert!((lambda_m_rate(200, 300) - (200f64.ln() / 300.0).sqrt()).abs() < 1e-15);
    assert!((tau_rate(3, 200, 150.0) - ((3.0 + 200f64.ln()) / 150.0).sqrt()).abs() < 1e-15);
    assert!((lambda_rate(3, 200, 600.0) - ((3.0 + 200f64.ln()) / 600.0).sqrt() / 3.0).abs() < 1e-15);
    let d = TuningGrids::default();
    assert!(d.validate().is_ok());
    assert!(d.tau_mult.iter().all(|&c| c > 1.0));
    let bad = TuningGrids { lambda_mult: vec![], ..TuningGrids::default() };
    assert!(bad.validate().is_err());
}

// ---------- local CV ----------

#[test]
fn cv_single_candidate() {
    let d = noise_dataset(1, 60, 4);
    assert_eq!(cv_lambda_local(&d, 3, &[0.37], LinkFamily::Gaussian).unwrap(), 0.37);
}

#[test]
fn cv_prefers_heavy_penalty_on_noise() {
    let d = noise_dataset(2, 80, 30);
    assert_eq!(cv_lambda_local(&d, 5, &[0.01, 10.0], LinkFamily::Gaussian).unwrap(), 10.0);
}

#[test]
fn cv_is_deterministic_with_duplicated_rows() {
    let d = noise_dataset(3, 40, 6);
    let x = DMatrix::from_fn(80, 6, |i, c| d.x[(i % 40, c)]);
    let y = DVector::from_fn(80, |i, _| d.y[i % 40]);
    let dup = Dataset::new(0, x, y).unwrap();
    let grid = log_spaced(0.01, 1.0, 6);
    let a = cv_lambda_local(&dup, 11, &grid, LinkFamily::Gaussian).unwrap();
    let b = cv_lambda_local(&dup, 11, &grid, LinkFamily::Gaussian).unwrap();
    assert_eq!(a, b);
}

// ---------- GIC degrees of freedom ----------

fn random_psd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p + 2, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() / (p as f64 + 2.0) + DMatrix::identity(p, p) * 0.1
}

#[test]
fn df_intercept_only_is_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 4)).collect();
    let xi: Vec<_> = (0..3).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5))).collect();
    let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &[0.3, 0.3, 0.4] };
    let fit = group_lasso_quad(&problem, &GroupLassoSpec::new(100.0), None).unwrap();
    assert!(fit.beta.iter().all(|b| b.iter().skip(1).all(|&v| v == 0.0)));
    let df = degrees_of_freedom(&problem, &fit.beta, 100.0).unwrap();
    assert!((df - 3.0).abs() < 1e-12);
}

#[test]
fn df_without_penalty_counts_active_coordinates() {
    let h = vec![DMatrix::identity(4, 4); 2];
    let xi = vec![DVector::from_vec(vec![0.1, 0.5, 0.0, -0.3]), DVector::from_vec(vec![0.2, 0.4, 0.0, 0.3])];
    let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &[0.5, 0.5] };
    let fit = group_lasso_quad(&problem, &GroupLassoSpec::new(0.0), None).unwrap();
    // Group 2 is exactly zero, so the active set has 3 groups of 2 coordinates.
    let df = degrees_of_freedom(&problem, &fit.beta, 0.0).unwrap();
    assert!((df - 6.0).abs() < 1e-12);
}

#[test]
fn df_matches_finite_difference_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, p) = (2, 4);
    let h: Vec<_> = (0..m).map(|_| random_psd(&mut rng, p)).collect();
    let xi: Vec<_> = (0..m).map(|_| DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let w = [0.6, 0.4];
    let lambda = 0.15;
    let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &w };
    let fit = group_lasso_quad(&problem, &GroupLassoSpec::new(lambda), None).unwrap();
    let active: Vec<usize> = (0..p).filter(|&j| j == 0 || fit.beta.iter().any(|b| b[j] != 0.0)).collect();
    assert!(active.len() >= 2, "fixture should keep a penalized group");

    let coords: Vec<(usize, usize)> = (0..m).flat_map(|s| active.iter().map(move |&j| (s, j))).collect();
    let dim = coords.len();
    let dev = |b: &[DVector<f64>]| -> f64 {
        (0..m).map(|s| w[s] * ((b[s].transpose() * &h[s] * &b[s])[0] - 2.0 * b[s].dot(&xi[s]))).sum()
    };
    let pen = |b: &[DVector<f64>]| -> f64 {
        (1..p).map(|j| (0..m).map(|s| b[s][j] * b[s][j]).sum::<f64>().sqrt()).sum::<f64>() * lambda
    };
    let hessian = |f: &dyn Fn(&[DVector<f64>]) -> f64| -> DMatrix<f64> {
        let eps = 1e-4;
        DMatrix::from_fn(dim, dim, |a, c| {
            let eval = |da: f64, dc: f64| {
                let mut b = fit.beta.clone();
                b[coords[a].0][coords[a].1] += da;
                b[coords[c].0][coords[c].1] += dc;
                f(&b)
            };
            (eval(eps, eps) - eval(eps, -eps) - eval(-eps, eps) + eval(-eps, -eps)) / (4.0 * eps * eps)
        })
    };
    let d = hessian(&dev);
    let a = &d + hessian(&pen);
    let oracle = (a.lu().solve(&d).unwrap()).trace();
    let df = degrees_of_freedom(&problem, &fit.beta, lambda).unwrap();
    assert!((df - oracle).abs() < 1e-6, "{df} vs {oracle}");
}

fn r1(study: usize, n: usize, h: DMatrix<f64>, xi: DVector<f64>) -> Round1Summary {
    Round1Summary { study_id: study, fold_id: 0, n_used: n, xi_hat: xi, h_hat: h }
}

#[test]
fn gic_report_is_reproducible_and_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s: Vec<_> = (0..3)
        .map(|m| r1(m, 100 + 10 * m, random_psd(&mut rng, 6), DVector::from_fn(6, |_, _| rng.gen_range(-0.5..0.5))))
        .collect();
    let grid = log_spaced(0.005, 0.5, 8);
    let (lam, rep) = gic_select(&s, &grid, None).unwrap();
    let (lam2, rep2) = gic_select(&s, &grid, None).unwrap();
    assert_eq!(lam, lam2);
    assert_eq!(rep, rep2);
    let n: f64 = 330.0;
    assert!((rep.gamma - n.ln() / n).abs() < 1e-15);
    assert_eq!(rep.entries.iter().filter(|e| e.selected).count(), 1);
    for e in &rep.entries {
        if let Some(g) = e.gic {
            assert!(g.is_finite());
            assert!((g - (e.deviance + rep.gamma * e.df.unwrap())).abs() < 1e-15);
        }
    }
    let best = rep.entries.iter().filter_map(|e| e.gic).fold(f64::INFINITY, f64::min);
    assert_eq!(rep.entries.iter().find(|e| e.selected).unwrap().gic, Some(best));
    assert!(gic_select(&s, &[], None).is_err());
}

// ---------- null statistics ----------

#[test]
fn null_combination_examples() {
    assert_eq!(null_combination(&[0.7, 0.7]), 0.0);
    assert!((null_combination(&[0.9, 0.3]) - 0.3).abs() < 1e-15);
    assert_eq!(null_combination(&[0.3, 0.9]), -null_combination(&[0.9, 0.3]));
    // K = 4: first half positive.
    assert!((null_combination(&[1.0, 2.0, 3.0, 5.0]) - (1.0 + 2.0 - 3.0 - 5.0) / 4.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn null_combination_sign_symmetry(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        prop_assert_eq!(null_combination(&[a, b]), -null_combination(&[b, a]));
        prop_assert!((null_combination(&[a, b]) - (a - b) / 2.0).abs() < 1e-15);
    }
}

// ---------- tau selection ----------

/// Direct evaluation of the distance from its definition.
fn distance_oracle(zeta: &[f64], df: usize, h_points: usize) -> f64 {
    let q = zeta.len() as f64;
    let top = normal_sf((2.0 * q.ln()).sqrt());
    let mut total = 0.0;
    for h in 1..=h_points {
        let x = top * h as f64 / h_points as f64;
        let mut r = 0.0;
        for &z in zeta {
            if chi2_sf(z, df) <= 2.0 * x {
                r += 1.0;
            }
        }
        total += (r / (2.0 * q * x) - 1.0) * (r / (2.0 * q * x) - 1.0);
    }
    total / h_points as f64
}

#[test]
fn calibration_points_shape() {
    let xs = calibration_points(20, 10);
    let top = normal_sf((2.0 * 20f64.ln()).sqrt());
    assert_eq!(xs.len(), 10);
    assert!((xs[9] - top).abs() < 1e-18 && (xs[0] - top / 10.0).abs() < 1e-18);
}

#[test]
fn distance_closed_forms() {
    // Statistics at zero never reach the tiny tail levels, so every term is (0 - 1)^2.
    assert!((tau_distance(&[0.0; 20], 3, 10) - 1.0).abs() < 1e-15);
    // Infinite statistics are all counted: R = q at every point.
    let xs = calibration_points(20, 10);
    let expected = xs.iter().map(|x| (1.0 / (2.0 * x) - 1.0).powi(2)).sum::<f64>() / 10.0;
    let d = tau_distance(&[f64::INFINITY; 20], 3, 10);
    assert!((d - expected).abs() <= 1e-12 * expected);
}

#[test]
fn distance_matches_oracle_on_frozen_fixture() {
    let zeta = [
        0.4, 1.2, 2.9, 3.3, 0.05, 7.8, 12.5, 16.1, 2.2, 4.4, 0.9, 19.5, 25.0, 1.7, 5.5, 3.0, 14.2, 0.3, 9.9, 30.0,
    ];
    let candidates = vec![Some(zeta.to_vec()), None, Some(zeta.iter().map(|z| z * 0.5).collect())];
    let (best, dist) = tau_select(&candidates, 3, 10).unwrap();
    for (c, d) in candidates.iter().zip(&dist) {
        match (c, d) {
            (Some(z), Some(d)) => assert!((d - distance_oracle(z, 3, 10)).abs() < 1e-12),
            (None, None) => {}
            _ => panic!("feasibility flags out of step"),
        }
    }
    let d0 = dist[0].unwrap();
    let d2 = dist[2].unwrap();
    assert_eq!(best, if d2 < d0 { 2 } else { 0 });
}

#[test]
fn tau_select_ties_and_failures() {
    let z = vec![1.0; 10];
    let (best, _) = tau_select(&[None, Some(z.clone()), Some(z.clone())], 2, 5).unwrap();
    assert_eq!(best, 1);
    assert!(tau_select(&[None, None], 2, 5).is_err());
    assert!(tau_select(&[Some(vec![1.0, 2.0])], 2, 5).is_err());
}

proptest! {
    #[test]
    fn tau_distance_permutation_invariant(z in prop::collection::vec(0.0f64..40.0, 5..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = z.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(tau_distance(&z, 3, 10), tau_distance(&shuffled, 3, 10));
    }
}
