use nalgebra::DMatrix;
use proptest::prelude::*;

use ecov::estimators::mle_sigma_orthogonal;
use ecov::eval::{fold_assignment, ResponseScaling, CLIP_SD};
use ecov::posterior::{posterior_gaussian, posterior_mean_orthogonal, SolverMode, SolverOptions};
use ecov::rng::{standard_normal_matrix, substream};
use ecov::sim::orthogonal_collection;
use ecov::theory::{ecov_mle_orthogonal, gain, id_orthogonal, mc_risk, random_psd, RiskEstimator};
use ecov::{EffectsMatrix, NoiseModel, TaskCovariance};

fn normal(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    standard_normal_matrix(&mut substream(seed, &[], 0), rows, cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gain_is_sandwiched_and_nonnegative(seed in any::<u64>(), q in 2usize..7, log_s2 in -2.0f64..2.0) {
        let mut rng = substream(seed, &[], 0);
        let s = TaskCovariance::new(random_psd(&mut rng, q)).unwrap();
        let g = gain(&s, 10f64.powf(log_s2)).unwrap();
        let slack = 1e-12 * g.upper_bound.abs().max(1e-300);
        prop_assert!(g.gain >= -1e-15);
        prop_assert!(g.lower_bound <= g.gain + slack);
        prop_assert!(g.gain <= g.upper_bound + slack);
        prop_assert!(g.majorization_holds);
    }

    #[test]
    fn gain_vanishes_for_diagonal_covariance(diag in prop::collection::vec(1e-3f64..1e3, 2..7), s2 in 0.01f64..100.0) {
        let s = TaskCovariance::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))).unwrap();
        prop_assert_eq!(gain(&s, s2).unwrap().gain, 0.0);
    }

    #[test]
    fn gain_is_invariant_to_joint_scaling(seed in any::<u64>(), q in 2usize..6, c in 0.1f64..10.0) {
        let mut rng = substream(seed, &[], 0);
        let m = random_psd(&mut rng, q);
        let a = gain(&TaskCovariance::new(m.clone()).unwrap(), 1.0).unwrap().gain;
        let b = gain(&TaskCovariance::new(m * c).unwrap(), c).unwrap().gain;
        // gain is a difference of O(1) sums, so its rounding error is absolute.
        prop_assert!((a - b).abs() <= 1e-12 + 1e-10 * a.abs());
    }

    #[test]
    fn shrinkage_estimators_never_grow_the_estimate(seed in any::<u64>(), d in 1usize..12, q in 1usize..5, s2 in 0.01f64..10.0) {
        let b = normal(seed, d, q);
        prop_assert!(id_orthogonal(&b, s2).norm() <= b.norm() * (1.0 + 1e-12));
        prop_assert!(ecov_mle_orthogonal(&b, s2).norm() <= b.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn orthogonal_posterior_mean_matches_dense_solve(seed in any::<u64>(), d in 1usize..8, q in 1usize..4) {
        let mut rng = substream(seed, &[1], 0);
        let b = standard_normal_matrix(&mut rng, d, q) * 2.0;
        let sigma = TaskCovariance::new(random_psd(&mut rng, q) + DMatrix::identity(q, q) * 0.1).unwrap();
        let c = orthogonal_collection(&b, &vec![0.5; q], d + 2, seed).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let dense = posterior_gaussian(&c, &sigma, &noise, &SolverOptions { mode: SolverMode::Dense, jitter_scale: 0.0, ..SolverOptions::default() }).unwrap();
        let closed = posterior_mean_orthogonal(&EffectsMatrix::new(b).unwrap(), &sigma, 0.5).unwrap();
        let scale = closed.values().norm().max(1.0);
        prop_assert!((dense.mean.values() - closed.values()).norm() <= 1e-8 * scale);
    }

    #[test]
    fn orthogonal_mle_is_psd_and_shrinks_singular_values(seed in any::<u64>(), q in 1usize..5, extra in 1usize..10) {
        let d = q + extra;
        let b = EffectsMatrix::new(normal(seed, d, q) * 1.5).unwrap();
        let r = mle_sigma_orthogonal(&b, 1.0).unwrap();
        let eig = ecov::linalg::sym_eigenvalues(r.sigma_hat.matrix());
        prop_assert!(eig[0] >= -1e-12);
        for (i, s) in r.singular_value_squares.iter().enumerate() {
            let expect = (s / d as f64 - 1.0).max(0.0);
            let got = (r.right_vectors.column(i).transpose() * r.sigma_hat.matrix() * r.right_vectors.column(i))[(0, 0)];
            prop_assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn folds_are_balanced_and_deterministic(seed in any::<u64>(), n in 10usize..200, folds in 2usize..10) {
        prop_assume!(n >= folds);
        let a = fold_assignment(seed, n, folds);
        prop_assert_eq!(&a, &fold_assignment(seed, n, folds));
        let mut counts = vec![0usize; folds];
        for &f in &a {
            counts[f] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn response_scaling_clips_to_band(ys in prop::collection::vec(-1e3f64..1e3, 3..50), probe in -1e5f64..1e5) {
        prop_assume!(ys.iter().any(|&v| v != ys[0]));
        let s = ResponseScaling::fit(&nalgebra::DVector::from_vec(ys)).unwrap();
        let out = s.apply(&nalgebra::DVector::from_element(1, probe))[0];
        prop_assert!(out.abs() <= CLIP_SD + 1e-12);
    }
}

#[test]
fn least_squares_risk_is_noise_times_size() {
    let beta = EffectsMatrix::new(normal(3, 7, 4)).unwrap();
    for (s2, seed) in [(1.0, 11), (0.25, 12), (4.0, 13)] {
        let r = mc_risk(RiskEstimator::Ls, &beta, s2, 20_000, seed).unwrap();
        let expect = s2 * 28.0;
        assert!((r.mean_loss - expect).abs() <= 5.0 * r.sem, "σ²={s2}: {} ± {} vs {expect}", r.mean_loss, r.sem);
    }
}

