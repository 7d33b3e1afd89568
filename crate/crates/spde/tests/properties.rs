//! Property tests for the structural invariants: semigroup algebra,
//! transform round trips, restriction telescoping and increment damping.

use std::sync::Arc;

use proptest::prelude::*;

use spde::covariance::{assemble_covariance, factorize, Kernel};
use spde::linalg::Matrix;
use spde::noise::{ou_increment_cov, sample_brownian};
use spde::spectral::{grid_to_coeffs, CollocationGrid, Eigenbasis, SpectralField};

fn coeff_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semigroup_law_holds(coeffs in coeff_vec(12), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let basis = Eigenbasis::<f64>::new(12);
        let f = SpectralField::new(coeffs, Arc::clone(&basis)).unwrap();
        let composed = f.semigroup_apply(s).unwrap().semigroup_apply(t).unwrap();
        let direct = f.semigroup_apply(s + t).unwrap();
        for (a, b) in composed.coeffs().iter().zip(direct.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn semigroup_is_a_per_mode_contraction(coeffs in coeff_vec(8), t in 0.0f64..5.0) {
        let basis = Eigenbasis::<f64>::new(8);
        let f = SpectralField::new(coeffs, Arc::clone(&basis)).unwrap();
        let g = f.semigroup_apply(t).unwrap();
        for (a, b) in g.coeffs().iter().zip(f.coeffs()) {
            prop_assert!(a.abs() <= b.abs() + 1e-15);
        }
    }

    #[test]
    fn projection_commutes_with_semigroup(coeffs in coeff_vec(10), t in 0.0f64..3.0, n in 1usize..10) {
        let basis = Eigenbasis::<f64>::new(10);
        let f = SpectralField::new(coeffs, Arc::clone(&basis)).unwrap();
        let a = f.semigroup_apply(t).unwrap().project(n);
        let b = f.project(n).semigroup_apply(t).unwrap();
        prop_assert_eq!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn grid_transform_roundtrip(coeffs in coeff_vec(9), extra in 0usize..20) {
        let basis = Eigenbasis::<f64>::new(9);
        let f = SpectralField::new(coeffs.clone(), Arc::clone(&basis)).unwrap();
        let grid = CollocationGrid::new(9 + extra);
        let vals = f.eval_on_grid(&grid);
        let back = grid_to_coeffs(&vals, &grid, 9, &basis).unwrap();
        for (a, b) in back.coeffs().iter().zip(&coeffs) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn sup_norm_is_sign_invariant(coeffs in coeff_vec(6)) {
        let basis = Eigenbasis::<f64>::new(6);
        let grid = CollocationGrid::new(25);
        let f = SpectralField::new(coeffs.clone(), Arc::clone(&basis)).unwrap();
        let neg = SpectralField::new(coeffs.iter().map(|c| -c).collect(), Arc::clone(&basis)).unwrap();
        prop_assert_eq!(f.sup_norm(&grid), neg.sup_norm(&grid));
    }

    #[test]
    fn restriction_is_exact_for_every_divisor(seed in 0u64..500, split in 0usize..3) {
        let cov = assemble_covariance(&Kernel::triangular(0.2f64).unwrap(), 4, 64).unwrap();
        let factor = Arc::new(factorize(&cov).unwrap());
        let h = sample_brownian(factor, 24, 1.0, seed).unwrap();
        let steps = [24usize, 12, 8][split];
        let view = h.couple_restrict(4, steps).unwrap();
        let stride = 24 / steps;
        for m in 0..steps {
            let coarse = view.increment(m).unwrap();
            for k in 0..4 {
                let mut fine = 0.0;
                for f_idx in (m * stride)..((m + 1) * stride) {
                    fine += h.increments().row(f_idx)[k];
                }
                prop_assert_eq!(coarse[k], fine);
            }
        }
    }

    #[test]
    fn increment_damping_stays_in_unit_interval(dt in 1e-6f64..1.0) {
        let lam: Vec<f64> = (1..=6).map(|k| (k * k) as f64).collect();
        let sigma = Matrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.3 });
        let m = ou_increment_cov(dt, &lam, &sigma);
        for i in 0..6 {
            for j in 0..6 {
                let ratio = m[(i, j)] / (sigma[(i, j)] * dt);
                prop_assert!(ratio > 0.0 && ratio <= 1.0 + 1e-15, "ratio {} at ({},{})", ratio, i, j);
            }
        }
    }

    #[test]
    fn hierarchies_are_reproducible(seed in 0u64..1000) {
        let cov = assemble_covariance(&Kernel::triangular(0.3f64).unwrap(), 3, 64).unwrap();
        let factor = Arc::new(factorize(&cov).unwrap());
        let a = sample_brownian(Arc::clone(&factor), 8, 0.5, seed).unwrap();
        let b = sample_brownian(factor, 8, 0.5, seed).unwrap();
        prop_assert_eq!(a.increments().data(), b.increments().data());
        prop_assert_eq!(a.noise_hash(), b.noise_hash());
    }
}
