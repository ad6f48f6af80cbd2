mod common;

use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;

use common::{random_matrix, random_stable_implementation, rng};
use sls_core::linalg::spectral_radius;
use sls_core::stability::{
    build_internal_dynamics, distributed_stability_check, internal_dynamics_of, norm_power_certify,
    small_gain_check, Verdict, DEFAULT_MAX_ITERATIONS, DEFAULT_TRANSIENT_BOUND,
};
use sls_core::{DeltaC, FirMatrix, ImplementationMatrices};

fn delta_c_from(delta: &[DMatrix<f64>]) -> DeltaC {
    let n = delta[0].nrows();
    let mut coeffs = vec![DMatrix::identity(n, n)];
    coeffs.extend(delta.iter().cloned());
    DeltaC::new(FirMatrix::new(0, coeffs).unwrap()).unwrap()
}

fn cdet2(m: [[Complex<f64>; 2]; 2]) -> Complex<f64> {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[test]
fn companion_eigenvalues_are_roots_of_the_matrix_polynomial() {
    let mut r = rng(41);
    for _ in 0..20 {
        let d1 = random_matrix(&mut r, 2, 2, 1.0);
        let d2 = random_matrix(&mut r, 2, 2, 1.0);
        let dynamics = internal_dynamics_of(&delta_c_from(&[d1.clone(), d2.clone()]));
        assert_eq!(dynamics.dim(), 4);
        let eig = dynamics.a_z().complex_eigenvalues();
        // det(z²I + Δc(1) z + Δc(2)) vanishes at every eigenvalue
        for z in eig.iter() {
            let z = *z;
            let entry = |i: usize, j: usize| {
                let id = if i == j { 1.0 } else { 0.0 };
                z * z * id + z * d1[(i, j)] + Complex::new(d2[(i, j)], 0.0)
            };
            let det = cdet2([[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]]);
            let scale = (1.0 + z.norm()).powi(4) * (1.0 + d1.amax() + d2.amax()).powi(2);
            assert!(det.norm() < 1e-10 * scale, "{det} at {z}");
        }
        // Vieta: the monic quartic has root sum -tr Δc(1) and product det Δc(2)
        let sum: Complex<f64> = eig.iter().sum();
        let prod: Complex<f64> = eig.iter().product();
        assert!((sum.re + d1.trace()).abs() < 1e-10 && sum.im.abs() < 1e-10);
        assert!((prod.re - d2.determinant()).abs() < 1e-10 && prod.im.abs() < 1e-10);
    }
}

#[test]
fn companion_structure() {
    let mut r = rng(42);
    let d: Vec<_> = (0..3).map(|_| random_matrix(&mut r, 2, 2, 1.0)).collect();
    let dynamics = internal_dynamics_of(&delta_c_from(&d));
    let a = dynamics.a_z();
    assert_eq!((dynamics.n(), dynamics.order()), (2, 3));
    assert_eq!(a.view((0, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
    assert_eq!(a.view((2, 4), (2, 2)), DMatrix::<f64>::identity(2, 2));
    assert_eq!(a.view((0, 0), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    for b in 0..3 {
        assert_eq!(a.view((4, 2 * b), (2, 2)), -&d[2 - b]);
    }
    let single = internal_dynamics_of(&delta_c_from(&d[..1]));
    assert_eq!(single.a_z(), &(-&d[0]));
}

#[test]
fn exact_implementations_are_nilpotent() {
    let mut r = rng(43);
    for _ in 0..5 {
        let (sys, cl) = common::random_achievable(&mut r, 3, 2, 4);
        let imp = ImplementationMatrices::from_closed_loop(&cl).unwrap();
        let dynamics = build_internal_dynamics(&sys, &imp).unwrap();
        let bottom = dynamics.a_z().rows(dynamics.dim() - 3, 3);
        assert!(bottom.iter().all(|&v| v == 0.0));
        assert_eq!(dynamics.spectral_radius().unwrap(), 0.0);
    }
}

#[test]
fn small_gain_implies_stability() {
    let mut r = rng(44);
    let mut certified = 0;
    for i in 0..100 {
        let tc = 1 + i % 4;
        let scale = 0.05 + 0.5 * (i as f64 / 100.0);
        let d: Vec<_> = (0..tc).map(|_| random_matrix(&mut r, 3, 3, scale)).collect();
        let dc = delta_c_from(&d);
        if small_gain_check(&dc.delta()) {
            certified += 1;
            assert!(internal_dynamics_of(&dc).spectral_radius().unwrap() < 1.0);
        }
    }
    assert!(certified >= 20, "only {certified} instances passed the small-gain test");
    let mut row = DMatrix::zeros(2, 2);
    row[(0, 0)] = 1.0;
    row[(0, 1)] = -0.5;
    assert!(!small_gain_check(&FirMatrix::monomial(row, 1)));
    assert!(small_gain_check(&FirMatrix::zeros(2, 2, 1, 3)));
}

#[test]
fn certified_matrices_are_stable() {
    let mut r = rng(45);
    let mut verdicts = [0usize; 3];
    for i in 0..100 {
        let mut a = random_matrix(&mut r, 6, 6, 1.0);
        let rho = spectral_radius(&a).unwrap();
        a *= (0.5 + i as f64 / 100.0) / rho;
        let out = norm_power_certify(&a, DEFAULT_TRANSIENT_BOUND, DEFAULT_MAX_ITERATIONS).unwrap();
        match out.verdict {
            Verdict::Certified => {
                verdicts[0] += 1;
                assert!(out.final_norm < 1.0);
                assert!(spectral_radius(&a).unwrap() < 1.0);
            }
            Verdict::LargeTransient => verdicts[1] += 1,
            Verdict::MaxIterations => verdicts[2] += 1,
        }
    }
    assert!(verdicts[0] > 0 && verdicts[1] + verdicts[2] > 0, "{verdicts:?}");
}

#[test]
fn operation_count_is_quadratic_in_dimension_per_processor() {
    // three columns per processor; A = I never terminates early
    let per_round = |dim: usize| {
        let dynamics = internal_dynamics_of(&delta_c_from(&[-DMatrix::identity(dim, dim)]));
        let rep = distributed_stability_check(&dynamics, dim / 3, 10.0, 5).unwrap();
        assert_eq!(rep.outcome.verdict, Verdict::MaxIterations);
        assert!(rep.ops_per_processor.windows(2).all(|w| w[0] == w[1]));
        rep.ops_per_processor[0] as f64 / (rep.outcome.iterations - 1) as f64
    };
    let (small, large) = (per_round(12), per_round(24));
    assert_eq!(small, (12 * 12 * 3) as f64);
    assert_eq!(large / small, 4.0);
}

#[test]
fn chain_implementation_internal_dynamics_match_direct_radius() {
    let mut r = rng(46);
    for _ in 0..5 {
        let (sys, _, imp) = random_stable_implementation(&mut r, 3, 2, 4, 0.05);
        let dynamics = build_internal_dynamics(&sys, &imp).unwrap();
        assert!(dynamics.spectral_radius().unwrap() < 0.9);
        let out = norm_power_certify(dynamics.a_z(), DEFAULT_TRANSIENT_BOUND, 2000).unwrap();
        assert_eq!(out.verdict, Verdict::Certified);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributed_matches_single_processor(
        seed in any::<u64>(), n in 1usize..4, tc in 1usize..4, scale in 0.05f64..1.5
    ) {
        let mut r = rng(seed);
        let d: Vec<_> = (0..tc).map(|_| random_matrix(&mut r, n, n, scale)).collect();
        let dynamics = internal_dynamics_of(&delta_c_from(&d));
        let single = norm_power_certify(dynamics.a_z(), 1e3, 150).unwrap();
        for p in 1..=dynamics.dim() {
            let rep = distributed_stability_check(&dynamics, p, 1e3, 150).unwrap();
            prop_assert_eq!(rep.outcome, single);
            prop_assert_eq!(rep.trace.len(), single.iterations);
            prop_assert_eq!(rep.trace.last().unwrap().global_norm, single.final_norm);
            prop_assert_eq!(rep.partition.last().unwrap().1, dynamics.dim());
        }
    }
}
