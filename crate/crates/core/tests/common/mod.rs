#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sls_core::clsyn::synthesize_clmaps;
use sls_core::implsyn::ImplementationMatrices;
use sls_core::linalg::spectral_radius;
use sls_core::stability::build_internal_dynamics;
use sls_core::{ClosedLoopMaps, FirMatrix, LqrWeights, LtiSystem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_fir(rng: &mut ChaCha8Rng, rows: usize, cols: usize, start: usize, horizon: usize) -> FirMatrix {
    let coeffs = (start..=horizon).map(|_| random_matrix(rng, rows, cols, 1.0)).collect();
    FirMatrix::new(start, coeffs).unwrap()
}

/// Random `(A, B)` with `A` rescaled to spectral radius `radius`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, radius: f64) -> LtiSystem {
    let mut a = random_matrix(rng, n, n, 1.0);
    let r = spectral_radius(&a).unwrap();
    if r > 0.0 {
        a *= radius / r;
    }
    let b = random_matrix(rng, n, m, 1.0);
    LtiSystem::new(a, b).unwrap()
}

/// Random system with its unconstrained optimal maps of horizon `t`.
/// Redraws until `B` is well enough conditioned for FIR closure.
pub fn random_achievable(rng: &mut ChaCha8Rng, n: usize, m: usize, t: usize) -> (LtiSystem, ClosedLoopMaps) {
    loop {
        let radius = rng.random_range(0.3..0.95);
        let sys = random_system(rng, n, m, radius);
        if let Ok(cl) = synthesize_clmaps(&sys, t, &LqrWeights::identity(n, m), None) {
            return (sys, cl);
        }
    }
}

/// Exact self-implementation of random maps with every free coefficient
/// perturbed by up to `noise`, redrawn until internally stable.
pub fn random_stable_implementation(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    t: usize,
    noise: f64,
) -> (LtiSystem, ClosedLoopMaps, ImplementationMatrices) {
    loop {
        let (sys, cl) = random_achievable(rng, n, m, t);
        let mut r_c = cl.phi_x.clone();
        *r_c.coeff_mut(1).unwrap() = DMatrix::identity(n, n);
        for k in 2..=t {
            *r_c.coeff_mut(k).unwrap() += random_matrix(rng, n, n, noise);
        }
        let mut m_c = cl.phi_u.clone();
        for k in 1..=t {
            *m_c.coeff_mut(k).unwrap() += random_matrix(rng, m, n, noise);
        }
        let imp = ImplementationMatrices::new(r_c, m_c).unwrap();
        let radius = build_internal_dynamics(&sys, &imp).unwrap().spectral_radius().unwrap();
        if radius < 0.9 {
            return (sys, cl, imp);
        }
    }
}

/// Largest entrywise difference over all coefficients, aligning indices.
pub fn fir_max_diff(a: &FirMatrix, b: &FirMatrix) -> f64 {
    a.sub(b).unwrap().coeffs().iter().map(|c| c.amax()).fold(0.0, f64::max)
}
