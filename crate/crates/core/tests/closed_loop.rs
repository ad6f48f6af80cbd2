mod common;

use nalgebra::{DMatrix, DVector};

use common::{random_matrix, rng};
use sls_core::bench::build_chain_system;
use sls_core::clsyn::{
    achievability_residual, controller_to_clmaps, dare_optimal_cost, lqr_cost, lqr_cost_of,
    synthesize_clmaps,
};
use sls_core::evalsim::{normalized_lqr_cost, simulate_controller};
use sls_core::implsyn::ImplementationMatrices;
use sls_core::sparsity::{chain_topology, delay_mask, locality_mask};
use sls_core::{Error, LqrWeights};

fn chain() -> sls_core::LtiSystem {
    build_chain_system(10, &[3, 6, 10], 0.6, 0.2, 0.4).unwrap()
}

#[test]
fn chain_fir_design_is_near_riccati_optimal() {
    let sys = chain();
    let w = LqrWeights::identity(10, 3);
    let cl = synthesize_clmaps(&sys, 20, &w, None).unwrap();
    assert!(achievability_residual(&sys, &cl).unwrap() < 1e-8);
    let ratio = lqr_cost(&cl, &w) / dare_optimal_cost(&sys, &w).unwrap();
    assert!((ratio - 1.001).abs() < 5e-4, "{ratio}");
    let imp = ImplementationMatrices::from_closed_loop(&cl).unwrap();
    let evaluated = normalized_lqr_cost(&sys, &imp, &w, 160).unwrap();
    assert!((evaluated - ratio).abs() < 1e-9);
}

#[test]
fn chain_design_under_locality_and_delay_is_infeasible() {
    let sys = chain();
    let topo = chain_topology(10, &[3, 6, 10]).unwrap();
    let mask = locality_mask(&topo, 1, 20).intersect(&delay_mask(&topo, 1.0, 20).unwrap()).unwrap();
    let r = synthesize_clmaps(&sys, 20, &LqrWeights::identity(10, 3), Some(&mask));
    assert!(matches!(r, Err(Error::Infeasible { .. })), "{r:?}");
}

#[test]
fn optimal_design_beats_deadbeat_gains() {
    // Fully actuated chain: K = N - A with N strictly upper triangular makes
    // A + BK = N nilpotent, so the gain's maps are exactly FIR.
    let n = 4;
    let a = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) <= 1 { 0.5 } else { 0.0 });
    let sys = sls_core::LtiSystem::new(a.clone(), DMatrix::identity(n, n)).unwrap();
    let w = LqrWeights::identity(n, n);
    let t = 6;
    let best = lqr_cost(&synthesize_clmaps(&sys, t, &w, None).unwrap(), &w);
    let mut r = rng(21);
    for _ in 0..10 {
        let nil = random_matrix(&mut r, n, n, 1.0).map_with_location(|i, j, v| if j > i { v } else { 0.0 });
        let k = nil - &a;
        let (cl, tail) = controller_to_clmaps(&k, &sys, t).unwrap();
        assert_eq!(tail, 0.0);
        assert!(achievability_residual(&sys, &cl).unwrap() < 1e-9);
        assert!(best <= lqr_cost(&cl, &w) + 1e-9);
    }
}

#[test]
fn cost_does_not_increase_with_horizon() {
    let sys = chain();
    let w = LqrWeights::identity(10, 3);
    let costs: Vec<f64> = [5, 10, 20]
        .iter()
        .map(|&t| lqr_cost(&synthesize_clmaps(&sys, t, &w, None).unwrap(), &w))
        .collect();
    assert!(costs.windows(2).all(|c| c[1] <= c[0] + 1e-9), "{costs:?}");
}

#[test]
fn lqr_cost_matches_simulated_impulse_responses() {
    let sys = chain();
    let q = {
        let m = random_matrix(&mut rng(22), 10, 10, 1.0);
        &m * m.transpose() + DMatrix::identity(10, 10)
    };
    let w = LqrWeights::new(q.clone(), DMatrix::identity(3, 3) * 2.0).unwrap();
    let cl = synthesize_clmaps(&sys, 8, &w, None).unwrap();
    let imp = ImplementationMatrices::from_closed_loop(&cl).unwrap();
    let mut sim = 0.0;
    for j in 0..10 {
        let mut dist = vec![DVector::zeros(10); 10];
        dist[0][j] = 1.0;
        let tr = simulate_controller(&sys, &imp, &dist).unwrap();
        for t in 0..10 {
            sim += tr.x[t].dot(&(&q * &tr.x[t])) + 2.0 * tr.u[t].norm_squared();
        }
    }
    let formula = lqr_cost_of(&cl.phi_x, &cl.phi_u, &w);
    assert!((sim - formula).abs() < 1e-9 * formula, "{sim} vs {formula}");
}
