//! Time-domain simulation of the implemented controller
//!
//! ```text
//! δ̂(t) = x(t) - Σ_{k=2..Tc} Rc(k) δ̂(t-k+1)
//! u(t) = Σ_{k=1..Tc} Mc(k) δ̂(t-k+1)
//! x(t+1) = A x(t) + B u(t) + w(t)
//! ```
//!
//! from zero initial state and zero internal history.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::clsyn::{dare_optimal_cost, lqr_cost, ClosedLoopMaps, LqrWeights};
use crate::error::{Error, Result};
use crate::fir::{FirMatrix, LtiSystem};
use crate::implsyn::ImplementationMatrices;
use crate::stability::build_internal_dynamics;

/// Tail size below which an impulse response counts as fully decayed.
pub const TAIL_TOL: f64 = 1e-8;

/// `x(t)`, `u(t)`, `δ̂(t)` for `t = 0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub delta_hat: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    /// `t,x1..xn,u1..um`
    pub fn to_csv(&self) -> String {
        let n = self.x.first().map_or(0, |v| v.len());
        let m = self.u.first().map_or(0, |v| v.len());
        let mut s = String::from("t");
        for i in 1..=n {
            let _ = write!(s, ",x{i}");
        }
        for i in 1..=m {
            let _ = write!(s, ",u{i}");
        }
        s.push('\n');
        for (t, (x, u)) in self.x.iter().zip(&self.u).enumerate() {
            let _ = write!(s, "{t}");
            for v in x.iter().chain(u.iter()) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Run the controller against the disturbance sequence `w` (one vector
/// per step; the trajectory has `w.len()` steps).
pub fn simulate_controller(
    sys: &LtiSystem,
    imp: &ImplementationMatrices,
    w: &[DVector<f64>],
) -> Result<Trajectory> {
    let (n, m) = (sys.n(), sys.m());
    if imp.n() != n || imp.m() != m {
        return Err(Error::dims("simulate_controller", "implementation does not match system"));
    }
    if let Some(bad) = w.iter().position(|v| v.len() != n) {
        return Err(Error::dims(
            "simulate_controller",
            format!("disturbance {bad} has length {}, expected {n}", w[bad].len()),
        ));
    }
    let tc = imp.order();
    let (r_c, m_c) = (imp.r_c(), imp.m_c());
    let horizon = w.len();
    let mut traj = Trajectory {
        x: Vec::with_capacity(horizon),
        u: Vec::with_capacity(horizon),
        delta_hat: Vec::with_capacity(horizon),
    };
    let mut x = DVector::zeros(n);
    for (t, wt) in w.iter().enumerate() {
        let mut d = x.clone();
        for k in 2..=tc.min(t + 1) {
            d.gemv(-1.0, r_c.coeff(k).unwrap(), &traj.delta_hat[t + 1 - k], 1.0);
        }
        traj.delta_hat.push(d);
        let mut u = DVector::zeros(m);
        for k in 1..=tc.min(t + 1) {
            u.gemv(1.0, m_c.coeff(k).unwrap(), &traj.delta_hat[t + 1 - k], 1.0);
        }
        let next = sys.a() * &x + sys.b() * &u + wt;
        traj.x.push(std::mem::replace(&mut x, next));
        traj.u.push(u);
    }
    Ok(traj)
}

/// Impulse-response maps `Φ̃x(k)`, `Φ̃u(k)` for `k = 1..=horizon`, plus
/// the largest Frobenius norm of the last `Tc` stacked terms.
pub fn empirical_clmaps(
    sys: &LtiSystem,
    imp: &ImplementationMatrices,
    horizon: usize,
) -> Result<(ClosedLoopMaps, f64)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = sys.n();
    let runs: Vec<Result<Trajectory>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut w = vec![DVector::zeros(n); horizon + 1];
            w[0][j] = 1.0;
            simulate_controller(sys, imp, &w)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut phi_x = FirMatrix::zeros(n, n, 1, horizon);
    let mut phi_u = FirMatrix::zeros(sys.m(), n, 1, horizon);
    for (j, tr) in runs.iter().enumerate() {
        for k in 1..=horizon {
            phi_x.coeff_mut(k).unwrap().column_mut(j).copy_from(&tr.x[k]);
            phi_u.coeff_mut(k).unwrap().column_mut(j).copy_from(&tr.u[k]);
        }
    }
    let cl = ClosedLoopMaps::new(phi_x, phi_u)?;
    let tail = cl.stacked().tail_norm(imp.order().max(1));
    Ok((cl, tail))
}

/// Infinite-horizon LQR cost of the implemented controller divided by the
/// Riccati optimum.
///
/// The impulse response is evaluated from `horizon` steps, doubling until
/// its tail is below [`TAIL_TOL`] or `10 * horizon` is exceeded.
pub fn normalized_lqr_cost(
    sys: &LtiSystem,
    imp: &ImplementationMatrices,
    w: &LqrWeights,
    horizon: usize,
) -> Result<f64> {
    let radius = build_internal_dynamics(sys, imp)?.spectral_radius()?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    let cap = 10 * horizon;
    let mut h = horizon.max(1);
    loop {
        let (cl, tail) = empirical_clmaps(sys, imp, h)?;
        if tail < TAIL_TOL {
            return Ok(lqr_cost(&cl, w) / dare_optimal_cost(sys, w)?);
        }
        if h >= cap {
            return Err(Error::TailNotDecaying {
                tail_norm: tail,
                horizon: h,
            });
        }
        h = (2 * h).min(cap);
    }
}

/// Stacked state responses `[x(0) .. x(T-1)]` as an `n × T` matrix.
pub fn states_matrix(traj: &Trajectory) -> DMatrix<f64> {
    let n = traj.x.first().map_or(0, |v| v.len());
    DMatrix::from_fn(n, traj.horizon(), |i, t| traj.x[t][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_exact() -> (LtiSystem, ImplementationMatrices) {
        // x+ = x + u, deadbeat: Φx = z⁻¹, Φu = -z⁻¹
        let sys = LtiSystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        let r = FirMatrix::new(1, vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
        let m = FirMatrix::new(1, vec![DMatrix::from_element(1, 1, -1.0)]).unwrap();
        (sys, ImplementationMatrices::new(r, m).unwrap())
    }

    #[test]
    fn zero_disturbance_gives_zero_trajectory() {
        let (sys, imp) = scalar_exact();
        let tr = simulate_controller(&sys, &imp, &vec![DVector::zeros(1); 5]).unwrap();
        assert!(tr.x.iter().chain(&tr.u).chain(&tr.delta_hat).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn deadbeat_impulse_and_csv() {
        let (sys, imp) = scalar_exact();
        let mut w = vec![DVector::zeros(1); 3];
        w[0][0] = 1.0;
        let tr = simulate_controller(&sys, &imp, &w).unwrap();
        assert_eq!(tr.to_csv(), "t,x1,u1\n0,0e0,0e0\n1,1e0,-1e0\n2,0e0,0e0\n");
        let cost = normalized_lqr_cost(&sys, &imp, &LqrWeights::identity(1, 1), 8).unwrap();
        // deadbeat cost 2 against the golden-ratio optimum
        let opt = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((cost - 2.0 / opt).abs() < 1e-9);
    }

    #[test]
    fn rejects_wrong_disturbance_length() {
        let (sys, imp) = scalar_exact();
        assert!(simulate_controller(&sys, &imp, &[DVector::zeros(2)]).is_err());
    }
}
