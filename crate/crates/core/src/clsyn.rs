//! Closed-loop map synthesis: FIR LQR via system level synthesis, maps of
//! static gains, LQR costs and the infinite-horizon Riccati baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fir::{FirMatrix, LtiSystem};
use crate::linalg::{rank, RankRevealing, RANK_REL_TOL};
use crate::sparsity::SparsityMask;

/// Closed-loop responses from `w` to `x` and `u`, both strictly proper
/// with the same horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMaps {
    pub phi_x: FirMatrix,
    pub phi_u: FirMatrix,
}

impl ClosedLoopMaps {
    pub fn new(phi_x: FirMatrix, phi_u: FirMatrix) -> Result<Self> {
        if phi_x.rows() != phi_x.cols() || phi_u.cols() != phi_x.cols() {
            return Err(Error::dims(
                "ClosedLoopMaps::new",
                format!(
                    "Φx {}x{}, Φu {}x{}",
                    phi_x.rows(),
                    phi_x.cols(),
                    phi_u.rows(),
                    phi_u.cols()
                ),
            ));
        }
        if phi_x.start() != 1 || phi_u.start() != 1 || phi_x.horizon() != phi_u.horizon() {
            return Err(Error::InvalidArgument(
                "closed-loop maps must be strictly proper with equal horizons".into(),
            ));
        }
        Ok(Self { phi_x, phi_u })
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.horizon()
    }

    pub fn n(&self) -> usize {
        self.phi_x.rows()
    }

    pub fn m(&self) -> usize {
        self.phi_u.rows()
    }

    /// `[Φx; Φu]`.
    pub fn stacked(&self) -> FirMatrix {
        self.phi_x.vstack(&self.phi_u).expect("shapes checked at construction")
    }

    fn check_system(&self, sys: &LtiSystem, op: &'static str) -> Result<()> {
        if sys.n() != self.n() || sys.m() != self.m() {
            return Err(Error::dims(
                op,
                format!(
                    "system n={} m={}, maps n={} m={}",
                    sys.n(),
                    sys.m(),
                    self.n(),
                    self.m()
                ),
            ));
        }
        Ok(())
    }
}

/// Quadratic state and input weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LqrWeights {
    /// `Q` must be symmetric positive semidefinite, `R` symmetric positive
    /// definite (symmetry to 1e-12).
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.nrows() != m.ncols() {
                return Err(Error::NonSquare {
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        let tol = |m: &DMatrix<f64>| 1e-12 * m.amax().max(1.0);
        if q.clone().symmetric_eigenvalues().min() < -tol(&q) {
            return Err(Error::InvalidArgument("Q is not positive semidefinite".into()));
        }
        if r.clone().symmetric_eigenvalues().min() <= tol(&r) {
            return Err(Error::InvalidArgument("R is not positive definite".into()));
        }
        Ok(Self { q, r })
    }

    /// `Q = I`, `R = I`.
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// H2 norm of the defects of the achievability recursion
/// `Φx(1) = I`, `Φx(k+1) = AΦx(k) + BΦu(k)`, `AΦx(T) + BΦu(T) = 0`.
pub fn achievability_residual(sys: &LtiSystem, cl: &ClosedLoopMaps) -> Result<f64> {
    cl.check_system(sys, "achievability_residual")?;
    let t = cl.horizon();
    let n = sys.n();
    let mut sq = (cl.phi_x.coeff_or_zero(1) - DMatrix::<f64>::identity(n, n)).norm_squared();
    for k in 1..=t {
        let next = cl.phi_x.coeff_or_zero(k + 1);
        let defect = next - sys.a() * cl.phi_x.coeff_or_zero(k) - sys.b() * cl.phi_u.coeff_or_zero(k);
        sq += defect.norm_squared();
    }
    Ok(sq.sqrt())
}

/// Solution of `min xᵀHx  s.t.  Cx = b` or the rank certificate of
/// inconsistency.
enum ConstrainedLs {
    Solved(DVector<f64>),
    Inconsistent { rank: usize, augmented_rank: usize },
}

fn constrained_least_squares(
    h: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<ConstrainedLs> {
    let p = c.ncols();
    let rr = RankRevealing::new(c, RANK_REL_TOL);
    let mut aug = DMatrix::zeros(c.nrows(), p + 1);
    aug.columns_mut(0, p).copy_from(c);
    aug.column_mut(p).copy_from(b);
    let augmented_rank = rank(&aug, RANK_REL_TOL);
    if augmented_rank != rr.rank() {
        return Ok(ConstrainedLs::Inconsistent {
            rank: rr.rank(),
            augmented_rank,
        });
    }
    if p == 0 {
        return Ok(ConstrainedLs::Solved(DVector::zeros(0)));
    }
    // Replace C by an equivalent full-row-rank system Σ Vᵀ x = Uᵀ b.
    let r = rr.rank();
    let mut c_red = rr.v.transpose();
    for (i, mut row) in c_red.row_iter_mut().enumerate() {
        row *= rr.s[i];
    }
    let b_red = rr.u.transpose() * b;

    let dim = p + r;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (p, p)).copy_from(h);
    kkt.view_mut((0, p), (p, r)).copy_from(&c_red.transpose());
    kkt.view_mut((p, 0), (r, p)).copy_from(&c_red);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(p, r).copy_from(&b_red);

    let lu = kkt.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular KKT system".into()))?;
    // one step of iterative refinement
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    Ok(ConstrainedLs::Solved(sol.rows(0, p).into_owned()))
}

/// Minimize `Σ_k ‖Q^½Φx(k)‖² + ‖R^½Φu(k)‖²` over achievable FIR maps of
/// horizon `t`, optionally forcing zeros outside `mask`.
///
/// Each state column is an independent equality-constrained least-squares
/// problem solved through its KKT system. Returns [`Error::Infeasible`]
/// when a column's constraints restricted to the free entries are
/// inconsistent.
pub fn synthesize_clmaps(
    sys: &LtiSystem,
    t: usize,
    w: &LqrWeights,
    mask: Option<&SparsityMask>,
) -> Result<ClosedLoopMaps> {
    if t == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, m) = (sys.n(), sys.m());
    if w.q.nrows() != n || w.r.nrows() != m {
        return Err(Error::dims("synthesize_clmaps", "weights do not match system"));
    }
    if let Some(mask) = mask {
        if mask.n() != n || mask.m() != m {
            return Err(Error::dims("synthesize_clmaps", "mask does not match system"));
        }
        if mask.horizon() < t {
            return Err(Error::MaskHorizon {
                mask: mask.horizon(),
                required: t,
            });
        }
    }

    // Variables per column: Φx(1..T) then Φu(1..T).
    let xi = |k: usize| (k - 1) * n;
    let ui = |k: usize| t * n + (k - 1) * m;
    let nv = t * (n + m);
    let mut c = DMatrix::zeros((t + 1) * n, nv);
    c.view_mut((0, xi(1)), (n, n)).fill_with_identity();
    for k in 1..=t {
        let row = k * n;
        if k < t {
            c.view_mut((row, xi(k + 1)), (n, n)).fill_with_identity();
        }
        c.view_mut((row, xi(k)), (n, n)).copy_from(&(-sys.a()));
        c.view_mut((row, ui(k)), (n, m)).copy_from(&(-sys.b()));
    }
    let mut h = DMatrix::zeros(nv, nv);
    for k in 1..=t {
        h.view_mut((xi(k), xi(k)), (n, n)).copy_from(&w.q);
        h.view_mut((ui(k), ui(k)), (m, m)).copy_from(&w.r);
    }

    let columns: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let free: Vec<usize> = match mask {
                None => (0..nv).collect(),
                Some(mask) => (0..nv)
                    .filter(|&v| {
                        if v < t * n {
                            mask.allows_r(v / n + 1, v % n, j)
                        } else {
                            let u = v - t * n;
                            mask.allows_m(u / m + 1, u % m, j)
                        }
                    })
                    .collect(),
            };
            let c_free = c.select_columns(&free);
            let h_free = h.select_rows(&free).select_columns(&free);
            let mut b = DVector::zeros(c.nrows());
            b[j] = 1.0;
            match constrained_least_squares(&h_free, &c_free, &b)? {
                ConstrainedLs::Inconsistent {
                    rank,
                    augmented_rank,
                } => Err(Error::Infeasible {
                    column: j,
                    rank,
                    augmented_rank,
                }),
                ConstrainedLs::Solved(x) => {
                    let mut full = DVector::zeros(nv);
                    for (i, &v) in free.iter().enumerate() {
                        full[v] = x[i];
                    }
                    Ok(full)
                }
            }
        })
        .collect();

    let mut phi_x = FirMatrix::zeros(n, n, 1, t);
    let mut phi_u = FirMatrix::zeros(m, n, 1, t);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for k in 1..=t {
            phi_x
                .coeff_mut(k)
                .unwrap()
                .column_mut(j)
                .copy_from(&col.rows(xi(k), n));
            phi_u
                .coeff_mut(k)
                .unwrap()
                .column_mut(j)
                .copy_from(&col.rows(ui(k), m));
        }
    }
    ClosedLoopMaps::new(phi_x, phi_u)
}

/// Maps of the static gain `u = Kx` truncated at horizon `t`:
/// `Φx(k) = (A+BK)^{k-1}`, `Φu(k) = K(A+BK)^{k-1}`. Also returns the
/// truncation tail `‖(A+BK)^t‖_F`.
pub fn controller_to_clmaps(
    k_gain: &DMatrix<f64>,
    sys: &LtiSystem,
    t: usize,
) -> Result<(ClosedLoopMaps, f64)> {
    if k_gain.shape() != (sys.m(), sys.n()) {
        return Err(Error::dims(
            "controller_to_clmaps",
            format!("gain is {:?}, expected {}x{}", k_gain.shape(), sys.m(), sys.n()),
        ));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let acl = sys.a() + sys.b() * k_gain;
    let mut p = DMatrix::identity(sys.n(), sys.n());
    let mut xs = Vec::with_capacity(t);
    let mut us = Vec::with_capacity(t);
    for _ in 0..t {
        us.push(k_gain * &p);
        let next = &acl * &p;
        xs.push(std::mem::replace(&mut p, next));
    }
    let cl = ClosedLoopMaps::new(FirMatrix::new(1, xs)?, FirMatrix::new(1, us)?)?;
    Ok((cl, p.norm()))
}

/// `Σ_k tr(Φx(k)ᵀ Q Φx(k)) + tr(Φu(k)ᵀ R Φu(k))` for any pair of maps.
pub fn lqr_cost_of(phi_x: &FirMatrix, phi_u: &FirMatrix, w: &LqrWeights) -> f64 {
    let quad = |x: &DMatrix<f64>, m: &DMatrix<f64>| (x.transpose() * m * x).trace();
    phi_x.coeffs().iter().map(|x| quad(x, &w.q)).sum::<f64>()
        + phi_u.coeffs().iter().map(|u| quad(u, &w.r)).sum::<f64>()
}

/// H2 cost of the maps under unit-covariance disturbances.
pub fn lqr_cost(cl: &ClosedLoopMaps, w: &LqrWeights) -> f64 {
    lqr_cost_of(&cl.phi_x, &cl.phi_u, w)
}

/// Stabilizing Riccati solution and the matching gain (`u = Kx`).
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
}

const RICCATI_MAX_ITER: usize = 100_000;

/// Fixed-point iteration of the discrete algebraic Riccati equation until
/// the relative increment drops below 1e-12.
pub fn solve_dare(sys: &LtiSystem, w: &LqrWeights) -> Result<RiccatiSolution> {
    let (a, b) = (sys.a(), sys.b());
    if w.q.nrows() != sys.n() || w.r.nrows() != sys.m() {
        return Err(Error::dims("solve_dare", "weights do not match system"));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = w.q.clone();
    for it in 1..=RICCATI_MAX_ITER {
        let s = &w.r + &bt * &p * b;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("R + BᵀPB not positive definite".into()))?;
        let btpa = &bt * &p * a;
        let next = &w.q + &at * &p * a - btpa.transpose() * chol.solve(&btpa);
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::RiccatiDiverged { iterations: it });
        }
        // amax, not the Frobenius norm, which overflows long before P does
        let incr = (&next - &p).amax();
        let scale = next.amax();
        p = next;
        if incr <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            let s = &w.r + &bt * &p * b;
            let gain = -s
                .cholesky()
                .ok_or_else(|| Error::Numerical("R + BᵀPB not positive definite".into()))?
                .solve(&(&bt * &p * a));
            return Ok(RiccatiSolution {
                p,
                gain,
                iterations: it,
            });
        }
    }
    Err(Error::RiccatiDiverged {
        iterations: RICCATI_MAX_ITER,
    })
}

/// Optimal infinite-horizon LQR cost `trace(P)`.
pub fn dare_optimal_cost(sys: &LtiSystem, w: &LqrWeights) -> Result<f64> {
    Ok(solve_dare(sys, w)?.p.trace())
}
