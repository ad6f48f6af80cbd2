//! Implementation-matrix synthesis.
//!
//! Given closed-loop maps `(Φx, Φu)`, a controller with implementation
//! matrices `(Rc, Mc)` realizes `[Rc; Mc] Δc⁻¹` where
//! `Δc = [zI - A, -B][Rc; Mc]`. It realizes `(Φx, Φu)` exactly iff
//! `[Rc; Mc] = [Φx; Φu] Δc`, an affine constraint that is linear in the
//! free entries `v = [Rc(2..Tc); Mc(1..Tc)]` of each column once
//! `Rc(1) = I` is fixed. This module assembles that system (`Fv = G`),
//! tests its consistency, solves it exactly, and solves the regularized
//! relaxation used when sparsity makes the exact system infeasible or
//! its solutions unstable.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::clsyn::ClosedLoopMaps;
use crate::error::{Error, Result};
use crate::fir::{FirMatrix, LtiSystem};
use crate::linalg::{rank, RankRevealing, RANK_REL_TOL};
use crate::prox::{accelerated_proximal_gradient, CompositeProblem, ProxOptions};
use crate::sparsity::{PenaltyWeights, SparsityMask};

/// Entries of `Δc` at or below this fraction of the largest summand
/// magnitude are cancellation residue and are set to exactly zero.
pub const DELTA_ROUNDOFF_TOL: f64 = 1e-12;

/// Tail tolerance for truncated inverses of `Δc`.
pub const TAIL_TOL: f64 = 1e-8;

/// `(Rc, Mc)`, strictly proper, order `Tc`, with `Rc(1) = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplementationMatrices {
    r_c: FirMatrix,
    m_c: FirMatrix,
}

impl ImplementationMatrices {
    pub fn new(r_c: FirMatrix, m_c: FirMatrix) -> Result<Self> {
        let n = r_c.rows();
        if r_c.cols() != n || m_c.cols() != n {
            return Err(Error::dims(
                "ImplementationMatrices::new",
                format!(
                    "Rc {}x{}, Mc {}x{}",
                    r_c.rows(),
                    r_c.cols(),
                    m_c.rows(),
                    m_c.cols()
                ),
            ));
        }
        if r_c.start() != 1 || m_c.start() != 1 || r_c.horizon() != m_c.horizon() {
            return Err(Error::InvalidArgument(
                "implementation matrices must be strictly proper with equal order".into(),
            ));
        }
        if r_c.coeff(1).unwrap() != &DMatrix::<f64>::identity(n, n) {
            return Err(Error::InvalidArgument("Rc(1) must be the identity".into()));
        }
        Ok(Self { r_c, m_c })
    }

    /// `(Rc, Mc) = (Φx, Φu)`, the standard SLS implementation.
    pub fn from_closed_loop(cl: &ClosedLoopMaps) -> Result<Self> {
        let mut r_c = cl.phi_x.clone();
        // Φx(1) = I holds up to solver precision; pin it exactly.
        *r_c.coeff_mut(1).unwrap() = DMatrix::identity(cl.n(), cl.n());
        Self::new(r_c, cl.phi_u.clone())
    }

    pub fn r_c(&self) -> &FirMatrix {
        &self.r_c
    }

    pub fn m_c(&self) -> &FirMatrix {
        &self.m_c
    }

    /// Controller order `Tc`.
    pub fn order(&self) -> usize {
        self.r_c.horizon()
    }

    pub fn n(&self) -> usize {
        self.r_c.rows()
    }

    pub fn m(&self) -> usize {
        self.m_c.rows()
    }

    /// `[Rc; Mc]`.
    pub fn stacked(&self) -> FirMatrix {
        self.r_c.vstack(&self.m_c).expect("shapes checked at construction")
    }

    fn check_system(&self, sys: &LtiSystem, op: &'static str) -> Result<()> {
        if sys.n() != self.n() || sys.m() != self.m() {
            return Err(Error::dims(
                op,
                format!(
                    "system n={} m={}, implementation n={} m={}",
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

/// `Δc = I + Δ`, spectral terms `0..=Tc`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaC {
    delta_c: FirMatrix,
}

impl DeltaC {
    /// From a FIR matrix starting at index 0 with identity leading term.
    pub fn new(delta_c: FirMatrix) -> Result<Self> {
        let n = delta_c.rows();
        if delta_c.cols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: delta_c.cols(),
            });
        }
        if delta_c.start() != 0 || delta_c.coeff(0).unwrap() != &DMatrix::<f64>::identity(n, n) {
            return Err(Error::InvalidArgument("Δc must start at index 0 with Δc(0) = I".into()));
        }
        Ok(Self { delta_c })
    }

    pub fn as_fir(&self) -> &FirMatrix {
        &self.delta_c
    }

    pub fn order(&self) -> usize {
        self.delta_c.horizon()
    }

    pub fn coeff(&self, k: usize) -> &DMatrix<f64> {
        self.delta_c.coeff(k).expect("index within 0..=Tc")
    }

    /// Strictly proper part `Δ = Δc - I`.
    pub fn delta(&self) -> FirMatrix {
        if self.order() == 0 {
            return FirMatrix::zeros(self.delta_c.rows(), self.delta_c.cols(), 1, 1);
        }
        self.delta_c.with_range(1, self.order())
    }

    /// Truncated `Δc⁻¹` up to `horizon`, rejecting a tail that has not
    /// decayed below [`TAIL_TOL`].
    pub fn inverse(&self, horizon: usize) -> Result<FirMatrix> {
        let inv = self.delta_c.inverse_truncated(horizon)?;
        let tail = inv.tail_norm(self.order().max(1));
        if !(tail < TAIL_TOL) {
            return Err(Error::TailNotDecaying {
                tail_norm: tail,
                horizon,
            });
        }
        Ok(inv)
    }
}

fn delta_c_terms(sys: &LtiSystem, imp: &ImplementationMatrices, flush: bool) -> Result<DeltaC> {
    imp.check_system(sys, "compute_delta_c")?;
    let tc = imp.order();
    let (a, b) = (sys.a(), sys.b());
    let mut coeffs = Vec::with_capacity(tc + 1);
    coeffs.push(imp.r_c.coeff(1).unwrap().clone());
    let mut scales = Vec::with_capacity(tc);
    for j in 1..=tc {
        let r_next = imp.r_c.coeff_or_zero(j + 1);
        let r_j = imp.r_c.coeff(j).unwrap();
        let m_j = imp.m_c.coeff(j).unwrap();
        coeffs.push(&r_next - a * r_j - b * m_j);
        if flush {
            let s = r_next.abs() + a.abs() * r_j.abs() + b.abs() * m_j.abs();
            scales.push(s.max());
        }
    }
    if flush {
        let cutoff = DELTA_ROUNDOFF_TOL * scales.iter().cloned().fold(0.0, f64::max);
        for c in coeffs.iter_mut().skip(1) {
            c.apply(|v| {
                if v.abs() <= cutoff {
                    *v = 0.0
                }
            });
        }
    }
    Ok(DeltaC {
        delta_c: FirMatrix::new(0, coeffs)?,
    })
}

/// `Δc(0) = Rc(1)`, `Δc(j) = Rc(j+1) - A Rc(j) - B Mc(j)` with
/// `Rc(Tc+1) = 0`. Cancellation residue below [`DELTA_ROUNDOFF_TOL`] is
/// flushed to zero so that exact implementations give exactly `Δ = 0`.
pub fn compute_delta_c(sys: &LtiSystem, imp: &ImplementationMatrices) -> Result<DeltaC> {
    delta_c_terms(sys, imp, true)
}

/// As [`compute_delta_c`] without flushing roundoff.
pub fn compute_delta_c_raw(sys: &LtiSystem, imp: &ImplementationMatrices) -> Result<DeltaC> {
    delta_c_terms(sys, imp, false)
}

/// H2 norm of `[Rc; Mc] - [Φx; Φu] Δc` over spectral indices
/// `1..=T+Tc`. Zero exactly when `(Rc, Mc)` implement `(Φx, Φu)`.
pub fn constraint_residual(
    cl: &ClosedLoopMaps,
    imp: &ImplementationMatrices,
    sys: &LtiSystem,
) -> Result<f64> {
    if cl.n() != imp.n() || cl.m() != imp.m() {
        return Err(Error::dims("constraint_residual", "maps and implementation differ in size"));
    }
    let dc = compute_delta_c_raw(sys, imp)?;
    let rhs = cl.stacked().mul(dc.as_fir())?;
    Ok(imp.stacked().sub(&rhs)?.norm_h2())
}

/// Per-column linear system `F v = G[:, j]` and the affine map
/// `Δ[:, j] = D v + D0[:, j]`.
///
/// Rows of `F` are grouped by spectral index `k = 1..=T+Tc`, each group
/// holding `n` rows for the `Rc` part then `m` rows for the `Mc` part.
/// Unknowns are `Rc(2..Tc)[:, j]` followed by `Mc(1..Tc)[:, j]`.
#[derive(Debug, Clone)]
pub struct ImplementationProblem {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d0: DMatrix<f64>,
    n: usize,
    m: usize,
    t: usize,
    tc: usize,
}

/// Layout of the unknowns of one column.
#[derive(Debug, Clone, Copy)]
enum Var {
    R { k: usize, row: usize },
    M { k: usize, row: usize },
}

impl ImplementationProblem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.tc
    }

    pub fn cl_horizon(&self) -> usize {
        self.t
    }

    /// Unknowns per column: `(Tc-1) n + Tc m`.
    pub fn num_vars(&self) -> usize {
        (self.tc - 1) * self.n + self.tc * self.m
    }

    fn r_offset(&self, k: usize) -> usize {
        (k - 2) * self.n
    }

    fn m_offset(&self, k: usize) -> usize {
        (self.tc - 1) * self.n + (k - 1) * self.m
    }

    fn var(&self, v: usize) -> Var {
        let r_len = (self.tc - 1) * self.n;
        if v < r_len {
            Var::R {
                k: v / self.n + 2,
                row: v % self.n,
            }
        } else {
            let u = v - r_len;
            Var::M {
                k: u / self.m + 1,
                row: u % self.m,
            }
        }
    }

    /// Free unknowns of column `j` under `mask` (all when `None`).
    fn free_vars(&self, mask: Option<&SparsityMask>, j: usize) -> Vec<usize> {
        (0..self.num_vars())
            .filter(|&v| match (mask, self.var(v)) {
                (None, _) => true,
                (Some(mask), Var::R { k, row }) => mask.allows_r(k, row, j),
                (Some(mask), Var::M { k, row }) => mask.allows_m(k, row, j),
            })
            .collect()
    }

    /// Column vectors `v_j` of an implementation.
    pub fn pack(&self, imp: &ImplementationMatrices) -> Vec<DVector<f64>> {
        (0..self.n)
            .map(|j| {
                let mut v = DVector::zeros(self.num_vars());
                for k in 2..=self.tc {
                    let o = self.r_offset(k);
                    v.rows_mut(o, self.n)
                        .copy_from(&imp.r_c.coeff(k).unwrap().column(j));
                }
                for k in 1..=self.tc {
                    let o = self.m_offset(k);
                    v.rows_mut(o, self.m)
                        .copy_from(&imp.m_c.coeff(k).unwrap().column(j));
                }
                v
            })
            .collect()
    }

    pub fn unpack(&self, columns: &[DVector<f64>]) -> Result<ImplementationMatrices> {
        let (n, m, tc) = (self.n, self.m, self.tc);
        let mut r_c = FirMatrix::zeros(n, n, 1, tc);
        *r_c.coeff_mut(1).unwrap() = DMatrix::identity(n, n);
        let mut m_c = FirMatrix::zeros(m, n, 1, tc);
        for (j, v) in columns.iter().enumerate() {
            for k in 2..=tc {
                r_c.coeff_mut(k)
                    .unwrap()
                    .column_mut(j)
                    .copy_from(&v.rows(self.r_offset(k), n));
            }
            for k in 1..=tc {
                m_c.coeff_mut(k)
                    .unwrap()
                    .column_mut(j)
                    .copy_from(&v.rows(self.m_offset(k), m));
            }
        }
        ImplementationMatrices::new(r_c, m_c)
    }
}

/// Assemble `F`, `G` (and the `Δ` map) for implementations of order `tc`.
/// `F` has `(T+Tc)(n+m)` rows and `(Tc-1)n + Tc·m` columns, shared by all
/// state columns; `G` has one column per state.
pub fn build_f_g(sys: &LtiSystem, cl: &ClosedLoopMaps, tc: usize) -> Result<ImplementationProblem> {
    if tc == 0 {
        return Err(Error::InvalidArgument("controller order must be at least 1".into()));
    }
    if sys.n() != cl.n() || sys.m() != cl.m() {
        return Err(Error::dims("build_f_g", "system and maps differ in size"));
    }
    let (n, m, t) = (sys.n(), sys.m(), cl.horizon());
    let nm = n + m;
    let mut p = ImplementationProblem {
        f: DMatrix::zeros((t + tc) * nm, 0),
        g: DMatrix::zeros(0, 0),
        d: DMatrix::zeros(0, 0),
        d0: DMatrix::zeros(0, 0),
        n,
        m,
        t,
        tc,
    };
    let nv = p.num_vars();
    let rows = (t + tc) * nm;
    let phi = cl.stacked();
    // [Φx(q); Φu(q)] for q in 1..=T, None otherwise
    let phi_at = |q: isize| -> Option<&DMatrix<f64>> {
        if q >= 1 {
            phi.coeff(q as usize)
        } else {
            None
        }
    };
    let row_of = |k: usize| (k - 1) * nm;
    let (a, b) = (sys.a(), sys.b());

    let mut f = DMatrix::zeros(rows, nv);
    let mut c = DMatrix::zeros(rows, n);
    for k in 1..=t + tc {
        let r0 = row_of(k);
        let ki = k as isize;
        for pk in 2..=tc {
            let col = p.r_offset(pk);
            let mut blk = f.view_mut((r0, col), (nm, n));
            if k == pk {
                blk.rows_mut(0, n).fill_with_identity();
            }
            if let Some(ph) = phi_at(ki - (pk as isize - 1)) {
                blk -= ph;
            }
            if let Some(ph) = phi_at(ki - pk as isize) {
                blk += ph * a;
            }
        }
        for pk in 1..=tc {
            let col = p.m_offset(pk);
            let mut blk = f.view_mut((r0, col), (nm, m));
            if k == pk {
                blk.rows_mut(n, m).fill_with_identity();
            }
            if let Some(ph) = phi_at(ki - pk as isize) {
                blk += ph * b;
            }
        }
        let mut blk = c.view_mut((r0, 0), (nm, n));
        if k == 1 {
            blk.rows_mut(0, n).fill_with_identity();
        }
        if let Some(ph) = phi_at(ki) {
            blk -= ph;
        }
        if let Some(ph) = phi_at(ki - 1) {
            blk += ph * a;
        }
    }

    let mut d = DMatrix::zeros(tc * n, nv);
    for pk in 2..=tc {
        let col = p.r_offset(pk);
        d.view_mut(((pk - 2) * n, col), (n, n)).fill_with_identity();
        d.view_mut(((pk - 1) * n, col), (n, n)).copy_from(&(-a));
    }
    for pk in 1..=tc {
        d.view_mut(((pk - 1) * n, p.m_offset(pk)), (n, m))
            .copy_from(&(-b));
    }
    let mut d0 = DMatrix::zeros(tc * n, n);
    d0.view_mut((0, 0), (n, n)).copy_from(&(-a));

    p.f = f;
    p.g = -c;
    p.d = d;
    p.d0 = d0;
    Ok(p)
}

/// Consistency of `Fv = G` by the rank test, and the size of its solution
/// family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeasibilityReport {
    pub rank_f: usize,
    pub rank_fg: usize,
    pub feasible: bool,
    pub nullity: usize,
    /// `nullity × (number of columns of G)`.
    pub solution_dim: usize,
}

pub fn check_feasibility(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<FeasibilityReport> {
    if f.nrows() != g.nrows() {
        return Err(Error::dims(
            "check_feasibility",
            format!("F has {} rows, G has {}", f.nrows(), g.nrows()),
        ));
    }
    let rank_f = rank(f, RANK_REL_TOL);
    let mut fg = DMatrix::zeros(f.nrows(), f.ncols() + g.ncols());
    fg.columns_mut(0, f.ncols()).copy_from(f);
    fg.columns_mut(f.ncols(), g.ncols()).copy_from(g);
    let rank_fg = rank(&fg, RANK_REL_TOL);
    let nullity = f.ncols() - rank_f;
    Ok(FeasibilityReport {
        rank_f,
        rank_fg,
        feasible: rank_f == rank_fg,
        nullity,
        solution_dim: nullity * g.ncols(),
    })
}

fn check_mask(p: &ImplementationProblem, mask: &SparsityMask) -> Result<SparsityMask> {
    if mask.n() != p.n || mask.m() != p.m {
        return Err(Error::dims("implementation mask", "mask does not match system"));
    }
    if !mask.admits_identity() {
        return Err(Error::MaskRejectsIdentity);
    }
    mask.truncated(p.tc)
}

/// Minimum-norm solution of `Fv = G` per column, with entries outside
/// `mask` pinned to zero. [`Error::Infeasible`] when a masked column
/// system is inconsistent.
pub fn solve_exact(
    p: &ImplementationProblem,
    mask: Option<&SparsityMask>,
) -> Result<ImplementationMatrices> {
    let mask = mask.map(|m| check_mask(p, m)).transpose()?;
    let columns: Vec<Result<DVector<f64>>> = (0..p.n)
        .into_par_iter()
        .map(|j| {
            let free = p.free_vars(mask.as_ref(), j);
            let ff = p.f.select_columns(&free);
            let gj = p.g.column(j).into_owned();
            let rr = RankRevealing::new(&ff, RANK_REL_TOL);
            let mut aug = DMatrix::zeros(ff.nrows(), ff.ncols() + 1);
            aug.columns_mut(0, ff.ncols()).copy_from(&ff);
            aug.column_mut(ff.ncols()).copy_from(&gj);
            let augmented_rank = rank(&aug, RANK_REL_TOL);
            if augmented_rank != rr.rank() {
                return Err(Error::Infeasible {
                    column: j,
                    rank: rr.rank(),
                    augmented_rank,
                });
            }
            let x = rr.solve(&DMatrix::from_column_slice(gj.len(), 1, gj.as_slice()));
            let mut v = DVector::zeros(p.num_vars());
            for (i, &idx) in free.iter().enumerate() {
                v[idx] = x[(i, 0)];
            }
            Ok(v)
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    p.unpack(&columns)
}

/// Tuning of the relaxed synthesis.
#[derive(Debug, Clone)]
pub struct ImplSynthOptions {
    /// Weight on `‖Δ‖²`.
    pub lambda: f64,
    /// Uniform ℓ1 weight on the free entries of `Rc`, `Mc`.
    pub l1_weight: f64,
    /// Per-entry weights (delay or locality penalties), scaled by
    /// `penalty_scale` and added to `l1_weight`.
    pub penalties: Option<PenaltyWeights>,
    pub penalty_scale: f64,
    /// Enforce `‖Δ‖_H2 <= bound` by raising `lambda` as far as needed.
    pub delta_bound: Option<f64>,
    /// Start from the minimizer of the smooth part instead of zero.
    pub warm_start: bool,
    pub prox: ProxOptions,
}

impl Default for ImplSynthOptions {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            l1_weight: 0.01,
            penalties: None,
            penalty_scale: 0.0,
            delta_bound: None,
            warm_start: true,
            prox: ProxOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImplDiagnostics {
    /// `‖[Rc;Mc] - [Φx;Φu](I+Δ)‖² + λ‖Δ‖² + weighted ℓ1`, summed over columns.
    pub objective: f64,
    /// `‖[Rc;Mc] - [Φx;Φu](I+Δ)‖_H2`.
    pub equation_error: f64,
    pub delta_norm: f64,
    pub l1_term: f64,
    /// The λ actually used (larger than requested under a `delta_bound`).
    pub lambda: f64,
    /// Largest per-column iteration count.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration, per column.
    pub histories: Vec<Vec<f64>>,
}

impl ImplDiagnostics {
    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "objective = {:e}", self.objective);
        let _ = writeln!(s, "equation_error = {:e}", self.equation_error);
        let _ = writeln!(s, "delta_norm = {:e}", self.delta_norm);
        let _ = writeln!(s, "l1_term = {:e}", self.l1_term);
        let _ = writeln!(s, "lambda = {:e}", self.lambda);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        s
    }
}

#[derive(Debug, Clone)]
pub struct ImplSynthesis {
    pub implementation: ImplementationMatrices,
    pub delta_c: DeltaC,
    pub diagnostics: ImplDiagnostics,
}

struct ColumnSolve {
    v: DVector<f64>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Column `j` of the relaxed problem over its free unknowns.
fn column_problem(
    p: &ImplementationProblem,
    free: &[usize],
    j: usize,
    lambda: f64,
    weights: &DVector<f64>,
) -> (CompositeProblem, DMatrix<f64>, DVector<f64>) {
    let ff = p.f.select_columns(free);
    let df = p.d.select_columns(free);
    let g = p.g.column(j).into_owned();
    let d0 = p.d0.column(j).into_owned();
    let hessian = (ff.transpose() * &ff + df.transpose() * &df * lambda) * 2.0;
    let linear = (ff.transpose() * &g - df.transpose() * &d0 * lambda) * 2.0;
    let constant = g.norm_squared() + lambda * d0.norm_squared();
    // stacked least-squares form of the smooth part, for the warm start
    let sl = lambda.sqrt();
    let mut a = DMatrix::zeros(ff.nrows() + df.nrows(), free.len());
    a.rows_mut(0, ff.nrows()).copy_from(&ff);
    a.rows_mut(ff.nrows(), df.nrows()).copy_from(&(df * sl));
    let mut rhs = DVector::zeros(a.nrows());
    rhs.rows_mut(0, g.len()).copy_from(&g);
    rhs.rows_mut(g.len(), d0.len()).copy_from(&(-d0 * sl));
    let wf = DVector::from_iterator(free.len(), free.iter().map(|&i| weights[i]));
    (
        CompositeProblem {
            hessian,
            linear,
            constant,
            l1_weights: wf,
        },
        a,
        rhs,
    )
}

fn entry_weights(p: &ImplementationProblem, opts: &ImplSynthOptions, j: usize) -> Result<DVector<f64>> {
    let mut w = DVector::from_element(p.num_vars(), opts.l1_weight);
    if let Some(pen) = &opts.penalties {
        if pen.horizon() < p.tc {
            return Err(Error::MaskHorizon {
                mask: pen.horizon(),
                required: p.tc,
            });
        }
        for v in 0..p.num_vars() {
            w[v] += opts.penalty_scale
                * match p.var(v) {
                    Var::R { k, row } => pen.r[k - 1][(row, j)],
                    Var::M { k, row } => pen.m[k - 1][(row, j)],
                };
        }
    }
    Ok(w)
}

fn solve_relaxed(
    sys: &LtiSystem,
    p: &ImplementationProblem,
    mask: &SparsityMask,
    opts: &ImplSynthOptions,
    lambda: f64,
) -> Result<ImplSynthesis> {
    let solves: Vec<Result<ColumnSolve>> = (0..p.n)
        .into_par_iter()
        .map(|j| {
            let free = p.free_vars(Some(mask), j);
            let weights = entry_weights(p, opts, j)?;
            let (prob, a, rhs) = column_problem(p, &free, j, lambda, &weights);
            let x0 = if opts.warm_start {
                RankRevealing::new(&a, RANK_REL_TOL)
                    .solve(&DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))
                    .column(0)
                    .into_owned()
            } else {
                DVector::zeros(free.len())
            };
            let r = accelerated_proximal_gradient(&prob, x0, &opts.prox);
            let mut v = DVector::zeros(p.num_vars());
            for (i, &idx) in free.iter().enumerate() {
                v[idx] = r.x[i];
            }
            Ok(ColumnSolve {
                v,
                history: r.history,
                iterations: r.iterations,
                converged: r.converged,
            })
        })
        .collect();
    let solves = solves.into_iter().collect::<Result<Vec<_>>>()?;
    let columns: Vec<DVector<f64>> = solves.iter().map(|s| s.v.clone()).collect();
    let implementation = p.unpack(&columns)?;

    let mut eq_sq = 0.0;
    let mut delta_sq = 0.0;
    let mut l1_term = 0.0;
    for (j, v) in columns.iter().enumerate() {
        eq_sq += (&p.f * v - p.g.column(j)).norm_squared();
        delta_sq += (&p.d * v + p.d0.column(j)).norm_squared();
        let w = entry_weights(p, opts, j)?;
        l1_term += v.iter().zip(w.iter()).map(|(x, w)| w * x.abs()).sum::<f64>();
    }
    let diagnostics = ImplDiagnostics {
        objective: eq_sq + lambda * delta_sq + l1_term,
        equation_error: eq_sq.sqrt(),
        delta_norm: delta_sq.sqrt(),
        l1_term,
        lambda,
        iterations: solves.iter().map(|s| s.iterations).max().unwrap_or(0),
        converged: solves.iter().all(|s| s.converged),
        histories: solves.into_iter().map(|s| s.history).collect(),
    };
    Ok(ImplSynthesis {
        delta_c: compute_delta_c(sys, &implementation)?,
        implementation,
        diagnostics,
    })
}

const LAMBDA_SEARCH_CAP: f64 = 1e8;

/// Minimize `‖[Rc;Mc] - [Φx;Φu](I+Δ)‖² + λ‖Δ‖² + Σ w|entries|` over the
/// free entries of `(Rc, Mc)` allowed by `mask`.
///
/// `Δ` is affine in `(Rc, Mc)` and is substituted out, leaving an
/// unconstrained composite problem per column, solved by accelerated
/// proximal gradient. Masked entries are exact zeros.
pub fn synthesize_implementation(
    sys: &LtiSystem,
    cl: &ClosedLoopMaps,
    tc: usize,
    mask: &SparsityMask,
    opts: &ImplSynthOptions,
) -> Result<ImplSynthesis> {
    if !(opts.lambda >= 0.0 && opts.l1_weight >= 0.0 && opts.penalty_scale >= 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let p = build_f_g(sys, cl, tc)?;
    let mask = check_mask(&p, mask)?;
    let first = solve_relaxed(sys, &p, &mask, opts, opts.lambda)?;
    let Some(bound) = opts.delta_bound else {
        return Ok(first);
    };
    if first.diagnostics.delta_norm <= bound {
        return Ok(first);
    }
    // ‖Δ(λ)‖ decreases with λ: bracket, then bisect for the smallest λ
    // meeting the bound.
    let mut lo = opts.lambda;
    let mut hi = opts.lambda.max(1e-6);
    let mut best = loop {
        hi *= 4.0;
        let s = solve_relaxed(sys, &p, &mask, opts, hi)?;
        if s.diagnostics.delta_norm <= bound {
            break s;
        }
        if hi > LAMBDA_SEARCH_CAP {
            return Err(Error::InvalidArgument(format!(
                "‖Δ‖ <= {bound} unreachable under this mask (‖Δ‖ = {} at λ = {hi:e})",
                s.diagnostics.delta_norm
            )));
        }
        lo = hi;
    };
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let s = solve_relaxed(sys, &p, &mask, opts, mid)?;
        if s.diagnostics.delta_norm <= bound {
            hi = mid;
            best = s;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Result of [`lambda_schedule`].
#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub synthesis: ImplSynthesis,
    pub lambda_used: f64,
    pub attempts: usize,
}

pub const MAX_ESCALATIONS: usize = 8;

/// Solve with `λ = start·factor^k`, `k = 0, 1, ...`, returning the first
/// result that `is_stable` accepts. Gives up after [`MAX_ESCALATIONS`]
/// escalations.
#[allow(clippy::too_many_arguments)]
pub fn lambda_schedule<C>(
    sys: &LtiSystem,
    cl: &ClosedLoopMaps,
    tc: usize,
    mask: &SparsityMask,
    opts: &ImplSynthOptions,
    start_lambda: f64,
    factor: f64,
    mut is_stable: C,
) -> Result<ScheduleOutcome>
where
    C: FnMut(&ImplSynthesis) -> Result<bool>,
{
    if !(factor > 1.0) {
        return Err(Error::InvalidArgument(format!("factor must exceed 1, got {factor}")));
    }
    let mut lambda = start_lambda;
    for attempt in 1..=MAX_ESCALATIONS + 1 {
        let o = ImplSynthOptions {
            lambda,
            ..opts.clone()
        };
        let synthesis = synthesize_implementation(sys, cl, tc, mask, &o)?;
        if is_stable(&synthesis)? {
            return Ok(ScheduleOutcome {
                synthesis,
                lambda_used: lambda,
                attempts: attempt,
            });
        }
        if attempt <= MAX_ESCALATIONS {
            lambda *= factor;
        }
    }
    Err(Error::NoStableImplementation {
        attempts: MAX_ESCALATIONS + 1,
        last_lambda: lambda,
    })
}

/// Closed-loop maps realized by `(Rc, Mc)`: `[Rc; Mc] Δc⁻¹`, truncated at
/// `horizon`.
pub fn implemented_maps(
    sys: &LtiSystem,
    imp: &ImplementationMatrices,
    horizon: usize,
) -> Result<ClosedLoopMaps> {
    let dc = compute_delta_c(sys, imp)?;
    let inv = dc.inverse(horizon)?;
    let prod = imp.stacked().mul(&inv)?.with_range(1, horizon);
    ClosedLoopMaps::new(prod.row_block(0, imp.n()), prod.row_block(imp.n(), imp.m()))
}

/// Relative H2 distance between implemented and desired maps,
/// `(‖Φ̃x - Φx‖/‖Φx‖, ‖Φ̃u - Φu‖/‖Φu‖)`.
pub fn closed_loop_difference(
    cl: &ClosedLoopMaps,
    imp: &ImplementationMatrices,
    sys: &LtiSystem,
    eval_horizon: usize,
) -> Result<(f64, f64)> {
    let horizon = eval_horizon.max(cl.horizon());
    let got = implemented_maps(sys, imp, horizon)?;
    let rel = |a: &FirMatrix, b: &FirMatrix| -> Result<f64> {
        let base = b.norm_h2();
        let diff = a.sub(b)?.norm_h2();
        Ok(if base > 0.0 { diff / base } else { diff })
    };
    Ok((rel(&got.phi_x, &cl.phi_x)?, rel(&got.phi_u, &cl.phi_u)?))
}

/// Default evaluation horizon `4 (T + Tc)`.
pub fn default_eval_horizon(t: usize, tc: usize) -> usize {
    4 * (t + tc)
}
