//! Dense linear-algebra helpers shared by the synthesis and stability code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Thin SVD `m = U diag(s) Vᵀ`, singular values in nonincreasing order.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

// nalgebra's bidiagonal SVD leaves reconstruction errors up to 1e-3 on
// some of the banded systems built here, so the factorization goes
// through faer.
pub(crate) fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let d = fm.thin_svd().expect("svd of a finite matrix");
    let to_na = |x: faer::MatRef<'_, f64>| DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let s = d.S().column_vector();
    Svd {
        u: to_na(d.U()),
        singular_values: DVector::from_fn(s.nrows(), |i, _| s[i]),
        v: to_na(d.V()),
    }
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    DVector::from_vec(fm.singular_values().expect("svd of a finite matrix"))
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Thin SVD pieces truncated to the numerical rank.
pub(crate) struct RankRevealing {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl RankRevealing {
    pub fn new(m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            };
        }
        let svd = svd(m);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| smax > 0.0 && svd.singular_values[i] > rel_tol * smax)
            .collect();
        let u = svd.u.select_columns(&keep);
        let v = svd.v.select_columns(&keep);
        let s = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i]));
        Self { u, s, v }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Minimum-norm least-squares solution `V Σ⁻¹ Uᵀ b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut utb = self.u.transpose() * b;
        for (i, mut row) in utb.row_iter_mut().enumerate() {
            row /= self.s[i];
        }
        &self.v * utb
    }
}

/// Orthonormal basis of the null space of `m` (columns), rank decided with
/// [`RANK_REL_TOL`].
pub fn null_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let null: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= RANK_REL_TOL * smax)
        .collect();
    svd.v.select_columns(&null)
}

/// Induced 1-to-1 norm: the largest absolute column sum.
pub fn norm_one_to_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn is_upper_triangular(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (j + 1..n).all(|i| m[(i, j)] == 0.0))
}

fn is_lower_triangular(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..j).all(|i| m[(i, j)] == 0.0))
}

/// Largest eigenvalue magnitude.
///
/// Exactly triangular inputs are read off the diagonal. Everything else
/// goes through a real Schur decomposition (Francis QR, convergence to
/// machine epsilon), so complex-conjugate dominant pairs are resolved.
/// Eigenvalues of defective matrices are only accurate to roughly
/// `eps^(1/k)` for a Jordan block of size `k`.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    if rows == 0 {
        return Ok(0.0);
    }
    if is_upper_triangular(m) || is_lower_triangular(m) {
        return Ok(m.diagonal().iter().map(|x| x.abs()).fold(0.0, f64::max));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// `a * b` computed one column at a time with a fixed summation order.
///
/// Returns the product and the number of multiply-adds performed. Any
/// column block of `b` produces bitwise the same columns as the full
/// product, which the distributed stability check relies on.
pub fn mul_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, u64) {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions");
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    let mut ops = 0u64;
    for c in 0..b.ncols() {
        let mut col = out.column_mut(c);
        for l in 0..a.ncols() {
            let s = b[(l, c)];
            ops += a.nrows() as u64;
            if s != 0.0 {
                col.axpy(s, &a.column(l), 1.0);
            }
        }
    }
    (out, ops)
}
