//! LTI plants and finite-impulse-response transfer matrices.
//!
//! A [`FirMatrix`] is `Σ_{k=start}^{horizon} X(k) z^{-k}` stored densely.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use crate::linalg::{norm_one_to_one, spectral_radius};

/// `x[t+1] = A x[t] + B u[t] + w[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NonSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "system needs at least one state and one input".into(),
            ));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dims(
                "LtiSystem::new",
                format!("A is {n}x{n} but B has {} rows", b.nrows(), n = a.nrows()),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of inputs.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Finite-impulse-response transfer matrix with spectral terms
/// `start..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirMatrix {
    rows: usize,
    cols: usize,
    start: usize,
    coeffs: Vec<DMatrix<f64>>,
}

impl FirMatrix {
    /// Build from coefficients `X(start), X(start+1), ...`.
    pub fn new(start: usize, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| {
            Error::InvalidArgument("a transfer matrix needs at least one coefficient".into())
        })?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("empty coefficient matrices".into()));
        }
        if let Some(bad) = coeffs.iter().position(|c| c.shape() != (rows, cols)) {
            return Err(Error::dims(
                "FirMatrix::new",
                format!(
                    "coefficient {} is {:?}, expected {rows}x{cols}",
                    start + bad,
                    coeffs[bad].shape()
                ),
            ));
        }
        Ok(Self {
            rows,
            cols,
            start,
            coeffs,
        })
    }

    pub fn zeros(rows: usize, cols: usize, start: usize, horizon: usize) -> Self {
        assert!(horizon >= start, "horizon {horizon} < start {start}");
        Self {
            rows,
            cols,
            start,
            coeffs: vec![DMatrix::zeros(rows, cols); horizon - start + 1],
        }
    }

    /// The constant map `I z^0`.
    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            start: 0,
            coeffs: vec![DMatrix::identity(n, n)],
        }
    }

    /// A single term `M z^{-k}`.
    pub fn monomial(m: DMatrix<f64>, k: usize) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            start: k,
            coeffs: vec![m],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn horizon(&self) -> usize {
        self.start + self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Spectral coefficient `X(k)`, `None` outside `start..=horizon`.
    pub fn coeff(&self, k: usize) -> Option<&DMatrix<f64>> {
        k.checked_sub(self.start).and_then(|i| self.coeffs.get(i))
    }

    pub fn coeff_mut(&mut self, k: usize) -> Option<&mut DMatrix<f64>> {
        k.checked_sub(self.start).and_then(|i| self.coeffs.get_mut(i))
    }

    /// `X(k)`, or a zero matrix outside the stored range.
    pub fn coeff_or_zero(&self, k: usize) -> DMatrix<f64> {
        self.coeff(k)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.rows, self.cols))
    }

    /// Re-express over `start..=horizon`, zero-padding or dropping terms.
    pub fn with_range(&self, start: usize, horizon: usize) -> Self {
        let coeffs = (start..=horizon).map(|k| self.coeff_or_zero(k)).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            start,
            coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            ..self.clone()
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(DMatrix<f64>, DMatrix<f64>) -> DMatrix<f64>,
    ) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let start = self.start.min(other.start);
        let horizon = self.horizon().max(other.horizon());
        let coeffs = (start..=horizon)
            .map(|k| f(self.coeff_or_zero(k), other.coeff_or_zero(k)))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            start,
            coeffs,
        })
    }

    /// Coefficient-wise sum; the shorter operand is zero-padded.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "fir_add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "fir_sub", |a, b| a - b)
    }

    /// Spectral convolution `Z(k) = Σ_j X(j) Y(k - j)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dims(
                "fir_multiply",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let start = self.start + other.start;
        let horizon = self.horizon() + other.horizon();
        let mut coeffs = vec![DMatrix::zeros(self.rows, other.cols); horizon - start + 1];
        for (i, x) in self.coeffs.iter().enumerate() {
            for (j, y) in other.coeffs.iter().enumerate() {
                coeffs[i + j].gemm(1.0, x, y, 1.0);
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            start,
            coeffs,
        })
    }

    /// Left-multiply every coefficient by a constant matrix.
    pub fn premul(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(Error::dims(
                "premul",
                format!("{}x{} times {}x{}", m.nrows(), m.ncols(), self.rows, self.cols),
            ));
        }
        Ok(Self {
            rows: m.nrows(),
            cols: self.cols,
            start: self.start,
            coeffs: self.coeffs.iter().map(|c| m * c).collect(),
        })
    }

    /// Stack `[self; other]` over the union of their spectral ranges.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dims(
                "vstack",
                format!("{} vs {} columns", self.cols, other.cols),
            ));
        }
        let start = self.start.min(other.start);
        let horizon = self.horizon().max(other.horizon());
        let rows = self.rows + other.rows;
        let coeffs = (start..=horizon)
            .map(|k| {
                let mut c = DMatrix::zeros(rows, self.cols);
                c.rows_mut(0, self.rows).copy_from(&self.coeff_or_zero(k));
                c.rows_mut(self.rows, other.rows)
                    .copy_from(&other.coeff_or_zero(k));
                c
            })
            .collect();
        Ok(Self {
            rows,
            cols: self.cols,
            start,
            coeffs,
        })
    }

    /// Rows `first..first+count` of every coefficient.
    pub fn row_block(&self, first: usize, count: usize) -> Self {
        Self {
            rows: count,
            cols: self.cols,
            start: self.start,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.rows(first, count).into_owned())
                .collect(),
        }
    }

    /// Truncated inverse of a biproper map: `Y(0) = X(0)^-1`,
    /// `Y(k) = -X(0)^-1 Σ_{j=1..k} X(j) Y(k-j)` for `k <= out_horizon`.
    pub fn inverse_truncated(&self, out_horizon: usize) -> Result<Self> {
        if self.start != 0 {
            return Err(Error::NotBiproper(self.start));
        }
        if self.rows != self.cols {
            return Err(Error::NonSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let lead_inv = self.coeffs[0]
            .clone()
            .try_inverse()
            .ok_or(Error::SingularLeading)?;
        let n = self.rows;
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(out_horizon + 1);
        out.push(lead_inv.clone());
        for k in 1..=out_horizon {
            let mut acc = DMatrix::zeros(n, n);
            for j in 1..=k.min(self.horizon()) {
                acc.gemm(1.0, &self.coeffs[j], &out[k - j], 1.0);
            }
            out.push(-(&lead_inv * acc));
        }
        Ok(Self {
            rows: n,
            cols: n,
            start: 0,
            coeffs: out,
        })
    }

    /// Square root of the summed squared Frobenius norms of all terms.
    pub fn norm_h2(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Induced ℓ∞→ℓ∞ norm of the impulse response: the largest row sum of
    /// absolute values taken across every spectral coefficient.
    pub fn norm_l1(&self) -> f64 {
        (0..self.rows)
            .map(|i| {
                self.coeffs
                    .iter()
                    .map(|c| c.row(i).iter().map(|x| x.abs()).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Largest Frobenius norm among the last `count` coefficients.
    pub fn tail_norm(&self, count: usize) -> f64 {
        let skip = self.coeffs.len().saturating_sub(count);
        self.coeffs[skip..]
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}
