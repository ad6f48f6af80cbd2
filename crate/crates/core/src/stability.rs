//! Internal stability of an implementation.
//!
//! The controller's internal signal obeys `δ̂(t+1) = -Σ Δc(k) δ̂(t+1-k)`,
//! so stacking `Tc` past values gives a block-companion matrix `A_z`
//! whose spectral radius decides internal stability. Besides the direct
//! eigenvalue test this module offers the small-gain test `‖Δ‖ < 1` and a
//! norm-power certificate (`‖A_z^k‖ < 1` for some `k`), which is run as
//! a simulated column-distributed protocol.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fir::{FirMatrix, LtiSystem};
use crate::implsyn::{compute_delta_c, DeltaC, ImplementationMatrices};
use crate::linalg::{mul_columns, norm_one_to_one, spectral_radius};

pub const DEFAULT_TRANSIENT_BOUND: f64 = 1e4;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct InternalDynamics {
    a_z: DMatrix<f64>,
    n: usize,
    tc: usize,
}

impl InternalDynamics {
    pub fn a_z(&self) -> &DMatrix<f64> {
        &self.a_z
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.tc
    }

    pub fn dim(&self) -> usize {
        self.a_z.nrows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.a_z)
    }
}

/// Companion matrix of `Δc`: identity blocks above the diagonal and
/// bottom block row `[-Δc(Tc), ..., -Δc(1)]`.
pub fn internal_dynamics_of(delta_c: &DeltaC) -> InternalDynamics {
    let dc = delta_c.as_fir();
    let n = dc.rows();
    let tc = delta_c.order();
    if tc == 0 {
        return InternalDynamics {
            a_z: DMatrix::zeros(0, 0),
            n,
            tc,
        };
    }
    let dim = n * tc;
    let mut a_z = DMatrix::zeros(dim, dim);
    for b in 0..tc - 1 {
        a_z.view_mut((b * n, (b + 1) * n), (n, n))
            .fill_with_identity();
    }
    for b in 0..tc {
        a_z.view_mut(((tc - 1) * n, b * n), (n, n))
            .copy_from(&(-delta_c.coeff(tc - b)));
    }
    InternalDynamics { a_z, n, tc }
}

pub fn build_internal_dynamics(
    sys: &LtiSystem,
    imp: &ImplementationMatrices,
) -> Result<InternalDynamics> {
    Ok(internal_dynamics_of(&compute_delta_c(sys, imp)?))
}

/// `‖Δ‖ < 1` in the induced ℓ∞ norm. Sufficient, not necessary.
pub fn small_gain_check(delta: &FirMatrix) -> bool {
    delta.norm_l1() < 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `‖A^k‖ < 1` for the reported `k`.
    Certified,
    /// `‖A^k‖` exceeded the transient bound.
    LargeTransient,
    /// No decision within the iteration cap.
    MaxIterations,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::LargeTransient => "large_transient",
            Verdict::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub iterations: usize,
    pub final_norm: f64,
}

fn validate(a: &DMatrix<f64>, bound: f64, k_max: usize) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if !(bound > 0.0) || k_max == 0 {
        return Err(Error::InvalidArgument(
            "transient bound must be positive and the iteration cap nonzero".into(),
        ));
    }
    Ok(())
}

fn decide(norm: f64, k: usize, bound: f64, k_max: usize) -> Option<Verdict> {
    if norm < 1.0 {
        Some(Verdict::Certified)
    } else if norm > bound {
        Some(Verdict::LargeTransient)
    } else if k >= k_max {
        Some(Verdict::MaxIterations)
    } else {
        None
    }
}

/// Form `A^k`, `k = 1..=k_max`, until `‖A^k‖₁ < 1` (certified),
/// `‖A^k‖₁ > bound` (large transient) or the cap is reached.
pub fn norm_power_certify(a: &DMatrix<f64>, bound: f64, k_max: usize) -> Result<CheckOutcome> {
    validate(a, bound, k_max)?;
    let mut p = a.clone();
    let mut k = 1;
    loop {
        let norm = norm_one_to_one(&p);
        if let Some(verdict) = decide(norm, k, bound, k_max) {
            return Ok(CheckOutcome {
                verdict,
                iterations: k,
                final_norm: norm,
            });
        }
        p = mul_columns(a, &p).0;
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub global_norm: f64,
    /// `None` while no termination condition holds.
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone)]
pub struct DistributedReport {
    pub outcome: CheckOutcome,
    pub trace: Vec<TraceRow>,
    /// Column range `[start, end)` owned by each processor.
    pub partition: Vec<(usize, usize)>,
    /// Multiply-adds performed by each processor over the whole run.
    pub ops_per_processor: Vec<u64>,
}

impl DistributedReport {
    /// `k,global_norm,verdict_so_far`
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("k,global_norm,verdict_so_far\n");
        for r in &self.trace {
            let v = r.verdict.map_or("running", Verdict::as_str);
            let _ = writeln!(s, "{},{:e},{}", r.k, r.global_norm, v);
        }
        s
    }
}

/// Contiguous column blocks, remainder to the last processor.
pub fn partition_columns(dim: usize, processors: usize) -> Vec<(usize, usize)> {
    let base = dim / processors;
    (0..processors)
        .map(|p| {
            let start = p * base;
            let end = if p + 1 == processors { dim } else { start + base };
            (start, end)
        })
        .collect()
}

/// Simulated distributed norm-power check.
///
/// Processor `p` stores its column block of `A_z^k`. A round multiplies
/// every block by `A_z` and reports the local largest column sum; a
/// max-reduce yields `‖A_z^k‖₁` and every processor applies the same
/// termination test. The 1-to-1 norm splits over columns, so the outcome
/// equals [`norm_power_certify`] bit for bit for any processor count.
pub fn distributed_stability_check(
    dynamics: &InternalDynamics,
    processors: usize,
    bound: f64,
    k_max: usize,
) -> Result<DistributedReport> {
    let a = dynamics.a_z();
    validate(a, bound, k_max)?;
    let dim = a.nrows();
    if processors == 0 || processors > dim {
        return Err(Error::InvalidArgument(format!(
            "need 1..={dim} processors, got {processors}"
        )));
    }
    let partition = partition_columns(dim, processors);
    let mut blocks: Vec<DMatrix<f64>> = partition
        .iter()
        .map(|&(s, e)| a.columns(s, e - s).into_owned())
        .collect();
    let mut ops = vec![0u64; processors];
    let mut trace = Vec::new();
    let mut k = 1;
    loop {
        let local: Vec<f64> = blocks.par_iter().map(norm_one_to_one).collect();
        let global = local.iter().cloned().fold(0.0, f64::max);
        let verdict = decide(global, k, bound, k_max);
        trace.push(TraceRow {
            k,
            global_norm: global,
            verdict,
        });
        if let Some(verdict) = verdict {
            return Ok(DistributedReport {
                outcome: CheckOutcome {
                    verdict,
                    iterations: k,
                    final_norm: global,
                },
                trace,
                partition,
                ops_per_processor: ops,
            });
        }
        let next: Vec<(DMatrix<f64>, u64)> =
            blocks.par_iter().map(|b| mul_columns(a, b)).collect();
        for (p, (b, o)) in next.into_iter().enumerate() {
            blocks[p] = b;
            ops[p] += o;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn termination_examples() {
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let o = norm_power_certify(&nil, 1e4, 200).unwrap();
        assert_eq!((o.verdict, o.iterations, o.final_norm), (Verdict::Certified, 2, 0.0));

        let o = norm_power_certify(&DMatrix::identity(3, 3), 1e4, 200).unwrap();
        assert_eq!((o.verdict, o.iterations), (Verdict::MaxIterations, 200));

        let o = norm_power_certify(&(DMatrix::identity(2, 2) * 2.0), 10.0, 200).unwrap();
        assert_eq!((o.verdict, o.iterations, o.final_norm), (Verdict::LargeTransient, 4, 16.0));
    }

    #[test]
    fn partition_puts_remainder_last() {
        assert_eq!(partition_columns(10, 3), vec![(0, 3), (3, 6), (6, 10)]);
        assert_eq!(partition_columns(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn companion_of_order_one() {
        let d1 = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let dc = FirMatrix::new(0, vec![DMatrix::identity(2, 2), d1.clone()]).unwrap();
        let dyn1 = internal_dynamics_of(&DeltaC::new(dc).unwrap());
        assert_eq!(dyn1.a_z(), &(-d1));
    }

    #[test]
    fn trace_csv_format() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let dyn0 = InternalDynamics { a_z: a, n: 1, tc: 2 };
        let r = distributed_stability_check(&dyn0, 2, 1e4, 200).unwrap();
        assert_eq!(
            r.trace_csv(),
            "k,global_norm,verdict_so_far\n1,2e0,running\n2,0e0,certified\n"
        );
        assert_eq!(r.ops_per_processor, vec![4, 4]);
    }
}
