//! Two-step controller synthesis for discrete-time LTI systems.
//!
//! The first step designs finite-impulse-response closed-loop maps
//! `(Φx, Φu)` with a standard LQR objective ([`clsyn`]). The second step
//! searches the affine family of implementation matrices `(Rc, Mc)` that
//! realize those maps, relaxed so that locality and communication-delay
//! sparsity can be imposed on the controller alone ([`implsyn`]).
//! [`stability`] certifies the internal dynamics of the resulting
//! controller, [`evalsim`] simulates it, and [`bench`] reproduces the
//! ten-node chain experiments.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod clsyn;
pub mod error;
pub mod evalsim;
pub mod fir;
pub mod implsyn;
pub mod linalg;
pub mod prox;
pub mod sparsity;
pub mod stability;
pub mod textfmt;

pub use clsyn::{ClosedLoopMaps, LqrWeights};
pub use error::{Error, Result};
pub use fir::{FirMatrix, LtiSystem};
pub use implsyn::{DeltaC, ImplementationMatrices};
pub use sparsity::{SparsityMask, Topology};
