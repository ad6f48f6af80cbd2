use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("leading spectral coefficient is singular")]
    SingularLeading,

    #[error("transfer matrix must start at z^0 to be inverted, starts at z^-{0}")]
    NotBiproper(usize),

    /// The linear equality constraints admit no solution. Distinct from a
    /// numerical failure: the problem itself is inconsistent.
    #[error("infeasible: column {column} has rank {rank} but augmented rank {augmented_rank}")]
    Infeasible {
        column: usize,
        rank: usize,
        augmented_rank: usize,
    },

    #[error("sparsity mask horizon {mask} shorter than required horizon {required}")]
    MaskHorizon { mask: usize, required: usize },

    #[error("sparsity mask forbids a diagonal entry of Rc(1); Rc(1) = I is not representable")]
    MaskRejectsIdentity,

    #[error("Riccati iteration did not converge after {iterations} iterations")]
    RiccatiDiverged { iterations: usize },

    #[error("inverse tail did not decay: norm {tail_norm:e} at horizon {horizon}")]
    TailNotDecaying { tail_norm: f64, horizon: usize },

    #[error("internal dynamics unstable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("no internally stable implementation after {attempts} attempts (last lambda {last_lambda})")]
    NoStableImplementation { attempts: usize, last_lambda: f64 },

    #[error("linear solve failed: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }
}
