use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// `Validation`, `Io` and `Json` describe bad input; everything else is a
/// mathematical precondition that the input violates.
#[derive(Debug, Error)]
pub enum Error {
    #[error("eig-no-converge: Jacobi iteration did not converge after {sweeps} sweeps")]
    EigNoConverge { sweeps: usize },

    #[error("not-psd: minimum eigenvalue {min} below tolerance (max eigenvalue {max})")]
    NotPsd { min: f64, max: f64 },

    #[error("zero-probability: p(x={outcome}|theta_{index}) = {value} is not positive")]
    ZeroProbability {
        index: usize,
        outcome: usize,
        value: f64,
    },

    #[error("degenerate-denominator: sum_i w_i a_i^T C a_i = {value}")]
    DegenerateDenominator { value: f64 },

    #[error("unbounded-gcr: bias component b_{index} = {bias} has zero information")]
    UnboundedGcr { index: usize, bias: f64 },

    #[error("range-violation: bias vector outside the information range ({context})")]
    RangeViolation { context: String },

    #[error("enumeration-cap: {outcomes} joint outcomes exceed the cap of {cap}")]
    EnumerationCap { outcomes: f64, cap: usize },

    #[error("not-a-state: {0}")]
    NotAState(String),

    #[error("incompatible-family: max residual {max_residual:.3e}\n{table}")]
    IncompatibleFamily { max_residual: f64, table: String },

    #[error("bias-out-of-range: bias not in the range of the score Gram matrix")]
    BiasOutOfRange,

    #[error("degenerate-bias: {0}")]
    DegenerateBias(String),

    #[error("zero-probability-outcome: Tr[E_{outcome} rho_{index}] = {value:.3e}")]
    ZeroProbabilityOutcome {
        outcome: usize,
        index: usize,
        value: f64,
    },

    #[error("non-real-information: imaginary residual {0:.3e}")]
    NonRealInformation(f64),

    #[error("quadrature-underflow: integral {0:e} too small")]
    QuadratureUnderflow(f64),

    #[error("validation: {0}")]
    Validation(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code: 2 for bad input, 3 for a mathematical
    /// precondition failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
