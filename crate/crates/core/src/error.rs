use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid interval ({lo}, {hi}): require lo < hi")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("cannot parse interval set {input:?}: {reason}")]
    ParseIntervalSet { input: String, reason: String },

    #[error("invalid cell grid: {0}")]
    InvalidCellGrid(String),

    #[error("empty observation set")]
    EmptyObservationSet,

    #[error("no Lebesgue point located")]
    NoLebesguePoint,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty basis")]
    EmptyBasis,

    #[error("root bracketing failed for eigenvalue index {index}")]
    RootBracketing { index: usize },

    #[error("backward evolution forbidden (dt = {0})")]
    BackwardEvolution(f64),

    #[error("derivative order unsupported: {order} > {max}")]
    DerivativeOrder { order: usize, max: usize },

    #[error("analyticity fit failed: bound violated at rho = {rho_min}")]
    AnalyticityFit { rho_min: f64 },

    #[error("lemma hypothesis requires rho <= 1/2 (got {0})")]
    RhoTooLarge(f64),

    #[error("degenerate family")]
    DegenerateFamily,

    #[error("interpolation step not certified: {0}")]
    StepNotCertified(String),

    #[error("restarts failed to converge: {0}")]
    OptimizationFailed(String),

    #[error("HUM failed to converge (residual {residual:e})")]
    HumNotConverged { residual: f64 },

    #[error("horizon cap exceeded (no feasible horizon <= {cap})")]
    HorizonCapExceeded { cap: f64 },

    #[error("coupling hypothesis violated: b vanishes identically")]
    CouplingHypothesis,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
