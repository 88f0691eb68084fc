use thiserror::Error;

/// Errors raised by the library. Variants are split into validation failures
/// (bad input or violated hypotheses) and numerical failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Hypothesis(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),
    #[error("evaluation domain error: {0}")]
    Domain(String),
    #[error("point {0:?} lies outside the grid box")]
    OutOfBox(Vec<f64>),
    #[error("no target node in grid")]
    NoTarget,
    #[error("projection did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("vanishing gradient of the target level function at {0:?}")]
    VanishingGradient(Vec<f64>),
    #[error("terminal data inconsistent: H(x*, q*) = {0:e} > 0")]
    TerminalInconsistent(f64),
    #[error("tangential normal: margin {0:e} is not positive")]
    TangentialNormal(f64),
    #[error("tangential normal required: margin {0:e} is not zero")]
    TangentialRequired(f64),
    #[error("state left the domain box at t = {0}")]
    ExitedDomain(f64),
    #[error("degenerate costate p = 0 at t = {0}")]
    DegenerateCostate(f64),
    #[error("step budget of {0} exhausted before reaching the target")]
    BudgetExceeded(usize),
    #[error("point touches the unreached region")]
    Unreached,
    #[error("no usable neighbors in the ball")]
    NoUsableNeighbors,
    #[error("zero costate")]
    ZeroCostate,
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by the input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::UnknownIdentifier { .. }
                | Error::MissingField(_)
                | Error::Config(_)
                | Error::Hypothesis(_)
                | Error::InvalidGrid(_)
                | Error::UnknownBenchmark(_)
                | Error::TerminalInconsistent(_)
                | Error::TangentialNormal(_)
                | Error::TangentialRequired(_)
                | Error::ZeroCostate
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
