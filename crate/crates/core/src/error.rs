use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown kernel family `{0}`")]
    UnknownFamily(String),
    #[error("exponent p = {p} must satisfy 1 < p < d = {d}")]
    ExponentRange { p: f64, d: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("truncation radius T = {t} must exceed the short-range radius r0 = {r0}")]
    TruncationBelowR0 { t: f64, r0: f64 },
    #[error("shift is not commensurate with the grid: {0}")]
    NonCommensurate(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("undefined value at a shifted endpoint (cell {0}) and no exterior extension")]
    UndefinedEndpoint(usize),
    #[error("empty cell set")]
    EmptySet,
    #[error("coarsening cube side {side} is below the grid step {h}")]
    CubeBelowGrid { side: f64, h: f64 },
    #[error("regularization mu = 0 with p < 2 at a zero difference")]
    SingularGradient,
    #[error("kernel is not convex in z; the closed formula does not apply")]
    NonConvexKernel,
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("outer radius R = {r} violates R >= 2 + T*eps = {min}")]
    RadiusTooSmall { r: f64, min: f64 },
    #[error("under-resolved: eps/h = {ratio} < {min}")]
    UnderResolved { ratio: f64, min: f64 },
    #[error("missing density table: {0}")]
    MissingTable(String),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
