use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    Schema(String),
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}`")]
    Parse { row: usize, column: String, value: String },
    #[error("index {index} out of range for {len} units")]
    Bounds { index: usize, len: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e}){hint}")]
    NonConvergence { what: String, iterations: usize, residual: f64, hint: String },
    #[error("rank deficient design: column(s) {} collinear with preceding columns", .0.join(", "))]
    Rank(Vec<String>),
    #[error("overlap error: empty cell {0}")]
    Overlap(String),
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),
    #[error("division guard: fitted probability {value} at unit {unit} ({what})")]
    DivisionGuard { unit: usize, value: f64, what: String },
    #[error("invalid contrast: levels g and g' must differ")]
    InvalidContrast,
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("variance error: {0}")]
    Variance(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
