use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no rows")]
    NoRows,
    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate (facility, position) = ({facility}, {position}) at row {row}")]
    DuplicatePosition { facility: i64, position: i64, row: usize },
    #[error("duplicate segment id {id} at row {row}")]
    DuplicateSegment { id: i64, row: usize },
    #[error("edge references unknown segment {0}")]
    UnknownSegment(i64),
    #[error("column `{0}` has zero variance and cannot be standardized")]
    ZeroVariance(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid tree state: {0}")]
    InvalidTree(&'static str),
    #[error("iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error("maximum likelihood did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("degenerate likelihood: {0}")]
    Degenerate(&'static str),
}
