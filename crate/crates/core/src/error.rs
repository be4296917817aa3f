use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library.
///
/// Every variant maps to a stable machine-readable code via [`Error::code`], and to
/// one of two classes: validation (bad input) or numerical (a solve or iteration failed).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dataset {dataset}: covariate count mismatch (expected {expected}, found {found})")]
    CovariateMismatch {
        dataset: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset {dataset}: mixed dataset kinds")]
    MixedKinds { dataset: usize },
    #[error("dataset {dataset}: design has {rows} rows but responses have length {responses}")]
    RowCountMismatch {
        dataset: usize,
        rows: usize,
        responses: usize,
    },
    #[error("dataset {dataset}: non-finite value in {location}")]
    NonFinite { dataset: usize, location: String },
    #[error("dataset {dataset}: non-binary response {value} at row {row}")]
    NonBinaryResponse {
        dataset: usize,
        row: usize,
        value: f64,
    },
    #[error("dataset {dataset}: invalid noise variance {value}")]
    InvalidNoiseVariance { dataset: usize, value: f64 },
    #[error("dataset {dataset}: binary datasets cannot carry a noise variance")]
    NoiseOnBinary { dataset: usize },
    #[error("empty collection")]
    EmptyCollection,
    #[error("dataset {dataset}: rank-deficient design (smallest singular value {smallest_singular_value:e})")]
    RankDeficient {
        dataset: usize,
        smallest_singular_value: f64,
    },
    #[error("dataset {dataset}: {rows} rows is too few (need at least {needed})")]
    TooFewRows {
        dataset: usize,
        rows: usize,
        needed: usize,
    },
    #[error("operation requires {expected} datasets")]
    WrongKind { expected: &'static str },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infinite-risk regime: {0}")]
    InfiniteRisk(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("noise variance required for dataset {dataset}: {reason}; supply noise_variance in the manifest")]
    NoiseRequired { dataset: usize, reason: String },
    #[error("zero-variance responses in dataset {dataset}")]
    ZeroVariance { dataset: usize },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {file} at row {row}, column {column}: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("missing column {column} in {file}")]
    MissingColumn { file: String, column: String },
    #[error("covariate order mismatch between {first} and {second}")]
    HeaderMismatch { first: String, second: String },
    #[error("empty file {file}")]
    EmptyFile { file: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("singular system: {0}")]
    Singular(String),
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {relative_residual:e})")]
    CgNotConverged {
        iterations: usize,
        relative_residual: f64,
    },
    #[error("log marginal likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    LikelihoodDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("Newton iteration did not converge in {iterations} iterations (gradient norm {gradient_norm:e})")]
    NewtonNotConverged {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("redraw limit reached: {0}")]
    RedrawLimit(String),
}

impl Error {
    /// Stable snake_case identifier for the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::CovariateMismatch { .. } => "covariate_mismatch",
            Error::MixedKinds { .. } => "mixed_kinds",
            Error::RowCountMismatch { .. } => "row_count_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NonBinaryResponse { .. } => "non_binary_response",
            Error::InvalidNoiseVariance { .. } => "invalid_noise_variance",
            Error::NoiseOnBinary { .. } => "noise_on_binary",
            Error::EmptyCollection => "empty_collection",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::TooFewRows { .. } => "too_few_rows",
            Error::WrongKind { .. } => "wrong_kind",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotPsd { .. } => "not_psd",
            Error::Shape(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InfiniteRisk(_) => "infinite_risk",
            Error::Regime(_) => "regime_violation",
            Error::Unsupported(_) => "unsupported",
            Error::NoiseRequired { .. } => "noise_required",
            Error::ZeroVariance { .. } => "zero_variance",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::MissingColumn { .. } => "missing_column",
            Error::HeaderMismatch { .. } => "header_mismatch",
            Error::EmptyFile { .. } => "empty_file",
            Error::Manifest(_) => "manifest",
            Error::Singular(_) => "singular",
            Error::CgNotConverged { .. } => "cg_not_converged",
            Error::LikelihoodDecrease { .. } => "likelihood_decrease",
            Error::NewtonNotConverged { .. } => "newton_not_converged",
            Error::NonFiniteObjective { .. } => "non_finite_objective",
            Error::RedrawLimit(_) => "redraw_limit",
        }
    }

    /// True for failures of a numerical procedure on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::CgNotConverged { .. }
                | Error::LikelihoodDecrease { .. }
                | Error::NewtonNotConverged { .. }
                | Error::NonFiniteObjective { .. }
                | Error::RedrawLimit(_)
        )
    }

    pub(crate) fn at_dataset(self, index: usize) -> Self {
        match self {
            Error::CovariateMismatch { expected, found, .. } => Error::CovariateMismatch {
                dataset: index,
                expected,
                found,
            },
            Error::MixedKinds { .. } => Error::MixedKinds { dataset: index },
            Error::RowCountMismatch { rows, responses, .. } => Error::RowCountMismatch {
                dataset: index,
                rows,
                responses,
            },
            Error::NonFinite { location, .. } => Error::NonFinite {
                dataset: index,
                location,
            },
            Error::NonBinaryResponse { row, value, .. } => Error::NonBinaryResponse {
                dataset: index,
                row,
                value,
            },
            Error::InvalidNoiseVariance { value, .. } => Error::InvalidNoiseVariance {
                dataset: index,
                value,
            },
            Error::NoiseOnBinary { .. } => Error::NoiseOnBinary { dataset: index },
            Error::RankDeficient {
                smallest_singular_value,
                ..
            } => Error::RankDeficient {
                dataset: index,
                smallest_singular_value,
            },
            Error::TooFewRows { rows, needed, .. } => Error::TooFewRows {
                dataset: index,
                rows,
                needed,
            },
            Error::NoiseRequired { reason, .. } => Error::NoiseRequired {
                dataset: index,
                reason,
            },
            Error::ZeroVariance { .. } => Error::ZeroVariance { dataset: index },
            other => other,
        }
    }
}
