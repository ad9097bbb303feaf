use thiserror::Error;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Model,
    Infeasible,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::Model => 3,
            ErrorKind::Infeasible => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unrecognised column `{0}`")]
    UnknownColumn(String),
    #[error("row {row}: column `{column}` has unparseable value `{value}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: weight {weight} is not strictly positive")]
    NonPositiveWeight { row: usize, weight: f64 },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    RaggedCovariates {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: outcome mode differs from earlier rows (observed vs. potential-outcome schedule)")]
    MixedOutcomeModes { row: usize },
    #[error("row {row}: cluster `{cluster}` in block `{block}` mixes treated and control units")]
    InconsistentTreatment {
        row: usize,
        block: String,
        cluster: String,
    },
    #[error("row {row}: treatment indicator must be 0 or 1, found `{value}`")]
    BadTreatment { row: usize, value: String },
    #[error("block `{block}` has {m} cluster(s); at least 2 are required")]
    SmallBlock { block: String, m: usize },
    #[error("dataset has no rows")]
    EmptyInput,
    #[error(
        "no treatment column (`t`) present; observed-mode analysis needs the realised assignment"
    )]
    MissingAssignment,
    #[error("configuration error: {0}")]
    Config(String),

    #[error("block `{block}` has an empty {arm} arm")]
    EmptyArm { block: String, arm: &'static str },
    #[error(
        "block `{block}`: {arm} arm has {count} cluster(s); variance estimation needs at least 2"
    )]
    TooFewClusters {
        block: String,
        arm: &'static str,
        count: usize,
    },
    #[error("design matrix is rank deficient at column `{column}`")]
    RankDeficient { column: String },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("assignment does not match the population structure: {0}")]
    AssignmentShape(String),
    #[error("operation requires both potential outcomes for every unit")]
    NeedsSchedule,
    #[error("operation requires observed outcomes")]
    NeedsObserved,
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("degenerate quantity: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block `{block}`: treated count round({p} * {m}) = {m1} is outside [1, {max}]")]
    InfeasibleCount {
        block: String,
        p: f64,
        m: usize,
        m1: usize,
        max: usize,
    },
    #[error("enumeration would visit {count} assignments, above the cap of {cap}")]
    EnumerationCap { count: u128, cap: u128 },
    #[error("block `{block}`: degrees-of-freedom denominator for the {arm} arm is {df} (must be positive)")]
    NonPositiveDf {
        block: String,
        arm: &'static str,
        df: f64,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io(_)
            | Csv(_)
            | MissingColumn(_)
            | UnknownColumn(_)
            | BadValue { .. }
            | NonPositiveWeight { .. }
            | RaggedCovariates { .. }
            | MixedOutcomeModes { .. }
            | InconsistentTreatment { .. }
            | BadTreatment { .. }
            | SmallBlock { .. }
            | EmptyInput
            | MissingAssignment
            | Config(_) => ErrorKind::Input,
            EmptyArm { .. }
            | TooFewClusters { .. }
            | RankDeficient { .. }
            | DimensionMismatch { .. }
            | AssignmentShape(_)
            | NeedsSchedule
            | NeedsObserved
            | Singular(_)
            | Degenerate(_)
            | InvalidArgument(_) => ErrorKind::Model,
            InfeasibleCount { .. } | EnumerationCap { .. } | NonPositiveDf { .. } => {
                ErrorKind::Infeasible
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
