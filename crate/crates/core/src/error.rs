use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("instrument column `{column}` has {count} distinct values ({values}); expected exactly two")]
    NonBinaryInstrument {
        column: String,
        count: usize,
        values: String,
    },

    #[error("no usable rows left after dropping {dropped} rows with missing values")]
    EmptyAfterFiltering { dropped: usize },

    #[error("cannot parse `{value}` in column `{column}` at data row {row}")]
    UnparseableCell {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid bins specification: {0}")]
    InvalidBins(String),

    #[error("instrument arm Z={0} is empty")]
    DegenerateArm(u8),

    #[error("first stage is zero for {0}")]
    ZeroFirstStage(String),

    #[error("covariate matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficientCovariates { rank: usize, cols: usize },

    #[error("invalid test tuning: {0}")]
    InvalidTuning(String),

    #[error("bounds problem is infeasible: {0}")]
    InfeasibleProblem(String),

    #[error("invalid complier shares: {0}")]
    InvalidShares(String),

    #[error("invalid hurdle configuration: {0}")]
    InvalidHurdle(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Module-qualified error code used in CLI reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "dataset.missing_column",
            Error::NonBinaryInstrument { .. } => "dataset.non_binary_instrument",
            Error::EmptyAfterFiltering { .. } => "dataset.empty_after_filtering",
            Error::UnparseableCell { .. } => "dataset.unparseable_cell",
            Error::InvalidData(_) => "dataset.invalid",
            Error::InvalidBins(_) => "dataset.invalid_bins",
            Error::DegenerateArm(_) => "estimators.degenerate_arm",
            Error::ZeroFirstStage(_) => "estimators.zero_first_stage",
            Error::RankDeficientCovariates { .. } => "estimators.rank_deficient_covariates",
            Error::InvalidTuning(_) => "inference.invalid_tuning",
            Error::InfeasibleProblem(_) => "bounds.infeasible",
            Error::InvalidShares(_) => "bounds.invalid_shares",
            Error::InvalidHurdle(_) => "simulate.invalid_hurdle",
            Error::Unbounded => "bounds.unbounded",
            Error::Config(_) => "cli.config",
            Error::Io(_) => "io",
            Error::Csv(_) => "io.csv",
            Error::Json(_) => "io.json",
        }
    }

    /// 3 for statistical degeneracy, 2 for everything the user can fix in the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateArm(_)
            | Error::ZeroFirstStage(_)
            | Error::RankDeficientCovariates { .. }
            | Error::InfeasibleProblem(_)
            | Error::Unbounded => 3,
            _ => 2,
        }
    }
}
