use std::path::PathBuf;

/// Pipeline stage an error belongs to. The CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Manifest,
    Data,
    Fit,
    Balance,
    Estimation,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("manifest: {0}")]
    Manifest(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("invalid category scale: {0}")]
    InvalidScale(String),
    #[error("threshold label `{0}` is not in the category scale")]
    ThresholdNotInScale(String),
    #[error("row {row} (id {id}): unknown category label `{label}`")]
    UnknownCategory {
        row: usize,
        id: String,
        label: String,
    },
    #[error("row {row} (id {id}) rejected in strict mode: {reason}")]
    StrictDrop {
        row: usize,
        id: String,
        reason: String,
    },
    #[error("no rows survived validation")]
    NoRows,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("dataset needs units on both sides of the threshold ({controls} controls, {treated} treated)")]
    OneSided { controls: usize, treated: usize },
    #[error("invalid term `{0}`")]
    InvalidTerm(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cutoffs must be strictly increasing")]
    CutoffsNotIncreasing,
    #[error("cell probability underflow for unit {unit}")]
    CellUnderflow { unit: usize },
    #[error("category `{0}` has no observations")]
    EmptyCategory(String),
    #[error("need more units ({units}) than parameters ({params})")]
    TooFewUnits { units: usize, params: usize },
    #[error("probit fit diverged (separation suspected): {0}")]
    Separation(String),

    #[error("{arm} arm has {n} units, need at least {need}")]
    ArmTooSmall {
        arm: &'static str,
        n: usize,
        need: usize,
    },
    #[error("degenerate covariate: constant within both arms")]
    DegenerateCovariate,
    #[error("covariate `{name}`: {source}")]
    Covariate {
        name: String,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid search grid: {0}")]
    InvalidGrid(String),
    #[error("no balanced symmetric interval under {0} weights")]
    NoBalancedInterval(String),
    #[error("invalid interval ({0}, {1})")]
    InvalidInterval(f64, f64),

    #[error("outcome model: {arm} arm has {n} units, need at least {need}")]
    OutcomeArmTooSmall {
        arm: &'static str,
        n: usize,
        need: usize,
    },
    #[error("{0} arm has zero total weight")]
    ZeroWeight(&'static str),
    #[error("design matrix is rank deficient; collinear terms: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("standard error must be positive")]
    NonPositiveSe,
    #[error("{block} information matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularInformation { block: String, condition: f64 },
    #[error("simulation: {0}")]
    Simulation(String),
}

impl Error {
    pub fn stage(&self) -> Stage {
        use Error::*;
        match self {
            Manifest(_) | InvalidTerm(_) | InvalidGrid(_) => Stage::Manifest,
            Io { .. }
            | Csv(_)
            | MissingColumn(_)
            | InvalidScale(_)
            | ThresholdNotInScale(_)
            | UnknownCategory { .. }
            | StrictDrop { .. }
            | NoRows
            | UnknownCovariate(_)
            | OneSided { .. } => Stage::Data,
            DimensionMismatch { .. }
            | CutoffsNotIncreasing
            | CellUnderflow { .. }
            | EmptyCategory(_)
            | TooFewUnits { .. }
            | Separation(_) => Stage::Fit,
            ArmTooSmall { .. }
            | DegenerateCovariate
            | Covariate { .. }
            | InvalidInterval(..)
            | NoBalancedInterval(_) => Stage::Balance,
            OutcomeArmTooSmall { .. }
            | ZeroWeight(_)
            | RankDeficient(_)
            | NonPositiveSe
            | SingularInformation { .. }
            | Simulation(_) => Stage::Estimation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
