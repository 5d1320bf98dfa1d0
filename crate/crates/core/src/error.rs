use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid timing: {0}")]
    InvalidTiming(String),

    #[error("frequency {frequency} Hz is outside the sensible range ({bound})")]
    FrequencyOutOfRange { frequency: f64, bound: String },

    /// The quantity diverges, e.g. the Rabi frequency of an ideal pulse.
    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("quadrature step too coarse: {0}")]
    Precision(String),

    #[error("inconsistent configuration: {0}")]
    InconsistentConfiguration(String),

    #[error("no feature found: {0}")]
    NoFeature(String),

    #[error("degenerate sequence: {0}")]
    DegenerateSequence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient data: {0}")]
    RankDeficient(String),

    #[error("unphysical data: {0}")]
    UnphysicalData(String),

    #[error("infeasible schedule: {reason} (minimum feasible dwell {min_dwell:e} s)")]
    InfeasibleSchedule { reason: String, min_dwell: f64 },

    #[error("invalid exclusion: {0}")]
    InvalidExclusion(String),

    #[error("unreliable reference: peak {peak:e} is not above 3x the noise floor {floor:e}")]
    UnreliableReference { peak: f64, floor: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
