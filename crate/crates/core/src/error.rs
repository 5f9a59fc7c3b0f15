use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("percentile rank needs at least 2 values, got {0}")]
    PercentileUndefined(usize),

    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("too few records: need at least {need}, have {have}")]
    TooFewRecords { need: usize, have: usize },

    #[error("invalid fractions: {0}")]
    InvalidFractions(String),

    #[error("embedding dimension error: {0}")]
    Dimension(String),

    #[error("train-phase forward needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite activation in {0}")]
    NonFinite(String),

    #[error("cache does not match parameters: {0}")]
    CacheMismatch(String),

    #[error("uncertainty parameters: {0}")]
    Uncertainty(String),

    #[error("non-finite gradient at parameter index {0}; step refused")]
    NonFiniteGradient(usize),

    #[error("correlation undefined: {0} is constant")]
    UndefinedCorrelation(&'static str),

    #[error("both classes must be present")]
    SingleClass,

    #[error("class {class} has {count} members, fewer than k = {k}")]
    ClassTooSmall { class: bool, count: usize, k: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing labels for song {0}")]
    MissingLabels(String),

    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        source: Box<CoreError>,
    },
}

impl CoreError {
    pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Self {
        CoreError::Domain {
            what,
            value,
            domain,
        }
    }

    pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(CoreError::LengthMismatch { expected, actual })
        }
    }
}
