use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bit sequence length {0} is odd; PAM4 needs two bits per symbol")]
    OddBitCount(usize),

    #[error("value {0} is not a PAM4 level")]
    NotPam4Level(f64),

    #[error("non-positive radicand {0} under square root (optical power must stay positive)")]
    NegativePower(f64),

    #[error("cannot slice a NaN sample")]
    NanSample,

    #[error("equalizer diverged at step {step}")]
    Diverged { step: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o: {0}")]
    Io(String),

    #[error("table format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the requested configuration rather than by
    /// a failure while running it.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig(_) | Error::OddBitCount(_) => true,
            Error::GridPoint { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
