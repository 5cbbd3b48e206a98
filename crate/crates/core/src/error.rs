use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model `{model}` does not support {what}")]
    UnsupportedModel { model: String, what: String },

    #[error("offspring sample has {count} children, above the hard cap of {cap}")]
    ChildCapExceeded { count: usize, cap: usize },

    #[error("rejection envelope {envelope} violated by a sample with weight {weight}")]
    EnvelopeViolated { envelope: f64, weight: f64 },

    #[error("population cap {cap} exceeded at generation {generation} ({population} particles)")]
    PopulationOverflow {
        generation: usize,
        population: usize,
        cap: usize,
    },

    #[error("{events} ladder epochs hit the step cap {cap}, above the allowed {allowed}")]
    StepCapExceeded { events: u64, allowed: u64, cap: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cache file: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
