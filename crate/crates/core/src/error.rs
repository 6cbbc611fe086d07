use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("feature matrix construction failed for event {event}: {source}")]
    Extraction {
        event: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
