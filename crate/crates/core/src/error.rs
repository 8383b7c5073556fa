use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at batch {batch}, token {token}, channel {channel}")]
    NonFinite {
        batch: usize,
        token: usize,
        channel: usize,
    },

    #[error("invalid index: {0}")]
    Index(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    /// Pruning ratio of 1.0 reached the selector; the pipeline must skip the stage instead.
    #[error("pruning ratio 1.0 cannot be selected, the stage must be skipped")]
    FullPrune,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("scale {scale}: {source}")]
    AtScale {
        scale: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_scale(self, scale: usize) -> Self {
        Error::AtScale {
            scale,
            source: Box::new(self),
        }
    }
}
