use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("member index {index} out of range for a family of {len}")]
    Index { index: usize, len: usize },

    #[error("offset {offset} on pair {pair} exceeds the legal bound {bound}")]
    Perturbation { pair: usize, offset: f64, bound: f64 },

    /// The stabbing segment collapsed to a point, so a zero-cost fit exists.
    #[error("stabbing segment has zero length")]
    ZeroStab,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
