use alloc::vec::Vec;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },

    #[error("rate not representable: {0} Hz")]
    RateNotRepresentable(f64),

    #[error("unidentifiable: {0}")]
    Unidentifiable(&'static str),

    #[error("population silent: no junction reported a positive rate")]
    PopulationSilent,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rank-deficient basis: columns {columns:?} are (nearly) dependent on earlier columns")]
    RankDeficient { columns: Vec<usize> },

    #[error("outside domain: {0}")]
    OutsideDomain(&'static str),

    #[error("illegal state transition S{from} -> S{to}")]
    IllegalTransition { from: u8, to: u8 },

    #[error("unknown transform `{0}`")]
    UnknownTransform(alloc::string::String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: "must be finite and strictly positive" })
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
