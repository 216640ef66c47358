use thiserror::Error;

/// Errors produced by the library.
///
/// The variants are grouped so that a front-end can map them onto distinct
/// exit statuses: invalid input, exceeded enumeration budgets, divergent
/// expansions and numerical breakdowns.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RgError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} needs {needed}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        needed: usize,
        cap: usize,
    },

    #[error("divergent expansion: {0}")]
    Divergent(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RgError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        RgError::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        RgError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, RgError>;

pub(crate) fn check_cap(what: &'static str, needed: usize, cap: usize) -> Result<()> {
    if needed > cap {
        Err(RgError::CapExceeded { what, needed, cap })
    } else {
        Ok(())
    }
}
