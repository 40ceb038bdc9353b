use thiserror::Error;

use crate::Site;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArwError {
    #[error("stack index must be at least 1 (got {0})")]
    StackIndex(u64),

    #[error("cannot fire empty site {0}")]
    FireEmpty(Site),

    #[error("legal firing requires an active particle, site {0} holds a sleeping one")]
    FireSleeping(Site),

    #[error("site {0} lies outside the stabilization region")]
    OutsideRegion(Site),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("walker exceeded its step budget of {0}")]
    WalkerCap(u64),

    #[error("malformed line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T, E = ArwError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> ArwError {
    ArwError::InvalidParameter(msg.into())
}
