use std::fmt;

use thiserror::Error;

/// Which configured limit a search ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Plans,
    SimpleExpressions,
    Partitions,
    ExecutionSets,
    LinearExtensions,
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Resource::Plans => "plans",
            Resource::SimpleExpressions => "simple expressions",
            Resource::Partitions => "set partitions",
            Resource::ExecutionSets => "execution sets",
            Resource::LinearExtensions => "linear extensions",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (plan domain mismatch,
    /// scope outside a plan, wrong constraint type, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("unsupported relation `{relation}`: {context}")]
    UnsupportedRelation { relation: String, context: String },

    #[error("resource limit: {requested} {resource} exceeds the cap of {cap}")]
    ResourceLimit {
        resource: Resource,
        requested: u128,
        cap: u128,
    },

    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSchema(msg.into())
}
