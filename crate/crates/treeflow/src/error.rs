use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group data: {0}")]
    InvalidGroup(String),
    #[error("element not reduced modulo the group factors")]
    UnreducedElement,
    #[error("generator images do not define an injective map: {0}")]
    NotInjective(String),
    #[error("enumeration cap exceeded (order {order} > cap {cap})")]
    EnumerationCap { order: u128, cap: u128 },
    #[error("invalid graph of groups: {0}")]
    InvalidLattice(String),
    #[error("degenerate lattice: {0}")]
    DegenerateLattice(String),
    #[error("parameter out of range: {0}")]
    BadParameter(String),
    #[error("config parse error: {0}")]
    Config(String),
    #[error("ray prefix too short, extend ray past the median of the endpoints")]
    ExtendRay,
    #[error("truncation too shallow for this request: {0}")]
    TruncationTooShallow(String),
    #[error("element mode unavailable here: {0}")]
    ElementMode(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
