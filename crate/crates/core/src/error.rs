use thiserror::Error;

pub type Result<T> = std::result::Result<T, QpdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpdError {
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("empty decomposition: at least one local QPD is required")]
    EmptyDecomposition,

    #[error("configuration has length {got}, expected {expected}")]
    ConfigurationLength { expected: usize, got: usize },

    #[error("local index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },

    #[error("configuration hits a zero-coefficient primitive at position {position}")]
    ZeroMassConfiguration { position: usize },

    #[error("state count {required} exceeds the configured cap of {cap} states")]
    ResourceLimit { required: u128, cap: u128 },

    #[error("integer overflow while counting states for nu={nu}, d={d}")]
    CountOverflow { nu: usize, d: usize },

    #[error("stratum {0:?} has zero probability")]
    EmptyStratum(Vec<u32>),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("allocation plan does not match the stratification: {0}")]
    PlanMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("enumeration of {required} configurations exceeds the cap of {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("degenerate angle grid: {0}")]
    DegenerateGrid(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for QpdError {
    fn from(err: serde_json::Error) -> Self {
        QpdError::Serialization(err.to_string())
    }
}
