use crate::client::GatewayError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NETWORK: i32 = 3;
    pub const NOT_FOUND: i32 = 4;
    pub const CHECKSUM: i32 = 5;
    pub const REJECTED: i32 = 6;
    pub const JOB_FAILED: i32 = 7;
    pub const PORT_IN_USE: i32 = 12;
    pub const CATALOG_UNAVAILABLE: i32 = 13;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Checksum(String),
    #[error("{0}")]
    Rejected(String),
    #[error("{0}")]
    JobFailed(String),
    #[error("{0}")]
    PortInUse(String),
    #[error("{0}")]
    CatalogUnavailable(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Network(_) => exit::NETWORK,
            CliError::NotFound(_) => exit::NOT_FOUND,
            CliError::Checksum(_) => exit::CHECKSUM,
            CliError::Rejected(_) => exit::REJECTED,
            CliError::JobFailed(_) => exit::JOB_FAILED,
            CliError::PortInUse(_) => exit::PORT_IN_USE,
            CliError::CatalogUnavailable(_) => exit::CATALOG_UNAVAILABLE,
            CliError::Other(_) => exit::FAILURE,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        let msg = e.to_string();
        match e {
            GatewayError::Network { .. } => CliError::Network(msg),
            GatewayError::Api { status, .. } => match status {
                404 => CliError::NotFound(msg),
                503 => CliError::CatalogUnavailable(msg),
                502 => CliError::Network(msg),
                400..=499 => CliError::Rejected(msg),
                _ => CliError::Other(msg),
            },
            GatewayError::Decode(_) => CliError::Other(msg),
        }
    }
}
