use thiserror::Error;

use apc_core::cloud::CloudError;
use apc_core::estimator::EstimatorError;
use apc_core::evalproto::EvalError;
use apc_core::icp::IcpError;
use apc_core::kinematics::KinematicError;
use apc_core::synthdata::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadArgs(String),
    #[error("{0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::BadArgs(_) => 2,
            CliError::Io(_) => 3,
            CliError::Verify(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("malformed JSON: {e}"))
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(_) | SynthError::Json(_) | SynthError::Malformed(_) => CliError::Io(e.to_string()),
            SynthError::InvalidSettings(_) => CliError::BadArgs(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidConfig(_) => CliError::BadArgs(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) | EvalError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<IcpError> for CliError {
    fn from(e: IcpError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<KinematicError> for CliError {
    fn from(e: KinematicError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        CliError::Other(e.to_string())
    }
}
