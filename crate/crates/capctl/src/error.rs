use lidarcap::container::ContainerError;
use lidarcap::lidarcap_net::NetError;
use lidarcap::mocap_metrics::MetricsError;
use lidarcap::seqdata::SeqDataError;
use lidarcap::smpl_body::BodyModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Data(#[from] SeqDataError),
    #[error(transparent)]
    Model(#[from] BodyModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

impl CliError {
    /// Stable machine-readable category printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Model(_) | CliError::Container(_) => "model",
            CliError::Net(NetError::NonFinite(_)) => "numeric",
            CliError::Net(NetError::Checkpoint(_)) => "checkpoint",
            CliError::Net(NetError::InvalidConfig(_)) => "config",
            CliError::Net(_) => "model",
            CliError::Metrics(_) => "metrics",
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
