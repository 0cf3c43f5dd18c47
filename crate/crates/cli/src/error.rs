use cbir_bench::BenchError;
use cbir_services::ServiceError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NETWORK: u8 = 3;
pub const EXIT_NOT_FOUND: u8 = 4;
pub const EXIT_ACCESS_DENIED: u8 = 5;
pub const EXIT_INPUT: u8 = 6;

impl CliError {
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Service(e) => service_exit_code(e),
            Self::Bench(BenchError::Service(e)) => service_exit_code(e),
            Self::Bench(_) => EXIT_INPUT,
            Self::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_NOT_FOUND,
            Self::File { .. } => EXIT_OTHER,
        }
    }
}

pub fn service_exit_code(e: &ServiceError) -> u8 {
    match e {
        ServiceError::Network(_) => EXIT_NETWORK,
        ServiceError::NotFound(_) => EXIT_NOT_FOUND,
        ServiceError::AccessDenied(_) | ServiceError::Trust(_) => EXIT_ACCESS_DENIED,
        ServiceError::Input(_) | ServiceError::BadRequest(_) => EXIT_INPUT,
        ServiceError::Conflict(_) | ServiceError::Internal(_) => EXIT_OTHER,
    }
}
