use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure classes shared by the services, their HTTP surface and the CLI.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("trust: {0}")]
    Trust(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("cannot decode input: {0}")]
    Input(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("network: {0}")]
    Network(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// JSON body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Trust(_) => "trust",
            Self::AccessDenied(_) => "access_denied",
            Self::NotFound(_) => "not_found",
            Self::BadRequest(_) => "bad_request",
            Self::Input(_) => "input",
            Self::Conflict(_) => "conflict",
            Self::Network(_) => "network",
            Self::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::Trust(_) => StatusCode::UNAUTHORIZED,
            Self::AccessDenied(_) => StatusCode::FORBIDDEN,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Input(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Network(_) => StatusCode::BAD_GATEWAY,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn message(&self) -> String {
        match self {
            Self::Trust(m)
            | Self::AccessDenied(m)
            | Self::NotFound(m)
            | Self::BadRequest(m)
            | Self::Input(m)
            | Self::Conflict(m)
            | Self::Network(m)
            | Self::Internal(m) => m.clone(),
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.message(),
        }
    }

    /// Rebuilds the error a remote service reported.
    pub fn from_body(status: StatusCode, body: &[u8]) -> Self {
        let parsed: Option<ErrorBody> = serde_json::from_slice(body).ok();
        let (code, message) = match parsed {
            Some(b) => (b.error, b.message),
            None => (String::new(), format!("HTTP {status}: {}", String::from_utf8_lossy(body))),
        };
        match code.as_str() {
            "trust" => Self::Trust(message),
            "access_denied" => Self::AccessDenied(message),
            "not_found" => Self::NotFound(message),
            "bad_request" => Self::BadRequest(message),
            "input" => Self::Input(message),
            "conflict" => Self::Conflict(message),
            "network" => Self::Network(message),
            "internal" => Self::Internal(message),
            _ => match status {
                StatusCode::NOT_FOUND => Self::NotFound(message),
                StatusCode::FORBIDDEN => Self::AccessDenied(message),
                StatusCode::UNAUTHORIZED => Self::Trust(message),
                s if s.is_client_error() => Self::BadRequest(message),
                _ => Self::Internal(message),
            },
        }
    }
}

impl From<cbir_core::protocol::VerifyError> for ServiceError {
    fn from(e: cbir_core::protocol::VerifyError) -> Self {
        Self::Trust(e.to_string())
    }
}

impl From<cbir_core::protocol::ProtocolError> for ServiceError {
    fn from(e: cbir_core::protocol::ProtocolError) -> Self {
        Self::BadRequest(e.to_string())
    }
}

impl From<cbir_core::imaging::ImageError> for ServiceError {
    fn from(e: cbir_core::imaging::ImageError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<cbir_core::index::IndexError> for ServiceError {
    fn from(e: cbir_core::index::IndexError) -> Self {
        use cbir_core::index::IndexError;
        match e {
            IndexError::InvalidK | IndexError::Comparison(_) | IndexError::InvalidShard { .. } => {
                Self::BadRequest(e.to_string())
            }
            IndexError::Snapshot(_) | IndexError::Io(_) => Self::Internal(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_round_trip_preserves_class() {
        for e in [
            ServiceError::Trust("t".into()),
            ServiceError::AccessDenied("a".into()),
            ServiceError::NotFound("n".into()),
            ServiceError::BadRequest("b".into()),
            ServiceError::Input("i".into()),
            ServiceError::Conflict("c".into()),
            ServiceError::Network("w".into()),
            ServiceError::Internal("x".into()),
        ] {
            let body = serde_json::to_vec(&e.body()).unwrap();
            assert_eq!(ServiceError::from_body(e.status(), &body), e);
        }
    }

    #[test]
    fn unstructured_bodies_fall_back_to_status() {
        assert!(matches!(
            ServiceError::from_body(StatusCode::NOT_FOUND, b"nope"),
            ServiceError::NotFound(_)
        ));
        assert!(matches!(
            ServiceError::from_body(StatusCode::SERVICE_UNAVAILABLE, b""),
            ServiceError::Internal(_)
        ));
    }
}
