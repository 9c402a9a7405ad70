use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use layerpca::bridge::BridgeError;
use layerpca::editset::EditSetError;
use layerpca::session::SessionError;
use serde_json::json;

use crate::wire::WireError;

/// JSON error body: `{"error": "...", "pointer": "/edits/0/layer_end"}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub pointer: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            pointer: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.pointer {
            Some(p) => write!(f, "{} at {p}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(p) = self.pointer {
            body["pointer"] = p.into();
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<WireError> for ApiError {
    fn from(e: WireError) -> Self {
        Self::bad_request(e.0)
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        let status = match e {
            BridgeError::Generator(_) | BridgeError::Unsupported(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<EditSetError> for ApiError {
    fn from(e: EditSetError) -> Self {
        let pointer = e.pointer().map(str::to_string);
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: e.to_string(),
            pointer,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => Self::not_found(e.to_string()),
            SessionError::Bridge(b) => b.into(),
            SessionError::EditSet(s) => s.into(),
            SessionError::Edit(_) | SessionError::NoDirections => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}
