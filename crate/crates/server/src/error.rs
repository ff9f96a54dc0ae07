use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use yesno_core::Error as CoreError;

use crate::store::QuestionView;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session not found")]
    NotFound,
    #[error("{message}")]
    Conflict {
        message: String,
        question: Option<QuestionView>,
    },
    #[error("{message}")]
    Validation {
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn validation(message: impl Into<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            line: None,
            column: None,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CoreError> for ServiceError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parse { line, column, message } => ServiceError::Validation {
                message,
                line: Some(line),
                column: Some(column),
            },
            CoreError::Io(e) => ServiceError::Internal(e.to_string()),
            CoreError::Csv(e) => ServiceError::Internal(e.to_string()),
            other => ServiceError::validation(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        let mut body = json!({ "error": self.to_string() });
        match self {
            ServiceError::Conflict { question, .. } => {
                body["question"] = serde_json::to_value(question).unwrap_or_default();
            }
            ServiceError::Validation { line, column, .. } => {
                if let (Some(l), Some(c)) = (line, column) {
                    body["line"] = l.into();
                    body["column"] = c.into();
                }
            }
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}
