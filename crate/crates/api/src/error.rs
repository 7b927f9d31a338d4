use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use swaas_sim::SimError;

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("simulation driver has stopped")]
    DriverGone,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::DriverGone => "Unavailable",
            ApiError::Sim(e) => match e {
                SimError::InvalidScenario(_) => "InvalidScenario",
                SimError::InvalidCommand(_) => "InvalidCommand",
                SimError::UnknownTemplate(_) => "UnknownTemplate",
                SimError::UnknownInstance(_) => "UnknownInstance",
                SimError::UnknownProvider(_) => "UnknownProvider",
                SimError::InvalidOverride(_) => "InvalidOverride",
                SimError::TimeRegression { .. } => "TimeRegression",
                _ => "SimulationError",
            },
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::DriverGone => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Sim(SimError::UnknownTemplate(_) | SimError::UnknownInstance(_) | SimError::UnknownProvider(_)) => {
                StatusCode::NOT_FOUND
            }
            ApiError::Sim(e) if e.is_validation() => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Sim(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: self.code().to_string(), message: self.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
