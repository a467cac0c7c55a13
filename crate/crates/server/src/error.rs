use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use projscope_core::Error;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    /// No projection (or clustering) fitted yet; `what` names the model.
    NoModel(&'static str),
    Stale {
        model: &'static str,
        model_revision: u64,
        view_revision: u64,
    },
    Engine(Error),
    Invalid(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Engine(e)
    }
}

fn engine_kind(e: &Error) -> &'static str {
    match e {
        Error::Structure { .. } => "structure",
        Error::EmptyInput => "empty_input",
        Error::Encoding(_) => "encoding",
        Error::DuplicateName(_) => "duplicate_name",
        Error::UnknownNames(_) => "unknown_names",
        Error::Parse(_) => "parse",
        Error::Type(_) => "type",
        Error::Dimension { .. } => "dimension",
        Error::InsufficientData(_) => "insufficient_data",
        Error::NonFinite => "non_finite",
        Error::Parameter(_) => "parameter",
        Error::Degenerate(_) => "degenerate",
        Error::DistanceMatrix(_) => "distance_matrix",
        Error::UndefinedTest(_) => "undefined_test",
        Error::Domain(_) => "domain",
        Error::Cancelled => "cancelled",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body): (StatusCode, Value) = match self {
            ApiError::NotFound(what) => (
                StatusCode::NOT_FOUND,
                json!({"error": "not_found", "message": what}),
            ),
            ApiError::NoModel(model) => (
                StatusCode::CONFLICT,
                json!({"reason": format!("no_{model}"), "hint": format!("POST /sessions/{{id}}/{model} first")}),
            ),
            ApiError::Stale {
                model,
                model_revision,
                view_revision,
            } => (
                StatusCode::CONFLICT,
                json!({
                    "reason": "stale_model",
                    "model": model,
                    "model_revision": model_revision,
                    "view_revision": view_revision,
                    "hint": format!("recompute via POST /sessions/{{id}}/{model}"),
                }),
            ),
            ApiError::Engine(Error::Cancelled) => (
                StatusCode::CONFLICT,
                json!({"reason": "cancelled"}),
            ),
            ApiError::Engine(Error::Parse(p)) => {
                let mut body = serde_json::to_value(&p).unwrap_or_default();
                body["error"] = json!("parse");
                (StatusCode::UNPROCESSABLE_ENTITY, body)
            }
            ApiError::Engine(e) => {
                let mut body = json!({"error": engine_kind(&e), "message": e.to_string()});
                if let Error::UnknownNames(names) = &e {
                    body["names"] = json!(names);
                }
                (StatusCode::UNPROCESSABLE_ENTITY, body)
            }
            ApiError::Invalid(message) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "invalid_request", "message": message}),
            ),
            ApiError::Internal(message) => {
                log::error!("internal error: {message}");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    json!({"error": "internal", "message": message}),
                )
            }
        };
        (status, Json(body)).into_response()
    }
}

/// JSON body extractor whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => Err(ApiError::Invalid(describe(rejection))),
        }
    }
}

fn describe(r: JsonRejection) -> String {
    r.body_text()
}
