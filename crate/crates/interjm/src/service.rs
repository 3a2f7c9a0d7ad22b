//! HTTP interface to the prediction engine.
//!
//! - `GET /models` lists the loaded models.
//! - `POST /models/{id}/predict` answers a [`PredictRequest`] with a
//!   [`PredictResponse`], exactly as `interjm predict --request` does.
//!
//! Errors are JSON documents `{"errors": [{"field", "message"}]}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use interjm_core::inference::FittedJointModel;
use interjm_core::model::{BaselineFamily, HistoryFilter};
use interjm_core::survival::AssociationForm;
use serde::{Deserialize, Serialize};

use crate::engine::{predict, FieldError, PredictError, PredictRequest};
use crate::error::{Error, Result};

/// Loaded models by id; immutable once the service starts.
pub type Models = BTreeMap<String, Arc<FittedJointModel>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub n_draws: usize,
    pub covariates: Vec<String>,
    pub fixed_effects: Vec<String>,
    pub association: AssociationForm,
    pub baseline: BaselineFamily,
    pub history: HistoryFilter,
    pub warnings: Vec<String>,
}

impl ModelSummary {
    pub fn new(id: &str, fitted: &FittedJointModel) -> Self {
        Self {
            id: id.into(),
            n_draws: fitted.n_draws(),
            covariates: fitted.covariate_names.clone(),
            fixed_effects: fitted.spec.trajectory.column_names(&fitted.covariate_names),
            association: fitted.spec.association.clone(),
            baseline: fitted.spec.baseline.clone(),
            history: fitted.spec.history,
            warnings: fitted.diagnostics.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub errors: Vec<FieldError>,
}

fn error_response(status: StatusCode, errors: Vec<FieldError>) -> Response {
    (status, Json(ErrorBody { errors })).into_response()
}

fn single(field: &str, message: String) -> Vec<FieldError> {
    vec![FieldError {
        field: field.into(),
        message,
    }]
}

async fn list_models(State(models): State<Arc<Models>>) -> Json<Vec<ModelSummary>> {
    Json(models.iter().map(|(id, m)| ModelSummary::new(id, m)).collect())
}

async fn predict_handler(State(models): State<Arc<Models>>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(fitted) = models.get(&id).cloned() else {
        return error_response(StatusCode::NOT_FOUND, single("id", format!("unknown model '{id}'")));
    };
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, single("body", e.to_string())),
    };
    let outcome = tokio::task::spawn_blocking(move || predict(&fitted, &id, &request)).await;
    match outcome {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(PredictError::Invalid(errors))) => error_response(StatusCode::UNPROCESSABLE_ENTITY, errors),
        Ok(Err(PredictError::Engine(e))) => {
            error_response(StatusCode::UNPROCESSABLE_ENTITY, single("request", e.to_string()))
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, single("request", e.to_string())),
    }
}

pub fn router(models: Models) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/models/{id}/predict", post(predict_handler))
        .with_state(Arc::new(models))
}

/// Serves until the process is stopped. `ready` receives the bound address.
pub async fn serve(addr: SocketAddr, models: Models, ready: impl FnOnce(SocketAddr)) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Usage(format!("cannot listen on {addr}: {e}")))?;
    let bound = listener
        .local_addr()
        .map_err(|e| Error::Usage(format!("cannot listen on {addr}: {e}")))?;
    ready(bound);
    axum::serve(listener, router(models))
        .await
        .map_err(|e| Error::Usage(format!("service stopped: {e}")))
}
