//! Serves any [`GeneratorBridge`] over the HTTP bridge protocol.
//!
//! | route | body | response |
//! |---|---|---|
//! | `GET`/`POST /v1/descriptor` | none | descriptor JSON |
//! | `POST /v1/sample?n&seed&start` | none | `[n, d_z]` |
//! | `POST /v1/map` | `[n, d_z]` | `[n, d_w]` |
//! | `POST /v1/features?layer&tap` | states | `[n, len]` |
//! | `POST /v1/synthesize` | one state or a batch | image or `[n, C, H, W]` |
//! | `POST /v1/capture` | one state | archive of `2L + 1` tensors |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderName, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use layerpca::bridge::{bridge_handshake, BridgeDescriptor, GeneratorBridge, PROTOCOL_VERSION};
use layerpca::tensor::TensorBlock;
use layerpca::toy::Tap;
use serde::Deserialize;

use crate::error::ApiError;
use crate::wire::{self, COUNT_HEADER, GSPC_MIME, PROTOCOL_HEADER};

#[derive(Clone)]
struct BridgeState {
    bridge: Arc<dyn GeneratorBridge>,
    descriptor: Arc<BridgeDescriptor>,
}

fn headers(content_type: &'static str) -> [(HeaderName, HeaderValue); 2] {
    [
        (CONTENT_TYPE, HeaderValue::from_static(content_type)),
        (HeaderName::from_static(PROTOCOL_HEADER), HeaderValue::from(PROTOCOL_VERSION)),
    ]
}

fn gspc(bytes: Vec<u8>) -> Response {
    (headers(GSPC_MIME), bytes).into_response()
}

/// Routes for the bridge protocol, backed by `bridge`.
pub fn bridge_routes(bridge: Arc<dyn GeneratorBridge>) -> Result<Router, ApiError> {
    let descriptor = Arc::new(bridge_handshake(bridge.as_ref())?);
    let state = BridgeState { bridge, descriptor };
    Ok(Router::new()
        .route("/v1/descriptor", get(describe).post(describe))
        .route("/v1/sample", post(sample))
        .route("/v1/map", post(map))
        .route("/v1/features", post(features))
        .route("/v1/synthesize", post(synthesize))
        .route("/v1/capture", post(capture))
        .with_state(state))
}

async fn describe(State(s): State<BridgeState>) -> Response {
    (headers("application/json"), s.descriptor.to_json()).into_response()
}

#[derive(Deserialize)]
struct SampleQuery {
    n: usize,
    seed: u64,
    #[serde(default)]
    start: u64,
}

async fn sample(State(s): State<BridgeState>, Query(q): Query<SampleQuery>) -> Result<Response, ApiError> {
    let rows = tokio::task::spawn_blocking(move || s.bridge.sample(q.n, q.seed, q.start)).await??;
    Ok(gspc(wire::rows_to_bytes(&rows)?))
}

async fn map(State(s): State<BridgeState>, body: Bytes) -> Result<Response, ApiError> {
    let z = wire::rows_from_bytes(&body)?;
    let w = tokio::task::spawn_blocking(move || s.bridge.map(&z)).await??;
    Ok(gspc(wire::rows_to_bytes(&w)?))
}

#[derive(Deserialize)]
struct FeatureQuery {
    layer: usize,
    #[serde(default)]
    tap: Tap,
}

async fn features(
    State(s): State<BridgeState>,
    Query(q): Query<FeatureQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let states = wire::states_from_bytes(&body, &s.descriptor)?;
    let rows = tokio::task::spawn_blocking(move || s.bridge.features(&states, q.layer, q.tap)).await??;
    Ok(gspc(wire::rows_to_bytes(&rows)?))
}

async fn synthesize(State(s): State<BridgeState>, body: Bytes) -> Result<Response, ApiError> {
    let single = TensorBlock::from_bytes(&body).map(|t| t.dims().len() == 2).unwrap_or(false);
    let states = wire::states_from_bytes(&body, &s.descriptor)?;
    let dims = s.descriptor.image_dims.clone();
    let images = tokio::task::spawn_blocking(move || {
        states.iter().map(|st| s.bridge.synthesize(st)).collect::<Result<Vec<_>, _>>()
    })
    .await??;
    let tensor = if single {
        TensorBlock::from_f64(dims, &images[0])
    } else {
        let mut all_dims = vec![images.len()];
        all_dims.extend(dims);
        TensorBlock::from_f64(all_dims, &images.concat())
    }
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(gspc(tensor.to_bytes().map_err(|e| ApiError::bad_request(e.to_string()))?))
}

async fn capture(State(s): State<BridgeState>, body: Bytes) -> Result<Response, ApiError> {
    let mut states = wire::states_from_bytes(&body, &s.descriptor)?;
    if states.len() != 1 {
        return Err(ApiError::bad_request("capture takes exactly one state"));
    }
    let state = states.pop().expect("one state");
    let cap = tokio::task::spawn_blocking(move || s.bridge.capture(&state)).await??;
    let count = (2 * cap.layer_shapes.len() + 1).to_string();
    let mut resp = gspc(wire::capture_to_bytes(&cap)?);
    resp.headers_mut()
        .insert(COUNT_HEADER, count.parse().expect("digits are a valid header"));
    Ok(resp)
}
