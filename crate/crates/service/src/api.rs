//! Session API consumed by the exploration UI.
//!
//! - `POST /v1/sessions` with `{"anchor_seed": 3}` or `{"snapshot": {...}}`;
//!   `GET /v1/sessions`; `GET`/`DELETE /v1/sessions/{id}`
//! - `GET`/`POST`/`DELETE /v1/sessions/{id}/edits` read, push or pop the stack
//! - `GET`/`POST /v1/sessions/{id}/render` with
//!   `{"overrides": [...], "commit": false}`; PNG for `?format=png` or
//!   `Accept: image/png`, GSPC otherwise
//! - `GET /v1/components` basis metadata
//! - `GET /v1/editsets`, `GET`/`PUT /v1/editsets/{name}`

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header::{ACCEPT, CONTENT_TYPE};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use layerpca::bridge::{bridge_handshake, BridgeDescriptor, GeneratorBridge};
use layerpca::directions::PrincipalDirections;
use layerpca::edit::EditSpec;
use layerpca::editset::{self, EditSet};
use layerpca::pca::PrincipalBasis;
use layerpca::session::{RenderedImage, Session, SessionSnapshot, SessionStore, SharedSource};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::bridge_server::bridge_routes;
use crate::error::ApiError;
use crate::wire::GSPC_MIME;

/// Metadata served at `/v1/components`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentsInfo {
    pub kind: String,
    pub reference: String,
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// `λ_k` for PCA bases; absent for regressed directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<f64>>,
    pub names: Vec<String>,
}

/// A basis or directions file loaded for editing.
#[derive(Clone)]
pub struct LoadedDirections {
    pub reference: String,
    pub source: SharedSource,
    pub info: ComponentsInfo,
}

impl LoadedDirections {
    pub fn from_basis(reference: impl Into<String>, basis: PrincipalBasis) -> Self {
        let reference = reference.into();
        let info = ComponentsInfo {
            kind: "basis".into(),
            reference: reference.clone(),
            dim: basis.dim(),
            k: basis.k(),
            variances: Some(basis.variances().to_vec()),
            names: (0..basis.k()).map(|k| format!("v{k}")).collect(),
        };
        Self {
            reference,
            source: Arc::new(basis),
            info,
        }
    }

    pub fn from_directions(reference: impl Into<String>, dirs: PrincipalDirections) -> Self {
        let reference = reference.into();
        let info = ComponentsInfo {
            kind: "directions".into(),
            reference: reference.clone(),
            dim: dirs.dim(),
            k: dirs.k(),
            variances: None,
            names: (0..dirs.k()).map(|k| format!("u{k}")).collect(),
        };
        Self {
            reference,
            source: Arc::new(dirs),
            info,
        }
    }

    /// Loads a basis archive, or a directions file when the sidecar is not a
    /// basis sidecar.
    pub fn load(path: &FsPath) -> Result<Self, String> {
        let reference = path.display().to_string();
        match PrincipalBasis::load(path) {
            Ok((basis, _)) => Ok(Self::from_basis(reference, basis)),
            Err(basis_err) => match PrincipalDirections::load(path) {
                Ok((dirs, _)) => Ok(Self::from_directions(reference, dirs)),
                Err(dir_err) => Err(format!(
                    "{reference} is neither a basis ({basis_err}) nor directions ({dir_err})"
                )),
            },
        }
    }
}

pub struct AppState {
    bridge: Arc<dyn GeneratorBridge>,
    descriptor: BridgeDescriptor,
    sessions: SessionStore,
    directions: Option<LoadedDirections>,
    editsets: RwLock<BTreeMap<String, EditSet>>,
    editset_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        bridge: Arc<dyn GeneratorBridge>,
        directions: Option<LoadedDirections>,
        editset_dir: Option<PathBuf>,
    ) -> Result<Self, ApiError> {
        let descriptor = bridge_handshake(bridge.as_ref())?;
        if let Some(d) = &directions {
            if d.source.dim() != descriptor.state_dim() {
                return Err(ApiError::bad_request(format!(
                    "{} has dimension {}, generator latent inputs have {}",
                    d.reference,
                    d.source.dim(),
                    descriptor.state_dim()
                )));
            }
        }
        let mut editsets = BTreeMap::new();
        if let Some(dir) = &editset_dir {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::bad_request(e.to_string()))?;
            for entry in std::fs::read_dir(dir).map_err(|e| ApiError::bad_request(e.to_string()))? {
                let path = entry.map_err(|e| ApiError::bad_request(e.to_string()))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let name = path.file_stem().expect("has extension").to_string_lossy().to_string();
                    editsets.insert(name, editset::load_edit_set(&path)?);
                }
            }
        }
        Ok(Self {
            bridge,
            descriptor,
            sessions: SessionStore::new(),
            directions,
            editsets: RwLock::new(editsets),
            editset_dir,
        })
    }

    pub fn descriptor(&self) -> &BridgeDescriptor {
        &self.descriptor
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn source(&self) -> Option<(String, SharedSource)> {
        self.directions.as_ref().map(|d| (d.reference.clone(), d.source.clone()))
    }
}

type Shared = Arc<AppState>;

/// Session API merged with the bridge protocol for the same generator.
pub fn service_router(state: AppState) -> Result<Router, ApiError> {
    let bridge = state.bridge.clone();
    let api = Router::new()
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/edits", get(get_edits).post(push_edits).delete(pop_edit))
        .route("/v1/sessions/{id}/render", get(render_get).post(render_post))
        .route("/v1/components", get(components))
        .route("/v1/editsets", get(list_editsets))
        .route("/v1/editsets/{name}", get(get_editset).put(put_editset))
        .with_state(Arc::new(state));
    Ok(api.merge(bridge_routes(bridge)?))
}

fn parse_id(id: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(id).map_err(|_| ApiError::not_found(format!("unknown session {id}")))
}

fn parse_json(body: &[u8]) -> Result<Value, ApiError> {
    if body.is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))
}

fn parse_specs(v: Value) -> Result<Vec<EditSpec>, ApiError> {
    let items = match v {
        Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            editset::spec_from_json(item).map_err(|e| {
                let mut err: ApiError = e.into();
                err.pointer = Some(format!("/{i}{}", err.pointer.unwrap_or_default()));
                err
            })
        })
        .collect()
}

fn stack_json(s: &Session) -> Value {
    json!({ "edits": s.edits().iter().map(editset::spec_to_json).collect::<Vec<_>>() })
}

async fn list_sessions(State(app): State<Shared>) -> Json<Value> {
    Json(json!({ "sessions": app.sessions.ids() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    anchor_seed: u64,
    #[serde(default)]
    snapshot: Option<SessionSnapshot>,
}

async fn create_session(State(app): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = serde_json::from_value(parse_json(&body)?)
        .map_err(|e| ApiError::bad_request(format!("invalid session request: {e}")))?;
    let snapshot = tokio::task::spawn_blocking(move || -> Result<SessionSnapshot, ApiError> {
        let session = match &req.snapshot {
            Some(snap) => Session::restore(snap, app.bridge.clone(), app.source())?,
            None => Session::new(app.bridge.clone(), app.source(), req.anchor_seed)?,
        };
        let snap = session.snapshot();
        app.sessions.insert(session);
        Ok(snap)
    })
    .await??;
    Ok((StatusCode::CREATED, Json(snapshot)).into_response())
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    let s = app.sessions.get(parse_id(&id)?)?;
    let snap = s.read().snapshot();
    Ok(Json(snap))
}

async fn delete_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    app.sessions.remove(parse_id(&id)?)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_edits(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = app.sessions.get(parse_id(&id)?)?;
    let body = stack_json(&s.read());
    Ok(Json(body))
}

async fn push_edits(State(app): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let specs = parse_specs(parse_json(&body)?)?;
    let s = app.sessions.get(parse_id(&id)?)?;
    let out = tokio::task::spawn_blocking(move || -> Result<Value, ApiError> {
        let mut guard = s.write();
        guard.push_edits(&specs)?;
        Ok(stack_json(&guard))
    })
    .await??;
    Ok(Json(out))
}

async fn pop_edit(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = app.sessions.get(parse_id(&id)?)?;
    let out = tokio::task::spawn_blocking(move || -> Result<Value, ApiError> {
        let mut guard = s.write();
        guard.pop_edit()?;
        Ok(stack_json(&guard))
    })
    .await??;
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
struct RenderQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    #[serde(default)]
    overrides: Vec<Value>,
    #[serde(default)]
    commit: bool,
}

fn wants_png(q: &RenderQuery, headers: &HeaderMap) -> Result<bool, ApiError> {
    match q.format.as_deref() {
        Some("png") => return Ok(true),
        Some("gspc") => return Ok(false),
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}"))),
        None => {}
    }
    Ok(headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|a| a.contains("image/png")))
}

fn image_response(img: RenderedImage, png: bool) -> Result<Response, ApiError> {
    if png {
        return Ok(([(CONTENT_TYPE, "image/png")], img.to_png()).into_response());
    }
    let bytes = img
        .to_tensor()
        .to_bytes()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(CONTENT_TYPE, GSPC_MIME)], bytes).into_response())
}

async fn render(app: Shared, id: String, req: RenderRequest, png: bool) -> Result<Response, ApiError> {
    let overrides = parse_specs(Value::Array(req.overrides))?;
    let s = app.sessions.get(parse_id(&id)?)?;
    let img = tokio::task::spawn_blocking(move || -> Result<RenderedImage, ApiError> {
        if req.commit {
            Ok(s.write().render_and_commit(&overrides, true)?)
        } else {
            Ok(s.read().render(&overrides)?)
        }
    })
    .await??;
    image_response(img, png)
}

async fn render_get(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let png = wants_png(&q, &headers)?;
    render(app, id, RenderRequest::default(), png).await
}

async fn render_post(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let png = wants_png(&q, &headers)?;
    let req: RenderRequest = serde_json::from_value(parse_json(&body)?)
        .map_err(|e| ApiError::bad_request(format!("invalid render request: {e}")))?;
    render(app, id, req, png).await
}

async fn components(State(app): State<Shared>) -> Result<Json<ComponentsInfo>, ApiError> {
    let d = app
        .directions
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no basis or directions loaded"))?;
    let mut info = d.info.clone();
    // Names saved in edit sets label their components.
    for set in app.editsets.read().values() {
        for e in &set.edits {
            if e.component < info.k && !e.name.is_empty() {
                info.names[e.component] = e.name.clone();
            }
        }
    }
    Ok(Json(info))
}

async fn list_editsets(State(app): State<Shared>) -> Json<Value> {
    Json(json!({ "editsets": app.editsets.read().keys().collect::<Vec<_>>() }))
}

async fn get_editset(State(app): State<Shared>, Path(name): Path<String>) -> Result<Response, ApiError> {
    let sets = app.editsets.read();
    let set = sets
        .get(&name)
        .ok_or_else(|| ApiError::not_found(format!("no edit set named {name:?}")))?;
    Ok(([(CONTENT_TYPE, "application/json")], set.to_json()).into_response())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn put_editset(State(app): State<Shared>, Path(name): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    if !valid_name(&name) {
        return Err(ApiError::bad_request("edit set names use letters, digits, '-' and '_'"));
    }
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let set = EditSet::from_json(text)?;
    if let Some(d) = &app.directions {
        set.check(&app.descriptor, d.source.as_ref())?;
    }
    if let Some(dir) = &app.editset_dir {
        editset::save_edit_set(&set, &dir.join(format!("{name}.json")))?;
    }
    app.editsets.write().insert(name, set);
    Ok(StatusCode::NO_CONTENT.into_response())
}

/// Binds `addr` and serves `router` until the process exits.
pub async fn serve(router: Router, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router).await
}
