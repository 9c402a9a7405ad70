//! Exploration sessions: an anchor latent, a stack of applied edits, and
//! read-only renders with what-if overrides.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::bridge::{self, BridgeDescriptor, BridgeError, GeneratorBridge};
use crate::edit::{apply_edit_layerwise, DirectionSource, EditError, EditSpec, LayeredLatentState};
use crate::editset::{self, EditSetError};

/// Directions shared between sessions.
pub type SharedSource = Arc<dyn DirectionSource + Send + Sync>;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    EditSet(#[from] EditSetError),
    #[error("session has no basis or directions attached")]
    NoDirections,
    #[error("snapshot was taken against a different generator ({0})")]
    DescriptorMismatch(String),
    #[error("snapshot references directions {expected:?}, got {found:?}")]
    SourceMismatch { expected: Option<String>, found: Option<String> },
    #[error("unknown session {0}")]
    NotFound(Uuid),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

/// An image and its `[C, H, W]` dims.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RenderedImage {
    pub fn to_tensor(&self) -> crate::tensor::TensorBlock {
        crate::tensor::TensorBlock::from_f64(self.dims.clone(), &self.data).expect("dims match data")
    }

    /// 8-bit PNG with `[-1, 1]` mapped linearly onto `[0, 255]`.
    pub fn to_png(&self) -> Vec<u8> {
        encode_png(&self.data, &self.dims)
    }
}

/// Encodes a `[C, H, W]` image (C = 1 or 3) as PNG, clamping to `[-1, 1]`.
pub fn encode_png(data: &[f64], dims: &[usize]) -> Vec<u8> {
    use image::{ColorType, ImageEncoder};
    let (c, h, w) = match dims {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        _ => panic!("image dims must be [C, H, W] or [H, W], got {dims:?}"),
    };
    assert!(c == 1 || c == 3, "PNG export needs 1 or 3 channels, got {c}");
    let plane = h * w;
    let mut pixels = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            let v = data[ch * plane + p].clamp(-1.0, 1.0);
            pixels.push(((v + 1.0) * 127.5).round() as u8);
        }
    }
    let color = if c == 3 { ColorType::Rgb8 } else { ColorType::L8 };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&pixels, w as u32, h as u32, color.into())
        .expect("in-memory PNG encoding");
    out
}

/// Serializable session state. Restoring recomputes the anchor from its
/// seed and replays `edits`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSnapshot {
    pub id: Uuid,
    pub descriptor_hash: String,
    pub anchor_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<String>,
    pub edits: Vec<serde_json::Value>,
}

pub struct Session {
    id: Uuid,
    bridge: Arc<dyn GeneratorBridge>,
    descriptor: BridgeDescriptor,
    anchor_seed: u64,
    anchor: LayeredLatentState,
    source: Option<(String, SharedSource)>,
    edits: Vec<EditSpec>,
    current: LayeredLatentState,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("anchor_seed", &self.anchor_seed)
            .field("directions", &self.source.as_ref().map(|s| &s.0))
            .field("edits", &self.edits)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Starts at the unedited state for latent 0 of `anchor_seed`.
    pub fn new(
        bridge: Arc<dyn GeneratorBridge>,
        source: Option<(String, SharedSource)>,
        anchor_seed: u64,
    ) -> Result<Self, SessionError> {
        let descriptor = bridge::bridge_handshake(bridge.as_ref())?;
        let z = bridge
            .sample(1, anchor_seed, 0)?
            .pop()
            .ok_or_else(|| BridgeError::Protocol("sample returned nothing".into()))?;
        let anchor = bridge::initial_state(bridge.as_ref(), &descriptor, &z)?;
        Ok(Self {
            id: Uuid::new_v4(),
            bridge,
            descriptor,
            anchor_seed,
            current: anchor.clone(),
            anchor,
            source,
            edits: Vec::new(),
        })
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn descriptor(&self) -> &BridgeDescriptor {
        &self.descriptor
    }

    pub fn anchor_seed(&self) -> u64 {
        self.anchor_seed
    }

    pub fn anchor(&self) -> &LayeredLatentState {
        &self.anchor
    }

    pub fn state(&self) -> &LayeredLatentState {
        &self.current
    }

    pub fn edits(&self) -> &[EditSpec] {
        &self.edits
    }

    pub fn directions_ref(&self) -> Option<&str> {
        self.source.as_ref().map(|s| s.0.as_str())
    }

    pub fn source(&self) -> Option<&SharedSource> {
        self.source.as_ref().map(|s| &s.1)
    }

    fn apply(&self, state: &LayeredLatentState, spec: &EditSpec) -> Result<LayeredLatentState, SessionError> {
        let source = self.source().ok_or(SessionError::NoDirections)?;
        Ok(apply_edit_layerwise(state, spec, source.as_ref(), None)?)
    }

    /// Current state with `overrides` applied on top; the session is untouched.
    pub fn preview(&self, overrides: &[EditSpec]) -> Result<LayeredLatentState, SessionError> {
        overrides
            .iter()
            .try_fold(self.current.clone(), |s, spec| self.apply(&s, spec))
    }

    /// Renders the current state plus `overrides` without changing the session.
    pub fn render(&self, overrides: &[EditSpec]) -> Result<RenderedImage, SessionError> {
        let state = self.preview(overrides)?;
        let data = self.bridge.synthesize(&state)?;
        Ok(RenderedImage {
            dims: self.descriptor.image_dims.clone(),
            data,
        })
    }

    /// Renders, and when `commit` is set also pushes `overrides` onto the stack.
    pub fn render_and_commit(&mut self, overrides: &[EditSpec], commit: bool) -> Result<RenderedImage, SessionError> {
        let image = self.render(overrides)?;
        if commit {
            self.push_edits(overrides)?;
        }
        Ok(image)
    }

    pub fn push_edit(&mut self, spec: EditSpec) -> Result<(), SessionError> {
        self.current = self.apply(&self.current, &spec)?;
        self.edits.push(spec);
        Ok(())
    }

    /// Applies all of `specs` or none of them.
    pub fn push_edits(&mut self, specs: &[EditSpec]) -> Result<(), SessionError> {
        let next = self.preview(specs)?;
        self.current = next;
        self.edits.extend_from_slice(specs);
        Ok(())
    }

    pub fn pop_edit(&mut self) -> Result<Option<EditSpec>, SessionError> {
        let popped = self.edits.pop();
        if popped.is_some() {
            self.current = self.replay()?;
        }
        Ok(popped)
    }

    pub fn clear_edits(&mut self) {
        self.edits.clear();
        self.current = self.anchor.clone();
    }

    /// Rebuilds the current state from the anchor and the edit stack.
    pub fn replay(&self) -> Result<LayeredLatentState, SessionError> {
        self.edits
            .iter()
            .try_fold(self.anchor.clone(), |s, spec| self.apply(&s, spec))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id,
            descriptor_hash: self.descriptor.hash(),
            anchor_seed: self.anchor_seed,
            directions: self.directions_ref().map(str::to_string),
            edits: self.edits.iter().map(editset::spec_to_json).collect(),
        }
    }

    /// Rebuilds a session from a snapshot against the same generator and
    /// directions.
    pub fn restore(
        snapshot: &SessionSnapshot,
        bridge: Arc<dyn GeneratorBridge>,
        source: Option<(String, SharedSource)>,
    ) -> Result<Self, SessionError> {
        let found = source.as_ref().map(|s| s.0.clone());
        if found != snapshot.directions {
            return Err(SessionError::SourceMismatch {
                expected: snapshot.directions.clone(),
                found,
            });
        }
        let mut s = Self::new(bridge, source, snapshot.anchor_seed)?;
        if s.descriptor.hash() != snapshot.descriptor_hash {
            return Err(SessionError::DescriptorMismatch(snapshot.descriptor_hash.clone()));
        }
        s.id = snapshot.id;
        for (i, v) in snapshot.edits.iter().enumerate() {
            let spec = editset::spec_from_json(v.clone())
                .map_err(|e| SessionError::Malformed(format!("edit {i}: {e}")))?;
            s.push_edit(spec)?;
        }
        Ok(s)
    }
}

/// Sessions keyed by id. Each session admits parallel renders and one writer.
#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<Uuid, Arc<RwLock<Session>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, session: Session) -> Uuid {
        let id = session.id();
        self.sessions.write().insert(id, Arc::new(RwLock::new(session)));
        id
    }

    pub fn get(&self, id: Uuid) -> Result<Arc<RwLock<Session>>, SessionError> {
        self.sessions.read().get(&id).cloned().ok_or(SessionError::NotFound(id))
    }

    pub fn remove(&self, id: Uuid) -> Result<(), SessionError> {
        self.sessions
            .write()
            .remove(&id)
            .map(|_| ())
            .ok_or(SessionError::NotFound(id))
    }

    pub fn ids(&self) -> Vec<Uuid> {
        let mut ids: Vec<Uuid> = self.sessions.read().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
