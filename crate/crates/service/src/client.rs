//! [`GeneratorBridge`] over HTTP.
//!
//! Tensors cross the wire as 32-bit floats, so values coming back through
//! this client are rounded to `f32` precision.

use std::sync::OnceLock;
use std::time::Duration;

use layerpca::bridge::{BridgeDescriptor, BridgeError, GeneratorBridge};
use layerpca::edit::LayeredLatentState;
use layerpca::tensor::TensorBlock;
use layerpca::toy::{FeatureCapture, Tap};
use reqwest::blocking::{Client, Response};

use crate::wire::{self, GSPC_MIME};

/// Blocking client for a bridge endpoint such as `http://127.0.0.1:8700`.
///
/// Construct and use it outside any async runtime.
pub struct HttpBridge {
    base: String,
    client: Client,
    descriptor: OnceLock<BridgeDescriptor>,
}

impl std::fmt::Debug for HttpBridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBridge").field("base", &self.base).finish()
    }
}

fn transport(e: reqwest::Error) -> BridgeError {
    BridgeError::Transport(e.to_string())
}

fn protocol(e: wire::WireError) -> BridgeError {
    BridgeError::Protocol(e.0)
}

impl HttpBridge {
    pub fn new(endpoint: &str) -> Result<Self, BridgeError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(transport)?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            descriptor: OnceLock::new(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn check(resp: Response) -> Result<Response, BridgeError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
            .unwrap_or(body);
        Err(BridgeError::Transport(format!("{status}: {message}")))
    }

    fn post(&self, path: &str, query: &[(&str, String)], body: Vec<u8>) -> Result<Vec<u8>, BridgeError> {
        let params: Vec<String> = query.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let url = if params.is_empty() {
            format!("{}{path}", self.base)
        } else {
            format!("{}{path}?{}", self.base, params.join("&"))
        };
        let resp = self
            .client
            .post(url)
            .header("content-type", GSPC_MIME)
            .body(body)
            .send()
            .map_err(transport)?;
        Ok(Self::check(resp)?.bytes().map_err(transport)?.to_vec())
    }

    fn descriptor(&self) -> Result<&BridgeDescriptor, BridgeError> {
        if let Some(d) = self.descriptor.get() {
            return Ok(d);
        }
        let d = BridgeDescriptor::parse(&self.descriptor_json()?)?;
        Ok(self.descriptor.get_or_init(|| d))
    }
}

impl GeneratorBridge for HttpBridge {
    fn descriptor_json(&self) -> Result<String, BridgeError> {
        let resp = self
            .client
            .get(format!("{}/v1/descriptor", self.base))
            .send()
            .map_err(transport)?;
        Self::check(resp)?.text().map_err(transport)
    }

    fn sample(&self, n: usize, seed: u64, start: u64) -> Result<Vec<Vec<f64>>, BridgeError> {
        let q = [("n", n.to_string()), ("seed", seed.to_string()), ("start", start.to_string())];
        let bytes = self.post("/v1/sample", &q, Vec::new())?;
        wire::rows_from_bytes(&bytes).map_err(protocol)
    }

    fn map(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BridgeError> {
        let body = wire::rows_to_bytes(latents).map_err(protocol)?;
        wire::rows_from_bytes(&self.post("/v1/map", &[], body)?).map_err(protocol)
    }

    fn features(&self, states: &[LayeredLatentState], layer: usize, tap: Tap) -> Result<Vec<Vec<f64>>, BridgeError> {
        let body = wire::states_to_bytes(states).map_err(protocol)?;
        let q = [("layer", layer.to_string()), ("tap", tap.to_string())];
        wire::rows_from_bytes(&self.post("/v1/features", &q, body)?).map_err(protocol)
    }

    fn synthesize(&self, state: &LayeredLatentState) -> Result<Vec<f64>, BridgeError> {
        let body = state.to_tensor().to_bytes().map_err(|e| BridgeError::Protocol(e.to_string()))?;
        let bytes = self.post("/v1/synthesize", &[], body)?;
        let t = TensorBlock::from_bytes(&bytes).map_err(|e| BridgeError::Protocol(e.to_string()))?;
        let expected = self.descriptor()?.image_len();
        if t.len() != expected {
            return Err(BridgeError::Protocol(format!("image has {} values, expected {expected}", t.len())));
        }
        Ok(t.to_f64())
    }

    fn capture(&self, state: &LayeredLatentState) -> Result<FeatureCapture, BridgeError> {
        let body = state.to_tensor().to_bytes().map_err(|e| BridgeError::Protocol(e.to_string()))?;
        let bytes = self.post("/v1/capture", &[], body)?;
        wire::capture_from_bytes(&bytes, self.descriptor()?).map_err(protocol)
    }
}
