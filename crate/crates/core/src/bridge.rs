//! Generator-bridge contract: what any layered generator must answer so the
//! analysis pipeline and sessions can drive it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact;
use crate::edit::{LatentSpace, LayeredLatentState};
use crate::toy::{self, FeatureCapture, GeneratorDescriptor, GeneratorError, Tap, ToyGenerator};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bridge speaks protocol version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("bridge transport failed: {0}")]
    Transport(String),
    #[error("bridge returned an unexpected payload: {0}")]
    Protocol(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Wire descriptor returned by `/v1/descriptor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeDescriptor {
    pub protocol_version: u32,
    pub family: LatentSpace,
    pub d_z: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_w: Option<usize>,
    #[serde(rename = "L")]
    pub layer_count: usize,
    pub layer_feature_dims: Vec<Vec<usize>>,
    pub image_dims: Vec<usize>,
    pub tap_points: Vec<Tap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<String>,
}

impl BridgeDescriptor {
    pub fn from_generator(g: &GeneratorDescriptor) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            family: g.family,
            d_z: g.latent_dim,
            d_w: g.style_dim,
            layer_count: g.layer_count,
            layer_feature_dims: g.layer_shapes.iter().map(|s| s.dims()).collect(),
            image_dims: g.image_shape.dims(),
            tap_points: vec![Tap::Pre, Tap::Post],
            conditioning: g.conditioning.clone(),
        }
    }

    /// Parses and validates descriptor JSON, checking the version before the
    /// rest of the schema.
    pub fn parse(json: &str) -> Result<Self, BridgeError> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| BridgeError::MalformedDescriptor(e.to_string()))?;
        let version = value
            .get("protocol_version")
            .ok_or_else(|| BridgeError::MalformedDescriptor("missing protocol_version".into()))?
            .as_u64()
            .ok_or_else(|| BridgeError::MalformedDescriptor("protocol_version must be an integer".into()))?;
        if version != PROTOCOL_VERSION as u64 {
            return Err(BridgeError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: version.min(u32::MAX as u64) as u32,
            });
        }
        let desc: Self = serde_path_to_error::deserialize(value)
            .map_err(|e| BridgeError::MalformedDescriptor(format!("at {}: {}", e.path(), e.inner())))?;
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        let bad = |m: &str| Err(BridgeError::MalformedDescriptor(m.to_string()));
        match (self.family, self.d_w) {
            (LatentSpace::Style, None) => return bad("style family requires d_w"),
            (_, Some(0)) => return bad("d_w must be positive"),
            _ => {}
        }
        if self.d_z == 0 {
            return bad("d_z must be positive");
        }
        if self.layer_count < 2 {
            return bad("L must be at least 2");
        }
        if self.layer_feature_dims.len() != self.layer_count {
            return bad("layer_feature_dims must have one entry per layer");
        }
        if self
            .layer_feature_dims
            .iter()
            .chain([&self.image_dims])
            .any(|d| d.is_empty() || d.contains(&0))
        {
            return bad("every dimension must be positive");
        }
        if self.tap_points.is_empty() {
            return bad("tap_points must not be empty");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor is plain data")
    }

    /// SHA-256 of the compact JSON form; recorded in artifact provenance.
    pub fn hash(&self) -> String {
        artifact::hash_hex(self.to_json().as_bytes())
    }

    /// Length of each per-layer latent input.
    pub fn state_dim(&self) -> usize {
        match self.family {
            LatentSpace::Style => self.d_w.unwrap_or(0),
            LatentSpace::Skip => self.d_z,
        }
    }

    pub fn feature_len(&self, layer: usize) -> Option<usize> {
        self.layer_feature_dims.get(layer).map(|d| d.iter().product())
    }

    pub fn image_len(&self) -> usize {
        self.image_dims.iter().product()
    }
}

/// Operations a layered generator exposes. Implementations must be
/// deterministic for a given descriptor.
pub trait GeneratorBridge: Send + Sync {
    /// Raw descriptor JSON, validated by [`bridge_handshake`].
    fn descriptor_json(&self) -> Result<String, BridgeError>;

    /// Latents for sample indices `start..start + n` under `seed`.
    fn sample(&self, n: usize, seed: u64, start: u64) -> Result<Vec<Vec<f64>>, BridgeError>;

    /// `w = M(z)` per latent; style family only.
    fn map(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BridgeError>;

    /// Flattened features at `layer` for each state.
    fn features(&self, states: &[LayeredLatentState], layer: usize, tap: Tap) -> Result<Vec<Vec<f64>>, BridgeError>;

    /// Flattened image for `state`.
    fn synthesize(&self, state: &LayeredLatentState) -> Result<Vec<f64>, BridgeError>;

    /// Every layer's features plus the image.
    fn capture(&self, state: &LayeredLatentState) -> Result<FeatureCapture, BridgeError>;
}

/// Fetches and validates the bridge descriptor.
pub fn bridge_handshake(bridge: &dyn GeneratorBridge) -> Result<BridgeDescriptor, BridgeError> {
    BridgeDescriptor::parse(&bridge.descriptor_json()?)
}

/// The unedited state for latent `z` as seen through a bridge.
pub fn initial_state(
    bridge: &dyn GeneratorBridge,
    desc: &BridgeDescriptor,
    z: &[f64],
) -> Result<LayeredLatentState, BridgeError> {
    let base = match desc.family {
        LatentSpace::Style => bridge
            .map(&[z.to_vec()])?
            .pop()
            .ok_or_else(|| BridgeError::Protocol("map returned no rows".into()))?,
        LatentSpace::Skip => z.to_vec(),
    };
    LayeredLatentState::fresh(desc.family, base, desc.layer_count)
        .map_err(|e| BridgeError::Protocol(e.to_string()))
}

/// In-process bridge over the toy generator; values never leave `f64`.
#[derive(Clone, Debug)]
pub struct ToyBridge {
    generator: ToyGenerator,
}

impl ToyBridge {
    pub fn new(desc: GeneratorDescriptor) -> Result<Self, GeneratorError> {
        Ok(Self {
            generator: ToyGenerator::new(desc)?,
        })
    }

    pub fn generator(&self) -> &ToyGenerator {
        &self.generator
    }
}

impl GeneratorBridge for ToyBridge {
    fn descriptor_json(&self) -> Result<String, BridgeError> {
        Ok(BridgeDescriptor::from_generator(self.generator.descriptor()).to_json())
    }

    fn sample(&self, n: usize, seed: u64, start: u64) -> Result<Vec<Vec<f64>>, BridgeError> {
        Ok(toy::sample_latents(self.generator.descriptor().latent_dim, n, seed, start))
    }

    fn map(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BridgeError> {
        latents
            .iter()
            .map(|z| self.generator.map_latent(z).map_err(Into::into))
            .collect()
    }

    fn features(&self, states: &[LayeredLatentState], layer: usize, tap: Tap) -> Result<Vec<Vec<f64>>, BridgeError> {
        use rayon::prelude::*;
        states
            .par_iter()
            .map(|s| self.generator.features(s, layer, tap).map_err(Into::into))
            .collect()
    }

    fn synthesize(&self, state: &LayeredLatentState) -> Result<Vec<f64>, BridgeError> {
        Ok(self.generator.render(state)?)
    }

    fn capture(&self, state: &LayeredLatentState) -> Result<FeatureCapture, BridgeError> {
        Ok(self.generator.synthesize(state)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_handshake_loopback() {
        let g = GeneratorDescriptor::toy(LatentSpace::Style, 4);
        let bridge = ToyBridge::new(g.clone()).unwrap();
        let desc = bridge_handshake(&bridge).unwrap();
        assert_eq!(desc, BridgeDescriptor::from_generator(&g));
        assert_eq!(desc.d_w, Some(16));
        assert_eq!(desc.feature_len(4), Some(8 * 16 * 16));
    }

    #[test]
    fn version_and_schema_errors() {
        let mut v: serde_json::Value = serde_json::from_str(
            &BridgeDescriptor::from_generator(&GeneratorDescriptor::toy(LatentSpace::Style, 1)).to_json(),
        )
        .unwrap();
        v["protocol_version"] = 0.into();
        assert!(matches!(
            BridgeDescriptor::parse(&v.to_string()),
            Err(BridgeError::VersionMismatch { expected: 1, found: 0 })
        ));
        v["protocol_version"] = 1.into();
        v.as_object_mut().unwrap().remove("d_w");
        assert!(matches!(
            BridgeDescriptor::parse(&v.to_string()),
            Err(BridgeError::MalformedDescriptor(_))
        ));
        v["family"] = "skip".into();
        v["L"] = "six".into();
        match BridgeDescriptor::parse(&v.to_string()) {
            Err(BridgeError::MalformedDescriptor(m)) => assert!(m.contains("L"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_is_stable() {
        let d = BridgeDescriptor::from_generator(&GeneratorDescriptor::toy(LatentSpace::Skip, 1));
        assert_eq!(d.hash(), d.clone().hash());
        assert_eq!(d.hash().len(), 64);
    }
}
