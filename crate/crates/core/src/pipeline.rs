//! End-to-end fitting through a generator bridge: sample, map or tap
//! features, stream into incremental PCA, and for feature spaces regress
//! latent directions onto the principal coordinates.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, Provenance};
use crate::bridge::{bridge_handshake, BridgeDescriptor, BridgeError, GeneratorBridge};
use crate::directions::{DirectionError, DirectionRegression, PrincipalDirections};
use crate::edit::{LatentSpace, LayeredLatentState};
use crate::pca::{IncrementalPca, PcaError, PrincipalBasis, DEFAULT_BATCH_SIZE};
use crate::toy::Tap;

/// Sampling policy recorded in provenance. Fitted bases never see truncated
/// latents.
pub const SAMPLING_POLICY: &str = "standard-normal, untruncated";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("bridge failed after {samples_done} samples ({source}); resume from {checkpoint:?}")]
    Partial {
        samples_done: u64,
        checkpoint: Option<PathBuf>,
        #[source]
        source: BridgeError,
    },
    #[error("unsupported fit: {0}")]
    Unsupported(String),
    #[error("checkpoint does not match this fit: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What to analyze: mapped style vectors, or features at one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FitSpace {
    StyleW,
    Feature { layer: usize, tap: Tap },
}

impl fmt::Display for FitSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitSpace::StyleW => f.write_str("style-w"),
            FitSpace::Feature { layer, tap } => write!(f, "feature@{layer}:{tap}"),
        }
    }
}

impl FromStr for FitSpace {
    type Err = String;

    /// `style-w`, `feature@3` (post-activation) or `feature@3:pre`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "style-w" {
            return Ok(FitSpace::StyleW);
        }
        let rest = s
            .strip_prefix("feature@")
            .ok_or_else(|| format!("unknown space {s:?}, expected style-w or feature@LAYER[:pre|post]"))?;
        let (layer, tap) = match rest.split_once(':') {
            Some((l, t)) => (l, t.parse()?),
            None => (rest, Tap::Post),
        };
        let layer = layer.parse().map_err(|_| format!("bad layer index in {s:?}"))?;
        Ok(FitSpace::Feature { layer, tap })
    }
}

impl From<FitSpace> for String {
    fn from(s: FitSpace) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for FitSpace {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub space: FitSpace,
    pub n: u64,
    pub k: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Written after every batch and read back when present.
    pub checkpoint: Option<PathBuf>,
}

impl FitConfig {
    pub fn new(space: FitSpace, n: u64, k: usize, seed: u64) -> Self {
        Self {
            space,
            n,
            k,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
            checkpoint: None,
        }
    }

    pub fn batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }

    pub fn checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub basis: PrincipalBasis,
    pub directions: Option<PrincipalDirections>,
    pub descriptor: BridgeDescriptor,
    pub provenance: Provenance,
}

impl FitOutcome {
    /// Writes `basis.gspc` and, for feature fits, `directions.gspc`, each
    /// with a JSON sidecar. Returns the tensor paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        std::fs::create_dir_all(dir)?;
        let basis_path = dir.join("basis.gspc");
        let space = self.provenance.space.clone().unwrap_or_default();
        self.basis.save(&basis_path, &space, Some(self.provenance.clone()))?;
        let mut paths = vec![basis_path];
        if let Some(dirs) = &self.directions {
            let p = dir.join("directions.gspc");
            dirs.save(&p, Some(self.provenance.clone()))?;
            paths.push(p);
        }
        Ok(paths)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FitCheckpoint {
    space: FitSpace,
    n: u64,
    k: usize,
    seed: u64,
    batch_size: usize,
    descriptor_hash: String,
    pca: IncrementalPca,
}

impl FitCheckpoint {
    fn check(&self, cfg: &FitConfig, hash: &str) -> Result<(), PipelineError> {
        let mismatch = |what: &str| Err(PipelineError::CheckpointMismatch(what.to_string()));
        if self.space != cfg.space {
            return mismatch("space");
        }
        if self.n != cfg.n || self.k != cfg.k || self.seed != cfg.seed {
            return mismatch("N, K or seed");
        }
        if self.batch_size != cfg.batch_size {
            return mismatch("batch size");
        }
        if self.descriptor_hash != hash {
            return mismatch("bridge descriptor");
        }
        Ok(())
    }
}

/// Latents `start..start + n` of `seed` and their images in `space`.
pub fn sample_space(
    bridge: &dyn GeneratorBridge,
    desc: &BridgeDescriptor,
    space: FitSpace,
    seed: u64,
    start: u64,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), BridgeError> {
    let z = bridge.sample(n, seed, start)?;
    let mapped = match desc.family {
        LatentSpace::Style => Some(bridge.map(&z)?),
        LatentSpace::Skip => None,
    };
    let x = match space {
        FitSpace::StyleW => mapped.ok_or_else(|| BridgeError::Unsupported("style-w needs the style family".into()))?,
        FitSpace::Feature { layer, tap } => {
            let bases = mapped.as_ref().unwrap_or(&z);
            let states = bases
                .iter()
                .map(|b| LayeredLatentState::fresh(desc.family, b.clone(), desc.layer_count))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| BridgeError::Protocol(e.to_string()))?;
            bridge.features(&states, layer, tap)?
        }
    };
    if x.len() != n || z.len() != n {
        return Err(BridgeError::Protocol(format!("asked for {n} samples, got {}", x.len())));
    }
    Ok((z, x))
}

fn analyzed_dim(desc: &BridgeDescriptor, space: FitSpace) -> Result<usize, PipelineError> {
    match space {
        FitSpace::StyleW => match (desc.family, desc.d_w) {
            (LatentSpace::Style, Some(d)) => Ok(d),
            _ => Err(PipelineError::Unsupported("style-w needs a style-family bridge".into())),
        },
        FitSpace::Feature { layer, tap } => {
            if !desc.tap_points.contains(&tap) {
                return Err(PipelineError::Unsupported(format!("bridge does not offer the {tap} tap")));
            }
            desc.feature_len(layer).ok_or_else(|| {
                PipelineError::Unsupported(format!("layer {layer} out of range for {} layers", desc.layer_count))
            })
        }
    }
}

/// Runs the full fit. With a checkpoint path set, progress is saved after
/// every batch and an existing checkpoint for the same fit is resumed.
pub fn pipeline_fit(bridge: &dyn GeneratorBridge, cfg: &FitConfig) -> Result<FitOutcome, PipelineError> {
    let desc = bridge_handshake(bridge)?;
    let hash = desc.hash();
    let dim = analyzed_dim(&desc, cfg.space)?;
    if cfg.batch_size == 0 {
        return Err(PcaError::InvalidBatchSize.into());
    }
    if cfg.n <= cfg.k as u64 {
        return Err(PcaError::InsufficientData {
            needed: cfg.k as u64 + 1,
            got: cfg.n,
        }
        .into());
    }

    let mut state = match &cfg.checkpoint {
        Some(p) if p.exists() => {
            let ck: FitCheckpoint = artifact::read_json(p)?;
            ck.check(cfg, &hash)?;
            ck
        }
        _ => FitCheckpoint {
            space: cfg.space,
            n: cfg.n,
            k: cfg.k,
            seed: cfg.seed,
            batch_size: cfg.batch_size,
            descriptor_hash: hash.clone(),
            pca: IncrementalPca::new(dim, cfg.k)?,
        },
    };

    while state.pca.samples_seen() < cfg.n {
        let start = state.pca.samples_seen();
        let b = (cfg.n - start).min(cfg.batch_size as u64) as usize;
        let (_, x) = sample_space(bridge, &desc, cfg.space, cfg.seed, start, b).map_err(|source| {
            PipelineError::Partial {
                samples_done: start,
                checkpoint: cfg.checkpoint.clone(),
                source,
            }
        })?;
        state.pca.partial_fit(&x)?;
        if let Some(p) = &cfg.checkpoint {
            artifact::write_json(p, &state)?;
        }
    }
    let basis = state.pca.finish()?;

    let directions = match cfg.space {
        FitSpace::StyleW => None,
        FitSpace::Feature { .. } => {
            // Second pass over the same latents: counter-based sampling
            // regenerates them exactly.
            let mut reg = DirectionRegression::new(cfg.k, desc.d_z);
            let mut start = 0;
            while start < cfg.n {
                let b = (cfg.n - start).min(cfg.batch_size as u64) as usize;
                let (z, x) = sample_space(bridge, &desc, cfg.space, cfg.seed, start, b).map_err(|source| {
                    PipelineError::Partial {
                        samples_done: cfg.n,
                        checkpoint: cfg.checkpoint.clone(),
                        source,
                    }
                })?;
                let coords = x.iter().map(|v| basis.project(v)).collect::<Result<Vec<_>, _>>()?;
                reg.push_batch(&z, &coords)?;
                start += b as u64;
            }
            let dirs = reg.finish(cfg.space.to_string())?;
            Some(PrincipalDirections::new(
                dirs.matrix().clone(),
                cfg.space.to_string(),
                cfg.n,
                Some(cfg.seed),
            )?)
        }
    };

    let provenance = Provenance {
        seed: Some(cfg.seed),
        n: Some(cfg.n),
        k: Some(cfg.k),
        descriptor_hash: Some(hash),
        space: Some(cfg.space.to_string()),
        sampling: Some(SAMPLING_POLICY.to_string()),
        batch_size: Some(cfg.batch_size),
    };
    Ok(FitOutcome {
        basis,
        directions,
        descriptor: desc,
        provenance,
    })
}
