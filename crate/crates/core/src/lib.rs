//! Principal-component controls for layered generative image models.
//!
//! The crate samples latents from a generator, runs streaming PCA either on
//! mapped style vectors or on features tapped at one layer, and turns the
//! components into edits that can be restricted to a span of layers. A small
//! deterministic [`toy`] generator implements both input families so every
//! layer-wise property can be checked exactly.
//!
//! ```no_run
//! use layerpca::bridge::ToyBridge;
//! use layerpca::edit::{apply_edit_layerwise, EditSpec, LatentSpace, LayerRange};
//! use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
//! use layerpca::toy::GeneratorDescriptor;
//!
//! let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 7))?;
//! let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 10_000, 16, 0))?;
//! let z = bridge.generator().sample_latents(1, 42).remove(0);
//! let state = bridge.generator().initial_state(&z)?;
//! let spec = EditSpec::new("coarse", 0, LayerRange::span(0, 2), LatentSpace::Style, 2.0);
//! let edited = apply_edit_layerwise(&state, &spec, &fit.basis, None)?;
//! let image = bridge.generator().render(&edited)?;
//! # let _ = image;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod artifact;
pub mod bridge;
pub mod directions;
pub mod edit;
pub mod editset;
pub mod linalg;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod session;
pub mod stats;
pub mod tensor;
pub mod toy;

pub use bridge::{bridge_handshake, BridgeDescriptor, GeneratorBridge, ToyBridge};
pub use directions::{random_basis, regress_directions, PrincipalDirections};
pub use edit::{EditSpec, LatentSpace, LayerRange, LayeredLatentState};
pub use editset::{load_edit_set, save_edit_set, EditEntry, EditSet};
pub use pca::{fit_pca, ComponentCoordinates, IncrementalPca, PrincipalBasis};
pub use pipeline::{pipeline_fit, FitConfig, FitSpace};
pub use session::{Session, SessionStore};
pub use tensor::TensorBlock;
pub use toy::{FeatureCapture, GeneratorDescriptor, ToyGenerator};
