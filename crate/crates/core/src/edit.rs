//! Layered latent states and the edits applied to them.
//!
//! States are plain values: every operation returns a new state and leaves
//! its input untouched.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directions::PrincipalDirections;
use crate::pca::{ComponentCoordinates, PcaError, PrincipalBasis};
use crate::rng::{self, Domain};
use crate::tensor::{TensorBlock, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum EditError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("layer range {start}..={end} is outside 0..{layers}")]
    LayerOutOfRange { start: usize, end: usize, layers: usize },
    #[error("layer range start {start} is after end {end}")]
    EmptyRange { start: usize, end: usize },
    #[error("edit targets {expected} space but state is {found}")]
    SpaceMismatch { expected: LatentSpace, found: LatentSpace },
    #[error("component {component} out of range for {count} directions")]
    ComponentOutOfRange { component: usize, count: usize },
    #[error("sigma must be finite, got {0}")]
    NonFiniteSigma(f64),
    #[error("truncation psi must lie in [0, 1], got {0}")]
    PsiOutOfRange(f64),
    #[error("states differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("a state needs at least one layer")]
    NoLayers,
    #[error("malformed serialized state: {0}")]
    Malformed(String),
}

impl From<PcaError> for EditError {
    fn from(e: PcaError) -> Self {
        match e {
            PcaError::DimensionMismatch { expected, found } => {
                EditError::DimensionMismatch { expected, found }
            }
            other => EditError::Malformed(other.to_string()),
        }
    }
}

impl From<TensorError> for EditError {
    fn from(e: TensorError) -> Self {
        EditError::Malformed(e.to_string())
    }
}

/// Which kind of per-layer input a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    /// Style vectors `w_i`, one per synthesis layer.
    Style,
    /// A base latent `z` plus skip inputs `z_i`.
    Skip,
}

impl fmt::Display for LatentSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentSpace::Style => "style",
            LatentSpace::Skip => "skip",
        })
    }
}

impl std::str::FromStr for LatentSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "style" => Ok(Self::Style),
            "skip" => Ok(Self::Skip),
            other => Err(format!("unknown latent space {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredLatentState {
    space: LatentSpace,
    base: Vec<f64>,
    per_layer: Vec<Vec<f64>>,
}

impl LayeredLatentState {
    /// Every layer starts as a copy of `base`.
    pub fn fresh(space: LatentSpace, base: Vec<f64>, layers: usize) -> Result<Self, EditError> {
        if layers == 0 {
            return Err(EditError::NoLayers);
        }
        Ok(Self {
            space,
            per_layer: vec![base.clone(); layers],
            base,
        })
    }

    pub fn from_parts(
        space: LatentSpace,
        base: Vec<f64>,
        per_layer: Vec<Vec<f64>>,
    ) -> Result<Self, EditError> {
        if per_layer.is_empty() {
            return Err(EditError::NoLayers);
        }
        if let Some(bad) = per_layer.iter().find(|v| v.len() != base.len()) {
            return Err(EditError::DimensionMismatch {
                expected: base.len(),
                found: bad.len(),
            });
        }
        Ok(Self {
            space,
            base,
            per_layer,
        })
    }

    pub fn space(&self) -> LatentSpace {
        self.space
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn per_layer(&self) -> &[Vec<f64>] {
        &self.per_layer
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.per_layer[i]
    }

    pub fn layer_count(&self) -> usize {
        self.per_layer.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn with_base(mut self, base: Vec<f64>) -> Result<Self, EditError> {
        if base.len() != self.dim() {
            return Err(EditError::DimensionMismatch {
                expected: self.dim(),
                found: base.len(),
            });
        }
        self.base = base;
        Ok(self)
    }

    pub fn with_layer(mut self, i: usize, v: Vec<f64>) -> Result<Self, EditError> {
        if i >= self.layer_count() {
            return Err(EditError::LayerOutOfRange {
                start: i,
                end: i,
                layers: self.layer_count(),
            });
        }
        if v.len() != self.dim() {
            return Err(EditError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        self.per_layer[i] = v;
        Ok(self)
    }

    /// Elementwise `alpha * a + (1 - alpha) * b`.
    pub fn blend(a: &Self, b: &Self, alpha: f64) -> Result<Self, EditError> {
        check_same_shape(a, b)?;
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect()
        };
        Ok(Self {
            space: a.space,
            base: mix(&a.base, &b.base),
            per_layer: a
                .per_layer
                .iter()
                .zip(&b.per_layer)
                .map(|(x, y)| mix(x, y))
                .collect(),
        })
    }

    /// `[L + 1, d]` tensor: row 0 is the base, rows `1..=L` the layers.
    pub fn to_tensor(&self) -> TensorBlock {
        let mut data = Vec::with_capacity((self.layer_count() + 1) * self.dim());
        data.extend(self.base.iter().map(|&v| v as f32));
        for layer in &self.per_layer {
            data.extend(layer.iter().map(|&v| v as f32));
        }
        TensorBlock::new(vec![self.layer_count() + 1, self.dim()], data).expect("consistent")
    }

    pub fn from_tensor(space: LatentSpace, t: &TensorBlock) -> Result<Self, EditError> {
        match *t.dims() {
            [rows, _] if rows >= 2 => {
                let mut rows = t.to_rows().into_iter();
                let base = rows.next().expect("rows >= 2");
                Self::from_parts(space, base, rows.collect())
            }
            _ => Err(EditError::Malformed(format!(
                "expected [L + 1, d] with L >= 1, got {:?}",
                t.dims()
            ))),
        }
    }

    fn map_vectors(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            space: self.space,
            base: f(&self.base),
            per_layer: self.per_layer.iter().map(|v| f(v)).collect(),
        }
    }
}

fn check_same_shape(a: &LayeredLatentState, b: &LayeredLatentState) -> Result<(), EditError> {
    if a.space != b.space {
        return Err(EditError::SpaceMismatch {
            expected: a.space,
            found: b.space,
        });
    }
    if a.layer_count() != b.layer_count() || a.dim() != b.dim() {
        return Err(EditError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.layer_count(),
            a.dim(),
            b.layer_count(),
            b.dim()
        )));
    }
    Ok(())
}

/// Inclusive layer span, or every layer plus the base latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerRange {
    All,
    Span { start: usize, end: usize },
}

impl LayerRange {
    pub fn span(start: usize, end: usize) -> Self {
        Self::Span { start, end }
    }

    pub fn validate(&self, layers: usize) -> Result<(), EditError> {
        match *self {
            LayerRange::All => Ok(()),
            LayerRange::Span { start, end } if start > end => Err(EditError::EmptyRange { start, end }),
            LayerRange::Span { start, end } if end >= layers => {
                Err(EditError::LayerOutOfRange { start, end, layers })
            }
            LayerRange::Span { .. } => Ok(()),
        }
    }

    /// A span covering every layer behaves like `All`.
    pub fn normalized(self, layers: usize) -> Self {
        match self {
            LayerRange::Span { start: 0, end } if end + 1 == layers => LayerRange::All,
            other => other,
        }
    }

    pub fn start(&self) -> usize {
        match self {
            LayerRange::All => 0,
            LayerRange::Span { start, .. } => *start,
        }
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRange::All => f.write_str("all"),
            LayerRange::Span { start, end } if start == end => write!(f, "{start}"),
            LayerRange::Span { start, end } => write!(f, "{start}-{end}"),
        }
    }
}

/// One named control: move along `component` by `sigma` standard
/// deviations on `layers`.
#[derive(Clone, Debug, PartialEq)]
pub struct EditSpec {
    pub name: String,
    pub component: usize,
    pub layers: LayerRange,
    pub space: LatentSpace,
    pub sigma: f64,
}

impl EditSpec {
    pub fn new(
        name: impl Into<String>,
        component: usize,
        layers: LayerRange,
        space: LatentSpace,
        sigma: f64,
    ) -> Self {
        Self {
            name: name.into(),
            component,
            layers,
            space,
            sigma,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { sigma, ..self.clone() }
    }
}

impl fmt::Display for EditSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E(v{}, {}) x {}", self.component, self.layers, self.sigma)
    }
}

/// Anything that supplies edit directions in a latent space.
pub trait DirectionSource {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn direction(&self, k: usize) -> Vec<f64>;
    /// Raw offset magnitude for one standard deviation along `k`.
    fn sigma_unit(&self, k: usize) -> f64;

    /// `sum_k x_k * direction_k`.
    fn offset(&self, x: &ComponentCoordinates) -> Result<Vec<f64>, EditError> {
        if x.len() > self.count() {
            return Err(EditError::DimensionMismatch {
                expected: self.count(),
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        for (k, &xk) in x.as_slice().iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(self.direction(k)) {
                *o += xk * d;
            }
        }
        Ok(out)
    }
}

impl DirectionSource for PrincipalBasis {
    fn dim(&self) -> usize {
        PrincipalBasis::dim(self)
    }

    fn count(&self) -> usize {
        self.k()
    }

    fn direction(&self, k: usize) -> Vec<f64> {
        self.component(k)
    }

    fn sigma_unit(&self, k: usize) -> f64 {
        self.std_dev(k)
    }
}

impl DirectionSource for PrincipalDirections {
    fn dim(&self) -> usize {
        PrincipalDirections::dim(self)
    }

    fn count(&self) -> usize {
        self.k()
    }

    fn direction(&self, k: usize) -> Vec<f64> {
        PrincipalDirections::direction(self, k)
    }

    /// Regressed columns already carry the per-unit-coordinate scale.
    fn sigma_unit(&self, _k: usize) -> f64 {
        1.0
    }
}

fn add(v: &[f64], offset: &[f64]) -> Vec<f64> {
    v.iter().zip(offset).map(|(a, b)| a + b).collect()
}

/// Adds `V x` to the base latent and to every layer input.
pub fn apply_edit_global<D: DirectionSource + ?Sized>(
    state: &LayeredLatentState,
    source: &D,
    x: &ComponentCoordinates,
) -> Result<LayeredLatentState, EditError> {
    if source.dim() != state.dim() {
        return Err(EditError::DimensionMismatch {
            expected: state.dim(),
            found: source.dim(),
        });
    }
    let offset = source.offset(x)?;
    Ok(state.map_vectors(|v| add(v, &offset)))
}

/// Applies `spec` to its layer span only; `All` (or a span covering every
/// layer) delegates to [`apply_edit_global`].
pub fn apply_edit_layerwise<D: DirectionSource + ?Sized>(
    state: &LayeredLatentState,
    spec: &EditSpec,
    source: &D,
    magnitude_override: Option<f64>,
) -> Result<LayeredLatentState, EditError> {
    let sigma = magnitude_override.unwrap_or(spec.sigma);
    if !sigma.is_finite() {
        return Err(EditError::NonFiniteSigma(sigma));
    }
    if spec.space != state.space() {
        return Err(EditError::SpaceMismatch {
            expected: spec.space,
            found: state.space(),
        });
    }
    if spec.component >= source.count() {
        return Err(EditError::ComponentOutOfRange {
            component: spec.component,
            count: source.count(),
        });
    }
    if source.dim() != state.dim() {
        return Err(EditError::DimensionMismatch {
            expected: state.dim(),
            found: source.dim(),
        });
    }
    spec.layers.validate(state.layer_count())?;
    let raw = sigma * source.sigma_unit(spec.component);
    match spec.layers.normalized(state.layer_count()) {
        LayerRange::All => {
            let x = ComponentCoordinates::axis(source.count(), spec.component, raw);
            apply_edit_global(state, source, &x)
        }
        LayerRange::Span { start, end } => {
            let offset: Vec<f64> = source.direction(spec.component).iter().map(|d| raw * d).collect();
            let mut out = state.clone();
            for layer in &mut out.per_layer[start..=end] {
                *layer = add(layer, &offset);
            }
            Ok(out)
        }
    }
}

/// Applies a sequence of edits in order.
pub fn apply_edits<'a, D: DirectionSource + ?Sized>(
    state: &LayeredLatentState,
    specs: impl IntoIterator<Item = &'a EditSpec>,
    source: &D,
) -> Result<LayeredLatentState, EditError> {
    specs
        .into_iter()
        .try_fold(state.clone(), |s, spec| apply_edit_layerwise(&s, spec, source, None))
}

/// Interpolates every vector toward `mean`: `mean + psi (v - mean)`.
pub fn truncate(state: &LayeredLatentState, psi: f64, mean: &[f64]) -> Result<LayeredLatentState, EditError> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(EditError::PsiOutOfRange(psi));
    }
    if mean.len() != state.dim() {
        return Err(EditError::DimensionMismatch {
            expected: state.dim(),
            found: mean.len(),
        });
    }
    if psi == 1.0 {
        return Ok(state.clone());
    }
    if psi == 0.0 {
        return Ok(state.map_vectors(|_| mean.to_vec()));
    }
    Ok(state.map_vectors(|v| v.iter().zip(mean).map(|(x, m)| m + psi * (x - m)).collect()))
}

/// Copies the donor's inputs for layers `start..=end` into the recipient.
/// The recipient's base latent is kept.
pub fn style_mix(
    recipient: &LayeredLatentState,
    donor: &LayeredLatentState,
    start: usize,
    end: usize,
) -> Result<LayeredLatentState, EditError> {
    check_same_shape(recipient, donor)?;
    LayerRange::span(start, end).validate(recipient.layer_count())?;
    let mut out = recipient.clone();
    out.per_layer[start..=end].clone_from_slice(&donor.per_layer[start..=end]);
    Ok(out)
}

/// Keeps the anchor's coordinates on `fixed` components and redraws the rest
/// from `N(0, lambda_k)`, then maps back through the basis.
pub fn randomize_subset(
    basis: &PrincipalBasis,
    anchor: &[f64],
    fixed: &[usize],
    seed: u64,
) -> Result<Vec<f64>, EditError> {
    let k = basis.k();
    if let Some(&bad) = fixed.iter().find(|&&i| i >= k) {
        return Err(EditError::ComponentOutOfRange {
            component: bad,
            count: k,
        });
    }
    let mut keep = vec![false; k];
    for &i in fixed {
        keep[i] = true;
    }
    let mut x = basis.project(anchor)?;
    let mut rng = rng::stream(seed, Domain::Subset, 0);
    for (i, xi) in x.0.iter_mut().enumerate() {
        // One draw per component so the mapping from seed to values does not
        // depend on which components are fixed.
        let draw: f64 = StandardNormal.sample(&mut rng);
        if !keep[i] {
            *xi = draw * basis.std_dev(i);
        }
    }
    Ok(basis.reconstruct(&x, None)?)
}
