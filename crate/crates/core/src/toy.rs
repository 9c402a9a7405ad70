//! A small deterministic layered generator with both input families.
//!
//! Style family: a constant tensor is modulated by `w_0`; each later layer
//! upsamples, applies a 3x3 convolution, and is modulated by `w_i`. The style
//! vectors come from a mapping network `w = M(z)`.
//!
//! Skip family: layer 0 reshapes an affine map of the base latent `z` and is
//! modulated by `z_0`; later layers follow the same convolution path,
//! modulated by their own `z_i`.
//!
//! Modulation is `h * (1 + gain(v)) + bias(v)` per channel followed by
//! `tanh`. In linear mode the gain term and every activation are dropped,
//! which makes the image an affine function of the concatenated layer inputs.
//!
//! All weights come from counter-based streams keyed by the descriptor seed,
//! so a descriptor fully determines the network on every platform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{LatentSpace, LayeredLatentState};
use crate::rng::{self, Domain};
use crate::tensor::TensorBlock;

const MOD_GAIN: f64 = 0.3;
/// Per-input decay in the first mapping layer, which makes `p(w)` anisotropic.
const MAPPING_DECAY: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("operation requires the {expected} family, generator is {found}")]
    FamilyMismatch { expected: LatentSpace, found: LatentSpace },
    #[error("state shape mismatch: {0}")]
    StateMismatch(String),
    #[error("layer {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("latent has length {found}, expected {expected}")]
    LatentMismatch { expected: usize, found: usize },
}

/// `[channels, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl From<[usize; 3]> for FeatureShape {
    fn from([c, h, w]: [usize; 3]) -> Self {
        Self::new(c, h, w)
    }
}

impl From<FeatureShape> for [usize; 3] {
    fn from(s: FeatureShape) -> Self {
        [s.channels, s.height, s.width]
    }
}

/// Feature tap: before or after the layer's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Pre,
    #[default]
    Post,
}

impl std::str::FromStr for Tap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pre" => Ok(Tap::Pre),
            "post" => Ok(Tap::Post),
            other => Err(format!("unknown tap {other:?}, expected pre or post")),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tap::Pre => "pre",
            Tap::Post => "post",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDescriptor {
    pub family: LatentSpace,
    pub latent_dim: usize,
    /// Present for the style family only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_dim: Option<usize>,
    pub layer_count: usize,
    pub layer_shapes: Vec<FeatureShape>,
    pub image_shape: FeatureShape,
    /// Opaque class label carried along unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub linear_mode: bool,
}

impl GeneratorDescriptor {
    /// d_z = d_w = 16, six layers of 8 channels from 4x4 to 16x16, 32x32 RGB.
    pub fn toy(family: LatentSpace, seed: u64) -> Self {
        let res = [4, 4, 8, 8, 16, 16];
        Self {
            family,
            latent_dim: 16,
            style_dim: (family == LatentSpace::Style).then_some(16),
            layer_count: res.len(),
            layer_shapes: res.iter().map(|&r| FeatureShape::new(8, r, r)).collect(),
            image_shape: FeatureShape::new(3, 32, 32),
            conditioning: None,
            seed,
            linear_mode: false,
        }
    }

    pub fn linear(mut self, on: bool) -> Self {
        self.linear_mode = on;
        self
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::InvalidDescriptor(m));
        if self.layer_count < 2 {
            return bad(format!("need at least 2 layers, got {}", self.layer_count));
        }
        if self.layer_shapes.len() != self.layer_count {
            return bad(format!(
                "{} layer shapes for {} layers",
                self.layer_shapes.len(),
                self.layer_count
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        match (self.family, self.style_dim) {
            (LatentSpace::Style, None) => return bad("style family needs style_dim".into()),
            (LatentSpace::Style, Some(0)) => return bad("style_dim must be positive".into()),
            (LatentSpace::Skip, Some(_)) => return bad("skip family takes no style_dim".into()),
            _ => {}
        }
        for (i, s) in self.layer_shapes.iter().chain([&self.image_shape]).enumerate() {
            if s.is_empty() {
                return bad(format!("shape {i} has a zero extent"));
            }
        }
        for (i, pair) in self.layer_shapes.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let same = a.height == b.height && a.width == b.width;
            let doubled = b.height == 2 * a.height && b.width == 2 * a.width;
            if !same && !doubled {
                return bad(format!("layer {} must keep or double the resolution of layer {i}", i + 1));
            }
        }
        let last = self.layer_shapes[self.layer_count - 1];
        let factor = self.image_shape.height / last.height;
        if self.image_shape.height % last.height != 0
            || self.image_shape.width != last.width * factor
            || !factor.is_power_of_two()
        {
            return bad("image resolution must be a power-of-two multiple of the last layer".into());
        }
        Ok(())
    }

    /// Length of each per-layer input vector.
    pub fn state_dim(&self) -> usize {
        match self.family {
            LatentSpace::Style => self.style_dim.unwrap_or(0),
            LatentSpace::Skip => self.latent_dim,
        }
    }
}

/// Per-layer features (before and after activation) and the final image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCapture {
    pub pre_activation: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    pub image: Vec<f64>,
    pub layer_shapes: Vec<FeatureShape>,
    pub image_shape: FeatureShape,
}

impl FeatureCapture {
    pub fn layer(&self, i: usize, tap: Tap) -> &[f64] {
        match tap {
            Tap::Pre => &self.pre_activation[i],
            Tap::Post => &self.features[i],
        }
    }

    pub fn layer_tensor(&self, i: usize, tap: Tap) -> TensorBlock {
        TensorBlock::from_f64(self.layer_shapes[i].dims(), self.layer(i, tap)).expect("shape")
    }

    pub fn image_tensor(&self) -> TensorBlock {
        TensorBlock::from_f64(self.image_shape.dims(), &self.image).expect("shape")
    }
}

#[derive(Clone, Debug)]
struct Dense {
    out: usize,
    inp: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn random(seed: u64, id: u64, out: usize, inp: usize, gain: f64) -> Self {
        let scale = gain / (inp as f64).sqrt();
        let weight = rng::normal_vector(seed, Domain::Weights, id, out * inp)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let bias = rng::normal_vector(seed, Domain::Weights, id | 1 << 32, out)
            .into_iter()
            .map(|v| 0.1 * v)
            .collect();
        Self { out, inp, weight, bias }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Conv3x3 {
    c_in: usize,
    c_out: usize,
    /// `[c_out][c_in][3][3]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv3x3 {
    fn random(seed: u64, id: u64, c_in: usize, c_out: usize) -> Self {
        let scale = 1.0 / ((9 * c_in) as f64).sqrt();
        let weight = rng::normal_vector(seed, Domain::Weights, id, c_out * c_in * 9)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let bias = rng::normal_vector(seed, Domain::Weights, id | 1 << 32, c_out)
            .into_iter()
            .map(|v| 0.1 * v)
            .collect();
        Self {
            c_in,
            c_out,
            weight,
            bias,
        }
    }

    /// Zero-padded "same" convolution on a `[c_in, h, w]` tensor.
    fn apply(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let mut out = vec![0.0; self.c_out * plane];
        for co in 0..self.c_out {
            let dst = &mut out[co * plane..(co + 1) * plane];
            dst.iter_mut().for_each(|v| *v = self.bias[co]);
            for ci in 0..self.c_in {
                let src = &x[ci * plane..(ci + 1) * plane];
                let k = &self.weight[(co * self.c_in + ci) * 9..(co * self.c_in + ci + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wk = k[ky * 3 + kx];
                        let y0 = if ky == 0 { 1 } else { 0 };
                        let y1 = if ky == 2 { h - 1 } else { h };
                        let x0 = if kx == 0 { 1 } else { 0 };
                        let x1 = if kx == 2 { w - 1 } else { w };
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let drow = &mut dst[y * w..(y + 1) * w];
                            let srow = &src[sy * w..(sy + 1) * w];
                            for xx in x0..x1 {
                                drow[xx] += wk * srow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn upsample_nearest(x: &[f64], shape: FeatureShape, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return x.to_vec();
    }
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(shape.channels * oh * ow);
    for c in 0..shape.channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            let row = &src[(y / factor) * w..(y / factor + 1) * w];
            for xx in 0..ow {
                out.push(row[xx / factor]);
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Modulation {
    gain: Dense,
    bias: Dense,
}

#[derive(Clone, Debug)]
pub struct ToyGenerator {
    desc: GeneratorDescriptor,
    mapping: Vec<Dense>,
    constant: Vec<f64>,
    stem: Option<Dense>,
    convs: Vec<Option<Conv3x3>>,
    mods: Vec<Modulation>,
    to_image: Dense,
}

impl ToyGenerator {
    pub fn new(desc: GeneratorDescriptor) -> Result<Self, GeneratorError> {
        desc.validate()?;
        let seed = desc.seed;
        let dz = desc.latent_dim;
        let sd = desc.state_dim();
        let shapes = &desc.layer_shapes;

        let mapping = match desc.family {
            LatentSpace::Style => {
                let hidden = 2 * dz.max(sd);
                let mut first = Dense::random(seed, 1, hidden, dz, 1.0);
                for o in 0..hidden {
                    for j in 0..dz {
                        first.weight[o * dz + j] *= MAPPING_DECAY.powi(j as i32);
                    }
                }
                vec![
                    first,
                    Dense::random(seed, 2, hidden, hidden, 1.0),
                    Dense::random(seed, 3, sd, hidden, 1.0),
                ]
            }
            LatentSpace::Skip => Vec::new(),
        };
        let constant = rng::normal_vector(seed, Domain::Weights, 10, shapes[0].len());
        let stem = (desc.family == LatentSpace::Skip).then(|| Dense::random(seed, 11, shapes[0].len(), dz, 1.0));
        let convs = (0..desc.layer_count)
            .map(|i| {
                (i > 0).then(|| {
                    Conv3x3::random(seed, 100 + i as u64, shapes[i - 1].channels, shapes[i].channels)
                })
            })
            .collect();
        let mods = (0..desc.layer_count)
            .map(|i| Modulation {
                gain: Dense::random(seed, 200 + 2 * i as u64, shapes[i].channels, sd, MOD_GAIN),
                bias: Dense::random(seed, 201 + 2 * i as u64, shapes[i].channels, sd, 1.0),
            })
            .collect();
        let last = shapes[desc.layer_count - 1];
        let to_image = Dense::random(seed, 300, desc.image_shape.channels, last.channels, 1.0);
        Ok(Self {
            desc,
            mapping,
            constant,
            stem,
            convs,
            mods,
            to_image,
        })
    }

    pub fn descriptor(&self) -> &GeneratorDescriptor {
        &self.desc
    }

    fn activate(&self, v: &mut [f64]) {
        if !self.desc.linear_mode {
            v.iter_mut().for_each(|x| *x = x.tanh());
        }
    }

    /// `w = M(z)`: affine, tanh, affine, tanh, affine.
    pub fn map_latent(&self, z: &[f64]) -> Result<Vec<f64>, GeneratorError> {
        if self.desc.family != LatentSpace::Style {
            return Err(GeneratorError::FamilyMismatch {
                expected: LatentSpace::Style,
                found: self.desc.family,
            });
        }
        self.check_latent(z)?;
        let mut h = self.mapping[0].apply(z);
        self.activate(&mut h);
        let mut h = self.mapping[1].apply(&h);
        self.activate(&mut h);
        Ok(self.mapping[2].apply(&h))
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), GeneratorError> {
        if z.len() != self.desc.latent_dim {
            return Err(GeneratorError::LatentMismatch {
                expected: self.desc.latent_dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    /// The unedited state for latent `z`.
    pub fn initial_state(&self, z: &[f64]) -> Result<LayeredLatentState, GeneratorError> {
        let base = match self.desc.family {
            LatentSpace::Style => self.map_latent(z)?,
            LatentSpace::Skip => {
                self.check_latent(z)?;
                z.to_vec()
            }
        };
        Ok(LayeredLatentState::fresh(self.desc.family, base, self.desc.layer_count).expect("L >= 2"))
    }

    pub fn sample_latents(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_latents(self.desc.latent_dim, n, seed, 0)
    }

    fn check_state(&self, state: &LayeredLatentState) -> Result<(), GeneratorError> {
        if state.space() != self.desc.family {
            return Err(GeneratorError::FamilyMismatch {
                expected: self.desc.family,
                found: state.space(),
            });
        }
        if state.layer_count() != self.desc.layer_count || state.dim() != self.desc.state_dim() {
            return Err(GeneratorError::StateMismatch(format!(
                "state is {}x{}, generator expects {}x{}",
                state.layer_count(),
                state.dim(),
                self.desc.layer_count,
                self.desc.state_dim()
            )));
        }
        Ok(())
    }

    fn modulate(&self, h: &mut [f64], layer: usize, v: &[f64]) {
        let shape = self.desc.layer_shapes[layer];
        let plane = shape.plane();
        let bias = self.mods[layer].bias.apply(v);
        let gain = (!self.desc.linear_mode).then(|| self.mods[layer].gain.apply(v));
        for c in 0..shape.channels {
            let g = gain.as_ref().map_or(1.0, |g| 1.0 + g[c]);
            for x in &mut h[c * plane..(c + 1) * plane] {
                *x = *x * g + bias[c];
            }
        }
    }

    /// Runs layers `0..=last`, returning pre- and post-activation tensors.
    fn run_layers(&self, state: &LayeredLatentState, last: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let shapes = &self.desc.layer_shapes;
        let mut pre = Vec::with_capacity(last + 1);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
        for i in 0..=last {
            let mut h = if i == 0 {
                match &self.stem {
                    Some(stem) => stem.apply(state.base()),
                    None => self.constant.clone(),
                }
            } else {
                let factor = shapes[i].height / shapes[i - 1].height;
                let up = upsample_nearest(&post[i - 1], shapes[i - 1], factor);
                self.convs[i]
                    .as_ref()
                    .expect("layers past 0 have a convolution")
                    .apply(&up, shapes[i].height, shapes[i].width)
            };
            self.modulate(&mut h, i, state.layer(i));
            pre.push(h.clone());
            self.activate(&mut h);
            post.push(h);
        }
        (pre, post)
    }

    /// Full forward pass with every intermediate tensor.
    pub fn synthesize(&self, state: &LayeredLatentState) -> Result<FeatureCapture, GeneratorError> {
        self.check_state(state)?;
        let last = self.desc.layer_count - 1;
        let (pre, post) = self.run_layers(state, last);
        let shape = self.desc.layer_shapes[last];
        let plane = shape.plane();
        let img_c = self.desc.image_shape.channels;
        let mut rgb = vec![0.0; img_c * plane];
        let mut pixel = vec![0.0; shape.channels];
        for p in 0..plane {
            for (c, v) in pixel.iter_mut().enumerate() {
                *v = post[last][c * plane + p];
            }
            for (c, v) in self.to_image.apply(&pixel).into_iter().enumerate() {
                rgb[c * plane + p] = v;
            }
        }
        self.activate(&mut rgb);
        let factor = self.desc.image_shape.height / shape.height;
        let image = upsample_nearest(&rgb, FeatureShape::new(img_c, shape.height, shape.width), factor);
        Ok(FeatureCapture {
            pre_activation: pre,
            features: post,
            image,
            layer_shapes: self.desc.layer_shapes.clone(),
            image_shape: self.desc.image_shape,
        })
    }

    /// Features at one layer; later layers are not evaluated.
    pub fn features(&self, state: &LayeredLatentState, layer: usize, tap: Tap) -> Result<Vec<f64>, GeneratorError> {
        self.check_state(state)?;
        if layer >= self.desc.layer_count {
            return Err(GeneratorError::LayerOutOfRange {
                layer,
                layers: self.desc.layer_count,
            });
        }
        let (mut pre, mut post) = self.run_layers(state, layer);
        Ok(match tap {
            Tap::Pre => pre.swap_remove(layer),
            Tap::Post => post.swap_remove(layer),
        })
    }

    pub fn render(&self, state: &LayeredLatentState) -> Result<Vec<f64>, GeneratorError> {
        Ok(self.synthesize(state)?.image)
    }
}

/// `n` standard-normal latents for indices `start..start + n`; each index has
/// its own stream, so any partition of the range yields the same vectors.
pub fn sample_latents(latent_dim: usize, n: usize, seed: u64, start: u64) -> Vec<Vec<f64>> {
    (start..start + n as u64)
        .map(|i| rng::normal_vector(seed, Domain::Latent, i, latent_dim))
        .collect()
}
