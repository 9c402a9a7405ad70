//! Payload conventions shared by the bridge server and client.
//!
//! Tensors travel as GSPC bodies. A batch of latents or flattened features is
//! `[n, len]`; a latent state is `[L + 1, d]` with the base in row 0; a batch
//! of states is `[n, L + 1, d]`. Capture responses are an archive of `2L + 1`
//! tensors: pre-activation features for each layer, post-activation features
//! for each layer, then the image.

use layerpca::edit::LayeredLatentState;
use layerpca::tensor::{self, TensorBlock};
use layerpca::toy::{FeatureCapture, FeatureShape};
use layerpca::BridgeDescriptor;

pub const PROTOCOL_HEADER: &str = "x-protocol-version";
pub const COUNT_HEADER: &str = "x-tensor-count";
pub const GSPC_MIME: &str = "application/x-gspc";

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct WireError(pub String);

impl From<tensor::TensorError> for WireError {
    fn from(e: tensor::TensorError) -> Self {
        WireError(e.to_string())
    }
}

pub fn rows_to_bytes(rows: &[Vec<f64>]) -> Result<Vec<u8>, WireError> {
    if rows.is_empty() {
        return Ok(TensorBlock::zeros(vec![0, 0]).to_bytes()?);
    }
    Ok(TensorBlock::from_rows(rows)?.to_bytes()?)
}

/// `[n, len]` to rows; a 1-d tensor is a single row.
pub fn rows_from_tensor(t: &TensorBlock) -> Result<Vec<Vec<f64>>, WireError> {
    match t.dims() {
        [_] => Ok(vec![t.to_f64()]),
        [_, _] => Ok(t.to_rows()),
        d => Err(WireError(format!("expected a [n, len] tensor, got dims {d:?}"))),
    }
}

pub fn rows_from_bytes(bytes: &[u8]) -> Result<Vec<Vec<f64>>, WireError> {
    rows_from_tensor(&TensorBlock::from_bytes(bytes)?)
}

pub fn states_to_bytes(states: &[LayeredLatentState]) -> Result<Vec<u8>, WireError> {
    let (rows, dim) = match states.first() {
        Some(s) => (s.layer_count() + 1, s.dim()),
        None => (0, 0),
    };
    let mut data = Vec::with_capacity(states.len() * rows * dim);
    for s in states {
        data.extend(s.to_tensor().into_data());
    }
    Ok(TensorBlock::new(vec![states.len(), rows, dim], data)?.to_bytes()?)
}

/// Accepts `[L + 1, d]` (one state) or `[n, L + 1, d]`.
pub fn states_from_bytes(bytes: &[u8], desc: &BridgeDescriptor) -> Result<Vec<LayeredLatentState>, WireError> {
    let t = TensorBlock::from_bytes(bytes)?;
    let (n, rows, dim) = match *t.dims() {
        [rows, dim] => (1, rows, dim),
        [n, rows, dim] => (n, rows, dim),
        ref d => return Err(WireError(format!("expected [L+1, d] or [n, L+1, d], got {d:?}"))),
    };
    if rows != desc.layer_count + 1 || dim != desc.state_dim() {
        return Err(WireError(format!(
            "state is [{rows}, {dim}], generator expects [{}, {}]",
            desc.layer_count + 1,
            desc.state_dim()
        )));
    }
    let per = rows * dim;
    (0..n)
        .map(|i| {
            let one = TensorBlock::new(vec![rows, dim], t.data()[i * per..(i + 1) * per].to_vec())?;
            LayeredLatentState::from_tensor(desc.family, &one).map_err(|e| WireError(e.to_string()))
        })
        .collect()
}

pub fn capture_to_bytes(cap: &FeatureCapture) -> Result<Vec<u8>, WireError> {
    let layers = cap.layer_shapes.len();
    let mut tensors = Vec::with_capacity(2 * layers + 1);
    for tap in [layerpca::toy::Tap::Pre, layerpca::toy::Tap::Post] {
        for i in 0..layers {
            tensors.push(cap.layer_tensor(i, tap));
        }
    }
    tensors.push(cap.image_tensor());
    let mut out = Vec::new();
    tensor::write_archive(&tensors.iter().collect::<Vec<_>>(), &mut out)?;
    Ok(out)
}

fn shape_of(dims: &[usize]) -> Result<FeatureShape, WireError> {
    match *dims {
        [c, h, w] => Ok(FeatureShape::new(c, h, w)),
        [h, w] => Ok(FeatureShape::new(1, h, w)),
        [n] => Ok(FeatureShape::new(n, 1, 1)),
        ref d => Err(WireError(format!("unsupported feature dims {d:?}"))),
    }
}

pub fn capture_from_bytes(bytes: &[u8], desc: &BridgeDescriptor) -> Result<FeatureCapture, WireError> {
    let layers = desc.layer_count;
    let mut reader = bytes;
    let tensors = tensor::read_archive(&mut reader, 2 * layers + 1)?;
    let layer_shapes = desc
        .layer_feature_dims
        .iter()
        .map(|d| shape_of(d))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, t) in tensors.iter().take(2 * layers).enumerate() {
        if t.len() != layer_shapes[i % layers].len() {
            return Err(WireError(format!("capture tensor {i} has {} values", t.len())));
        }
    }
    let mut it = tensors.into_iter();
    let pre_activation = (0..layers).map(|_| it.next().expect("count").to_f64()).collect();
    let features = (0..layers).map(|_| it.next().expect("count").to_f64()).collect();
    let image = it.next().expect("count").to_f64();
    Ok(FeatureCapture {
        pre_activation,
        features,
        image,
        layer_shapes,
        image_shape: shape_of(&desc.image_dims)?,
    })
}
