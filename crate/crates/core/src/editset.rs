//! Named, persisted collections of edits.
//!
//! ```json
//! {"model": "<descriptor hash>", "basis": "basis.gspc",
//!  "edits": [{"name": "zoom", "component": 1, "layer_start": 0, "layer_end": 2,
//!             "space": "style", "sigma_default": 0.0, "sigma_range": [-2.0, 2.0]}]}
//! ```
//!
//! `"layer_end": "all"` selects every layer plus the base latent. Unknown keys
//! are rejected and every error names the offending field as a JSON pointer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bridge::BridgeDescriptor;
use crate::edit::{DirectionSource, EditSpec, LatentSpace, LayerRange};

pub const DEFAULT_SIGMA_RANGE: [f64; 2] = [-2.0, 2.0];

#[derive(Debug, Error)]
pub enum EditSetError {
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("dimension mismatch at {pointer}: {message}")]
    Dimension { pointer: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EditSetError {
    pub fn pointer(&self) -> Option<&str> {
        match self {
            EditSetError::Schema { pointer, .. } | EditSetError::Dimension { pointer, .. } => Some(pointer),
            EditSetError::Io(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LayerEnd {
    Index(usize),
    All,
}

impl Serialize for LayerEnd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LayerEnd::Index(i) => s.serialize_u64(*i as u64),
            LayerEnd::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for LayerEnd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = LayerEnd;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a non-negative layer index or \"all\"")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<LayerEnd, E> {
                Ok(LayerEnd::Index(v as usize))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<LayerEnd, E> {
                if v == "all" {
                    Ok(LayerEnd::All)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdit {
    name: String,
    component: usize,
    #[serde(default)]
    layer_start: usize,
    layer_end: LayerEnd,
    space: LatentSpace,
    #[serde(default)]
    sigma_default: f64,
    #[serde(default = "default_range")]
    sigma_range: [f64; 2],
}

fn default_range() -> [f64; 2] {
    DEFAULT_SIGMA_RANGE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSet {
    model: String,
    basis: String,
    edits: Vec<RawEdit>,
}

/// One saved slider: direction, layer span, default value and its range.
#[derive(Clone, Debug, PartialEq)]
pub struct EditEntry {
    pub name: String,
    pub component: usize,
    pub layers: LayerRange,
    pub space: LatentSpace,
    pub sigma_default: f64,
    pub sigma_range: [f64; 2],
}

impl EditEntry {
    pub fn new(name: impl Into<String>, component: usize, layers: LayerRange, space: LatentSpace) -> Self {
        Self {
            name: name.into(),
            component,
            layers,
            space,
            sigma_default: 0.0,
            sigma_range: DEFAULT_SIGMA_RANGE,
        }
    }

    pub fn spec(&self) -> EditSpec {
        self.spec_at(self.sigma_default)
    }

    pub fn spec_at(&self, sigma: f64) -> EditSpec {
        EditSpec::new(self.name.clone(), self.component, self.layers, self.space, sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditSet {
    /// Identifies the generator, normally its descriptor hash.
    pub model: String,
    /// Path of the basis or directions file, relative to the set.
    pub basis: String,
    pub edits: Vec<EditEntry>,
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> EditSetError {
    EditSetError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl EditSet {
    pub fn new(model: impl Into<String>, basis: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            basis: basis.into(),
            edits: Vec::new(),
        }
    }

    pub fn with_edit(mut self, e: EditEntry) -> Self {
        self.edits.push(e);
        self
    }

    fn to_raw(&self) -> RawSet {
        RawSet {
            model: self.model.clone(),
            basis: self.basis.clone(),
            edits: self
                .edits
                .iter()
                .map(|e| {
                    let (layer_start, layer_end) = match e.layers {
                        LayerRange::All => (0, LayerEnd::All),
                        LayerRange::Span { start, end } => (start, LayerEnd::Index(end)),
                    };
                    RawEdit {
                        name: e.name.clone(),
                        component: e.component,
                        layer_start,
                        layer_end,
                        space: e.space,
                        sigma_default: e.sigma_default,
                        sigma_range: e.sigma_range,
                    }
                })
                .collect(),
        }
    }

    fn from_raw(raw: RawSet) -> Result<Self, EditSetError> {
        let mut edits = Vec::with_capacity(raw.edits.len());
        for (i, e) in raw.edits.into_iter().enumerate() {
            let at = |field: &str| format!("/edits/{i}/{field}");
            let layers = match e.layer_end {
                LayerEnd::All if e.layer_start != 0 => {
                    return Err(schema(at("layer_start"), "must be 0 when layer_end is \"all\""))
                }
                LayerEnd::All => LayerRange::All,
                LayerEnd::Index(end) if end < e.layer_start => {
                    return Err(schema(
                        at("layer_end"),
                        format!("layer_end {end} is before layer_start {}", e.layer_start),
                    ))
                }
                LayerEnd::Index(end) => LayerRange::span(e.layer_start, end),
            };
            if !e.sigma_default.is_finite() {
                return Err(schema(at("sigma_default"), "must be finite"));
            }
            let [lo, hi] = e.sigma_range;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(schema(at("sigma_range"), "must be two finite values with lo < hi"));
            }
            edits.push(EditEntry {
                name: e.name,
                component: e.component,
                layers,
                space: e.space,
                sigma_default: e.sigma_default,
                sigma_range: e.sigma_range,
            });
        }
        Ok(Self {
            model: raw.model,
            basis: raw.basis,
            edits,
        })
    }

    /// Pretty JSON with fields in schema order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("edit set is plain data")
    }

    pub fn from_json(text: &str) -> Result<Self, EditSetError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawSet = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = to_pointer(e.path());
            schema(pointer, e.into_inner().to_string())
        })?;
        Self::from_raw(raw)
    }

    /// Checks every edit against a generator and the referenced directions.
    pub fn check(&self, desc: &BridgeDescriptor, source: &dyn DirectionSource) -> Result<(), EditSetError> {
        if source.dim() != desc.state_dim() {
            return Err(EditSetError::Dimension {
                pointer: "/basis".into(),
                message: format!(
                    "basis has dimension {}, the {} model's latent inputs have {}",
                    source.dim(),
                    desc.family,
                    desc.state_dim()
                ),
            });
        }
        for (i, e) in self.edits.iter().enumerate() {
            if e.component >= source.count() {
                return Err(EditSetError::Dimension {
                    pointer: format!("/edits/{i}/component"),
                    message: format!("component {} but the basis has {}", e.component, source.count()),
                });
            }
            if let LayerRange::Span { end, .. } = e.layers {
                if end >= desc.layer_count {
                    return Err(schema(
                        format!("/edits/{i}/layer_end"),
                        format!("layer {end} out of range for {} layers", desc.layer_count),
                    ));
                }
            }
            if e.space != desc.family {
                return Err(schema(
                    format!("/edits/{i}/space"),
                    format!("{} edit on a {} model", e.space, desc.family),
                ));
            }
        }
        Ok(())
    }
}

/// A single edit as sent to a session: the applied form of an entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelta {
    #[serde(default)]
    name: String,
    component: usize,
    #[serde(default)]
    layer_start: usize,
    layer_end: LayerEnd,
    space: LatentSpace,
    sigma: f64,
}

/// JSON form of one [`EditSpec`], using the same layer fields as edit sets.
pub fn spec_to_json(spec: &EditSpec) -> serde_json::Value {
    let (layer_start, layer_end) = match spec.layers {
        LayerRange::All => (0, LayerEnd::All),
        LayerRange::Span { start, end } => (start, LayerEnd::Index(end)),
    };
    serde_json::to_value(RawDelta {
        name: spec.name.clone(),
        component: spec.component,
        layer_start,
        layer_end,
        space: spec.space,
        sigma: spec.sigma,
    })
    .expect("edit is plain data")
}

/// Strict parse of one edit; errors carry a JSON pointer.
pub fn spec_from_json(value: serde_json::Value) -> Result<EditSpec, EditSetError> {
    let raw: RawDelta = serde_path_to_error::deserialize(value)
        .map_err(|e| schema(to_pointer(e.path()), e.into_inner().to_string()))?;
    let layers = match raw.layer_end {
        LayerEnd::All if raw.layer_start != 0 => {
            return Err(schema("/layer_start", "must be 0 when layer_end is \"all\""))
        }
        LayerEnd::All => LayerRange::All,
        LayerEnd::Index(end) if end < raw.layer_start => {
            return Err(schema(
                "/layer_end",
                format!("layer_end {end} is before layer_start {}", raw.layer_start),
            ))
        }
        LayerEnd::Index(end) => LayerRange::span(raw.layer_start, end),
    };
    if !raw.sigma.is_finite() {
        return Err(schema("/sigma", "must be finite"));
    }
    Ok(EditSpec::new(raw.name, raw.component, layers, raw.space, raw.sigma))
}

pub fn save_edit_set(set: &EditSet, path: &Path) -> Result<(), EditSetError> {
    fs::write(path, set.to_json() + "\n")?;
    Ok(())
}

pub fn load_edit_set(path: &Path) -> Result<EditSet, EditSetError> {
    EditSet::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EditSet {
        EditSet::new("abc", "basis.gspc")
            .with_edit(EditEntry::new("zoom", 1, LayerRange::span(0, 2), LatentSpace::Style))
            .with_edit(EditEntry {
                sigma_range: [-20.0, 20.0],
                sigma_default: 1.5,
                ..EditEntry::new("all", 0, LayerRange::All, LatentSpace::Style)
            })
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let json = s.to_json();
        assert!(json.contains("\"layer_end\": \"all\""));
        assert_eq!(EditSet::from_json(&json).unwrap(), s);
    }

    #[test]
    fn errors_carry_pointers() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["edits"][1]["colour"] = "red".into();
        let e = EditSet::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.pointer(), Some("/edits/1/colour"), "{e}");

        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["edits"][0]["layer_start"] = 3.into();
        let e = EditSet::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.pointer(), Some("/edits/0/layer_end"));

        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["edits"][0]["component"] = "one".into();
        let e = EditSet::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.pointer(), Some("/edits/0/component"));

        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["edits"][0]["layer_end"] = "most".into();
        let e = EditSet::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.pointer(), Some("/edits/0/layer_end"));
    }

    #[test]
    fn delta_round_trip() {
        let spec = EditSpec::new("a", 2, LayerRange::span(1, 3), LatentSpace::Skip, -0.5);
        assert_eq!(spec_from_json(spec_to_json(&spec)).unwrap(), spec);
        let bad = serde_json::json!({"component": 0, "layer_start": 2, "layer_end": 1, "space": "skip", "sigma": 1.0});
        assert_eq!(spec_from_json(bad).unwrap_err().pointer(), Some("/layer_end"));
    }

    #[test]
    fn defaults_fill_in() {
        let s = EditSet::from_json(
            r#"{"model":"m","basis":"b","edits":[{"name":"x","component":0,"layer_end":"all","space":"skip"}]}"#,
        )
        .unwrap();
        assert_eq!(s.edits[0].sigma_range, DEFAULT_SIGMA_RANGE);
        assert_eq!(s.edits[0].layers, LayerRange::All);
    }
}
