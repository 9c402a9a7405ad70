use std::sync::Arc;

use layerpca::bridge::{BridgeError, GeneratorBridge, ToyBridge};
use layerpca::edit::LatentSpace;
use layerpca::toy::GeneratorDescriptor;

use crate::client::HttpBridge;

/// Opens a bridge from an endpoint string.
///
/// `http://host:port` connects over HTTP. `toy:FAMILY[:SEED][:linear]`
/// builds the in-process toy generator, for example `toy:skip:3:linear`.
pub fn open_bridge(endpoint: &str) -> Result<Arc<dyn GeneratorBridge>, BridgeError> {
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        return Ok(Arc::new(HttpBridge::new(endpoint)?));
    }
    let desc = parse_toy(endpoint).map_err(BridgeError::Unsupported)?;
    Ok(Arc::new(ToyBridge::new(desc)?))
}

pub fn parse_toy(endpoint: &str) -> Result<GeneratorDescriptor, String> {
    let mut parts = endpoint.split(':');
    if parts.next() != Some("toy") {
        return Err(format!("endpoint {endpoint:?} is neither http://... nor toy:FAMILY[:SEED][:linear]"));
    }
    let family: LatentSpace = parts
        .next()
        .ok_or_else(|| "toy endpoint needs a family, e.g. toy:style".to_string())?
        .parse()?;
    let mut seed = 0;
    let mut linear = false;
    for p in parts {
        if p == "linear" {
            linear = true;
        } else {
            seed = p.parse().map_err(|_| format!("bad toy seed {p:?}"))?;
        }
    }
    Ok(GeneratorDescriptor::toy(family, seed).linear(linear))
}
