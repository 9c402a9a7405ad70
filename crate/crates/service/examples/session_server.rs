//! Starts the session API on the style toy with a freshly fitted basis,
//! then creates a session, previews an edit and saves the render as PNG.
//!
//! Pass `--stay` to keep serving after the demo requests.

use std::net::SocketAddr;
use std::sync::Arc;

use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::{GeneratorDescriptor, LatentSpace, ToyBridge};
use layerpca_service::{api, service_router, AppState, LoadedDirections};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = Arc::new(ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 7))?);
    let fit = pipeline_fit(bridge.as_ref(), &FitConfig::new(FitSpace::StyleW, 10_000, 16, 0))?;
    let dirs = LoadedDirections::from_basis("toy-style", fit.basis);
    let router = service_router(AppState::new(bridge, Some(dirs), None)?)?;

    let addr: SocketAddr = ([127, 0, 0, 1], 8091).into();
    let server = std::thread::spawn(move || {
        tokio::runtime::Runtime::new().unwrap().block_on(api::serve(router, addr))
    });
    let url = format!("http://{addr}");
    let client = reqwest::blocking::Client::new();
    let created = loop {
        match client.post(format!("{url}/v1/sessions")).body(r#"{"anchor_seed": 3}"#).send() {
            Ok(resp) => break resp,
            Err(_) => std::thread::sleep(std::time::Duration::from_millis(50)),
        }
    };
    let snapshot: serde_json::Value = serde_json::from_slice(&created.bytes()?)?;
    let id = snapshot["id"].as_str().unwrap_or_default();
    println!("session {id}");

    let body = r#"{"overrides":[{"name":"coarse","component":0,"layer_start":0,"layer_end":1,"space":"style","sigma":2.0}]}"#;
    let png = client.post(format!("{url}/v1/sessions/{id}/render?format=png")).body(body).send()?.bytes()?;
    let path = std::env::temp_dir().join("layerpca-session.png");
    std::fs::write(&path, &png)?;
    println!("wrote {} ({} bytes)", path.display(), png.len());

    if std::env::args().any(|a| a == "--stay") {
        println!("serving on {url}");
        server.join().unwrap()?;
    }
    Ok(())
}
