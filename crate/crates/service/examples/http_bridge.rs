//! Serves the toy generator over the bridge protocol on a local port and
//! drives it through `HttpBridge`, the same client the CLI uses for remote
//! generators.

use std::net::TcpListener;
use std::sync::Arc;

use layerpca::bridge::{bridge_handshake, initial_state, GeneratorBridge};
use layerpca::{GeneratorDescriptor, LatentSpace, ToyBridge};
use layerpca_service::{bridge_routes, HttpBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let toy = Arc::new(ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Skip, 3))?);
    let router = bridge_routes(toy.clone())?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let url = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });

    let remote = HttpBridge::new(&url)?;
    let desc = bridge_handshake(&remote)?;
    println!("{} generator at {url}: L = {}, image {:?}", desc.family, desc.layer_count, desc.image_dims);

    let z = remote.sample(2, 5, 0)?;
    let state = initial_state(&remote, &desc, &z[0])?;
    let image = remote.synthesize(&state)?;
    let local = toy.synthesize(&state)?;
    let gap = image.iter().zip(&local).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} pixels, largest gap to the in-process render {gap:.2e}", image.len());
    Ok(())
}
