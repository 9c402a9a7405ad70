//! HTTP front end for `layerpca`: the generator-bridge protocol, a blocking
//! bridge client, and the session API used by the exploration UI.

pub mod api;
pub mod bridge_server;
pub mod client;
pub mod endpoint;
pub mod error;
pub mod wire;

pub use api::{service_router, AppState, LoadedDirections};
pub use bridge_server::bridge_routes;
pub use client::HttpBridge;
pub use endpoint::open_bridge;
