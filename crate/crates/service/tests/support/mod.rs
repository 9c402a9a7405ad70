//! Runs a router on a background runtime for blocking clients.

#![allow(dead_code)]

use std::net::TcpListener;

use axum::Router;

/// Serves `router` on an ephemeral port and returns its base URL. The server
/// lives until the test process exits.
pub fn spawn(router: Router) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{addr}")
}
