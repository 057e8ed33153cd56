//! Network front end for the classroom engine: JSON-over-HTTP routes, a
//! server-sent live tally channel, a chat webhook, and a seeded simulator
//! that exercises all of them.

pub mod app;
pub mod chat;
pub mod clock;
pub mod config;
pub mod provider;
pub mod sim;

use std::net::SocketAddr;

pub use app::{router, ApiError, AppState, LiveEvent, Shared};
pub use config::{Config, ConfigError};

/// Binds `addr` and serves until the listener fails.
pub async fn serve(state: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Serves on an ephemeral loopback port in the background.
pub async fn spawn_loopback(state: Shared) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, router(state)).await;
    });
    Ok((addr, handle))
}
