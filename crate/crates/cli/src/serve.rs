use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cbir_core::Timestamp;
use cbir_services::broker::Broker;
use cbir_services::clock::{Clock, SystemClock};
use cbir_services::config::{BrokerConfig, ProviderConfig};
use cbir_services::http::{broker_router, provider_router};
use cbir_services::transport::HttpTransport;
use cbir_services::ServiceError;
use tokio::net::TcpListener;

use crate::error::CliError;

const PEER_TIMEOUT: Duration = Duration::from_secs(60);

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutting down");
}

async fn bind(addr: std::net::SocketAddr) -> Result<TcpListener, CliError> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Network(format!("binding {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?;
    tracing::info!(%local, "listening");
    Ok(listener)
}

fn serve_error(e: std::io::Error) -> CliError {
    ServiceError::Internal(format!("server: {e}")).into()
}

/// How often idle sessions are swept.
fn sweep_interval(idle_timeout: Duration) -> Duration {
    (idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60))
}

pub async fn broker(config: &Path) -> Result<(), CliError> {
    let loaded = BrokerConfig::load(config)?;
    let http = HttpTransport::new(PEER_TIMEOUT);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let interval = sweep_interval(loaded.settings.session_idle_timeout);
    let broker = Arc::new(Broker::new(
        loaded.settings,
        loaded.keys,
        Arc::new(http.clone()),
        Arc::new(http),
        clock,
    )?);
    let listener = bind(loaded.listen).await?;
    let sweeper = {
        let broker = broker.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(interval);
            loop {
                tick.tick().await;
                let expired = broker.expire_sessions(Timestamp::now());
                if expired > 0 {
                    tracing::info!(expired, "expired idle sessions");
                }
            }
        })
    };
    let served = axum::serve(listener, broker_router(broker))
        .with_graceful_shutdown(shutdown_signal())
        .await;
    sweeper.abort();
    served.map_err(serve_error)
}

pub async fn provider(config: &Path) -> Result<(), CliError> {
    let loaded = ProviderConfig::load(config)?;
    let listen = loaded.listen;
    let node = Arc::new(loaded.into_node(Arc::new(SystemClock)));
    tracing::info!(images = node.archive().len(), url = node.public_url(), "archive loaded");
    let listener = bind(listen).await?;
    axum::serve(listener, provider_router(node))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(serve_error)
}
