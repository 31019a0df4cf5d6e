use std::net::SocketAddr;
use std::time::Duration;

use clap::Parser;
use geolens_service::{router, spawn_reaper, AppState, ServiceConfig, MAX_SIDE};

/// Serve geolens lens sessions over HTTP.
#[derive(Debug, Parser)]
#[command(name = "geolens-serve", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "GEOLENS_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Minutes a session may sit idle before it is dropped.
    #[arg(long, env = "GEOLENS_IDLE_MINUTES", default_value_t = 30)]
    idle_minutes: u64,
    /// Largest accepted image side in pixels.
    #[arg(long, default_value_t = MAX_SIDE)]
    max_side: u32,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let state = AppState::new(ServiceConfig {
        idle_timeout: Duration::from_secs(args.idle_minutes * 60),
        max_side: args.max_side,
    });
    spawn_reaper(state.clone(), Duration::from_secs(60));
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
