use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use sketch2cad_nets::Pipeline;
use sketch2cad_serve::{router, AppState};

#[derive(Parser)]
#[command(name = "sketch2cad-serve", version, about = "Serve the sketch parser over HTTP")]
struct Args {
    #[arg(long)]
    prim_ckpt: PathBuf,
    #[arg(long)]
    cons_ckpt: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let state = AppState::loading();
    let addr = SocketAddr::new(args.host, args.port);
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            log::error!("bind {addr}: {e}");
            return std::process::ExitCode::from(3);
        }
    };
    log::info!("listening on {addr}");

    // Health reports 503 until both checkpoints are in memory.
    let loader = state.clone();
    let (p, c) = (args.prim_ckpt, args.cons_ckpt);
    tokio::task::spawn_blocking(move || match Pipeline::load(&p, &c) {
        Ok(pipe) => {
            log::info!("loaded checkpoints {} / {}", pipe.prim_id().unwrap_or("-"), pipe.cons_id());
            loader.install(pipe);
        }
        Err(e) => log::error!("loading checkpoints failed: {e}"),
    });

    if let Err(e) = axum::serve(listener, router(state)).await {
        log::error!("server error: {e}");
        return std::process::ExitCode::FAILURE;
    }
    std::process::ExitCode::SUCCESS
}
