use std::io::Write;
use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use hl7_portal::server::{PortalServer, ServerConfig, DEFAULT_LOG_FILE};
use log::{error, info};

/// HL7 portal: serves patient demographics from HL7 servers to line-protocol clients.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TCP port for client connections (0 picks a free port)
    #[arg(long, env = "HL7PORTAL_PORT", default_value_t = 7000)]
    port: u16,

    #[arg(long, env = "HL7PORTAL_BIND", default_value = "0.0.0.0")]
    bind: IpAddr,

    /// Directory holding languages.txt and the language pack files
    #[arg(long, env = "HL7PORTAL_LANGUAGES_DIR", default_value = "languages")]
    languages_dir: PathBuf,

    /// PID field mapping: `standard`, `simopac`, or a mapping file path
    #[arg(long, env = "HL7PORTAL_MAPPING", default_value = "standard")]
    mapping: String,

    #[arg(long, env = "HL7PORTAL_LOG_FILE", default_value = DEFAULT_LOG_FILE)]
    log_file: PathBuf,

    #[arg(long, env = "HL7PORTAL_MAX_CLIENTS", default_value_t = 1024,
          value_parser = clap::value_parser!(u32).range(1..))]
    max_clients: u32,

    #[arg(long, env = "HL7PORTAL_UPSTREAM_TIMEOUT_MS", default_value_t = 5000,
          value_parser = clap::value_parser!(u64).range(1..))]
    upstream_timeout_ms: u64,

    /// Disconnect clients idle for longer than this
    #[arg(long, env = "HL7PORTAL_IDLE_TIMEOUT_SECS", default_value_t = 600,
          value_parser = clap::value_parser!(u64).range(1..))]
    idle_timeout_secs: u64,
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = ServerConfig {
        listen_addr: args.bind,
        listen_port: args.port,
        languages_dir: args.languages_dir,
        mapping: args.mapping,
        log_path: args.log_file,
        max_clients: args.max_clients as usize,
        upstream_timeout: Duration::from_millis(args.upstream_timeout_ms),
        idle_timeout: Duration::from_secs(args.idle_timeout_secs),
    };

    let server = match PortalServer::bind(config).await {
        Ok(s) => s,
        Err(e) => {
            error!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let registry = server.registry();
    info!(
        "languages: {}",
        registry.snapshot().codes().collect::<Vec<_>>().join(", ")
    );

    // SIGHUP re-reads the language packs
    #[cfg(unix)]
    tokio::spawn(async move {
        use tokio::signal::unix::{signal, SignalKind};
        let Ok(mut hup) = signal(SignalKind::hangup()) else {
            return;
        };
        while hup.recv().await.is_some() {
            if let Ok(reg) = registry.reload() {
                info!(
                    "reloaded languages: {}",
                    reg.codes().collect::<Vec<_>>().join(", ")
                );
            }
        }
    });

    println!("listening on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    server.run(shutdown_signal()).await;
    ExitCode::SUCCESS
}
