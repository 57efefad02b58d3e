use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hl7_portal::mock::{load_fixtures, Misbehavior, MockOptions, MockServer};
use log::error;

/// Fixture-backed HL7 server answering patient queries over MLLP.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 2575)]
    port: u16,

    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,

    /// Patient fixture file (cnp=<value> line followed by a raw PID line, per record)
    #[arg(long)]
    fixtures: PathBuf,

    /// Require this user in MSH-8
    #[arg(long, requires = "password")]
    user: Option<String>,

    #[arg(long, requires = "user")]
    password: Option<String>,

    #[arg(long, value_enum)]
    misbehave: Option<Mode>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Silent,
    Garbage,
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let fixtures = match load_fixtures(&args.fixtures) {
        Ok(f) => f,
        Err(e) => {
            error!("{}: {e}", args.fixtures.display());
            return ExitCode::FAILURE;
        }
    };
    let options = MockOptions {
        credentials: args.user.zip(args.password),
        misbehave: args.misbehave.map(|m| match m {
            Mode::Silent => Misbehavior::Silent,
            Mode::Garbage => Misbehavior::Garbage,
        }),
    };
    let server =
        match MockServer::bind(SocketAddr::new(args.bind, args.port), fixtures, options).await {
            Ok(s) => s,
            Err(e) => {
                error!("cannot listen on port {}: {e}", args.port);
                return ExitCode::FAILURE;
            }
        };
    println!("listening on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    ExitCode::SUCCESS
}
