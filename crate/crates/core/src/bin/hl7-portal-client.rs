use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use hl7_portal::client::{run, PortalClient, Source};

/// Sends commands to an HL7 portal and prints its replies.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,

    #[arg(long, default_value_t = 7000)]
    port: u16,

    /// Read commands from a script file, one per line
    #[arg(long, conflicts_with = "command")]
    script: Option<PathBuf>,

    /// Command to send; repeatable
    #[arg(short = 'c', long = "command")]
    command: Vec<String>,

    /// Exit with status 1 if any reply is NOK
    #[arg(long)]
    strict: bool,

    /// Seconds to wait for each reply
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let source = match (args.script, args.command.is_empty()) {
        (Some(path), _) => Source::Script(path),
        (None, false) => Source::Inline(args.command),
        (None, true) => Source::Interactive,
    };
    let mut client = match PortalClient::connect(&args.host, args.port, Duration::from_secs(5)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = client.set_read_timeout(Some(Duration::from_secs(args.timeout))) {
        eprintln!("{e}");
        return ExitCode::from(2);
    }
    let stdin = io::stdin();
    match run(&mut client, &source, stdin.lock(), &mut io::stdout().lock()) {
        Ok(summary) => ExitCode::from(summary.exit_code(args.strict) as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
