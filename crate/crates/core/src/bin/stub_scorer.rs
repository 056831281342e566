//! Reference external scorer for protocol tests. Reads a batch of request
//! lines from stdin and writes one response line per request to stdout, or
//! serves the same exchange at `POST /score` with `--http`.

use std::io::{BufRead, Write};

use clap::{Parser, ValueEnum};
use cogscan::protocol::{serve_stub_http, stub_respond, StubBehavior};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Keyword,
}

#[derive(Parser)]
#[command(name = "stub-scorer", version, about = "Reference scorer speaking the NDJSON scoring protocol")]
struct Args {
    #[arg(long, value_enum, default_value = "uniform")]
    mode: Mode,
    /// Never answer this id (repeatable).
    #[arg(long = "drop-id")]
    drop_id: Vec<String>,
    /// Answer this id with probabilities that do not sum to one (repeatable).
    #[arg(long = "malformed-id")]
    malformed_id: Vec<String>,
    /// Emit responses in a shuffled order drawn from this seed.
    #[arg(long)]
    shuffle: Option<u64>,
    /// Exit with this status after answering.
    #[arg(long, default_value_t = 0)]
    exit_code: i32,
    /// Serve HTTP on this address instead of using stdin/stdout.
    #[arg(long)]
    http: Option<String>,
}

fn main() {
    env_logger::init();
    let args = Args::parse();
    let behavior = StubBehavior {
        keyword: matches!(args.mode, Mode::Keyword),
        drop: args.drop_id.into_iter().collect(),
        malformed: args.malformed_id.into_iter().collect(),
        shuffle: args.shuffle,
    };
    if let Some(addr) = args.http {
        let server = match tiny_http::Server::http(&addr) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("stub-scorer: cannot bind {addr}: {e}");
                std::process::exit(1);
            }
        };
        eprintln!("stub-scorer: listening on {addr}");
        serve_stub_http(&server, &behavior);
        return;
    }
    let lines: Vec<String> = match std::io::stdin().lock().lines().collect() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("stub-scorer: reading stdin: {e}");
            std::process::exit(1);
        }
    };
    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
    for line in stub_respond(&lines, &behavior) {
        if writeln!(out, "{line}").is_err() {
            std::process::exit(1);
        }
    }
    if out.flush().is_err() {
        std::process::exit(1);
    }
    std::process::exit(args.exit_code);
}
