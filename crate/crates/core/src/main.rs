use std::path::PathBuf;
use std::process::ExitCode;

use blockrg::cli::{self, EXIT_CONFIG, EXIT_DIVERGENT, EXIT_IO};
use clap::Parser;

/// Exact block-spin RG experiments driven by a JSON config.
#[derive(Parser, Debug)]
#[command(name = "blockrg", version)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for the report and CSV artifacts; the report goes to stdout
    /// when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Check the config and exit without computing.
    #[arg(long)]
    validate_only: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    ExitCode::from(real_main(args) as u8)
}

fn real_main(args: Args) -> i32 {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return EXIT_IO;
        }
    };
    let mut config = match cli::parse_config(&text) {
        Ok(c) => c,
        Err(d) => {
            eprintln!("{d}");
            return EXIT_CONFIG;
        }
    };
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    let diags = cli::validate(&config);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("{d}");
        }
        return EXIT_CONFIG;
    }
    if args.validate_only {
        println!("config is valid");
        return 0;
    }
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set thread count: {e}");
            return EXIT_CONFIG;
        }
    }
    let out = match cli::run(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return cli::exit_code(&e);
        }
    };
    match &args.out {
        Some(dir) => {
            if let Err(e) = cli::write_outputs(&out, &config.report, dir) {
                eprintln!("cannot write to {}: {e}", dir.display());
                return EXIT_IO;
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes")),
    }
    if out.report.divergent {
        eprintln!("expansion flagged as divergent");
        return EXIT_DIVERGENT;
    }
    0
}
