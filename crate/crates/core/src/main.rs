use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cellhom::config::load_config;
use cellhom::run::{run, EXIT_IO};

/// Homogenized elasticity tensor of a periodic voxel cell.
#[derive(Parser)]
#[command(name = "cellhom", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    config: PathBuf,
    /// Upper bound on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cellhom: {e}");
            return code(EXIT_IO);
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("cellhom: --threads must be at least 1");
            return code(EXIT_IO);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cellhom: cannot start thread pool: {e}");
            return code(EXIT_IO);
        }
    };
    if !cli.quiet {
        eprintln!(
            "cellhom: {} on {} ({} threads)",
            cfg.task.name(),
            cfg.voxel_path.display(),
            pool.current_num_threads()
        );
    }
    let outcome = pool.install(|| run(&cfg));
    if let Some(msg) = &outcome.message {
        eprintln!("cellhom: {msg}");
    } else if !cli.quiet {
        eprintln!("cellhom: wrote results to {}", cfg.output_dir.display());
    }
    code(outcome.exit_code)
}
