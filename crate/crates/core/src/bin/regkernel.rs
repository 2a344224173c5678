use clap::{Parser, Subcommand};
use regkernel::harness::{self, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};
use regkernel::io::read_vector_csv;
use regkernel::sampler::enumerate_all;
use regkernel::{decompose, KVector};
use std::path::PathBuf;
use std::process::ExitCode;

/// Experiments on random d-regular digraphs and l-decompositions.
///
/// Worker threads default to the number of cores; set REGKERNEL_WORKERS to
/// override.
#[derive(Parser)]
#[command(name = "regkernel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config; writes manifest.json, trials.csv, summary.json.
    Run { config: PathBuf },
    /// Parse and check a config without running it; prints derived values.
    Validate { config: PathBuf },
    /// Print every 0/1 n x n matrix with all row and column sums d (n <= 6).
    Enumerate { n: usize, d: usize },
    /// Print the l-decomposition of the k-approximation of a vector as JSON.
    Decompose { vector: PathBuf, k: u128, d: usize },
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = harness::init_workers() {
        return fail(EXIT_CONFIG, e);
    }
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = match harness::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.exit_code(), e),
            };
            match harness::run(&cfg) {
                Ok(out) => {
                    emit(&format!("{} hard failures; reports in {}", out.hard_failures, out.out_dir.display()));
                    ExitCode::from(out.exit_code as u8)
                }
                Err(e) => fail(e.exit_code(), e),
            }
        }
        Cmd::Validate { config } => {
            let derived = harness::load_config(&config).and_then(|c| c.validate().map(|d| (c, d)));
            match derived {
                Ok((c, d)) => {
                    let v = serde_json::json!({"kind": c.kind.name(), "n": c.n, "d": c.d, "trials": c.trials, "derived": d});
                    emit(&serde_json::to_string_pretty(&v).expect("serializable"));
                    ExitCode::from(EXIT_OK as u8)
                }
                Err(e) => fail(e.exit_code(), e),
            }
        }
        Cmd::Enumerate { n, d } => match enumerate_all(n, d) {
            Ok(all) => {
                let mut text = format!("# {} matrices\n", all.len());
                for m in &all {
                    text.push_str(&m.to_text());
                    text.push('\n');
                }
                emit(text.trim_end());
                ExitCode::from(EXIT_OK as u8)
            }
            Err(e) => fail(EXIT_CONFIG, e),
        },
        Cmd::Decompose { vector, k, d } => {
            let x = match read_vector_csv(&vector) {
                Ok(x) => x,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            let dec = KVector::approx(&x, k).and_then(|y| decompose(&y, d));
            match dec {
                Ok(dec) => {
                    emit(&serde_json::to_string_pretty(&dec.to_json()).expect("serializable"));
                    ExitCode::from(EXIT_OK as u8)
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
    }
}
