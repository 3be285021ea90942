use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use stigma_bench::{
    build_config, load_file_config, run, summarize, write_csv, PartialConfig,
};

/// Benchmark runner for the federation simulator.
///
/// Emits one CSV on stdout (or to --out): a row per repetition, then
/// run=mean and run=stddev rows per parameter. Exit code 0 on success,
/// 1 for a configuration problem, 2 when a simulation failed.
#[derive(Debug, Parser)]
#[command(name = "stigma-bench", version)]
struct Cli {
    /// init, consensus, training, edge-accuracy, or transfer.
    experiment: Option<String>,

    /// Institution counts to sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
    institutions: Option<Vec<u32>>,

    /// Repetitions per parameter point.
    #[arg(long, value_name = "N")]
    reps: Option<u32>,

    /// Base seed; repetition r runs with seed + r.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Leader heartbeat interval in virtual ms.
    #[arg(long, value_name = "MS")]
    leader_interval_ms: Option<f64>,

    /// Delay before a failed election round is retried, in virtual ms.
    #[arg(long, value_name = "MS")]
    vote_delay_ms: Option<f64>,

    /// Spacing between institution joins, in virtual seconds.
    #[arg(long, value_name = "S")]
    join_interval_s: Option<f64>,

    /// Coordination cost charged per message handled, in virtual ms.
    #[arg(long, value_name = "MS")]
    coord_cost_ms: Option<f64>,

    /// Link latency jitter fraction, in [0, 1).
    #[arg(long, value_name = "FRAC")]
    jitter: Option<f64>,

    /// Payload size for the transfer experiment, in bytes.
    #[arg(long, value_name = "BYTES")]
    size_bytes: Option<u64>,

    /// JSON config file; flags given here override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Write the CSV to this file instead of stdout.
    #[arg(long, value_name = "FILE.csv")]
    out: Option<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> PartialConfig {
        PartialConfig {
            experiment: self.experiment.clone(),
            institutions: self.institutions.clone(),
            reps: self.reps,
            seed: self.seed,
            leader_interval_ms: self.leader_interval_ms,
            vote_delay_ms: self.vote_delay_ms,
            join_interval_s: self.join_interval_s,
            coord_cost_ms: self.coord_cost_ms,
            jitter: self.jitter,
            size_bytes: self.size_bytes,
            out: self.out.clone(),
            cost_model: None,
            dataset: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let mut layers = Vec::new();
    if let Some(path) = &cli.config {
        match load_file_config(path) {
            Ok(layer) => layers.push(layer),
            Err(err) => {
                eprintln!("stigma-bench: {err}");
                return ExitCode::from(1);
            }
        }
    }
    layers.push(cli.overrides());

    let config = match build_config(&layers) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("stigma-bench: {err}");
            return ExitCode::from(1);
        }
    };

    let output = run(&config);
    let csv = write_csv(&config, &output.rows);
    match &config.out {
        Some(path) => {
            if let Err(err) = std::fs::write(path, &csv) {
                eprintln!("stigma-bench: cannot write {}: {err}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{csv}"),
    }

    for summary in summarize(&output.rows) {
        eprintln!(
            "{} {}: n={} mean={:.3} ms stddev={:.3} ms cv={:.1}%",
            config.kind,
            summary.parameter,
            summary.samples,
            summary.mean,
            summary.stddev,
            100.0 * summary.coefficient_of_variation(),
        );
    }
    for failure in &output.failures {
        eprintln!("stigma-bench: simulation error: {failure}");
    }
    if output.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
