use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use depthcl::commands::{self, MATRIX_FILE};
use depthcl::config::{ExperimentConfig, SuiteSpec};
use depthcl::fsutil::{read_json, write_json};
use depthcl::report::text_table;
use depthcl::{Error, Result, SEED_ENV};
use depthcl_core::metrics::SptoNormalization;

#[derive(Parser)]
#[command(version, about = "Continual unsupervised monocular depth on synthetic task sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate task datasets from a suite spec (JSON).
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over the configured task sequence.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the test split of each task; prints JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 0..)]
        tasks: Vec<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Report metrics without per-image median scaling.
        #[arg(long)]
        no_median_scale: bool,
        /// Also write the JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a matrix CSV into report.json, report.txt and heatmaps.
    Report {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Norm::PaperLiteral)]
        spto_normalization: Norm,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Norm {
    PaperLiteral,
    PerTerm,
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate { spec, out } => {
            let spec: SuiteSpec = read_json(&spec)?;
            for line in commands::generate(&spec, &out)? {
                println!("{line}");
            }
        }
        Cmd::Train { config, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            commands::train(&cfg)?;
            println!("{}", cfg.output_dir.join(MATRIX_FILE).display());
        }
        Cmd::Eval {
            checkpoint,
            tasks,
            batch,
            no_median_scale,
            out,
        } => {
            if batch == 0 {
                return Err(Error::Input(String::from("batch must be positive")));
            }
            let results = commands::eval(&checkpoint, &tasks, batch, !no_median_scale)?;
            let json = serde_json::to_string_pretty(&results).map_err(|e| Error::Input(e.to_string()))?;
            println!("{json}");
            if let Some(p) = out {
                write_json(&p, &results)?;
            }
        }
        Cmd::Report {
            matrix,
            out,
            spto_normalization,
        } => {
            let norm = match spto_normalization {
                Norm::PaperLiteral => SptoNormalization::PaperLiteral,
                Norm::PerTerm => SptoNormalization::PerTerm,
            };
            let r = commands::report(&matrix, &out, norm)?;
            print!("{}", text_table(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
