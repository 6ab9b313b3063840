//! Shadow generation CLI.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 1 anything else.

use clap::{Parser, Subcommand};
use shadowgen_core::harness::{
    self, load_checkpoint, network_from_checkpoint, HarnessError, RunConfig,
};
use shadowgen_core::synthdata::{generate_tuples, write_dataset, Domain, GeneratorConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shadowgen", about = "Two-stage shadow generation for image composition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tuple dataset.
    GenData {
        /// Style domain, A (ellipse/capsule, warm) or B (rectangle/triangle, cool).
        #[arg(long)]
        domain: String,
        /// Number of filter-passing tuples to produce.
        #[arg(long)]
        count: usize,
        /// Base scene seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Train a model from scratch (or resume via the config).
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Load a base checkpoint's parameters and train on a new dataset.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        base: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write metrics + predictions.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Generate shadows for a composite image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Composite image (PNG).
        #[arg(long)]
        comp: PathBuf,
        /// Foreground object mask; repeat for multiple objects.
        #[arg(long = "m-fo", required = true)]
        m_fo: Vec<PathBuf>,
        #[arg(long = "m-bo")]
        m_bo: Option<PathBuf>,
        #[arg(long = "m-bs")]
        m_bs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble qualitative grids and metric tables from an eval directory.
    Report {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tuples per grid image.
        #[arg(long, default_value_t = 4)]
        rows: usize,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData {
            domain,
            count,
            seed,
            out,
            resolution,
        } => {
            let domain = Domain::parse(&domain)
                .ok_or_else(|| HarnessError::Config(format!("unknown domain {domain:?}")))?;
            let config = GeneratorConfig::new(domain, resolution);
            let tuples = generate_tuples(&config, seed, count)?;
            let manifest = write_dataset(&tuples, &out)?;
            println!(
                "wrote {} tuples (domain {}) to {}",
                manifest.tuples.len(),
                domain.as_str(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config } => {
            let config = RunConfig::from_toml_file(&config)?;
            let out = harness::train(&config)?;
            println!("final checkpoint: {}", out.final_checkpoint.display());
            if let Some(best) = out.best_checkpoint {
                println!("best checkpoint: {}", best.display());
            }
            Ok(())
        }
        Command::Finetune { config, base } => {
            let config = RunConfig::from_toml_file(&config)?;
            let out = harness::finetune(&config, &base)?;
            println!("final checkpoint: {}", out.final_checkpoint.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            out,
            batch,
        } => {
            let device = candle_core::Device::Cpu;
            let net = network_from_checkpoint(&load_checkpoint(&ckpt, &device)?, &device)?;
            let report = harness::evaluate(&net, &data, Some(&out), batch)?;
            println!(
                "{}",
                shadowgen_core::metrics::render_table(&[(
                    "eval".to_string(),
                    &report.aggregate
                )])
            );
            Ok(())
        }
        Command::Infer {
            ckpt,
            comp,
            m_fo,
            m_bo,
            m_bs,
            out,
        } => {
            let device = candle_core::Device::Cpu;
            let net = network_from_checkpoint(&load_checkpoint(&ckpt, &device)?, &device)?;
            let inputs =
                harness::load_infer_inputs(&comp, &m_fo, m_bo.as_deref(), m_bs.as_deref())?;
            let outcome = harness::infer(&net, &inputs)?;
            harness::write_infer_outputs(&out, &outcome)?;
            println!(
                "wrote {} (passes: {})",
                out.join("pred.png").display(),
                outcome.diagnostics.len()
            );
            for d in &outcome.diagnostics {
                println!("{}", serde_json::to_string(d)?);
            }
            Ok(())
        }
        Command::Report { eval, out, rows } => {
            harness::report(&eval, &out, rows)?;
            println!("report written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
