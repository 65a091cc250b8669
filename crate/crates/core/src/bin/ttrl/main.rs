//! `ttrl`: generate datasets, run label-free adaptation, compute baselines,
//! and analyse finished runs.

mod analyze;
mod config;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ttrl_core::env::{generate_dataset, Dataset, GenParams};
use ttrl_core::evaluation::run_baselines;
use ttrl_core::policy::init_policy;

use config::{resolve, SettingFlags, Settings};
use run::{cmd_run, RunManifest, RunOptions};

const OUT_ENV: &str = "TTRL_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "ttrl",
    version,
    about = "Label-free test-time RL on a synthetic multiple-choice task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSONL.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        signal: f64,
        /// Per-question signal varies uniformly over signal * [1 - spread, 1 + spread].
        #[arg(long, default_value_t = 0.0)]
        signal_spread: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label a dataset and adapt the policy to it.
    Run {
        /// Dataset file; defaults to the one named in --manifest.
        #[arg(long, required_unless_present = "manifest")]
        data: Option<PathBuf>,
        /// Flat TOML file of settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse the dataset and settings of a finished run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Run directory.
        #[arg(long, env = OUT_ENV)]
        out: PathBuf,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[command(flatten)]
        flags: SettingFlags,
    },
    /// Direct-inference and majority-vote accuracy of the initial policy.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write baseline.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: SettingFlags,
    },
    /// Calibration bins, regression and baseline comparison for a finished
    /// run, or an ablation table with --grid.
    Analyze {
        /// Run directory.
        #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
        run: Option<PathBuf>,
        /// Run directories to tabulate by arm and seed.
        #[arg(long, num_args = 1..)]
        grid: Vec<PathBuf>,
        /// Where --grid writes its table.
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            n,
            k,
            signal,
            signal_spread,
            seed,
            out,
        } => {
            let d = generate_dataset(&GenParams::new(n, k, signal, seed).with_spread(signal_spread))?;
            d.save(&out)?;
            println!("wrote {n} questions with {k} options to {}", out.display());
        }
        Command::Run {
            data,
            config,
            manifest,
            out,
            resume,
            checkpoint_every,
            format,
            flags,
        } => {
            let previous = manifest
                .map(|m| {
                    let dir = m.parent().map(PathBuf::from).unwrap_or_default();
                    RunManifest::load(&dir).with_context(|| format!("reading {}", m.display()))
                })
                .transpose()?;
            let base = previous.as_ref().map(|m| m.config.clone()).unwrap_or_default();
            let settings = resolve(&base, config.as_deref(), &flags)?;
            let data = data
                .or_else(|| previous.as_ref().map(|m| m.dataset.clone()))
                .expect("clap requires --data");
            let checkpoint_every = checkpoint_every
                .or(previous.as_ref().map(|m| m.checkpoint_every))
                .unwrap_or(50);
            let m = cmd_run(RunOptions {
                data,
                out: out.clone(),
                settings,
                checkpoint_every,
                resume,
                csv: format == Format::Csv,
            })?;
            println!(
                "completed {} steps ({} questions skipped); manifest at {}",
                m.config.train.steps,
                m.skipped_questions,
                out.join(run::MANIFEST).display()
            );
        }
        Command::Baseline {
            data,
            config,
            out,
            flags,
        } => {
            let settings: Settings = resolve(&Settings::default(), config.as_deref(), &flags)?;
            let dataset = Dataset::load(&data)?;
            let policy = init_policy(&dataset, &settings.init)?;
            let b = run_baselines(&policy, &dataset, &settings.train)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                table::write_json(&dir.join("baseline.json"), &b)?;
            }
            println!("DI {:.4}  DIMV {:.4}", b.di, b.dimv);
        }
        Command::Analyze { run, grid, out, format } => {
            let csv = format == Format::Csv;
            match run {
                Some(dir) => analyze::cmd_analyze(&dir, csv)?,
                None => {
                    let out = out.with_context(|| format!("--grid needs --out or {OUT_ENV}"))?;
                    analyze::cmd_grid(&grid, &out, csv)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
