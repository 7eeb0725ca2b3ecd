use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use facetune::degrpo::Mode;
use facetune::encoding::{encoder_grad_check, EncoderConfig};
use facetune::harness::{emit_plot_data, generate_dataset, run_training, RunConfig};

#[derive(Parser)]
#[command(
    name = "facetune",
    version,
    about = "Synthetic data, training runs and gradient audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (vocab.tsv, annotations.tsv, features.tsv).
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run training and write metrics, summary and plot data.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::DeGrpo)]
        mode: ModeArg,
        /// Output directory; overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full encoder over several seeds.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Print per-tensor errors.
        #[arg(long)]
        verbose: bool,
    },
    /// Print `recurrence_round,iteration,mean_reward` rows for a run.
    PlotData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::DeGrpo)]
        mode: ModeArg,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file.
    ValidateConfig { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the run seed and the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.dataset.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    DeGrpo,
    Vanilla,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DeGrpo => Mode::DeGrpo,
            ModeArg::Vanilla => Mode::Vanilla,
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { run, out } => {
            let cfg = run.load()?;
            let data = generate_dataset(&cfg.dataset)?;
            data.save(&out)?;
            let informative = data.samples.iter().filter(|s| s.informative).count();
            println!(
                "wrote {} samples ({informative} informative, {} tokens) to {}",
                data.samples.len(),
                data.vocab.total(),
                out.display()
            );
        }
        Command::Train { run, mode, out } => {
            let cfg = run.load()?;
            let report = run_training(&cfg, mode.into())?;
            let summary = report.summary();
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(dir) = out.or_else(|| cfg.output.dir.clone()) {
                report.write(&dir, &cfg)?;
                eprintln!("artifacts written to {}", dir.display());
            }
        }
        Command::Gradcheck {
            seeds,
            tol,
            verbose,
        } => {
            let cfg = EncoderConfig {
                width: 6,
                layer_widths: vec![4, 6, 5],
                num_queries: 3,
                adapter_hidden: 5,
                shared_kv: false,
            };
            let mut worst = 0.0_f64;
            for seed in 0..seeds {
                let report = encoder_grad_check(&cfg, seed, tol)?;
                println!("seed {seed}: max_rel_err {:.3e}", report.max_rel_error());
                if verbose {
                    println!("{report}");
                }
                worst = worst.max(report.max_rel_error());
            }
            if worst > tol {
                bail!("gradient check failed: {worst:.3e} > {tol:.1e}");
            }
            println!("all {seeds} seeds within {tol:.1e}");
        }
        Command::PlotData { run, mode, out } => {
            let cfg = run.load()?;
            let report = run_training(&cfg, mode.into())?;
            write_or_print(out.as_deref(), &emit_plot_data(&report))?;
        }
        Command::ValidateConfig { path } => {
            RunConfig::load(&path).with_context(|| format!("invalid config {}", path.display()))?;
            println!("{}: ok", path.display());
        }
    }
    Ok(())
}
