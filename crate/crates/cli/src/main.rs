use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tse_core::config::{background_name, PipelineConfig};
use tse_core::maps::BackgroundVariant;
use tse_core::runner::{
    ablation, configure_threads, dataset_cases, load_cases, phantom_cases, run_eval, run_saliency, saliency_batch,
    sweep, write_ablation, write_cases, write_saliency_batch, write_sweep, AblationReport,
};

/// Tumor saliency estimation for breast ultrasound images.
#[derive(Parser)]
#[command(name = "tse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset (image, probability map, ground truth per case).
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Add a dark distractor ellipse in the fat band.
        #[arg(long)]
        distractor: bool,
    },
    /// Estimate saliency for `image` + `prob_map`, or for every case in `dataset_dir`.
    Saliency {
        #[command(flatten)]
        common: Common,
    },
    /// Score `<id>.saliency.pgm` maps against `<id>.gt.pgm` masks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Compare the two background maps on distractor phantoms or `dataset_dir`.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Grid search over alpha, beta and gamma.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn resolve(&self) -> Result<(PipelineConfig, PathBuf)> {
        let mut config = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            config.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = Some(out.clone());
        }
        config.validate()?;
        let out = config
            .out_dir
            .clone()
            .context("no output directory: pass --out or set `out_dir`")?;
        Ok((config, out))
    }
}

fn write_manifest(config: &PipelineConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("manifest.txt");
    std::fs::write(&path, config.to_manifest()).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Phantom { common, distractor } => {
            let (mut config, out) = common.resolve()?;
            config.phantom_distractor |= distractor;
            let cases = phantom_cases(&config, config.phantom_distractor)?;
            write_cases(&cases, &out)?;
            write_manifest(&config, &out)?;
            println!("wrote {} phantoms to {}", cases.len(), out.display());
        }
        Command::Saliency { common } => {
            let (config, out) = common.resolve()?;
            if let (None, Some(dir)) = (&config.image, &config.dataset_dir) {
                let cases = load_cases(dir)?;
                let maps = saliency_batch(&cases, &config, config.background)?;
                write_saliency_batch(&cases, &maps, &config, &out)?;
                println!("wrote {} saliency maps to {}", cases.len(), out.display());
            } else {
                let s = run_saliency(&config, &out)?;
                println!(
                    "{} regions, {} iterations (converged: {}), final energy {:.6e}; artifacts in {}",
                    s.regions,
                    s.iterations,
                    s.converged,
                    s.final_energy,
                    out.display()
                );
            }
        }
        Command::Eval { common, saliency, gt } => {
            let (config, out) = common.resolve()?;
            let report = run_eval(&config, &saliency, &gt, &out)?;
            write_manifest(&config, &out)?;
            println!(
                "{} images: precision {:.4}, recall {:.4}, F {:.4}, MAE {:.4}",
                report.ids.len(),
                report.precision,
                report.recall,
                report.f_measure,
                report.mae
            );
        }
        Command::Ablate { common } => {
            let (config, out) = common.resolve()?;
            let cases = dataset_cases(&config, true)?;
            let report = ablation(&cases, &config)?;
            write_ablation(&report, &out)?;
            write_manifest(&config, &out)?;
            for (variant, reports) in [
                (BackgroundVariant::NcSquared, &report.nc2),
                (BackgroundVariant::Full, &report.full),
            ] {
                println!(
                    "bg_{}: F {:.4}, MAE {:.4}",
                    background_name(variant),
                    AblationReport::mean(reports, |r| r.f_measure),
                    AblationReport::mean(reports, |r| r.mae)
                );
            }
        }
        Command::Sweep { common } => {
            let (config, out) = common.resolve()?;
            let cases = dataset_cases(&config, config.phantom_distractor)?;
            let points = sweep(&cases, &config)?;
            write_sweep(&points, &out)?;
            write_manifest(&config, &out)?;
            let best = points
                .iter()
                .max_by(|a, b| a.f_measure.total_cmp(&b.f_measure))
                .expect("grid is non-empty");
            println!(
                "{} grid points; best F {:.4} at alpha {}, beta {}, gamma {}",
                points.len(),
                best.f_measure,
                best.alpha,
                best.beta,
                best.gamma
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
