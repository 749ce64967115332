use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use somvae_cli::checkpoint;
use somvae_cli::config::ExperimentConfig;
use somvae_cli::error::{CliError, Result};
use somvae_cli::experiment::{build_interp_data, load_image_splits, run_experiment};
use somvae_cli::lorenz_analysis::run_lorenz_analysis;
use somvae_cli::pgm::export_map_images;
use somvae_cli::report::RunReport;

#[derive(Parser)]
#[command(name = "somvae", about = "Discrete representation learning experiments", version)]
struct Cli {
    /// Experiment configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Force desk-scale subsetting regardless of the config.
    #[arg(long, global = true, default_value_t = false)]
    desk_scale: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method over all seeds and write metrics.
    Train,
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the Lorenz interpretability analysis (model + k-means baseline).
    Lorenz,
    /// Decode every map node of a checkpoint into PGM tiles and a montage.
    ExportMap {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate interpolation time series and write them as IDX files.
    GenInterp,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.desk_scale {
        cfg.desk_scale = true;
    }
    Ok(cfg)
}

fn print_report(report: &RunReport) {
    for row in &report.rows {
        match row.nll {
            Some(nll) => println!(
                "{} seed {}: purity {:.4}  nmi {:.4}  nll {:.4}",
                row.method, row.seed, row.purity, row.nmi, nll
            ),
            None => println!(
                "{} seed {}: purity {:.4}  nmi {:.4}",
                row.method, row.seed, row.purity, row.nmi
            ),
        }
    }
    for agg in report.aggregates() {
        println!(
            "{} {}: {:.4} +/- {:.4}",
            agg.method, agg.metric, agg.mean, agg.stderr
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let report = run_experiment(&cfg)?;
            print_report(&report);
            println!("wrote {}", cfg.out.join("metrics.csv").display());
        }
        Command::Eval { checkpoint: path } => {
            let cfg = load_config(cli)?;
            let ckpt = checkpoint::load(path)?;
            let splits = load_image_splits(&cfg)?;
            let assignments = ckpt.model.assign(&splits.test.images).map_err(CliError::Core)?;
            let pair = somvae::LabelPair::new(&splits.test.labels, &assignments).map_err(CliError::Core)?;
            println!(
                "checkpoint {} (seed {}): purity {:.4}  nmi {:.4}",
                path.display(),
                ckpt.seed,
                somvae::purity(&pair),
                somvae::nmi(&pair)
            );
        }
        Command::Lorenz => {
            let mut cfg = load_config(cli)?;
            cfg.experiment = somvae_cli::config::Experiment::Lorenz;
            let report = run_lorenz_analysis(&cfg)?;
            std::fs::create_dir_all(&cfg.out)?;
            report.write_metrics_csv(cfg.out.join("metrics.csv"))?;
            report.write_aggregate_csv(cfg.out.join("aggregate.csv"))?;
            print_report(&report);
            println!("wrote {}", cfg.out.join("entropies.csv").display());
        }
        Command::ExportMap { checkpoint: path } => {
            let cfg = load_config(cli)?;
            let ckpt = checkpoint::load(path)?;
            let files = export_map_images(&ckpt, &cfg.out)?;
            println!("wrote {} tiles to {}", files.len(), cfg.out.display());
        }
        Command::GenInterp => {
            let cfg = load_config(cli)?;
            let splits = load_image_splits(&cfg)?;
            let seed = *cfg.seeds.first().unwrap_or(&0);
            let data = build_interp_data(&splits.train, cfg.interp_series, cfg.interp_frames, seed)?;
            std::fs::create_dir_all(&cfg.out)?;
            // Frames as IDX images; labels carry the series index modulo 256
            // so consecutive frames of one series can be grouped back.
            let rows = splits.train.image_rows;
            let cols = splits.train.image_cols;
            let pixels: Vec<u8> = data
                .frames
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let labels: Vec<u8> = data
                .series_bounds
                .iter()
                .enumerate()
                .flat_map(|(s, &(_, len))| std::iter::repeat((s % 256) as u8).take(len))
                .collect();
            somvae::data::write_idx(
                cfg.out.join("interp-images-idx3-ubyte"),
                cfg.out.join("interp-series-idx1-ubyte"),
                &pixels,
                &labels,
                rows,
                cols,
            )
            .map_err(CliError::Core)?;
            println!(
                "wrote {} series x {} frames to {}",
                cfg.interp_series,
                cfg.interp_frames,
                cfg.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
