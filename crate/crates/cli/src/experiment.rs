//! Seeded multi-run experiment orchestration: dataset preparation, method
//! dispatch, metric evaluation and artifact output.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somvae::data::idx::ImageDataset;
use somvae::data::{interpolation_series, load_idx, ANCHOR_COUNT};
use somvae::{
    kmeans_fit, mle_transitions, nll, nmi, purity, train, Activation, AdamConfig, KMeansConfig,
    LabelPair, LossWeights, Mlp, ModelVariant, Neighborhood, OutputActivation, SomGrid,
    SomTrainConfig, SomVae, StateSequence, Tensor2, TrainConfig, TrainData,
};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{Experiment, ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::report::{write_atomic, MetricRow, RunReport};

/// Outcome of fitting one method for one seed.
pub struct FitOutcome {
    pub test_assignments: Vec<usize>,
    pub model: Option<SomVae>,
}

pub fn adam_config(cfg: &ExperimentConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        epsilon: cfg.adam_epsilon,
    }
}

fn variant_for(method: Method) -> Result<ModelVariant> {
    Ok(match method {
        Method::GbSom => ModelVariant::gb_som(),
        Method::VqVaeLike => ModelVariant::vq_vae_like(),
        Method::NoGrads => ModelVariant::no_grads(),
        Method::GradCopy => ModelVariant::gradcopy(),
        Method::SomVae => ModelVariant::som_vae(),
        Method::SomVaeProb => ModelVariant::som_vae_prob(),
        Method::Kmeans | Method::ClassicalSom => {
            return Err(CliError::Run(format!(
                "{method} is not a gradient-trained model variant"
            )))
        }
    })
}

/// Build the model for a gradient-trained method.
pub fn build_model(
    cfg: &ExperimentConfig,
    method: Method,
    input_dim: usize,
    grid_h: usize,
    grid_w: usize,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<SomVae> {
    let variant = variant_for(method)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LossWeights {
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
        tau: cfg.tau,
    };
    let (encoder, decoder, grid_dim) = if variant.identity_nets {
        (Mlp::identity(input_dim), Mlp::identity(input_dim), input_dim)
    } else {
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(&cfg.encoder_hidden);
        enc_dims.push(cfg.latent_dim);
        let mut dec_dims: Vec<usize> = enc_dims.clone();
        dec_dims.reverse();
        let encoder = Mlp::new(enc_dims, Activation::Relu, OutputActivation::Identity, &mut rng)
            .map_err(CliError::Core)?;
        let decoder =
            Mlp::new(dec_dims, Activation::Relu, output_activation, &mut rng).map_err(CliError::Core)?;
        (encoder, decoder, cfg.latent_dim)
    };
    let grid = SomGrid::new(grid_h, grid_w, grid_dim, &mut rng).map_err(CliError::Core)?;
    SomVae::new(encoder, decoder, grid, variant, weights).map_err(CliError::Core)
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: adam_config(cfg),
        seed,
    }
}

fn kmeans_config(cfg: &ExperimentConfig) -> KMeansConfig {
    KMeansConfig {
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
        restarts: cfg.kmeans_restarts,
    }
}

/// Fit one method on static training data, returning test assignments.
pub fn fit_static(
    cfg: &ExperimentConfig,
    method: Method,
    grid_h: usize,
    grid_w: usize,
    train_data: &Tensor2,
    test_data: &Tensor2,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<FitOutcome> {
    match method {
        Method::Kmeans => {
            let (model, _) = kmeans_fit(train_data, grid_h * grid_w, seed, &kmeans_config(cfg))
                .map_err(CliError::Core)?;
            Ok(FitOutcome {
                test_assignments: model.assign(test_data).map_err(CliError::Core)?,
                model: None,
            })
        }
        Method::ClassicalSom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grid =
                SomGrid::new(grid_h, grid_w, train_data.cols(), &mut rng).map_err(CliError::Core)?;
            let som_cfg = SomTrainConfig {
                eta: cfg.classical_som_eta,
                neighborhood: Neighborhood::Gaussian {
                    sigma: (grid_h.max(grid_w) as f64) / 2.0,
                },
                epochs: cfg.classical_som_epochs,
            };
            grid.classical_som_fit(train_data, &som_cfg, &mut rng)
                .map_err(CliError::Core)?;
            let assignments = grid.assign_batch(test_data).map_err(CliError::Core)?;
            Ok(FitOutcome {
                test_assignments: assignments,
                model: None,
            })
        }
        Method::SomVaeProb => Err(CliError::Run(
            "som_vae_prob needs a temporal experiment (interp_markov or lorenz)".into(),
        )),
        _ => {
            let mut model = build_model(
                cfg,
                method,
                train_data.cols(),
                grid_h,
                grid_w,
                output_activation,
                seed,
            )?;
            train(&mut model, TrainData::Static(train_data), &train_config(cfg, seed))
                .map_err(CliError::Core)?;
            let assignments = model.assign(test_data).map_err(CliError::Core)?;
            Ok(FitOutcome {
                test_assignments: assignments,
                model: Some(model),
            })
        }
    }
}

fn clustering_row(
    method_name: &str,
    seed: u64,
    labels: &[usize],
    assignments: &[usize],
    nll: Option<f64>,
) -> Result<MetricRow> {
    let pair = LabelPair::new(labels, assignments).map_err(CliError::Core)?;
    Ok(MetricRow {
        method: method_name.to_string(),
        seed,
        purity: purity(&pair),
        nmi: nmi(&pair),
        nll,
    })
}

pub struct LoadedSplits {
    pub train: ImageDataset,
    pub test: ImageDataset,
}

pub fn load_image_splits(cfg: &ExperimentConfig) -> Result<LoadedSplits> {
    let train_full = load_idx(&cfg.train_images, &cfg.train_labels).map_err(CliError::Core)?;
    let test_full = load_idx(&cfg.test_images, &cfg.test_labels).map_err(CliError::Core)?;
    let (train, test) = if cfg.desk_scale {
        (train_full.take(cfg.train_subset), test_full.take(cfg.test_subset))
    } else {
        (train_full, test_full)
    };
    Ok(LoadedSplits { train, test })
}

fn save_model_checkpoint(
    out: &Path,
    method: Method,
    seed: u64,
    model: &SomVae,
    image_rows: usize,
    image_cols: usize,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("checkpoint_{method}_seed{seed}.ckpt"));
    checkpoint::save(
        &path,
        &Checkpoint {
            model: model.clone(),
            seed,
            image_rows,
            image_cols,
        },
    )?;
    Ok(path)
}

/// Static clustering benchmark on an image dataset.
fn run_image_clustering(cfg: &ExperimentConfig) -> Result<RunReport> {
    let splits = load_image_splits(cfg)?;
    let mut report = RunReport::default();
    for &seed in &cfg.seeds {
        let outcome = fit_static(
            cfg,
            cfg.method,
            cfg.grid_height,
            cfg.grid_width,
            &splits.train.images,
            &splits.test.images,
            OutputActivation::Sigmoid,
            seed,
        )?;
        report.push(clustering_row(
            cfg.method.name(),
            seed,
            &splits.test.labels,
            &outcome.test_assignments,
            None,
        )?);
        if let Some(model) = &outcome.model {
            save_model_checkpoint(
                &cfg.out,
                cfg.method,
                seed,
                model,
                splits.train.image_rows,
                splits.train.image_cols,
            )?;
        }
    }
    Ok(report)
}

/// Purity/NMI sweep over the number of map nodes.
fn run_k_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let splits = load_image_splits(cfg)?;
    let mut report = RunReport::default();
    for &k in &cfg.k_sweep {
        let (h, w) = ExperimentConfig::grid_dims_for_k(k);
        let name = format!("{}_k{k}", cfg.method.name());
        for &seed in &cfg.seeds {
            let outcome = fit_static(
                cfg,
                cfg.method,
                h,
                w,
                &splits.train.images,
                &splits.test.images,
                OutputActivation::Sigmoid,
                seed,
            )?;
            report.push(clustering_row(
                &name,
                seed,
                &splits.test.labels,
                &outcome.test_assignments,
                None,
            )?);
        }
    }
    Ok(report)
}

/// One seeded batch of interpolation series over a training pool.
pub struct InterpData {
    pub frames: Tensor2,
    /// (prev, cur) frame indices within each series.
    pub pairs: Vec<(usize, usize)>,
    /// Frame ranges of each series, as (start, len).
    pub series_bounds: Vec<(usize, usize)>,
}

pub fn build_interp_data(pool: &ImageDataset, count: usize, frames_per: usize, seed: u64) -> Result<InterpData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d7e_0bad_c0ff_ee00);
    let dim = pool.images.cols();
    let mut all = Vec::with_capacity(count * frames_per * dim);
    let mut pairs = Vec::new();
    let mut series_bounds = Vec::new();
    for s in 0..count {
        let mut anchors: [Vec<f64>; ANCHOR_COUNT] = Default::default();
        let mut labels = [0usize; ANCHOR_COUNT];
        for j in 0..ANCHOR_COUNT {
            let idx = rng.random_range(0..pool.len());
            anchors[j] = pool.images.row(idx).to_vec();
            labels[j] = pool.labels[idx];
        }
        let series = interpolation_series(&anchors, labels, frames_per).map_err(CliError::Core)?;
        let base = s * frames_per;
        for t in 1..frames_per {
            pairs.push((base + t - 1, base + t));
        }
        series_bounds.push((base, frames_per));
        all.extend_from_slice(series.frames.data());
    }
    Ok(InterpData {
        frames: Tensor2::from_vec(count * frames_per, dim, all).map_err(CliError::Core)?,
        pairs,
        series_bounds,
    })
}

/// Winner sequences per series for a trained model.
pub fn winner_sequences(model: &SomVae, data: &InterpData) -> Result<Vec<StateSequence>> {
    let winners = model.assign(&data.frames).map_err(CliError::Core)?;
    Ok(data
        .series_bounds
        .iter()
        .map(|&(start, len)| winners[start..start + len].to_vec())
        .collect())
}

/// Temporal benchmark: train on interpolation series, evaluate clustering on
/// the static test split and transition quality on the training sequences.
fn run_interp_markov(cfg: &ExperimentConfig) -> Result<RunReport> {
    let splits = load_image_splits(cfg)?;
    let mut report = RunReport::default();
    let mut nll_lines = vec!["method,seed,nll_model,nll_mle".to_string()];
    for &seed in &cfg.seeds {
        let data = build_interp_data(&splits.train, cfg.interp_series, cfg.interp_frames, seed)?;
        let model = match cfg.method {
            Method::SomVaeProb => {
                let mut model = build_model(
                    cfg,
                    cfg.method,
                    data.frames.cols(),
                    cfg.grid_height,
                    cfg.grid_width,
                    OutputActivation::Sigmoid,
                    seed,
                )?;
                train(
                    &mut model,
                    TrainData::Temporal {
                        frames: &data.frames,
                        pairs: &data.pairs,
                    },
                    &train_config(cfg, seed),
                )
                .map_err(CliError::Core)?;
                model
            }
            Method::SomVae | Method::GbSom | Method::VqVaeLike | Method::GradCopy | Method::NoGrads => {
                let mut model = build_model(
                    cfg,
                    cfg.method,
                    data.frames.cols(),
                    cfg.grid_height,
                    cfg.grid_width,
                    OutputActivation::Sigmoid,
                    seed,
                )?;
                train(&mut model, TrainData::Static(&data.frames), &train_config(cfg, seed))
                    .map_err(CliError::Core)?;
                model
            }
            Method::Kmeans | Method::ClassicalSom => {
                return Err(CliError::Run(
                    "interp_markov expects a gradient-trained method; use the clustering experiments for baselines"
                        .into(),
                ))
            }
        };

        // Transition quality on the training sequences the model just saw.
        let sequences = winner_sequences(&model, &data)?;
        let k = cfg.k();
        let mle = mle_transitions(&sequences, k, cfg.mle_epsilon).map_err(CliError::Core)?;
        let nll_mle = nll(&mle, &sequences).map_err(CliError::Core)?;
        let nll_model = match &model.transitions {
            Some(t) => nll(&t.probabilities(), &sequences).map_err(CliError::Core)?,
            None => nll_mle,
        };
        nll_lines.push(format!("{},{seed},{nll_model},{nll_mle}", cfg.method.name()));

        // Clustering quality on the held-out static split.
        let assignments = model.assign(&splits.test.images).map_err(CliError::Core)?;
        report.push(clustering_row(
            cfg.method.name(),
            seed,
            &splits.test.labels,
            &assignments,
            Some(nll_model),
        )?);

        save_model_checkpoint(
            &cfg.out,
            cfg.method,
            seed,
            &model,
            splits.train.image_rows,
            splits.train.image_cols,
        )?;
        if let Some(t) = &model.transitions {
            checkpoint::save_transition_text(
                cfg.out.join(format!("transition_matrix_seed{seed}.txt")),
                &t.probabilities(),
            )?;
        }
    }
    write_atomic(cfg.out.join("transitions_nll.csv"), (nll_lines.join("\n") + "\n").as_bytes())?;
    Ok(report)
}

/// Run the configured experiment, write `metrics.csv` and `aggregate.csv`
/// under `cfg.out`, and return the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let report = match cfg.experiment {
        Experiment::MnistClustering | Experiment::FmnistClustering => run_image_clustering(cfg)?,
        Experiment::KSweep => run_k_sweep(cfg)?,
        Experiment::InterpMarkov => run_interp_markov(cfg)?,
        Experiment::Lorenz => crate::lorenz_analysis::run_lorenz_analysis(cfg)?,
    };
    std::fs::create_dir_all(&cfg.out)?;
    report.write_metrics_csv(cfg.out.join("metrics.csv"))?;
    report.write_aggregate_csv(cfg.out.join("aggregate.csv"))?;
    Ok(report)
}
