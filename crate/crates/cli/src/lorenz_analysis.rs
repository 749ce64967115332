//! Lorenz-system interpretability analysis: train the configured model and a
//! k-means baseline on simulated trajectories, evaluate cluster quality
//! against attractor-basin labels, and emit windowed entropy histograms for
//! every representation space.

use somvae::data::lorenz::{make_lorenz_corpus, LorenzCorpus, LorenzParams};
use somvae::{
    discretize_state, kmeans_fit, nmi, purity, sample_trajectory, subtrajectory_entropies, train,
    KMeansConfig, LabelPair, OutputActivation, SomVae, Tensor2, TrainData,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::experiment::{build_model, train_config};
use crate::report::{write_atomic, MetricRow, RunReport};

struct Standardizer {
    mean: [f64; 3],
    std: [f64; 3],
}

impl Standardizer {
    fn fit(states: &[[f64; 3]]) -> Standardizer {
        let n = states.len() as f64;
        let mut mean = [0.0; 3];
        for s in states {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 3];
        for s in states {
            for i in 0..3 {
                var[i] += (s[i] - mean[i]) * (s[i] - mean[i]) / n;
            }
        }
        Standardizer {
            mean,
            std: var.map(|v| v.sqrt().max(1e-9)),
        }
    }

    fn apply(&self, states: &[[f64; 3]]) -> Tensor2 {
        let mut data = Vec::with_capacity(states.len() * 3);
        for s in states {
            for i in 0..3 {
                data.push((s[i] - self.mean[i]) / self.std[i]);
            }
        }
        Tensor2::from_vec(states.len(), 3, data).expect("shape by construction")
    }
}

fn concat_states(trajs: &[somvae::data::lorenz::Trajectory]) -> (Vec<[f64; 3]>, Vec<u8>) {
    let mut states = Vec::new();
    let mut basins = Vec::new();
    for t in trajs {
        states.extend_from_slice(&t.states);
        basins.extend_from_slice(&t.basins);
    }
    (states, basins)
}

/// Majority basin per map node, from training assignments. Unused nodes
/// default to basin 0.
fn node_basin_map(k: usize, winners: &[usize], basins: &[u8]) -> Vec<u8> {
    let mut counts = vec![[0usize; 2]; k];
    for (&w, &b) in winners.iter().zip(basins) {
        counts[w][b as usize] += 1;
    }
    counts.iter().map(|c| u8::from(c[1] > c[0])).collect()
}

struct EntropyRow {
    space: &'static str,
    t_start: usize,
    entropy: f64,
    changed: bool,
}

fn push_windows<T: std::hash::Hash + Eq + Copy>(
    rows: &mut Vec<EntropyRow>,
    space: &'static str,
    symbols: &[T],
    basins: &[u8],
    window: usize,
    offset: usize,
) -> Result<()> {
    if symbols.len() < window {
        return Err(CliError::Run(format!(
            "trajectory of length {} is shorter than the entropy window {window}",
            symbols.len()
        )));
    }
    for w in subtrajectory_entropies(symbols, basins, window).map_err(CliError::Core)? {
        rows.push(EntropyRow {
            space,
            t_start: offset + w.t_start,
            entropy: w.entropy,
            changed: w.basin_changed,
        });
    }
    Ok(())
}

fn method_space_name(method: Method) -> Result<&'static str> {
    match method {
        Method::SomVae => Ok("som_vae"),
        Method::SomVaeProb => Ok("som_vae_prob"),
        other => Err(CliError::Run(format!(
            "lorenz analysis trains som_vae or som_vae_prob (k-means runs as the built-in baseline); got {other}"
        ))),
    }
}

pub fn run_lorenz_analysis(cfg: &ExperimentConfig) -> Result<RunReport> {
    let space = method_space_name(cfg.method)?;
    let params = LorenzParams {
        dt: cfg.lorenz_dt,
        ..LorenzParams::default()
    };
    let mut report = RunReport::default();
    let mut entropy_rows: Vec<EntropyRow> = Vec::new();

    for &seed in &cfg.seeds {
        let corpus: LorenzCorpus = make_lorenz_corpus(
            &params,
            cfg.lorenz_trajectories,
            cfg.lorenz_steps,
            cfg.lorenz_burn_in,
            seed,
        )
        .map_err(CliError::Core)?;
        if corpus.test.is_empty() {
            return Err(CliError::Run(
                "lorenz corpus has no test trajectories; raise lorenz_trajectories".into(),
            ));
        }

        let (train_states, train_basins) = concat_states(&corpus.train);
        let scaler = Standardizer::fit(&train_states);
        let train_std = scaler.apply(&train_states);

        // Temporal pairs never cross trajectory boundaries.
        let mut pairs = Vec::new();
        let mut base = 0usize;
        for t in &corpus.train {
            for i in 1..t.len() {
                pairs.push((base + i - 1, base + i));
            }
            base += t.len();
        }

        let mut model: SomVae = build_model(
            cfg,
            cfg.method,
            3,
            cfg.grid_height,
            cfg.grid_width,
            OutputActivation::Identity,
            seed,
        )?;
        let data = match cfg.method {
            Method::SomVaeProb => TrainData::Temporal {
                frames: &train_std,
                pairs: &pairs,
            },
            _ => TrainData::Static(&train_std),
        };
        train(&mut model, data, &train_config(cfg, seed)).map_err(CliError::Core)?;

        let km_cfg = KMeansConfig {
            max_iter: cfg.kmeans_max_iter,
            tol: cfg.kmeans_tol,
            restarts: cfg.kmeans_restarts,
        };
        let (km, _) = kmeans_fit(&train_std, cfg.k(), seed, &km_cfg).map_err(CliError::Core)?;

        // Evaluation on held-out trajectories.
        let (test_states, test_basins) = concat_states(&corpus.test);
        let test_std = scaler.apply(&test_states);
        let model_assignments = model.assign(&test_std).map_err(CliError::Core)?;
        let km_assignments = km.assign(&test_std).map_err(CliError::Core)?;
        let basin_labels: Vec<usize> = test_basins.iter().map(|&b| b as usize).collect();

        let pair = LabelPair::new(&basin_labels, &model_assignments).map_err(CliError::Core)?;
        report.push(MetricRow {
            method: space.to_string(),
            seed,
            purity: purity(&pair),
            nmi: nmi(&pair),
            nll: None,
        });
        let km_pair = LabelPair::new(&basin_labels, &km_assignments).map_err(CliError::Core)?;
        report.push(MetricRow {
            method: "kmeans".to_string(),
            seed,
            purity: purity(&km_pair),
            nmi: nmi(&km_pair),
            nll: None,
        });

        // Windowed entropies per test trajectory, in four or five spaces.
        let train_winners = model.assign(&train_std).map_err(CliError::Core)?;
        let basin_of_node = node_basin_map(cfg.k(), &train_winners, &train_basins);
        let mut offset = 0usize;
        let mut cursor = 0usize;
        for traj in &corpus.test {
            let len = traj.len();
            let raw_symbols: Vec<u64> = traj.states.iter().map(discretize_state).collect();
            let basins = &traj.basins;
            push_windows(&mut entropy_rows, "real", &raw_symbols, basins, cfg.entropy_window, offset)?;
            push_windows(&mut entropy_rows, "basin", basins, basins, cfg.entropy_window, offset)?;
            let model_w = &model_assignments[cursor..cursor + len];
            push_windows(&mut entropy_rows, space, model_w, basins, cfg.entropy_window, offset)?;
            let km_w = &km_assignments[cursor..cursor + len];
            push_windows(&mut entropy_rows, "kmeans", km_w, basins, cfg.entropy_window, offset)?;

            if let Some(transitions) = &model.transitions {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a3d_7e11_0000_0000 ^ offset as u64);
                let rollout = sample_trajectory(&transitions.probabilities(), model_w[0], len, &mut rng)
                    .map_err(CliError::Core)?;
                let rollout_basins: Vec<u8> = rollout.iter().map(|&n| basin_of_node[n]).collect();
                push_windows(
                    &mut entropy_rows,
                    "markov_sampled",
                    &rollout,
                    &rollout_basins,
                    cfg.entropy_window,
                    offset,
                )?;
            }
            offset += len;
            cursor += len;
        }

        std::fs::create_dir_all(&cfg.out)?;
        checkpoint::save(
            cfg.out.join(format!("checkpoint_{}_seed{seed}.ckpt", cfg.method)),
            &Checkpoint {
                model: model.clone(),
                seed,
                image_rows: 0,
                image_cols: 0,
            },
        )?;
        checkpoint::save_grid_text(cfg.out.join(format!("grid_seed{seed}.txt")), &model.grid)?;
        if let Some(t) = &model.transitions {
            checkpoint::save_transition_text(
                cfg.out.join(format!("transition_matrix_seed{seed}.txt")),
                &t.probabilities(),
            )?;
        }
    }

    let mut csv = String::from("space,t_start,entropy,changed\n");
    for r in &entropy_rows {
        csv.push_str(&format!("{},{},{},{}\n", r.space, r.t_start, r.entropy, r.changed));
    }
    write_atomic(cfg.out.join("entropies.csv"), csv.as_bytes())?;
    Ok(report)
}
