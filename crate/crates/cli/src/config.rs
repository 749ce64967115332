//! Flat `key = value` experiment configuration files.
//!
//! Lines are `key = value`, `#` starts a comment, no nesting. Unknown keys
//! are an error that lists every offender, so a typo cannot silently fall
//! back to a default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Experiment {
    MnistClustering,
    FmnistClustering,
    InterpMarkov,
    Lorenz,
    KSweep,
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist_clustering" => Ok(Experiment::MnistClustering),
            "fmnist_clustering" => Ok(Experiment::FmnistClustering),
            "interp_markov" => Ok(Experiment::InterpMarkov),
            "lorenz" => Ok(Experiment::Lorenz),
            "k_sweep" => Ok(Experiment::KSweep),
            other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Method {
    Kmeans,
    ClassicalSom,
    GbSom,
    VqVaeLike,
    NoGrads,
    GradCopy,
    SomVae,
    SomVaeProb,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::ClassicalSom => "classical_som",
            Method::GbSom => "gb_som",
            Method::VqVaeLike => "vqvae_like",
            Method::NoGrads => "no_grads",
            Method::GradCopy => "gradcopy",
            Method::SomVae => "som_vae",
            Method::SomVaeProb => "som_vae_prob",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Method::Kmeans),
            "classical_som" => Ok(Method::ClassicalSom),
            "gb_som" => Ok(Method::GbSom),
            "vqvae_like" => Ok(Method::VqVaeLike),
            "no_grads" => Ok(Method::NoGrads),
            "gradcopy" => Ok(Method::GradCopy),
            "som_vae" => Ok(Method::SomVae),
            "som_vae_prob" => Ok(Method::SomVaeProb),
            other => Err(CliError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Everything an experiment run needs, with desk-scale defaults.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out: PathBuf,

    pub grid_height: usize,
    pub grid_width: usize,
    pub latent_dim: usize,
    /// Hidden layer widths of the encoder; the decoder mirrors them.
    pub encoder_hidden: Vec<usize>,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,

    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,

    pub desk_scale: bool,
    pub train_subset: usize,
    pub test_subset: usize,

    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub classical_som_eta: f64,
    pub classical_som_epochs: usize,

    pub interp_series: usize,
    pub interp_frames: usize,
    pub mle_epsilon: f64,

    pub lorenz_trajectories: usize,
    pub lorenz_steps: usize,
    pub lorenz_burn_in: usize,
    pub lorenz_dt: f64,
    pub entropy_window: usize,

    pub k_sweep: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::MnistClustering,
            method: Method::SomVae,
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("runs/out"),
            grid_height: 4,
            grid_width: 4,
            latent_dim: 64,
            encoder_hidden: vec![256],
            alpha: 1.0,
            beta: 0.9,
            gamma: 1.8,
            tau: 1.4,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            train_images: PathBuf::from("data/mnist/train-images-idx3-ubyte"),
            train_labels: PathBuf::from("data/mnist/train-labels-idx1-ubyte"),
            test_images: PathBuf::from("data/mnist/t10k-images-idx3-ubyte"),
            test_labels: PathBuf::from("data/mnist/t10k-labels-idx1-ubyte"),
            desk_scale: true,
            train_subset: 10_000,
            test_subset: 2_000,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            classical_som_eta: 0.3,
            classical_som_epochs: 10,
            interp_series: 200,
            interp_frames: 64,
            mle_epsilon: 0.0,
            lorenz_trajectories: 20,
            lorenz_steps: 2000,
            lorenz_burn_in: 1000,
            lorenz_dt: 0.01,
            entropy_window: 100,
            k_sweep: vec![4, 16, 64],
        }
    }
}

impl ExperimentConfig {
    pub fn k(&self) -> usize {
        self.grid_height * self.grid_width
    }

    /// Parse a config file; every key is validated.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut unknown = Vec::new();
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }

        for (key, value) in &entries {
            if !cfg.apply(key, value)? {
                unknown.push(key.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(CliError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one key; false when the key is not recognized.
    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| CliError::Config(format!("{key}: cannot parse `{value}`: {e}")))
        }
        fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: fmt::Display,
        {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| num(key, s))
                .collect()
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(CliError::Config(format!("{key}: expected true/false, got `{other}`"))),
            }
        }

        match key {
            "experiment" => self.experiment = value.parse()?,
            "method" => self.method = value.parse()?,
            "seeds" => self.seeds = list(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "grid_height" => self.grid_height = num(key, value)?,
            "grid_width" => self.grid_width = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "encoder_hidden" => self.encoder_hidden = list(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "train_images" => self.train_images = PathBuf::from(value),
            "train_labels" => self.train_labels = PathBuf::from(value),
            "test_images" => self.test_images = PathBuf::from(value),
            "test_labels" => self.test_labels = PathBuf::from(value),
            "desk_scale" => self.desk_scale = flag(key, value)?,
            "train_subset" => self.train_subset = num(key, value)?,
            "test_subset" => self.test_subset = num(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = num(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, value)?,
            "kmeans_tol" => self.kmeans_tol = num(key, value)?,
            "classical_som_eta" => self.classical_som_eta = num(key, value)?,
            "classical_som_epochs" => self.classical_som_epochs = num(key, value)?,
            "interp_series" => self.interp_series = num(key, value)?,
            "interp_frames" => self.interp_frames = num(key, value)?,
            "mle_epsilon" => self.mle_epsilon = num(key, value)?,
            "lorenz_trajectories" => self.lorenz_trajectories = num(key, value)?,
            "lorenz_steps" => self.lorenz_steps = num(key, value)?,
            "lorenz_burn_in" => self.lorenz_burn_in = num(key, value)?,
            "lorenz_dt" => self.lorenz_dt = num(key, value)?,
            "entropy_window" => self.entropy_window = num(key, value)?,
            "k_sweep" => self.k_sweep = list(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.grid_height * self.grid_width == 0 {
            return Err(CliError::Config("grid dims must be positive".into()));
        }
        Ok(())
    }

    /// Grid dims for a sweep value of k: the most square factorization.
    pub fn grid_dims_for_k(k: usize) -> (usize, usize) {
        let mut h = (k as f64).sqrt() as usize;
        while h > 1 && k % h != 0 {
            h -= 1;
        }
        (h.max(1), k / h.max(1))
    }
}
