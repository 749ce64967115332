//! Interpretable discrete representation learning on a self-organizing
//! codebook.
//!
//! The crate provides the model (encoder/decoder networks over a 2-D lattice
//! of embeddings, with an optional learned Markov transition model), the
//! small reverse-mode autodiff core it trains with, classical baselines
//! (iterative map training, k-means), data sources (IDX images, interpolated
//! image series, the Lorenz system) and the evaluation metrics (purity,
//! normalized mutual information, windowed entropy).

pub mod adam;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod markov;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod som;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Error, Result};
pub use kmeans::{kmeans_fit, kmeanspp_init, KMeansConfig, KMeansModel};
pub use markov::{mle_transitions, nll, sample_trajectory, StateSequence, TransitionModel};
pub use metrics::{
    discretize_state, nmi, purity, shannon_entropy, subtrajectory_entropies, EntropyWindow,
    LabelPair,
};
pub use mlp::{Activation, Mlp, MlpTapeParams, OutputActivation};
pub use model::{
    train, BatchLoss, EpochLog, LossWeights, ModelVariant, SomVae, StepOutput, TrainConfig,
    TrainData,
};
pub use som::{GridCoord, LatentCode, Neighborhood, SomGrid, SomTrainConfig};
pub use tape::{GradTape, Gradients, NodeId};
pub use tensor::Tensor2;
