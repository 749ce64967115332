//! The discrete-bottleneck autoencoder over a self-organizing codebook,
//! its loss, its training loop, and the ablation variants.
//!
//! A batch passes encoder -> winner assignment -> decoder twice (once from
//! the continuous encoding z_e, once from the assigned embedding z_q). The
//! loss combines the two reconstructions with a commitment pull between
//! z_e and z_q and a topology term on the winner's lattice neighbors; with
//! the temporal model attached, transition and smoothness terms join in.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::markov::TransitionModel;
use crate::mlp::{Mlp, MlpTapeParams};
use crate::som::{LatentCode, SomGrid};
use crate::tape::{GradTape, Gradients, NodeId};
use crate::tensor::Tensor2;

/// Weights of the loss terms: commitment (alpha), topology (beta),
/// transitions (gamma) and smoothness (tau).
#[derive(Copy, Clone, Debug)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.9,
            gamma: 1.8,
            tau: 1.4,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::usage(format!(
                    "LossWeights: {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which loss terms exist and how gradients route. The named constructors
/// cover the comparison variants.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ModelVariant {
    /// Include the ||x - x_hat_e||^2 term decoded straight from z_e.
    pub ze_reconstruction: bool,
    /// Route the gradient arriving at z_q verbatim onto z_e
    /// (straight-through); the quantized reconstruction then trains the
    /// encoder instead of the codebook.
    pub grad_copy: bool,
    /// Include the topology term on the winner's lattice neighbors.
    pub use_som: bool,
    /// Encoder and decoder are identity functions (codebook directly in data
    /// space); requires grid dim == input dim.
    pub identity_nets: bool,
    /// Attach the learned transition model and the temporal loss terms.
    pub use_prob_model: bool,
}

impl ModelVariant {
    pub fn som_vae() -> Self {
        ModelVariant {
            ze_reconstruction: true,
            grad_copy: false,
            use_som: true,
            identity_nets: false,
            use_prob_model: false,
        }
    }

    pub fn som_vae_prob() -> Self {
        ModelVariant {
            use_prob_model: true,
            ..ModelVariant::som_vae()
        }
    }

    /// Codebook trained in data space with identity networks.
    pub fn gb_som() -> Self {
        ModelVariant {
            identity_nets: true,
            ..ModelVariant::som_vae()
        }
    }

    /// Quantized autoencoder without the topology term: gradient copying
    /// plus commitment, the nearest comparison to a VQ-style model.
    pub fn vq_vae_like() -> Self {
        ModelVariant {
            ze_reconstruction: false,
            grad_copy: true,
            use_som: false,
            identity_nets: false,
            use_prob_model: false,
        }
    }

    /// Gradient copying with the topology term kept.
    pub fn gradcopy() -> Self {
        ModelVariant {
            ze_reconstruction: false,
            grad_copy: true,
            use_som: true,
            identity_nets: false,
            use_prob_model: false,
        }
    }

    /// No z_e reconstruction and no gradient copying: the encoder sees no
    /// reconstruction signal at all.
    pub fn no_grads() -> Self {
        ModelVariant {
            ze_reconstruction: false,
            grad_copy: false,
            use_som: true,
            identity_nets: false,
            use_prob_model: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grad_copy && self.ze_reconstruction {
            return Err(Error::usage(
                "ModelVariant: grad_copy and ze_reconstruction are mutually exclusive",
            ));
        }
        Ok(())
    }
}

/// Encoder, decoder, codebook grid and (optionally) the transition model.
#[derive(Clone, Debug)]
pub struct SomVae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub grid: SomGrid,
    pub transitions: Option<TransitionModel>,
    pub variant: ModelVariant,
    pub weights: LossWeights,
    /// Include the winner itself in the topology term (off by default; the
    /// winner is already pulled by commitment and reconstruction).
    pub som_includes_winner: bool,
}

impl SomVae {
    pub fn new(
        encoder: Mlp,
        decoder: Mlp,
        grid: SomGrid,
        variant: ModelVariant,
        weights: LossWeights,
    ) -> Result<Self> {
        variant.validate()?;
        weights.validate()?;
        if variant.identity_nets {
            if !encoder.is_identity() || !decoder.is_identity() {
                return Err(Error::usage(
                    "SomVae: identity_nets variant requires identity encoder/decoder",
                ));
            }
            if encoder.input_dim() != grid.dim() {
                return Err(Error::shape(
                    "SomVae::new",
                    format!("grid dim == input dim {}", encoder.input_dim()),
                    format!("{}", grid.dim()),
                ));
            }
        } else {
            if encoder.output_dim() != grid.dim() {
                return Err(Error::shape(
                    "SomVae::new",
                    format!("encoder output dim {}", encoder.output_dim()),
                    format!("grid dim {}", grid.dim()),
                ));
            }
            if decoder.input_dim() != grid.dim() {
                return Err(Error::shape(
                    "SomVae::new",
                    format!("decoder input dim {}", decoder.input_dim()),
                    format!("grid dim {}", grid.dim()),
                ));
            }
        }
        let transitions = if variant.use_prob_model {
            Some(TransitionModel::new(grid.node_count())?)
        } else {
            None
        };
        Ok(SomVae {
            encoder,
            decoder,
            grid,
            transitions,
            variant,
            weights,
            som_includes_winner: false,
        })
    }

    /// Per-sample continuous encoding and winner index.
    pub fn encode(&self, batch: &Tensor2) -> Result<Vec<LatentCode>> {
        let z_e = self.encoder.forward(batch)?;
        let winners = self.grid.assign_batch(&z_e)?;
        Ok(winners
            .into_iter()
            .enumerate()
            .map(|(r, winner)| LatentCode {
                z_e: z_e.row(r).to_vec(),
                winner,
            })
            .collect())
    }

    /// Winner indices only.
    pub fn assign(&self, batch: &Tensor2) -> Result<Vec<usize>> {
        let z_e = self.encoder.forward(batch)?;
        self.grid.assign_batch(&z_e)
    }

    /// Decode both paths: from the continuous encoding and from the winner's
    /// embedding.
    pub fn reconstruct(&self, codes: &[LatentCode]) -> Result<(Tensor2, Tensor2)> {
        let rows: Vec<Vec<f64>> = codes.iter().map(|c| c.z_e.clone()).collect();
        let z_e = Tensor2::from_rows(&rows)?;
        let winners: Vec<usize> = codes.iter().map(|c| c.winner).collect();
        let z_q = self.grid.embeddings().gather_rows(&winners);
        let x_hat_e = self.decoder.forward(&z_e)?;
        let x_hat_q = self.decoder.forward(&z_q)?;
        Ok((x_hat_e, x_hat_q))
    }

    /// Decode every embedding, row-major by grid position.
    pub fn export_map_reconstructions(&self) -> Result<Tensor2> {
        self.decoder.forward(self.grid.embeddings())
    }
}

/// Loss components of one batch, as tape nodes.
pub struct BatchLoss {
    pub total: NodeId,
    pub reconstruction_q: NodeId,
    pub reconstruction_e: Option<NodeId>,
    pub commitment: NodeId,
    pub som: Option<NodeId>,
    pub transitions: Option<NodeId>,
    pub smoothness: Option<NodeId>,
    pub winners: Vec<usize>,
    pub z_e: NodeId,
    pub encoder_params: MlpTapeParams,
    pub decoder_params: MlpTapeParams,
    pub embeddings: NodeId,
    pub logits: Option<NodeId>,
}

/// Scalar values of the loss components of one step.
#[derive(Clone, Debug, Default)]
pub struct StepOutput {
    pub total: f64,
    pub reconstruction_q: f64,
    pub reconstruction_e: f64,
    pub commitment: f64,
    pub som: f64,
    pub transitions: f64,
    pub smoothness: f64,
    pub winners: Vec<usize>,
}

impl StepOutput {
    /// (name, value) pairs in evaluation order, for diagnostics.
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("reconstruction_q", self.reconstruction_q),
            ("reconstruction_e", self.reconstruction_e),
            ("commitment", self.commitment),
            ("som", self.som),
            ("transitions", self.transitions),
            ("smoothness", self.smoothness),
        ]
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        self.components()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(name, _)| name)
    }

    fn accumulate(&mut self, other: &StepOutput) {
        self.total += other.total;
        self.reconstruction_q += other.reconstruction_q;
        self.reconstruction_e += other.reconstruction_e;
        self.commitment += other.commitment;
        self.som += other.som;
        self.transitions += other.transitions;
        self.smoothness += other.smoothness;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.reconstruction_q *= s;
        self.reconstruction_e *= s;
        self.commitment *= s;
        self.som *= s;
        self.transitions *= s;
        self.smoothness *= s;
    }
}

impl SomVae {
    /// Build the full loss for one batch on a tape. `frozen_winners` bypasses
    /// the assignment step (used by gradient checks); `prev_winners` engages
    /// the temporal terms.
    pub fn batch_loss(
        &self,
        tape: &mut GradTape,
        x: &Tensor2,
        frozen_winners: Option<&[usize]>,
        prev_winners: Option<&[usize]>,
    ) -> Result<BatchLoss> {
        let batch_rows = x.rows();
        let x_id = tape.constant(x.clone());

        let encoder_params = self.encoder.register_params(tape);
        let z_e = self.encoder.forward_tape_with(tape, x_id, &encoder_params)?;

        let winners = match frozen_winners {
            Some(w) => {
                if w.len() != batch_rows {
                    return Err(Error::shape(
                        "batch_loss",
                        format!("{batch_rows} winners"),
                        format!("{}", w.len()),
                    ));
                }
                w.to_vec()
            }
            None => self.grid.assign_batch(tape.value(z_e))?,
        };

        let embeddings = tape.leaf(self.grid.embeddings().clone());
        let z_q = tape.gather_rows(embeddings, &winners)?;

        let decoder_params = self.decoder.register_params(tape);
        let decoder_input_q = if self.variant.grad_copy {
            tape.straight_through(z_q, z_e)?
        } else {
            z_q
        };
        let x_hat_q = self.decoder.forward_tape_with(tape, decoder_input_q, &decoder_params)?;
        let reconstruction_q = tape.mean_sq_diff(x_hat_q, x_id)?;

        let reconstruction_e = if self.variant.ze_reconstruction {
            let x_hat_e = self.decoder.forward_tape_with(tape, z_e, &decoder_params)?;
            Some(tape.mean_sq_diff(x_hat_e, x_id)?)
        } else {
            None
        };

        // Plain squared distance: gradients reach both the encoder and the
        // winner embedding.
        let commitment = tape.mean_sq_diff(z_e, z_q)?;

        let som = if self.variant.use_som && self.weights.beta > 0.0 {
            Some(self.grid.som_loss(tape, embeddings, z_e, &winners, self.som_includes_winner)?)
        } else {
            None
        };

        let mut logits = None;
        let mut transitions = None;
        let mut smoothness = None;
        if let Some(prev) = prev_winners {
            let model = self.transitions.as_ref().ok_or_else(|| {
                Error::usage("batch_loss: temporal terms need the transition model attached")
            })?;
            let logits_id = tape.leaf(model.logits().clone());
            transitions = Some(model.transitions_loss(tape, logits_id, prev, &winners)?);
            smoothness = Some(model.smoothness_loss(tape, logits_id, embeddings, z_e, prev)?);
            logits = Some(logits_id);
        }

        // Zero-weighted terms stay logged but contribute neither value nor
        // gradient to the total.
        let mut total = reconstruction_q;
        if let Some(re) = reconstruction_e {
            total = tape.add(total, re)?;
        }
        if self.weights.alpha > 0.0 {
            let weighted = tape.scale(commitment, self.weights.alpha);
            total = tape.add(total, weighted)?;
        }
        if let Some(s) = som {
            let weighted = tape.scale(s, self.weights.beta);
            total = tape.add(total, weighted)?;
        }
        if let Some(t) = transitions {
            if self.weights.gamma > 0.0 {
                let weighted = tape.scale(t, self.weights.gamma);
                total = tape.add(total, weighted)?;
            }
        }
        if let Some(s) = smoothness {
            if self.weights.tau > 0.0 {
                let weighted = tape.scale(s, self.weights.tau);
                total = tape.add(total, weighted)?;
            }
        }

        Ok(BatchLoss {
            total,
            reconstruction_q,
            reconstruction_e,
            commitment,
            som,
            transitions,
            smoothness,
            winners,
            z_e,
            encoder_params,
            decoder_params,
            embeddings,
            logits,
        })
    }

    fn step_output(&self, tape: &GradTape, loss: &BatchLoss) -> StepOutput {
        let value = |id: Option<NodeId>| id.map_or(0.0, |i| tape.value(i).scalar_value());
        StepOutput {
            total: tape.value(loss.total).scalar_value(),
            reconstruction_q: tape.value(loss.reconstruction_q).scalar_value(),
            reconstruction_e: value(loss.reconstruction_e),
            commitment: tape.value(loss.commitment).scalar_value(),
            som: value(loss.som),
            transitions: value(loss.transitions),
            smoothness: value(loss.smoothness),
            winners: loss.winners.clone(),
        }
    }
}

/// What a training run consumes: independent rows, or consecutive frame
/// pairs that never cross series boundaries.
pub enum TrainData<'a> {
    Static(&'a Tensor2),
    Temporal {
        frames: &'a Tensor2,
        /// (previous frame row, current frame row) pairs.
        pairs: &'a [(usize, usize)],
    },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Mean loss components of one epoch.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean: StepOutput,
}

struct OptStates {
    enc_w: Vec<AdamState>,
    enc_b: Vec<AdamState>,
    dec_w: Vec<AdamState>,
    dec_b: Vec<AdamState>,
    embeddings: AdamState,
    logits: Option<AdamState>,
}

impl OptStates {
    fn for_model(model: &SomVae) -> Self {
        OptStates {
            enc_w: model.encoder.weights().iter().map(AdamState::for_param).collect(),
            enc_b: model.encoder.biases().iter().map(AdamState::for_param).collect(),
            dec_w: model.decoder.weights().iter().map(AdamState::for_param).collect(),
            dec_b: model.decoder.biases().iter().map(AdamState::for_param).collect(),
            embeddings: AdamState::for_param(model.grid.embeddings()),
            logits: model
                .transitions
                .as_ref()
                .map(|t| AdamState::for_param(t.logits())),
        }
    }
}

fn apply_mlp_grads(
    net: &mut Mlp,
    params: &MlpTapeParams,
    grads: &Gradients,
    states_w: &mut [AdamState],
    states_b: &mut [AdamState],
    cfg: &AdamConfig,
    what: &str,
) -> Result<()> {
    for (i, &id) in params.weight_ids.iter().enumerate() {
        if let Some(g) = grads.wrt(id) {
            adam_step(&mut net.weights_mut()[i], g, &mut states_w[i], cfg)
                .map_err(|e| named_param_error(e, &format!("{what} weight {i}")))?;
        }
    }
    for (i, &id) in params.bias_ids.iter().enumerate() {
        if let Some(g) = grads.wrt(id) {
            adam_step(&mut net.biases_mut()[i], g, &mut states_b[i], cfg)
                .map_err(|e| named_param_error(e, &format!("{what} bias {i}")))?;
        }
    }
    Ok(())
}

fn named_param_error(e: Error, name: &str) -> Error {
    match e {
        Error::NonFinite { index, .. } => Error::NonFinite {
            what: format!("gradient of {name}"),
            index,
        },
        other => other,
    }
}

/// Minibatch training with per-parameter Adam. Deterministic for a fixed
/// config; aborts with a diagnostic on the first non-finite loss component.
pub fn train(model: &mut SomVae, data: TrainData, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    if cfg.batch_size == 0 {
        return Err(Error::usage("train: batch_size must be >= 1"));
    }
    if cfg.epochs == 0 {
        return Err(Error::usage("train: epochs must be >= 1"));
    }
    let n = match &data {
        TrainData::Static(x) => x.rows(),
        TrainData::Temporal { pairs, .. } => pairs.len(),
    };
    if n == 0 {
        return Err(Error::usage("train: empty dataset"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut states = OptStates::for_model(model);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_mean = StepOutput::default();
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let output = match &data {
                TrainData::Static(x) => {
                    let batch = x.gather_rows(chunk);
                    train_step(model, &batch, None, cfg, &mut states)?
                }
                TrainData::Temporal { frames, pairs } => {
                    let prev_rows: Vec<usize> = chunk.iter().map(|&i| pairs[i].0).collect();
                    let cur_rows: Vec<usize> = chunk.iter().map(|&i| pairs[i].1).collect();
                    let prev_batch = frames.gather_rows(&prev_rows);
                    let cur_batch = frames.gather_rows(&cur_rows);
                    let prev_winners = model.assign(&prev_batch)?;
                    train_step(model, &cur_batch, Some(&prev_winners), cfg, &mut states)?
                }
            };
            if let Some(component) = output.first_non_finite() {
                return Err(Error::NonFiniteLoss {
                    component: component.to_string(),
                    epoch,
                    step,
                });
            }
            epoch_mean.accumulate(&output);
            steps += 1;
        }
        epoch_mean.scale(1.0 / steps as f64);
        logs.push(EpochLog {
            epoch,
            mean: epoch_mean,
        });
    }
    Ok(logs)
}

fn train_step(
    model: &mut SomVae,
    batch: &Tensor2,
    prev_winners: Option<&[usize]>,
    cfg: &TrainConfig,
    states: &mut OptStates,
) -> Result<StepOutput> {
    let mut tape = GradTape::new();
    let loss = model.batch_loss(&mut tape, batch, None, prev_winners)?;
    let output = model.step_output(&tape, &loss);
    if output.first_non_finite().is_some() {
        return Ok(output); // caller reports with epoch/step context
    }
    let grads = tape.backward(loss.total, 1.0)?;

    apply_mlp_grads(
        &mut model.encoder,
        &loss.encoder_params,
        &grads,
        &mut states.enc_w,
        &mut states.enc_b,
        &cfg.adam,
        "encoder",
    )?;
    apply_mlp_grads(
        &mut model.decoder,
        &loss.decoder_params,
        &grads,
        &mut states.dec_w,
        &mut states.dec_b,
        &cfg.adam,
        "decoder",
    )?;
    if let Some(g) = grads.wrt(loss.embeddings) {
        adam_step(model.grid.embeddings_mut(), g, &mut states.embeddings, &cfg.adam)
            .map_err(|e| named_param_error(e, "embeddings"))?;
    }
    if let (Some(logits_id), Some(transitions)) = (loss.logits, model.transitions.as_mut()) {
        if let Some(g) = grads.wrt(logits_id) {
            let state = states.logits.as_mut().expect("logit state exists");
            adam_step(transitions.logits_mut(), g, state, &cfg.adam)
                .map_err(|e| named_param_error(e, "transition logits"))?;
        }
    }
    Ok(output)
}
