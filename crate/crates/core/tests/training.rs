//! End-to-end behavior of the training loop on constructed data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somvae::{
    nmi, purity, train, Activation, AdamConfig, LabelPair, LossWeights, Mlp, ModelVariant,
    Neighborhood, OutputActivation, SomGrid, SomTrainConfig, SomVae, Tensor2, TrainConfig,
    TrainData,
};

/// Two tight 2-D blobs far apart, labels 0/1.
fn two_blobs(n_per: usize, seed: u64) -> (Tensor2, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_per {
        rows.push(vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
        labels.push(0);
        rows.push(vec![
            8.0 + rng.random_range(-0.5..0.5),
            8.0 + rng.random_range(-0.5..0.5),
        ]);
        labels.push(1);
    }
    (Tensor2::from_rows(&rows).unwrap(), labels)
}

fn blob_model(seed: u64) -> SomVae {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Mlp::new(vec![2, 8, 2], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
    let decoder = Mlp::new(vec![2, 8, 2], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
    let grid = SomGrid::new(1, 2, 2, &mut rng).unwrap();
    SomVae::new(
        encoder,
        decoder,
        grid,
        ModelVariant::som_vae(),
        LossWeights::default(),
    )
    .unwrap()
}

fn mean_quantized_error(model: &SomVae, x: &Tensor2) -> f64 {
    let codes = model.encode(x).unwrap();
    let (_, x_hat_q) = model.reconstruct(&codes).unwrap();
    x.data()
        .iter()
        .zip(x_hat_q.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.rows() as f64
}

#[test]
fn separable_blobs_reach_full_purity() {
    let (x, labels) = two_blobs(20, 7);
    let mut model = blob_model(1);
    let cfg = TrainConfig {
        epochs: 40, // 40 samples / batch 8 = 5 steps per epoch -> 200 steps
        batch_size: 8,
        adam: AdamConfig::with_learning_rate(5e-3),
        seed: 3,
    };
    train(&mut model, TrainData::Static(&x), &cfg).unwrap();
    let winners = model.assign(&x).unwrap();
    let pair = LabelPair::new(&labels, &winners).unwrap();
    assert_eq!(purity(&pair), 1.0, "winners: {winners:?}");
    assert!(nmi(&pair) > 0.99);
}

#[test]
fn quantized_error_improves_in_most_seeds() {
    let (x, _) = two_blobs(20, 11);
    let mut improved = 0;
    for seed in 0..10 {
        let mut model = blob_model(100 + seed);
        let before = mean_quantized_error(&model, &x);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 8,
            adam: AdamConfig::with_learning_rate(5e-3),
            seed,
        };
        train(&mut model, TrainData::Static(&x), &cfg).unwrap();
        let after = mean_quantized_error(&model, &x);
        if after < before {
            improved += 1;
        }
    }
    assert!(improved >= 9, "improved in only {improved}/10 seeds");
}

#[test]
fn classical_som_separates_blobs_too() {
    let (x, labels) = two_blobs(20, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut grid = SomGrid::new(1, 2, 2, &mut rng).unwrap();
    let cfg = SomTrainConfig {
        eta: 0.05,
        neighborhood: Neighborhood::Gaussian { sigma: 1.0 },
        epochs: 10,
    };
    grid.classical_som_fit(&x, &cfg, &mut rng).unwrap();
    let winners = grid.assign_batch(&x).unwrap();
    let pair = LabelPair::new(&labels, &winners).unwrap();
    assert_eq!(purity(&pair), 1.0);
}

#[test]
fn training_is_reproducible_end_to_end() {
    let (x, _) = two_blobs(10, 2);
    let run = || {
        let mut model = blob_model(4);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 12,
        };
        let logs = train(&mut model, TrainData::Static(&x), &cfg).unwrap();
        (logs.last().unwrap().mean.total, model.grid.embeddings().clone())
    };
    let (loss_a, emb_a) = run();
    let (loss_b, emb_b) = run();
    assert_eq!(loss_a, loss_b);
    assert_eq!(emb_a, emb_b);
}
