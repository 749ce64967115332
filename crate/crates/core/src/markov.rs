//! Learned Markov transitions over map nodes, plus the counting baseline.
//!
//! The learned model keeps unconstrained logits and derives probabilities by
//! row-wise softmax, so every Adam step lands on a valid row-stochastic
//! matrix without projection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{GradTape, NodeId};
use crate::tensor::Tensor2;

/// Node indices of one series over time.
pub type StateSequence = Vec<usize>;

#[derive(Clone, Debug)]
pub struct TransitionModel {
    k: usize,
    logits: Tensor2,
}

impl TransitionModel {
    /// All-zero logits: the uniform model.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::usage("TransitionModel: k must be positive"));
        }
        Ok(TransitionModel {
            k,
            logits: Tensor2::zeros(k, k),
        })
    }

    pub fn from_logits(logits: Tensor2) -> Result<Self> {
        if logits.rows() != logits.cols() || logits.rows() == 0 {
            return Err(Error::shape(
                "TransitionModel::from_logits",
                "square non-empty matrix".to_string(),
                format!("{}x{}", logits.rows(), logits.cols()),
            ));
        }
        Ok(TransitionModel {
            k: logits.rows(),
            logits,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn logits(&self) -> &Tensor2 {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Tensor2 {
        &mut self.logits
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Tensor2 {
        let mut out = self.logits.clone();
        for r in 0..self.k {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn transition_prob(&self, from: usize, to: usize) -> Result<f64> {
        if from >= self.k || to >= self.k {
            return Err(Error::usage(format!(
                "transition_prob: state ({from}, {to}) out of range for k = {}",
                self.k
            )));
        }
        Ok(self.probabilities().get(from, to))
    }

    /// Mean negative log probability of the observed transitions; gradients
    /// reach the logits only.
    pub fn transitions_loss(
        &self,
        tape: &mut GradTape,
        logits: NodeId,
        prev: &[usize],
        cur: &[usize],
    ) -> Result<NodeId> {
        if prev.len() != cur.len() || prev.is_empty() {
            return Err(Error::shape(
                "transitions_loss",
                format!("aligned non-empty batches"),
                format!("prev {} cur {}", prev.len(), cur.len()),
            ));
        }
        let rows = tape.gather_rows(logits, prev)?;
        let logp = tape.log_softmax_rows(rows);
        let entries: Vec<(usize, usize)> = cur.iter().copied().enumerate().collect();
        let picked = tape.gather_entries(logp, &entries)?;
        let total = tape.sum_all(picked);
        Ok(tape.scale(total, -1.0 / prev.len() as f64))
    }

    /// Expected squared distance between the nodes reachable from `prev` and
    /// the current encodings, weighted by transition probability. Gradients
    /// reach the logits, the embeddings and the encoder (through `z_e_cur`).
    pub fn smoothness_loss(
        &self,
        tape: &mut GradTape,
        logits: NodeId,
        embeddings: NodeId,
        z_e_cur: NodeId,
        prev: &[usize],
    ) -> Result<NodeId> {
        let n = tape.value(z_e_cur).rows();
        if prev.len() != n || n == 0 {
            return Err(Error::shape(
                "smoothness_loss",
                format!("{n} previous states"),
                format!("{}", prev.len()),
            ));
        }
        let rows = tape.gather_rows(logits, prev)?;
        let probs = tape.softmax_rows(rows);
        let dists = tape.pairwise_sq_dist(z_e_cur, embeddings)?;
        let weighted = tape.mul(probs, dists)?;
        let total = tape.sum_all(weighted);
        Ok(tape.scale(total, 1.0 / n as f64))
    }
}

/// Transition matrix from counts with additive smoothing:
/// P[i][j] = (count(i->j) + eps) / (sum_j count(i->j) + k * eps).
/// Rows with no observations and eps = 0 fall back to uniform.
pub fn mle_transitions(sequences: &[StateSequence], k: usize, epsilon: f64) -> Result<Tensor2> {
    if k == 0 {
        return Err(Error::usage("mle_transitions: k must be positive"));
    }
    if epsilon < 0.0 {
        return Err(Error::usage("mle_transitions: epsilon must be >= 0"));
    }
    let mut counts = vec![0.0f64; k * k];
    for seq in sequences {
        for w in seq.windows(2) {
            let (i, j) = (w[0], w[1]);
            if i >= k || j >= k {
                return Err(Error::usage(format!(
                    "mle_transitions: state {} out of range for k = {k}",
                    i.max(j)
                )));
            }
            counts[i * k + j] += 1.0;
        }
    }
    let mut data = Vec::with_capacity(k * k);
    for i in 0..k {
        let row = &counts[i * k..(i + 1) * k];
        let total: f64 = row.iter().sum::<f64>() + k as f64 * epsilon;
        if total == 0.0 {
            data.extend(std::iter::repeat(1.0 / k as f64).take(k));
        } else {
            data.extend(row.iter().map(|&c| (c + epsilon) / total));
        }
    }
    Tensor2::from_vec(k, k, data)
}

/// Mean negative natural log probability of the observed transitions under a
/// row-stochastic matrix. Zero-probability observations are an error.
pub fn nll(probabilities: &Tensor2, sequences: &[StateSequence]) -> Result<f64> {
    let k = probabilities.rows();
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        for w in seq.windows(2) {
            let (i, j) = (w[0], w[1]);
            if i >= k || j >= k {
                return Err(Error::usage(format!(
                    "nll: state {} out of range for k = {k}",
                    i.max(j)
                )));
            }
            let p = probabilities.get(i, j);
            if p <= 0.0 {
                return Err(Error::ZeroProbTransition { from: i, to: j });
            }
            total -= p.ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::usage("nll: no transitions in the given sequences"));
    }
    Ok(total / count as f64)
}

/// Seeded Markov chain rollout of the given length, starting at `start`.
pub fn sample_trajectory(
    probabilities: &Tensor2,
    start: usize,
    length: usize,
    rng: &mut impl Rng,
) -> Result<StateSequence> {
    let k = probabilities.rows();
    if start >= k {
        return Err(Error::usage(format!(
            "sample_trajectory: start {start} out of range for k = {k}"
        )));
    }
    if length == 0 {
        return Err(Error::usage("sample_trajectory: length must be >= 1"));
    }
    let mut out = Vec::with_capacity(length);
    let mut state = start;
    out.push(state);
    for _ in 1..length {
        let row = probabilities.row(state);
        let draw: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut next = k - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if draw < acc {
                next = j;
                break;
            }
        }
        state = next;
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_softmax_for_zero_logits() {
        let model = TransitionModel::new(4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((model.transition_prob(i, j).unwrap() - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_of_known_logits() {
        let mut logits = Tensor2::zeros(2, 2);
        logits.set(0, 0, 3f64.ln());
        let model = TransitionModel::from_logits(logits).unwrap();
        assert!((model.transition_prob(0, 0).unwrap() - 0.75).abs() < 1e-12);
        assert!((model.transition_prob(0, 1).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let mut logits = Tensor2::zeros(5, 5);
        for (i, v) in logits.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 1.37).sin() * 4.0;
        }
        let model = TransitionModel::from_logits(logits).unwrap();
        let p = model.probabilities();
        for i in 0..5 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transitions_loss_uniform_is_log_k() {
        let model = TransitionModel::new(64).unwrap();
        let mut tape = GradTape::new();
        let logits = tape.leaf(model.logits().clone());
        let loss = model
            .transitions_loss(&mut tape, logits, &[0, 5, 10], &[1, 6, 11])
            .unwrap();
        assert!((tape.value(loss).scalar_value() - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_model_has_near_zero_loss() {
        let mut logits = Tensor2::zeros(2, 2);
        logits.set(0, 1, 30.0);
        logits.set(1, 0, 30.0);
        let model = TransitionModel::from_logits(logits).unwrap();
        let mut tape = GradTape::new();
        let l = tape.leaf(model.logits().clone());
        let loss = model.transitions_loss(&mut tape, l, &[0, 1], &[1, 0]).unwrap();
        assert!(tape.value(loss).scalar_value() < 1e-9);
    }

    #[test]
    fn one_adam_step_reduces_loss_on_repeated_transition() {
        use crate::adam::{adam_step, AdamConfig, AdamState};
        let mut model = TransitionModel::new(3).unwrap();
        let prev = vec![0usize; 8];
        let cur = vec![2usize; 8];
        let eval = |m: &TransitionModel| {
            let mut tape = GradTape::new();
            let l = tape.leaf(m.logits().clone());
            let loss = m.transitions_loss(&mut tape, l, &prev, &cur).unwrap();
            (tape.value(loss).scalar_value(), tape, l, loss)
        };
        let (before, tape, l, loss) = eval(&model);
        let grads = tape.backward(loss, 1.0).unwrap();
        let g = grads.wrt(l).unwrap().clone();
        let mut state = AdamState::for_param(model.logits());
        adam_step(model.logits_mut(), &g, &mut state, &AdamConfig::default()).unwrap();
        let (after, ..) = eval(&model);
        assert!(after < before);
        // still row-stochastic
        let p = model.probabilities();
        for i in 0..3 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothness_degenerate_and_average_cases() {
        // k = 2, P(prev -> .) = [1, 0], ||e0 - z||^2 = 4 -> loss 4.
        let mut logits = Tensor2::zeros(2, 2);
        logits.set(0, 0, 40.0);
        let model = TransitionModel::from_logits(logits).unwrap();
        let emb = Tensor2::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let mut tape = GradTape::new();
        let l = tape.leaf(model.logits().clone());
        let e = tape.leaf(emb.clone());
        let z = tape.leaf(Tensor2::row_vector(&[0.0, 0.0]));
        let loss = model.smoothness_loss(&mut tape, l, e, z, &[0]).unwrap();
        assert!((tape.value(loss).scalar_value() - 4.0).abs() < 1e-12);

        // uniform P, distances {0, 8} -> loss 4.
        let uniform = TransitionModel::new(2).unwrap();
        let emb2 = Tensor2::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let mut tape2 = GradTape::new();
        let l2 = tape2.leaf(uniform.logits().clone());
        let e2 = tape2.leaf(emb2);
        let z2 = tape2.leaf(Tensor2::row_vector(&[0.0, 0.0]));
        let loss2 = uniform.smoothness_loss(&mut tape2, l2, e2, z2, &[0]).unwrap();
        assert!((tape2.value(loss2).scalar_value() - 4.0).abs() < 1e-12);

        // all embeddings equal to z -> 0 regardless of P.
        let emb3 = Tensor2::zeros(2, 2);
        let mut tape3 = GradTape::new();
        let l3 = tape3.leaf(model.logits().clone());
        let e3 = tape3.leaf(emb3);
        let z3 = tape3.leaf(Tensor2::row_vector(&[0.0, 0.0]));
        let loss3 = model.smoothness_loss(&mut tape3, l3, e3, z3, &[0]).unwrap();
        assert_eq!(tape3.value(loss3).scalar_value(), 0.0);
    }

    #[test]
    fn mle_counts_directly() {
        let p = mle_transitions(&[vec![0, 1, 0, 1]], 2, 0.0).unwrap();
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(1, 0), 1.0);
    }

    #[test]
    fn mle_unvisited_row_uniform_under_smoothing() {
        let p = mle_transitions(&[vec![0, 1, 1]], 3, 0.5).unwrap();
        for j in 0..3 {
            assert!((p.get(2, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        for i in 0..3 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_deterministic_and_uniform() {
        let seqs = vec![vec![0usize, 1, 0, 1, 0]];
        let exact = mle_transitions(&seqs, 2, 0.0).unwrap();
        assert_eq!(nll(&exact, &seqs).unwrap(), 0.0);
        let uniform = mle_transitions(&[], 64, 1.0).unwrap();
        let long: Vec<usize> = (0..100).map(|i| (i * 7) % 64).collect();
        assert!((nll(&uniform, &[long]).unwrap() - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_zero_probability() {
        let seqs = vec![vec![0usize, 1]];
        let p = mle_transitions(&[vec![0, 0]], 2, 0.0).unwrap();
        let err = nll(&p, &seqs).unwrap_err();
        assert!(err.to_string().contains("smoothing"));
    }

    #[test]
    fn mle_is_optimal_among_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k = 4;
        let seqs: Vec<StateSequence> = (0..5)
            .map(|_| (0..50).map(|_| rng.random_range(0..k)).collect())
            .collect();
        let mle = mle_transitions(&seqs, k, 0.0).unwrap();
        let base = nll(&mle, &seqs).unwrap();
        for _ in 0..1000 {
            let mut data = vec![0.0; k * k];
            for row in data.chunks_mut(k) {
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = rng.random_range(1e-3..1.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            let q = Tensor2::from_vec(k, k, data).unwrap();
            assert!(nll(&q, &seqs).unwrap() >= base - 1e-12);
        }
    }

    #[test]
    fn deterministic_cycle_rollout() {
        let p = mle_transitions(&[vec![0, 1, 0, 1, 0]], 2, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_trajectory(&p, 0, 6, &mut rng).unwrap();
        assert_eq!(t, vec![0, 1, 0, 1, 0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_trajectory(&p, 1, 1, &mut rng).unwrap(), vec![1]);
    }

    #[test]
    fn rollout_frequencies_match_matrix() {
        let mut logits = Tensor2::zeros(3, 3);
        for (i, v) in logits.data_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 7) as f64 * 0.4;
        }
        let p = TransitionModel::from_logits(logits).unwrap().probabilities();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = sample_trajectory(&p, 0, 100_000, &mut rng).unwrap();
        let mut counts = vec![vec![0.0f64; 3]; 3];
        let mut totals = vec![0.0f64; 3];
        for w in t.windows(2) {
            counts[w[0]][w[1]] += 1.0;
            totals[w[0]] += 1.0;
        }
        for i in 0..3 {
            for j in 0..3 {
                let freq = counts[i][j] / totals[i];
                assert!(
                    (freq - p.get(i, j)).abs() < 0.02,
                    "empirical {freq} vs model {}",
                    p.get(i, j)
                );
            }
        }
    }
}
