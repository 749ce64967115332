//! Clustering quality and interpretability measures: purity, normalized
//! mutual information, and windowed Shannon entropy over discrete
//! assignments. All entropies use natural log.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Ground-truth classes paired with predicted clusters for the same samples.
#[derive(Clone, Debug)]
pub struct LabelPair<'a> {
    pub truth: &'a [usize],
    pub clusters: &'a [usize],
}

impl<'a> LabelPair<'a> {
    pub fn new(truth: &'a [usize], clusters: &'a [usize]) -> Result<Self> {
        if truth.len() != clusters.len() {
            return Err(Error::shape(
                "LabelPair::new",
                format!("{} cluster ids", truth.len()),
                format!("{}", clusters.len()),
            ));
        }
        if truth.is_empty() {
            return Err(Error::usage("LabelPair::new: empty labels"));
        }
        Ok(LabelPair { truth, clusters })
    }

    fn n(&self) -> usize {
        self.truth.len()
    }

    /// Joint counts indexed by (class, cluster).
    fn contingency(&self) -> HashMap<(usize, usize), usize> {
        let mut joint = HashMap::new();
        for (&c, &w) in self.truth.iter().zip(self.clusters) {
            *joint.entry((c, w)).or_insert(0) += 1;
        }
        joint
    }
}

/// Fraction of samples covered when every cluster adopts its majority class.
pub fn purity(pair: &LabelPair) -> f64 {
    let joint = pair.contingency();
    let mut best: HashMap<usize, usize> = HashMap::new();
    for (&(_, cluster), &count) in &joint {
        let slot = best.entry(cluster).or_insert(0);
        *slot = (*slot).max(count);
    }
    best.values().sum::<usize>() as f64 / pair.n() as f64
}

fn entropy_of_counts<I: Iterator<Item = usize>>(counts: I, n: usize) -> f64 {
    let n = n as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// 2 I(C, Ω) / (H(C) + H(Ω)), in [0, 1]. When both partitions are constant
/// the ratio is 0/0; that degenerate case evaluates to 0 by convention.
pub fn nmi(pair: &LabelPair) -> f64 {
    let n = pair.n();
    let joint = pair.contingency();
    let mut class_counts: HashMap<usize, usize> = HashMap::new();
    let mut cluster_counts: HashMap<usize, usize> = HashMap::new();
    for (&(c, w), &count) in &joint {
        *class_counts.entry(c).or_insert(0) += count;
        *cluster_counts.entry(w).or_insert(0) += count;
    }
    let h_c = entropy_of_counts(class_counts.values().copied(), n);
    let h_w = entropy_of_counts(cluster_counts.values().copied(), n);
    if h_c + h_w == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for (&(c, w), &count) in &joint {
        let p_joint = count as f64 / nf;
        let p_c = class_counts[&c] as f64 / nf;
        let p_w = cluster_counts[&w] as f64 / nf;
        mi += p_joint * (p_joint / (p_c * p_w)).ln();
    }
    // Tiny negative values can appear from cancellation when I == 0.
    (2.0 * mi.max(0.0)) / (h_c + h_w)
}

/// Empirical Shannon entropy of a symbol sequence, in nats.
pub fn shannon_entropy<T: Hash + Eq>(symbols: impl IntoIterator<Item = T>) -> f64 {
    let mut counts: HashMap<T, usize> = HashMap::new();
    let mut n = 0usize;
    for s in symbols {
        *counts.entry(s).or_insert(0) += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    entropy_of_counts(counts.values().copied(), n)
}

/// One fixed-length span of a discrete assignment sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyWindow {
    pub t_start: usize,
    pub entropy: f64,
    pub basin_changed: bool,
}

/// Entropy of non-overlapping windows of length `window`; the trailing
/// remainder is dropped. A window is flagged changed when the caller's basin
/// sequence is not constant inside it.
pub fn subtrajectory_entropies<T: Hash + Eq + Copy>(
    assignments: &[T],
    basins: &[u8],
    window: usize,
) -> Result<Vec<EntropyWindow>> {
    if window == 0 {
        return Err(Error::usage("subtrajectory_entropies: window must be positive"));
    }
    if assignments.len() < window {
        return Err(Error::usage(format!(
            "subtrajectory_entropies: sequence of length {} is shorter than window {window}",
            assignments.len()
        )));
    }
    if basins.len() != assignments.len() {
        return Err(Error::shape(
            "subtrajectory_entropies",
            format!("{} basin flags", assignments.len()),
            format!("{}", basins.len()),
        ));
    }
    let mut out = Vec::new();
    let mut t = 0;
    while t + window <= assignments.len() {
        let span = &assignments[t..t + window];
        let basin_span = &basins[t..t + window];
        out.push(EntropyWindow {
            t_start: t,
            entropy: shannon_entropy(span.iter().copied()),
            basin_changed: basin_span.iter().any(|&b| b != basin_span[0]),
        });
        t += window;
    }
    Ok(out)
}

/// Unit-hypercube id of a point in R³: the floor of each coordinate, mixed
/// into a stable 64-bit symbol.
pub fn discretize_state(point: &[f64; 3]) -> u64 {
    let cube = cube_of(point);
    stable_mix(cube)
}

/// The cube coordinates themselves, for tests and inspection.
pub fn cube_of(point: &[f64; 3]) -> [i64; 3] {
    [
        point[0].floor() as i64,
        point[1].floor() as i64,
        point[2].floor() as i64,
    ]
}

fn stable_mix(cube: [i64; 3]) -> u64 {
    // splitmix64 over the three coordinates; fixed constants keep the id
    // stable across runs and platforms.
    let mut h = 0x9e3779b97f4a7c15u64;
    for c in cube {
        let mut z = (c as u64).wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        h = h.rotate_left(23) ^ z;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_perfect_and_singleton() {
        let truth = vec![0, 0, 1, 1, 2];
        let pair = LabelPair::new(&truth, &truth).unwrap();
        assert_eq!(purity(&pair), 1.0);
        let singletons: Vec<usize> = (0..5).collect();
        let pair = LabelPair::new(&truth, &singletons).unwrap();
        assert_eq!(purity(&pair), 1.0);
    }

    #[test]
    fn purity_hand_counted() {
        let truth = vec![0, 0, 1, 1, 1];
        let clusters = vec![0, 0, 0, 1, 1];
        let pair = LabelPair::new(&truth, &clusters).unwrap();
        assert!((purity(&pair) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn nmi_identical_partitions() {
        let truth = vec![0, 0, 1, 1];
        let pair = LabelPair::new(&truth, &truth).unwrap();
        assert!((nmi(&pair) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_independent_partitions() {
        // Product partition: every (class, cluster) cell equally likely.
        let truth = vec![0, 0, 1, 1];
        let clusters = vec![0, 1, 0, 1];
        let pair = LabelPair::new(&truth, &clusters).unwrap();
        assert!(nmi(&pair).abs() < 1e-12);
    }

    #[test]
    fn nmi_degenerate_constant_partitions() {
        let constant = vec![3usize; 10];
        let pair = LabelPair::new(&constant, &constant).unwrap();
        assert_eq!(nmi(&pair), 0.0);
    }

    #[test]
    fn entropy_known_values() {
        assert_eq!(shannon_entropy(std::iter::repeat(7u8).take(50)), 0.0);
        let half: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        assert!((shannon_entropy(half) - 2f64.ln()).abs() < 1e-12);
        let uniform: Vec<usize> = (0..60).map(|i| i % 6).collect();
        assert!((shannon_entropy(uniform) - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn windows_partition_and_flag() {
        let assignments = vec![1usize; 250];
        let basins = vec![0u8; 250];
        let windows = subtrajectory_entropies(&assignments, &basins, 100).unwrap();
        assert_eq!(windows.len(), 2);
        assert!(windows.iter().all(|w| w.entropy == 0.0 && !w.basin_changed));
        assert_eq!(windows[1].t_start, 100);

        let mut mixed = vec![0usize; 50];
        mixed.extend(vec![1usize; 50]);
        let mut basins = vec![0u8; 50];
        basins.extend(vec![1u8; 50]);
        let windows = subtrajectory_entropies(&mixed, &basins, 100).unwrap();
        assert_eq!(windows.len(), 1);
        assert!((windows[0].entropy - 2f64.ln()).abs() < 1e-12);
        assert!(windows[0].basin_changed);
    }

    #[test]
    fn discretize_floor_semantics() {
        assert_eq!(cube_of(&[0.2, 0.9, -0.1]), [0, 0, -1]);
        assert_eq!(cube_of(&[1.0, 1.0, 1.0]), [1, 1, 1]);
        let a = discretize_state(&[0.3, 0.7, 2.5]);
        let b = discretize_state(&[0.9, 0.01, 2.99]);
        assert_eq!(a, b);
        let c = discretize_state(&[1.1, 0.7, 2.5]);
        assert_ne!(a, c);
    }
}
