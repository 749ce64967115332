//! Lloyd's algorithm with k-means++ initialization and restarts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Debug)]
pub struct KMeansModel {
    pub centers: Tensor2,
    pub inertia: f64,
}

#[derive(Copy, Clone, Debug)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

impl KMeansModel {
    /// Index of the nearest center for each row; ties break low.
    pub fn assign(&self, data: &Tensor2) -> Result<Vec<usize>> {
        if data.cols() != self.centers.cols() {
            return Err(Error::shape(
                "KMeansModel::assign",
                format!("points of dim {}", self.centers.cols()),
                format!("{}", data.cols()),
            ));
        }
        let k = self.centers.rows();
        let out: Vec<usize> = (0..data.rows())
            .into_par_iter()
            .map(|r| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = data.row_sq_dist(r, &self.centers, c);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                best
            })
            .collect();
        Ok(out)
    }
}

/// k-means++ seeding: the first center is a uniform draw; each further center
/// is drawn with probability proportional to the squared distance to the
/// nearest center chosen so far.
pub fn kmeanspp_init(data: &Tensor2, k: usize, rng: &mut impl Rng) -> Result<Tensor2> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::usage(format!(
            "kmeanspp_init: need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dists: Vec<f64> = (0..n)
        .map(|r| data.row_sq_dist(r, data, chosen[0]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass is zero (duplicated points); fall back to the
            // first index not yet chosen.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut draw = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                if draw < d {
                    pick = i;
                    break;
                }
                draw -= d;
            }
            pick
        };
        chosen.push(next);
        for r in 0..n {
            let d = data.row_sq_dist(r, data, next);
            if d < dists[r] {
                dists[r] = d;
            }
        }
    }
    Ok(data.gather_rows(&chosen))
}

fn assignments_and_inertia(data: &Tensor2, centers: &Tensor2) -> (Vec<usize>, f64) {
    let k = centers.rows();
    let pairs: Vec<(usize, f64)> = (0..data.rows())
        .into_par_iter()
        .map(|r| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = data.row_sq_dist(r, centers, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            (best, best_d)
        })
        .collect();
    let inertia = pairs.iter().map(|&(_, d)| d).sum();
    (pairs.into_iter().map(|(a, _)| a).collect(), inertia)
}

fn lloyd(data: &Tensor2, mut centers: Tensor2, cfg: &KMeansConfig) -> (KMeansModel, Vec<usize>) {
    let (n, d) = data.shape();
    let k = centers.rows();
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (assignments, inertia) = assignments_and_inertia(data, &centers);
        debug_assert!(
            inertia <= prev_inertia * (1.0 + 1e-12),
            "Lloyd iteration increased inertia: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;

        let mut sums = Tensor2::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            let row = data.row(r);
            for (s, &v) in sums.row_mut(a).iter_mut().zip(row) {
                *s += v;
            }
        }
        // Empty clusters seize the point farthest from its current center.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = data.row_sq_dist(a, &centers, assignments[a]);
                        let db = data.row_sq_dist(b, &centers, assignments[b]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                counts[c] = 1;
                sums.row_mut(c).copy_from_slice(data.row(far));
            }
        }
        let mut movement: f64 = 0.0;
        let mut next = Tensor2::zeros(k, d);
        for c in 0..k {
            let count = counts[c] as f64;
            for (o, &s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                *o = s / count;
            }
            movement = movement.max(
                next.row(c)
                    .iter()
                    .zip(centers.row(c))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
        centers = next;
        if movement < cfg.tol {
            break;
        }
    }
    let (assignments, inertia) = assignments_and_inertia(data, &centers);
    (KMeansModel { centers, inertia }, assignments)
}

/// Fit with `cfg.restarts` independent k-means++ starts, keeping the
/// lowest-inertia model. Deterministic for a fixed seed.
pub fn kmeans_fit(
    data: &Tensor2,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(KMeansModel, Vec<usize>)> {
    if data.rows() < k || k == 0 {
        return Err(Error::usage(format!(
            "kmeans_fit: need 1 <= k <= n, got k = {k}, n = {}",
            data.rows()
        )));
    }
    let mut best: Option<(KMeansModel, Vec<usize>)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        let init = kmeanspp_init(data, k, &mut rng)?;
        let (model, assignments) = lloyd(data, init, cfg);
        let better = match &best {
            None => true,
            Some((b, _)) => model.inertia < b.inertia,
        };
        if better {
            best = Some((model, assignments));
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Tensor2, Vec<usize>) {
        // Two tight, well-separated 2-D blobs.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64 * 0.13).sin() * 0.1;
            rows.push(vec![0.0 + jitter, 0.0 - jitter]);
            labels.push(0);
            rows.push(vec![10.0 - jitter, 10.0 + jitter]);
            labels.push(1);
        }
        (Tensor2::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs_are_recovered() {
        let (data, labels) = blobs();
        let (_, assignments) = kmeans_fit(&data, 2, 1, &KMeansConfig::default()).unwrap();
        // Perfect clustering up to label permutation.
        let first = assignments[0];
        for (a, l) in assignments.iter().zip(&labels) {
            let expect = if *l == 0 { first } else { 1 - first };
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn k1_center_is_the_mean() {
        let data = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]]).unwrap();
        let (model, _) = kmeans_fit(&data, 1, 0, &KMeansConfig::default()).unwrap();
        assert!((model.centers.get(0, 0) - 3.0).abs() < 1e-12);
        assert!((model.centers.get(0, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_one_init_is_a_data_point() {
        let (data, _) = blobs();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = kmeanspp_init(&data, 1, &mut rng).unwrap();
        let found = (0..data.rows()).any(|r| data.row(r) == c.row(0));
        assert!(found);
    }

    #[test]
    fn duplicate_of_chosen_center_has_zero_mass() {
        // Data where one point duplicates another: once one copy is chosen the
        // other can never be drawn by the D² rule, so with k = 2 the second
        // center is always the far point.
        let data = Tensor2::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = kmeanspp_init(&data, 2, &mut rng).unwrap();
            let rows: Vec<&[f64]> = vec![c.row(0), c.row(1)];
            assert!(rows.contains(&&[5.0, 5.0][..]), "seed {seed}: {rows:?}");
        }
    }

    #[test]
    fn k_equals_n_returns_distinct_points() {
        let data = Tensor2::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![9.0]]).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = kmeanspp_init(&data, 4, &mut rng).unwrap();
            let mut vals: Vec<f64> = (0..4).map(|r| c.get(r, 0)).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(vals, vec![0.0, 1.0, 2.0, 9.0]);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (data, _) = blobs();
        let a = kmeans_fit(&data, 3, 42, &KMeansConfig::default()).unwrap();
        let b = kmeans_fit(&data, 3, 42, &KMeansConfig::default()).unwrap();
        assert_eq!(a.0.centers, b.0.centers);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn fit_inertia_never_exceeds_init_inertia() {
        let (data, _) = blobs();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = kmeanspp_init(&data, 3, &mut rng).unwrap();
            let (_, init_inertia) = assignments_and_inertia(&data, &init);
            let (model, _) = lloyd(&data, init, &KMeansConfig::default());
            assert!(model.inertia <= init_inertia + 1e-12);
        }
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Three identical points and one far away; with k = 3 some cluster
        // would go empty without repair. All clusters must stay populated.
        let data = Tensor2::from_rows(&[vec![0.0], vec![0.0], vec![0.0], vec![100.0]]).unwrap();
        let (model, assignments) = kmeans_fit(&data, 3, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(model.centers.rows(), 3);
        let mut used = vec![false; 3];
        for &a in &assignments {
            used[a] = true;
        }
        assert!(used.iter().filter(|&&u| u).count() >= 2);
    }
}
