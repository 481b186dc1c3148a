//! Decision prototypes: k-means over historical sentence embeddings and
//! nearest-centroid lookup for new sentences.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PrototypeModel;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once no centroid moves further than this.
    pub tol: f64,
    /// Independent k-means++ starts; the fit with the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iters: 100,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid after each Lloyd update.
    pub objective_trace: Vec<f64>,
}

/// Result of a nearest-prototype lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub prototype: usize,
    /// Set when the query was the all-zero vector and was routed to prototype 0.
    pub degenerate: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(v, &centroids[0]);
    for (k, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(v, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Nearest centroid by Euclidean distance, ties to the lowest index.
pub fn assign_nearest(vector: &[f64], centroids: &[Vec<f64>]) -> Result<Assignment> {
    if centroids.is_empty() {
        return Err(Error::Range("no centroids".into()));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != vector.len()) {
        return Err(Error::Range(format!(
            "query dimension {} ≠ centroid dimension {}",
            vector.len(),
            c.len()
        )));
    }
    if vector.iter().all(|x| *x == 0.0) {
        return Ok(Assignment {
            prototype: 0,
            degenerate: true,
        });
    }
    Ok(Assignment {
        prototype: nearest(vector, centroids).0,
        degenerate: false,
    })
}

impl PrototypeModel {
    pub fn assign(&self, vector: &[f64]) -> Result<Assignment> {
        assign_nearest(vector, &self.centroids)
    }
}

fn assign_all(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    vectors.par_iter().map(|v| nearest(v, centroids)).collect()
}

/// Per-cluster means, summed sequentially in input order.
fn cluster_means(vectors: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = vectors[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    (sums, counts)
}

/// k-means++ seeding: first centre uniform, the rest sampled with probability
/// proportional to squared distance from the nearest chosen centre.
fn init_plus_plus(vectors: &[Vec<f64>], k: usize, seed: u64, start: usize) -> Vec<Vec<f64>> {
    let mut rng = rng::stream_n(seed, "kmeans-init", start as u64);
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All points coincide with chosen centres.
            rng.random_range(0..n)
        };
        centroids.push(vectors[pick].clone());
        let c = centroids.last().unwrap();
        for (di, v) in d2.iter_mut().zip(vectors) {
            *di = di.min(squared_distance(v, c));
        }
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding, best of `params.restarts` starts.
///
/// Empty clusters are re-seeded from the point farthest from its assigned
/// centroid. Results depend only on the inputs and `seed`.
pub fn kmeans_fit(vectors: &[Vec<f64>], k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::Config("number of prototypes must be ≥ 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} vectors for {k} prototypes",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Range("vectors have mixed dimensions".into()));
    }

    let mut best: Option<(f64, KMeansFit)> = None;
    for start in 0..params.restarts.max(1) {
        let fit = lloyd(vectors, k, init_plus_plus(vectors, k, seed, start), params);
        let objective: f64 = vectors
            .iter()
            .zip(&fit.assignments)
            .map(|(v, a)| squared_distance(v, &fit.centroids[*a]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, fit));
        }
    }
    Ok(best.expect("at least one start").1)
}

fn lloyd(vectors: &[Vec<f64>], k: usize, mut centroids: Vec<Vec<f64>>, params: &KMeansParams) -> KMeansFit {
    let mut assigned = assign_all(vectors, &centroids);
    let mut objective_trace = Vec::new();
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let (mut means, counts) = cluster_means(vectors, &labels, k);
        for (j, &n) in counts.iter().enumerate() {
            if n == 0 {
                let far = assigned
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, a)| if a.1 > best.1 { (i, a.1) } else { best })
                    .0;
                means[j] = vectors[far].clone();
                assigned[far] = (j, 0.0);
            }
        }
        let shift = centroids
            .iter()
            .zip(&means)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = means;
        let next = assign_all(vectors, &centroids);
        objective_trace.push(
            vectors
                .iter()
                .zip(&assigned)
                .map(|(v, a)| squared_distance(v, &centroids[a.0]))
                .sum(),
        );
        let stable = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if stable || shift < params.tol {
            break;
        }
    }

    // Final centroids are the means of the final assignment.
    let assignments: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    let (means, counts) = cluster_means(vectors, &assignments, k);
    for (j, m) in means.into_iter().enumerate() {
        if counts[j] > 0 {
            centroids[j] = m;
        }
    }

    KMeansFit {
        centroids,
        assignments,
        iterations,
        objective_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn two_obvious_clusters() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![5.0, 5.0], vec![5.0, 5.1]];
        for seed in 0..10 {
            let fit = kmeans_fit(&pts, 2, seed, &KMeansParams::default()).unwrap();
            let mut cs = fit.centroids.clone();
            cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
            assert!(close(&cs[0], &[0.0, 0.05]), "{cs:?}");
            assert!(close(&cs[1], &[5.0, 5.05]), "{cs:?}");
            assert_eq!(fit.assignments[0], fit.assignments[1]);
            assert_eq!(fit.assignments[2], fit.assignments[3]);
            assert_ne!(fit.assignments[0], fit.assignments[2]);
        }
    }

    #[test]
    fn single_prototype_is_global_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let fit = kmeans_fit(&pts, 1, 7, &KMeansParams::default()).unwrap();
        assert!(close(&fit.centroids[0], &[3.0, 3.0]));
    }

    #[test]
    fn insufficient_data() {
        let pts = vec![vec![1.0]];
        assert!(matches!(
            kmeans_fit(&pts, 2, 0, &KMeansParams::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn duplicate_points_fill_all_clusters() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let fit = kmeans_fit(&pts, 3, 0, &KMeansParams::default()).unwrap();
        assert_eq!(fit.centroids.len(), 3);
        assert!(fit.centroids.iter().all(|c| close(c, &[1.0, 1.0])));
    }

    #[test]
    fn nearest_assignment_and_ties() {
        let cs = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(assign_nearest(&[0.2, 0.1], &cs).unwrap().prototype, 0);
        assert_eq!(assign_nearest(&[0.5, 0.5], &cs).unwrap().prototype, 0);
        assert_eq!(assign_nearest(&[0.9, 0.9], &cs).unwrap().prototype, 1);
        let zero = assign_nearest(&[0.0, 0.0], &[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(zero, Assignment { prototype: 0, degenerate: true });
        assert!(matches!(assign_nearest(&[0.0], &cs), Err(Error::Range(_))));
    }

    fn blobs(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let c = (i % 3) as f64 * 4.0;
                vec![c + normal.sample(&mut rng), -c + normal.sample(&mut rng), normal.sample(&mut rng)]
            })
            .collect()
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let pts = blobs(3, 600);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| kmeans_fit(&pts, 4, 11, &KMeansParams::default()).unwrap());
        let b = many.install(|| kmeans_fit(&pts, 4, 11, &KMeansParams::default()).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lloyd_invariants(seed in 0u64..1000, n in 20usize..120, k in 1usize..6) {
            let pts = blobs(seed, n);
            let fit = kmeans_fit(&pts, k, seed, &KMeansParams::default()).unwrap();
            for w in fit.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "objective rose: {:?}", fit.objective_trace);
            }
            let (means, counts) = cluster_means(&pts, &fit.assignments, k);
            for j in 0..k {
                if counts[j] > 0 {
                    prop_assert!(close(&means[j], &fit.centroids[j]));
                }
            }
            if fit.iterations < KMeansParams::default().max_iters {
                for (v, a) in pts.iter().zip(&fit.assignments) {
                    prop_assert_eq!(assign_nearest(v, &fit.centroids).unwrap().prototype, *a);
                }
            }
        }
    }
}
