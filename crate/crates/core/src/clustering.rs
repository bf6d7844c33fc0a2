//! Lloyd k-means with k-means++ seeding over embedding matrices, plus
//! per-cluster intra-similarity reports and seeded member sampling.
//!
//! Distances are Euclidean on the raw vectors; intra-group similarity is
//! reported in cosine for comparability with the similarity module.
//! Everything is deterministic given (inputs, seed): assignment parallelizes
//! over rows but reductions accumulate in f64 in fixed row order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// A fitted k-means model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// k x dim, row-major, f64.
    pub centroids: Vec<f64>,
    /// Per-row cluster index, in matrix row order.
    pub assignments: Vec<usize>,
    /// Sum of squared distances of rows to their assigned centroid.
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_trace: Vec<f64>,
    /// Digest of the matrix this model was fitted on.
    pub matrix_digest: String,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Row indices assigned to cluster `c`, in row order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Per-cluster report: size, mean pairwise cosine, and a few member ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub size: usize,
    /// Mean pairwise cosine among members; absent for singleton clusters.
    pub intra_similarity: Option<f64>,
    pub sample_ids: Vec<String>,
}

fn sq_dist(row: &[f32], centroid: &[f64]) -> f64 {
    row.iter()
        .zip(centroid)
        .map(|(x, c)| {
            let d = *x as f64 - c;
            d * d
        })
        .sum()
}

fn nearest(row: &[f32], centroids: &[f64], dim: usize, k: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for c in 0..k {
        let d = sq_dist(row, &centroids[c * dim..(c + 1) * dim]);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ initial centroids: first uniform, the rest weighted by squared
/// distance to the nearest chosen centroid. Duplicate-heavy inputs fall back
/// to a uniform draw among unchosen rows once all weights vanish.
fn kmeanspp_init(rows: &[f32], dim: usize, k: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let n = rows.len() / dim;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen.push(first);
    centroids.extend(row(first).iter().map(|v| *v as f64));

    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(row(i), &centroids[..dim]))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            let remaining: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen.push(next);
        let start = centroids.len();
        centroids.extend(row(next).iter().map(|v| *v as f64));
        let new_c = &centroids[start..start + dim];
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(row(i), new_c);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Fit k-means on the rows of an embedding matrix.
///
/// Runs Lloyd iterations from a k-means++ start until assignments stabilize,
/// the relative inertia improvement drops below `tol`, or `max_iter` is hit.
/// Empty clusters are reseeded from the row farthest from its assigned
/// centroid.
pub fn kmeans(
    m: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let mut cm = kmeans_vectors(m.rows(), m.dim, k, seed, max_iter, tol)?;
    cm.matrix_digest = m.digest.clone();
    Ok(cm)
}

/// Row-level k-means entry point.
///
/// Unlike `EmbeddingMatrix`, raw rows may include the zero vector: Euclidean
/// k-means has no nonzero-norm requirement. The model digest is derived from
/// the raw row content.
pub fn kmeans_vectors(
    rows: &[f32],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if dim == 0 {
        return Err(Error::InvalidArg("dim must be positive".into()));
    }
    if rows.is_empty() || rows.len() % dim != 0 {
        return Err(Error::DimMismatch {
            left: rows.len(),
            right: dim,
        });
    }
    let n = rows.len() / dim;
    if k == 0 {
        return Err(Error::InvalidArg("k must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidArg(format!(
            "k {k} exceeds row count {n}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArg("max_iter must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArg(format!("tol must be >= 0, got {tol}")));
    }

    let digest = {
        let mut h = crate::provenance::ContentHasher::new("simsift/raw-rows");
        h.u64_field(dim as u64).f32_slice_field(rows);
        h.finish()
    };
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(rows, dim, k, &mut rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        iterations_run += 1;

        // assignment step
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(m.row(i), &centroids, dim, k))
            .collect();
        let mut next: Vec<usize> = assigned.iter().map(|(c, _)| *c).collect();

        // reseed empty clusters from the row farthest from its centroid,
        // stealing only from clusters that keep at least one member
        let mut sizes = vec![0usize; k];
        for &c in &next {
            sizes[c] += 1;
        }
        let mut stolen: Vec<bool> = vec![false; n];
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut candidate: Option<(usize, f64)> = None;
            for i in 0..n {
                if stolen[i] || sizes[next[i]] < 2 {
                    continue;
                }
                let d = assigned[i].1;
                if candidate.map_or(true, |(_, best)| d > best) {
                    candidate = Some((i, d));
                }
            }
            if let Some((i, _)) = candidate {
                sizes[next[i]] -= 1;
                sizes[empty] += 1;
                next[i] = empty;
                stolen[i] = true;
            }
            // no stealable row: keep the previous centroid for this cluster
        }

        let converged_assignments = next == assignments;
        assignments = next;

        // centroid update: fixed row order, f64 accumulation
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let row = m.row(i);
            for (acc, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *acc += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }

        let inertia: f64 = assignments
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(m.row(i), &centroids[c * dim..(c + 1) * dim]))
            .sum();
        let prev = trace.last().copied();
        trace.push(inertia);

        if converged_assignments {
            break;
        }
        if let Some(prev) = prev {
            let improvement = if prev > 0.0 { (prev - inertia) / prev } else { 0.0 };
            if improvement < tol && tol > 0.0 {
                break;
            }
        }
    }

    Ok(ClusterModel {
        k,
        dim,
        centroids,
        assignments,
        inertia: *trace.last().expect("at least one iteration"),
        seed,
        iterations_run,
        inertia_trace: trace,
        matrix_digest: m.digest.clone(),
    })
}

/// Size, intra-group cosine similarity, and sampled member ids per cluster.
///
/// The mean pairwise cosine is computed via the normalized-sum identity
/// `sum_{i != j} cos_ij = |sum_i u_i|^2 - s` over unit rows, which matches
/// the double loop to floating-point accuracy without the quadratic cost.
pub fn cluster_stats(cm: &ClusterModel, m: &EmbeddingMatrix) -> Result<Vec<ClusterReport>> {
    if cm.matrix_digest != m.digest {
        return Err(Error::DigestMismatch {
            expected: cm.matrix_digest.clone(),
            actual: m.digest.clone(),
        });
    }

    let mut reports = Vec::with_capacity(cm.k);
    for c in 0..cm.k {
        let members = cm.members(c);
        let s = members.len();
        let intra = if s >= 2 {
            let mut unit_sum = vec![0f64; m.dim];
            for &i in &members {
                let row = m.row(i);
                let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow {
                        id: m.ids[i].clone(),
                    });
                }
                for (acc, v) in unit_sum.iter_mut().zip(row) {
                    *acc += *v as f64 / norm;
                }
            }
            let norm2: f64 = unit_sum.iter().map(|v| v * v).sum();
            Some(((norm2 - s as f64) / (s as f64 * (s as f64 - 1.0))).clamp(-1.0, 1.0))
        } else {
            None
        };
        let sample_ids = members
            .iter()
            .take(5)
            .map(|&i| m.ids[i].clone())
            .collect();
        reports.push(ClusterReport {
            cluster: c,
            size: s,
            intra_similarity: intra,
            sample_ids,
        });
    }
    Ok(reports)
}

/// Seeded uniform draw without replacement of `n` members of one cluster,
/// emitted as a new corpus in source order.
pub fn sample_cluster(
    cm: &ClusterModel,
    corpus: &Corpus,
    cluster: usize,
    n: usize,
    seed: u64,
) -> Result<Corpus> {
    if cluster >= cm.k {
        return Err(Error::InvalidArg(format!(
            "cluster {cluster} out of range for k={}",
            cm.k
        )));
    }
    if corpus.len() != cm.assignments.len() {
        return Err(Error::InvalidArg(format!(
            "corpus has {} examples but the model was fitted on {} rows",
            corpus.len(),
            cm.assignments.len()
        )));
    }
    let members = cm.members(cluster);
    if n == 0 {
        return Err(Error::InvalidArg("sample size must be positive".into()));
    }
    if n > members.len() {
        return Err(Error::InvalidArg(format!(
            "sample size {n} exceeds cluster size {}",
            members.len()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, members.len(), n)
        .into_iter()
        .map(|i| members[i])
        .collect();
    picked.sort_unstable();

    let examples = picked
        .into_iter()
        .map(|i| corpus.examples[i].clone())
        .collect();
    Corpus::from_examples(format!("{}:c{cluster}:n{n}", corpus.name), examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use crate::embedding::EmbeddingSpec;

    fn matrix(name: &str, dim: usize, rows: &[Vec<f32>]) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("{name}:{i:06}")).collect();
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        EmbeddingMatrix::new(name, ids, dim, flat, EmbeddingSpec::default()).unwrap()
    }

    fn one_d(vals: &[f32]) -> EmbeddingMatrix {
        matrix("m", 1, &vals.iter().map(|v| vec![*v]).collect::<Vec<_>>())
    }

    #[test]
    fn distinct_points_k_equals_n_zero_inertia() {
        let m = matrix(
            "m",
            2,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
        );
        let cm = kmeans(&m, 4, 3, 50, 0.0).unwrap();
        assert!(cm.inertia < 1e-12, "inertia {}", cm.inertia);
        let mut sizes = cm.cluster_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn two_well_separated_groups() {
        let m = one_d(&[0.0, 1.0, 10.0, 11.0]);
        let cm = kmeans(&m, 2, 7, 100, 0.0).unwrap();
        let mut cents: Vec<f64> = (0..2).map(|c| cm.centroid(c)[0]).collect();
        cents.sort_by(f64::total_cmp);
        assert!((cents[0] - 0.5).abs() < 1e-12);
        assert!((cents[1] - 10.5).abs() < 1e-12);
        assert_eq!(cm.assignments[0], cm.assignments[1]);
        assert_eq!(cm.assignments[2], cm.assignments[3]);
        assert_ne!(cm.assignments[0], cm.assignments[2]);
        assert!((cm.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_one_is_global_mean() {
        let m = one_d(&[1.0, 2.0, 3.0, 6.0]);
        let cm = kmeans(&m, 1, 0, 10, 0.0).unwrap();
        assert!((cm.centroid(0)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_checked() {
        let m = one_d(&[1.0, 2.0]);
        assert!(kmeans(&m, 0, 0, 10, 0.0).is_err());
        assert!(kmeans(&m, 3, 0, 10, 0.0).is_err());
        assert!(kmeans(&m, 1, 0, 0, 0.0).is_err());
        assert!(kmeans(&m, 1, 0, 10, -1.0).is_err());
    }

    #[test]
    fn trace_non_increasing_and_deterministic() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let m = matrix("m", 3, &rows);
        let a = kmeans(&m, 5, 11, 100, 0.0).unwrap();
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "trace increased: {:?}", w);
        }
        let b = kmeans(&m, 5, 11, 100, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_rows_with_k_equal_n_still_fit() {
        let m = one_d(&[1.0, 1.0, 1.0]);
        let cm = kmeans(&m, 3, 2, 20, 0.0).unwrap();
        assert_eq!(cm.assignments.len(), 3);
        assert!(cm.inertia < 1e-12);
    }

    #[test]
    fn stats_identical_rows_similarity_one() {
        let m = matrix("m", 2, &[vec![2.0, 1.0], vec![2.0, 1.0], vec![2.0, 1.0]]);
        let cm = kmeans(&m, 1, 0, 10, 0.0).unwrap();
        let stats = cluster_stats(&cm, &m).unwrap();
        assert_eq!(stats[0].size, 3);
        assert!((stats[0].intra_similarity.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stats_orthogonal_rows_similarity_zero() {
        let m = matrix("m", 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let cm = kmeans(&m, 1, 0, 10, 0.0).unwrap();
        let stats = cluster_stats(&cm, &m).unwrap();
        assert!(stats[0].intra_similarity.unwrap().abs() < 1e-9);
    }

    #[test]
    fn stats_match_double_loop_oracle() {
        use crate::similarity::cosine;
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = matrix("m", 4, &rows);
        let cm = kmeans(&m, 1, 0, 10, 0.0).unwrap();
        let stats = cluster_stats(&cm, &m).unwrap();

        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                total += cosine(m.row(i), m.row(j)).unwrap();
                pairs += 1;
            }
        }
        let oracle = total / pairs as f64;
        assert!((stats[0].intra_similarity.unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn stats_reject_foreign_matrix() {
        let m1 = one_d(&[1.0, 2.0]);
        let m2 = one_d(&[3.0, 4.0]);
        let cm = kmeans(&m1, 1, 0, 10, 0.0).unwrap();
        assert!(matches!(
            cluster_stats(&cm, &m2).unwrap_err(),
            Error::DigestMismatch { .. }
        ));
    }

    fn toy_corpus(n: usize) -> Corpus {
        let examples = (0..n)
            .map(|i| Example {
                id: format!("m:{i:06}"),
                instruction: format!("i{i}"),
                input: None,
                output: format!("o{i}"),
                tags: None,
            })
            .collect();
        Corpus::from_examples("m", examples).unwrap()
    }

    #[test]
    fn sample_whole_cluster_is_order_stable() {
        let m = one_d(&[0.0, 0.1, 10.0, 10.1]);
        let corpus = toy_corpus(4);
        let cm = kmeans(&m, 2, 3, 50, 0.0).unwrap();
        let cluster = cm.assignments[0];
        let members = cm.members(cluster);
        let sampled = sample_cluster(&cm, &corpus, cluster, members.len(), 9).unwrap();
        let want: Vec<String> = members.iter().map(|&i| corpus.examples[i].id.clone()).collect();
        assert_eq!(sampled.ids(), want);
    }

    #[test]
    fn sample_is_deterministic_and_bounded() {
        let m = one_d(&[0.0, 0.1, 0.2, 0.3, 10.0]);
        let corpus = toy_corpus(5);
        let cm = kmeans(&m, 2, 1, 50, 0.0).unwrap();
        let big = (0..2).max_by_key(|&c| cm.members(c).len()).unwrap();
        let a = sample_cluster(&cm, &corpus, big, 2, 7).unwrap();
        let b = sample_cluster(&cm, &corpus, big, 2, 7).unwrap();
        assert_eq!(a, b);
        let too_many = cm.members(big).len() + 1;
        assert!(sample_cluster(&cm, &corpus, big, too_many, 7).is_err());
        assert!(sample_cluster(&cm, &corpus, 9, 1, 7).is_err());
    }
}
