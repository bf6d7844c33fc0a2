//! Cosine-similarity scoring of an alignment corpus against a downstream
//! corpus, and High/Low/Random subset selection.
//!
//! Two selection procedures are implemented:
//!
//! * `averaged` (default): each alignment example is scored by its mean
//!   cosine similarity to every downstream example, and the top-n / bottom-n
//!   by that score form the High-Sim / Low-Sim subsets. This produces
//!   exactly-n subsets.
//! * `per_query`: for each downstream example, the k alignment examples with
//!   the largest (smallest) cosine are collected; subsets are the unions over
//!   downstream examples, so their sizes can be below k * |downstream|.
//!
//! All dot products accumulate in f64 over the f32 rows. Ties rank by
//! ascending id so runs are reproducible.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Averaged,
    PerQuery,
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionMode::Averaged => write!(f, "averaged"),
            SelectionMode::PerQuery => write!(f, "per_query"),
        }
    }
}

/// Per-alignment-example aggregate similarity to a downstream corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub alignment_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub downstream_name: String,
    pub mode: SelectionMode,
}

impl SimilarityScores {
    pub fn len(&self) -> usize {
        self.alignment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alignment_ids.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub high: f64,
    pub low: f64,
    pub random: f64,
}

/// High-Sim / Low-Sim / Random id lists with selection audit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Requested subset size (n for averaged mode, k for per-query mode).
    pub n: usize,
    pub high_ids: Vec<String>,
    pub low_ids: Vec<String>,
    pub random_ids: Vec<String>,
    pub seed: u64,
    pub mode: SelectionMode,
    /// Mean averaged similarity score of each subset.
    pub score_summary: ScoreSummary,
}

/// Cosine similarity of two equal-dimension vectors, accumulated in f64 and
/// clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0f64;
    let mut nu = 0f64;
    let mut nv = 0f64;
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Rows of `m` converted to f64 and normalized to unit length.
/// Fails with the row id if any row has zero norm.
fn normalized_rows(m: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    (0..m.n_rows())
        .map(|i| {
            let row = m.row(i);
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow {
                    id: m.ids[i].clone(),
                });
            }
            Ok(row.iter().map(|v| *v as f64 / norm).collect())
        })
        .collect()
}

fn check_dims(align: &EmbeddingMatrix, down: &EmbeddingMatrix) -> Result<()> {
    if align.dim != down.dim {
        return Err(Error::DimMismatch {
            left: align.dim,
            right: down.dim,
        });
    }
    Ok(())
}

/// Mean cosine similarity of every alignment row to the whole downstream
/// corpus.
///
/// Uses the identity `mean_d cos(a, d) = <a/|a|, mean_d d/|d|>` so the cost
/// is linear in rows rather than quadratic in pairs.
pub fn score_alignment(
    align: &EmbeddingMatrix,
    down: &EmbeddingMatrix,
) -> Result<SimilarityScores> {
    check_dims(align, down)?;
    let down_unit = normalized_rows(down)?;
    let n_down = down.n_rows() as f64;

    let mut mean_down = vec![0f64; down.dim];
    for row in &down_unit {
        for (acc, v) in mean_down.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean_down {
        *v /= n_down;
    }

    let scores: Vec<f64> = (0..align.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = align.row(i);
            let mut dot = 0f64;
            let mut norm2 = 0f64;
            for (a, b) in row.iter().zip(&mean_down) {
                let a = *a as f64;
                dot += a * b;
                norm2 += a * a;
            }
            if norm2 == 0.0 {
                return Err(Error::ZeroNormRow {
                    id: align.ids[i].clone(),
                });
            }
            Ok((dot / norm2.sqrt()).clamp(-1.0, 1.0))
        })
        .collect::<Result<_>>()?;

    Ok(SimilarityScores {
        alignment_ids: align.ids.clone(),
        scores,
        downstream_name: down.corpus_name.clone(),
        mode: SelectionMode::Averaged,
    })
}

/// Top-n / bottom-n / random-n id selection over averaged scores.
///
/// Ties rank by ascending id; the random subset is a seeded uniform draw
/// without replacement.
pub fn select_subsets(scores: &SimilarityScores, n: usize, seed: u64) -> Result<SelectionResult> {
    if n == 0 {
        return Err(Error::InvalidArg("subset size n must be positive".into()));
    }
    if n > scores.len() {
        return Err(Error::InvalidArg(format!(
            "subset size {n} exceeds corpus size {}",
            scores.len()
        )));
    }

    let ids = &scores.alignment_ids;
    let vals = &scores.scores;

    let mut by_high: Vec<usize> = (0..ids.len()).collect();
    by_high.sort_by(|&i, &j| {
        vals[j]
            .total_cmp(&vals[i])
            .then_with(|| ids[i].cmp(&ids[j]))
    });
    let mut by_low: Vec<usize> = (0..ids.len()).collect();
    by_low.sort_by(|&i, &j| {
        vals[i]
            .total_cmp(&vals[j])
            .then_with(|| ids[i].cmp(&ids[j]))
    });

    let high: Vec<usize> = by_high[..n].to_vec();
    let low: Vec<usize> = by_low[..n].to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let random: Vec<usize> = sample(&mut rng, ids.len(), n).into_vec();

    let mean_of = |idx: &[usize]| idx.iter().map(|&i| vals[i]).sum::<f64>() / idx.len() as f64;
    let summary = ScoreSummary {
        high: mean_of(&high),
        low: mean_of(&low),
        random: mean_of(&random),
    };
    let to_ids = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect();

    Ok(SelectionResult {
        n,
        high_ids: to_ids(&high),
        low_ids: to_ids(&low),
        random_ids: to_ids(&random),
        seed,
        mode: scores.mode,
        score_summary: summary,
    })
}

/// Per-downstream-example Top-K / Bottom-K selection.
///
/// For every downstream example the k alignment examples maximizing
/// (minimizing) cosine similarity are collected; `high_ids` / `low_ids` are
/// the unions, sorted by id. The random subset matches the high union's size.
/// `score_summary` reports subset means on the averaged-score scale so the
/// two modes stay comparable.
pub fn select_per_query(
    align: &EmbeddingMatrix,
    down: &EmbeddingMatrix,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    check_dims(align, down)?;
    if k == 0 {
        return Err(Error::InvalidArg("k must be positive".into()));
    }
    if k > align.n_rows() {
        return Err(Error::InvalidArg(format!(
            "k {k} exceeds alignment corpus size {}",
            align.n_rows()
        )));
    }

    let align_unit = normalized_rows(align)?;
    let down_unit = normalized_rows(down)?;
    let ids = &align.ids;

    let per_query: Vec<(Vec<usize>, Vec<usize>)> = down_unit
        .par_iter()
        .map(|q| {
            let sims: Vec<f64> = align_unit
                .iter()
                .map(|a| a.iter().zip(q).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&i, &j| {
                sims[j]
                    .total_cmp(&sims[i])
                    .then_with(|| ids[i].cmp(&ids[j]))
            });
            let top = order[..k].to_vec();
            order.sort_by(|&i, &j| {
                sims[i]
                    .total_cmp(&sims[j])
                    .then_with(|| ids[i].cmp(&ids[j]))
            });
            let bottom = order[..k].to_vec();
            (top, bottom)
        })
        .collect();

    let mut high_set = std::collections::BTreeSet::new();
    let mut low_set = std::collections::BTreeSet::new();
    for (top, bottom) in &per_query {
        high_set.extend(top.iter().map(|&i| ids[i].clone()));
        low_set.extend(bottom.iter().map(|&i| ids[i].clone()));
    }
    let high_ids: Vec<String> = high_set.into_iter().collect();
    let low_ids: Vec<String> = low_set.into_iter().collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let random_ids: Vec<String> = sample(&mut rng, ids.len(), high_ids.len().min(ids.len()))
        .into_iter()
        .map(|i| ids[i].clone())
        .collect();

    // subset means on the averaged-score scale
    let averaged = score_alignment(align, down)?;
    let index_of: std::collections::HashMap<&str, usize> = averaged
        .alignment_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mean_of = |subset: &[String]| {
        subset
            .iter()
            .map(|id| averaged.scores[index_of[id.as_str()]])
            .sum::<f64>()
            / subset.len() as f64
    };
    let summary = ScoreSummary {
        high: mean_of(&high_ids),
        low: mean_of(&low_ids),
        random: mean_of(&random_ids),
    };

    Ok(SelectionResult {
        n: k,
        high_ids,
        low_ids,
        random_ids,
        seed,
        mode: SelectionMode::PerQuery,
        score_summary: summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpec;

    pub(crate) fn matrix(name: &str, dim: usize, rows: &[Vec<f32>]) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("{name}:{i:06}")).collect();
        matrix_with_ids(name, dim, rows, ids)
    }

    pub(crate) fn matrix_with_ids(
        name: &str,
        dim: usize,
        rows: &[Vec<f32>],
        ids: Vec<String>,
    ) -> EmbeddingMatrix {
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        EmbeddingMatrix::new(name, ids, dim, flat, EmbeddingSpec::default()).unwrap()
    }

    /// Independent double-loop oracle for averaged scores.
    fn brute_force_scores(align: &EmbeddingMatrix, down: &EmbeddingMatrix) -> Vec<f64> {
        (0..align.n_rows())
            .map(|i| {
                let mut total = 0.0;
                for j in 0..down.n_rows() {
                    total += cosine(align.row(i), down.row(j)).unwrap();
                }
                total / down.n_rows() as f64
            })
            .collect()
    }

    #[test]
    fn cosine_identity_orthogonal_diagonal() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let d = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]).unwrap_err(),
            Error::DimMismatch { .. }
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            Error::ZeroNormVector
        ));
    }

    #[test]
    fn score_alignment_hand_case() {
        let align = matrix("a", 2, &[vec![1.0, 0.0]]);
        let down = matrix("d", 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = score_alignment(&align, &down).unwrap();
        assert!((s.scores[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.mode, SelectionMode::Averaged);
        assert_eq!(s.downstream_name, "d");
    }

    #[test]
    fn self_similarity_is_one() {
        let v = vec![0.3f32, -1.2, 4.0];
        let align = matrix("a", 3, &[v.clone()]);
        let down = matrix("d", 3, &[v]);
        let s = score_alignment(&align, &down).unwrap();
        assert!((s.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_alignment_matches_brute_force() {
        let align = matrix("a", 2, &[vec![0.4, -0.3], vec![1.5, 2.0], vec![-0.7, 0.9]]);
        let down = matrix(
            "d",
            2,
            &[vec![0.1, 0.2], vec![-1.0, 0.5], vec![2.0, 2.0], vec![0.3, -0.8]],
        );
        let got = score_alignment(&align, &down).unwrap();
        let want = brute_force_scores(&align, &down);
        for (g, w) in got.scores.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let align = matrix("a", 2, &[vec![1.0, 0.0]]);
        let down = matrix("d", 3, &[vec![1.0, 0.0, 0.0]]);
        assert!(matches!(
            score_alignment(&align, &down).unwrap_err(),
            Error::DimMismatch { .. }
        ));
    }

    fn toy_scores() -> SimilarityScores {
        SimilarityScores {
            alignment_ids: vec!["a".into(), "b".into(), "c".into()],
            scores: vec![0.9, 0.5, 0.1],
            downstream_name: "d".into(),
            mode: SelectionMode::Averaged,
        }
    }

    #[test]
    fn select_top_and_bottom_one() {
        let sel = select_subsets(&toy_scores(), 1, 0).unwrap();
        assert_eq!(sel.high_ids, vec!["a"]);
        assert_eq!(sel.low_ids, vec!["c"]);
        assert_eq!(sel.random_ids.len(), 1);
        assert!((sel.score_summary.high - 0.9).abs() < 1e-12);
        assert!((sel.score_summary.low - 0.1).abs() < 1e-12);
    }

    #[test]
    fn select_full_corpus_degenerate() {
        let sel = select_subsets(&toy_scores(), 3, 0).unwrap();
        let mut h = sel.high_ids.clone();
        let mut l = sel.low_ids.clone();
        h.sort();
        l.sort();
        assert_eq!(h, l);
        assert_eq!(h, vec!["a", "b", "c"]);
    }

    #[test]
    fn select_bounds_checked() {
        assert!(select_subsets(&toy_scores(), 0, 0).is_err());
        assert!(select_subsets(&toy_scores(), 4, 0).is_err());
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let scores = SimilarityScores {
            alignment_ids: vec!["b".into(), "a".into(), "c".into()],
            scores: vec![0.5, 0.5, 0.5],
            downstream_name: "d".into(),
            mode: SelectionMode::Averaged,
        };
        let sel = select_subsets(&scores, 1, 0).unwrap();
        assert_eq!(sel.high_ids, vec!["a"]);
        assert_eq!(sel.low_ids, vec!["a"]);
    }

    #[test]
    fn per_query_single_downstream() {
        // alignment rows scoring {a: 0.9, b: 0.5, c: 0.1} against one query
        let q = vec![1.0f32, 0.0];
        let rows = [
            vec![0.9f32, (1.0f32 - 0.81).sqrt()],
            vec![0.5, (1.0f32 - 0.25).sqrt()],
            vec![0.1, (1.0f32 - 0.01).sqrt()],
        ];
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let align = matrix_with_ids("a", 2, &rows, ids);
        let down = matrix("d", 2, &[q]);
        let sel = select_per_query(&align, &down, 2, 0).unwrap();
        assert_eq!(sel.high_ids, vec!["a", "b"]);
        assert_eq!(sel.low_ids, vec!["b", "c"]);
        assert_eq!(sel.mode, SelectionMode::PerQuery);
    }

    #[test]
    fn per_query_degenerate_k() {
        let align = matrix("a", 2, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let down = matrix("d", 2, &[vec![0.5, 0.5], vec![1.0, 2.0]]);
        let sel = select_per_query(&align, &down, 3, 0).unwrap();
        assert_eq!(sel.high_ids.len(), 3);
        assert_eq!(sel.low_ids.len(), 3);
        assert_eq!(sel.high_ids, sel.low_ids);
    }

    #[test]
    fn per_query_matches_exhaustive_oracle() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let dim = 8;
        let align_rows: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let down_rows: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let align = matrix("a", dim, &align_rows);
        let down = matrix("d", dim, &down_rows);
        let k = 3;
        let sel = select_per_query(&align, &down, k, 0).unwrap();

        let mut high = std::collections::BTreeSet::new();
        let mut low = std::collections::BTreeSet::new();
        for j in 0..down.n_rows() {
            let mut scored: Vec<(f64, &str)> = (0..align.n_rows())
                .map(|i| {
                    (
                        cosine(align.row(i), down.row(j)).unwrap(),
                        align.ids[i].as_str(),
                    )
                })
                .collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)));
            high.extend(scored[..k].iter().map(|(_, id)| id.to_string()));
            scored.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));
            low.extend(scored[..k].iter().map(|(_, id)| id.to_string()));
        }
        assert_eq!(sel.high_ids, high.into_iter().collect::<Vec<_>>());
        assert_eq!(sel.low_ids, low.into_iter().collect::<Vec<_>>());
    }
}
