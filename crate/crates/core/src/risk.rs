//! Similarity-aware model selection: rank candidate aligned models by
//! aggregate representation similarity to a user dataset and flag the
//! low-similarity ones as lower jailbreak risk.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::provenance::ContentHasher;
use crate::similarity::score_alignment;

/// A candidate aligned model, represented by the embeddings of its
/// safety-alignment corpus.
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub model_id: String,
    pub matrix: EmbeddingMatrix,
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFlag {
    LowerRisk,
    HigherRisk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Median of the candidate aggregates.
    Auto,
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub model_id: String,
    pub aggregate_similarity: f64,
    /// 1-based, ascending by aggregate similarity.
    pub rank: usize,
    pub flag: RiskFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCandidate {
    pub model_id: String,
    pub reason: String,
}

/// Ranked candidates for one user dataset.
///
/// All matrices must come from the same embedding spec; cosines across
/// different representation spaces are not comparable, so mixed specs are
/// refused unless explicitly forced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub user_dataset: String,
    pub entries: Vec<RiskEntry>,
    pub excluded: Vec<ExcludedCandidate>,
    pub threshold: f64,
    pub generated_at: String,
    pub config_digest: String,
}

/// Grand mean over all (alignment row, downstream row) cosine pairs.
///
/// Defined as the mean of `score_alignment`'s per-example scores so the two
/// operations share one accumulation path.
pub fn aggregate_similarity(align: &EmbeddingMatrix, down: &EmbeddingMatrix) -> Result<f64> {
    Ok(score_alignment(align, down)?.mean())
}

pub struct RankOptions {
    pub threshold: ThresholdMode,
    /// Exclude rather than fail on per-candidate dim mismatch.
    pub lenient: bool,
    /// Allow candidates whose embedding spec differs from the user matrix's.
    pub force_mixed_specs: bool,
    /// RFC 3339 timestamp recorded in the report; injected by the caller so
    /// the ranking itself stays a pure function.
    pub generated_at: String,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            threshold: ThresholdMode::Auto,
            lenient: false,
            force_mixed_specs: false,
            generated_at: String::new(),
        }
    }
}

/// Rank candidates ascending by aggregate similarity to the user dataset.
///
/// Lower similarity ranks first and is flagged `lower_risk` when the
/// aggregate falls below the threshold. Ties order by model id.
pub fn rank_models(
    candidates: &[CandidateModel],
    user_data: &EmbeddingMatrix,
    opts: &RankOptions,
) -> Result<RiskReport> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidate models".into()));
    }

    let mut excluded = Vec::new();
    let mut scored: Vec<(String, f64, &CandidateModel)> = Vec::new();
    for cand in candidates {
        if cand.matrix.spec != user_data.spec && !opts.force_mixed_specs {
            return Err(Error::SpecMismatch(format!(
                "candidate {:?} was embedded under a different spec than the user dataset; \
                 rerun with matching embeddings or force explicitly",
                cand.model_id
            )));
        }
        if cand.matrix.dim != user_data.dim {
            let reason = format!(
                "dim {} does not match user dataset dim {}",
                cand.matrix.dim, user_data.dim
            );
            if opts.lenient {
                log::warn!("excluding candidate {:?}: {reason}", cand.model_id);
                excluded.push(ExcludedCandidate {
                    model_id: cand.model_id.clone(),
                    reason,
                });
                continue;
            }
            return Err(Error::DimMismatch {
                left: cand.matrix.dim,
                right: user_data.dim,
            });
        }
        let agg = aggregate_similarity(&cand.matrix, user_data)?;
        scored.push((cand.model_id.clone(), agg, cand));
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput(
            "every candidate was excluded; nothing to rank".into(),
        ));
    }

    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let threshold = match opts.threshold {
        ThresholdMode::Absolute(t) => t,
        ThresholdMode::Auto => median(&scored.iter().map(|(_, a, _)| *a).collect::<Vec<_>>()),
    };

    let entries: Vec<RiskEntry> = scored
        .iter()
        .enumerate()
        .map(|(i, (model_id, agg, _))| RiskEntry {
            model_id: model_id.clone(),
            aggregate_similarity: *agg,
            rank: i + 1,
            flag: if *agg < threshold {
                RiskFlag::LowerRisk
            } else {
                RiskFlag::HigherRisk
            },
        })
        .collect();

    let mut hasher = ContentHasher::new("simsift/risk-config");
    hasher.str_field(&user_data.digest);
    for (model_id, _, cand) in &scored {
        hasher.str_field(model_id).str_field(&cand.matrix.digest);
    }
    match opts.threshold {
        ThresholdMode::Auto => hasher.str_field("auto"),
        ThresholdMode::Absolute(t) => hasher.str_field(&format!("abs:{t}")),
    };
    hasher.u64_field(opts.lenient as u64);
    hasher.u64_field(opts.force_mixed_specs as u64);

    Ok(RiskReport {
        user_dataset: user_data.corpus_name.clone(),
        entries,
        excluded,
        threshold,
        generated_at: opts.generated_at.clone(),
        config_digest: hasher.finish(),
    })
}

fn median(sorted_vals: &[f64]) -> f64 {
    // callers pass aggregates already sorted ascending
    let n = sorted_vals.len();
    if n % 2 == 1 {
        sorted_vals[n / 2]
    } else {
        (sorted_vals[n / 2 - 1] + sorted_vals[n / 2]) / 2.0
    }
}
