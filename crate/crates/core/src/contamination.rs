//! Min-K% Prob membership-inference scoring.
//!
//! For a text's per-token log-probabilities under a model, the statistic is
//! the mean of the lowest k% of them: unseen texts tend to contain a few
//! outlier tokens with very low probability, dragging the mean down.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Per-token natural-log probabilities for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub example_id: String,
    pub logprobs: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(example_id: impl Into<String>, logprobs: Vec<f64>) -> Result<Self> {
        let example_id = example_id.into();
        if logprobs.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no log-probabilities for id {example_id:?}"
            )));
        }
        for v in &logprobs {
            if !v.is_finite() && *v != f64::NEG_INFINITY {
                return Err(Error::InvalidArg(format!(
                    "non-finite log-probability for id {example_id:?}"
                )));
            }
            if *v > 0.0 {
                return Err(Error::InvalidArg(format!(
                    "log-probability {v} > 0 for id {example_id:?}"
                )));
            }
        }
        Ok(TokenLogProbs {
            example_id,
            logprobs,
        })
    }
}

/// Mean of the `max(1, floor(k_percent/100 * len))` smallest log-probs.
pub fn min_k_prob(t: &TokenLogProbs, k_percent: f64) -> Result<f64> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArg(format!(
            "k_percent must be in (0, 100], got {k_percent}"
        )));
    }
    if t.logprobs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no log-probabilities for id {:?}",
            t.example_id
        )));
    }
    let m = ((k_percent / 100.0 * t.logprobs.len() as f64).floor() as usize).max(1);
    let mut sorted = t.logprobs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[..m].iter().sum::<f64>() / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMinK {
    pub id: String,
    /// One value per threshold in the report's `ks`, same order.
    pub values: Vec<f64>,
}

/// Min-K% Prob per (example, threshold) plus corpus-level means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub corpus_name: String,
    pub ks: Vec<f64>,
    pub rows: Vec<ExampleMinK>,
    /// Mean over examples, one per threshold.
    pub corpus_means: Vec<f64>,
}

/// Score every corpus example at every threshold.
///
/// Requires one `TokenLogProbs` per corpus id; extra records are ignored
/// with a warning.
pub fn contamination_report(
    corpus: &Corpus,
    probs: &[TokenLogProbs],
    ks: &[f64],
) -> Result<ContaminationReport> {
    if ks.is_empty() {
        return Err(Error::InvalidArg("at least one k threshold required".into()));
    }
    for k in ks {
        if !(*k > 0.0 && *k <= 100.0) {
            return Err(Error::InvalidArg(format!(
                "k_percent must be in (0, 100], got {k}"
            )));
        }
    }

    let by_id: HashMap<&str, &TokenLogProbs> = probs
        .iter()
        .map(|p| (p.example_id.as_str(), p))
        .collect();

    let missing: Vec<&str> = corpus
        .examples
        .iter()
        .filter(|e| !by_id.contains_key(e.id.as_str()))
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidArg(format!(
            "missing log-probabilities for {} example(s): {}",
            missing.len(),
            missing
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if by_id.len() > corpus.len() {
        log::warn!(
            "{} log-prob record(s) do not match any corpus id; ignored",
            by_id.len() - corpus.len()
        );
    }

    let mut rows = Vec::with_capacity(corpus.len());
    let mut sums = vec![0f64; ks.len()];
    for ex in &corpus.examples {
        let t = by_id[ex.id.as_str()];
        let values: Vec<f64> = ks
            .iter()
            .map(|&k| min_k_prob(t, k))
            .collect::<Result<_>>()?;
        for (s, v) in sums.iter_mut().zip(&values) {
            *s += v;
        }
        rows.push(ExampleMinK {
            id: ex.id.clone(),
            values,
        });
    }
    let corpus_means = sums.iter().map(|s| s / corpus.len() as f64).collect();

    Ok(ContaminationReport {
        corpus_name: corpus.name.clone(),
        ks: ks.to_vec(),
        rows,
        corpus_means,
    })
}

#[derive(Deserialize)]
struct RawLogProbs {
    id: String,
    logprobs: Vec<f64>,
}

/// Read line-delimited `{"id": ..., "logprobs": [...]}` records.
pub fn read_logprobs_jsonl(path: &Path) -> Result<Vec<TokenLogProbs>> {
    let file = File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLogProbs =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("invalid log-prob record: {e}"),
            })?;
        out.push(
            TokenLogProbs::new(raw.id, raw.logprobs).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
