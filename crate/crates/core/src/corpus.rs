//! Instruction/response corpora: JSONL loading, validation, serialization,
//! and seeded mixing.
//!
//! Record format is one JSON object per line with keys `instruction`,
//! `input` (optional), `output`, plus optional `id` and `tags`. Ids absent
//! from the file are synthesized as `<name>:<zero-padded row index>` so that
//! joins with embedding rows stay stable across re-loads.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{file_sha256_hex, sha256_hex};

/// One instruction/response example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<BTreeSet<String>>,
}

impl Example {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.as_ref().is_some_and(|t| t.contains(tag))
    }

    fn add_tag(&mut self, tag: String) {
        self.tags.get_or_insert_with(BTreeSet::new).insert(tag);
    }
}

/// An ordered, immutable-by-convention collection of examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub examples: Vec<Example>,
    /// SHA-256 of the source file for loaded corpora, or of the canonical
    /// JSONL serialization for corpora built in memory.
    pub source_digest: String,
}

impl Corpus {
    /// Build a corpus from in-memory examples; the digest is derived from
    /// the canonical serialization.
    pub fn from_examples(name: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let name = name.into();
        validate_examples(&examples)?;
        let digest = sha256_hex(to_jsonl(&examples).as_bytes());
        Ok(Corpus {
            name,
            examples,
            source_digest: digest,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }
}

/// Mixing recipe: inject `round(ratio * |base|)` (at least one) examples
/// drawn from `additive` into `base` at seeded-uniform positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub base: String,
    pub additive: String,
    pub ratio: f64,
    pub seed: u64,
}

impl MixSpec {
    pub fn new(base: impl Into<String>, additive: impl Into<String>, ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidArg(format!(
                "mix ratio must be in (0, 1], got {ratio}"
            )));
        }
        Ok(MixSpec {
            base: base.into(),
            additive: additive.into(),
            ratio,
            seed,
        })
    }
}

/// Number of examples a mix injects: `round(ratio * base_len)`, floored at 1.
pub fn injected_count(ratio: f64, base_len: usize) -> usize {
    ((ratio * base_len as f64).round() as usize).max(1)
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    instruction: Option<String>,
    #[serde(default)]
    input: Option<String>,
    output: Option<String>,
    #[serde(default)]
    tags: Option<BTreeSet<String>>,
}

/// Load and validate a JSONL corpus.
///
/// Errors name the offending line. Blank lines are skipped; the synthesized
/// id index counts records, not file lines.
pub fn load_corpus(path: &Path, name: &str) -> Result<Corpus> {
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
    let source_digest = file_sha256_hex(path)?;

    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| malformed(line_no, format!("invalid JSON record: {e}")))?;

        let instruction = raw
            .instruction
            .ok_or_else(|| malformed(line_no, "missing field `instruction`".into()))?;
        let output = raw
            .output
            .ok_or_else(|| malformed(line_no, "missing field `output`".into()))?;
        if instruction.trim().is_empty() {
            return Err(malformed(line_no, "instruction is empty".into()));
        }
        if output.trim().is_empty() {
            return Err(malformed(line_no, "output is empty".into()));
        }

        let id = match raw.id {
            Some(id) => {
                if id.trim().is_empty() {
                    return Err(malformed(line_no, "explicit id is empty".into()));
                }
                id
            }
            None => format!("{name}:{:06}", examples.len()),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(Error::DuplicateId { id, line: line_no });
        }

        examples.push(Example {
            id,
            instruction,
            input: raw.input,
            output,
            tags: raw.tags,
        });
    }

    if examples.is_empty() {
        return Err(Error::EmptyInput(format!(
            "corpus file {} has no records",
            path.display()
        )));
    }

    Ok(Corpus {
        name: name.to_string(),
        examples,
        source_digest,
    })
}

/// Canonical JSONL serialization (one example per line, stable field order).
pub fn to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        // serialization of Example cannot fail
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Write a corpus back out as JSONL.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(to_jsonl(&corpus.examples).as_bytes())
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Inject a seeded draw of `additive` examples into `base`.
///
/// Base examples keep their ids and relative order. Injected examples get
/// fresh ids plus `injected` / `from:<original id>` audit tags. The draw is
/// without replacement when the additive corpus is large enough; otherwise
/// it falls back to with-replacement and logs a warning.
pub fn mix_corpora(spec: &MixSpec, base: &Corpus, additive: &Corpus) -> Result<Corpus> {
    if spec.base != base.name {
        return Err(Error::InvalidArg(format!(
            "mix spec names base {:?} but corpus is {:?}",
            spec.base, base.name
        )));
    }
    if spec.additive != additive.name {
        return Err(Error::InvalidArg(format!(
            "mix spec names additive {:?} but corpus is {:?}",
            spec.additive, additive.name
        )));
    }
    if additive.is_empty() {
        return Err(Error::EmptyInput("additive corpus is empty".into()));
    }
    // revalidated here because MixSpec is deserializable
    if !(spec.ratio > 0.0 && spec.ratio <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "mix ratio must be in (0, 1], got {}",
            spec.ratio
        )));
    }

    let count = injected_count(spec.ratio, base.len());
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let drawn: Vec<usize> = if additive.len() >= count {
        sample(&mut rng, additive.len(), count).into_vec()
    } else {
        log::warn!(
            "additive corpus {:?} has {} examples, fewer than the {} requested; \
             drawing with replacement",
            additive.name,
            additive.len(),
            count
        );
        (0..count)
            .map(|_| rng.random_range(0..additive.len()))
            .collect()
    };

    let injected: Vec<Example> = drawn
        .iter()
        .enumerate()
        .map(|(k, &src)| {
            let mut ex = additive.examples[src].clone();
            ex.add_tag("injected".to_string());
            ex.add_tag(format!("from:{}", ex.id));
            ex.id = format!("{}:inj:{k:06}", additive.name);
            ex
        })
        .collect();

    // Choose `count` distinct slots among the final positions, then merge so
    // base order is preserved.
    let total = base.len() + count;
    let mut slots: Vec<usize> = sample(&mut rng, total, count).into_vec();
    slots.sort_unstable();

    let mut merged = Vec::with_capacity(total);
    let mut base_iter = base.examples.iter();
    let mut inj_iter = injected.into_iter();
    let mut slot_iter = slots.iter().peekable();
    for pos in 0..total {
        if slot_iter.peek() == Some(&&pos) {
            slot_iter.next();
            merged.push(inj_iter.next().expect("one injected example per slot"));
        } else {
            merged.push(base_iter.next().expect("base examples fill non-slots").clone());
        }
    }

    Corpus::from_examples(format!("{}+{}", base.name, additive.name), merged)
}

/// Drop examples whose (instruction, input, output) text repeats, keeping the
/// first occurrence. Returns the deduplicated corpus and the number dropped.
pub fn dedup_corpus(corpus: &Corpus) -> Result<(Corpus, usize)> {
    let mut seen: HashSet<(String, Option<String>, String)> = HashSet::new();
    let mut kept = Vec::new();
    for ex in &corpus.examples {
        let key = (ex.instruction.clone(), ex.input.clone(), ex.output.clone());
        if seen.insert(key) {
            kept.push(ex.clone());
        }
    }
    let dropped = corpus.len() - kept.len();
    let deduped = Corpus::from_examples(corpus.name.clone(), kept)?;
    Ok((deduped, dropped))
}

fn validate_examples(examples: &[Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("corpus has no examples".into()));
    }
    let mut seen = HashSet::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.instruction.trim().is_empty() || ex.output.trim().is_empty() {
            return Err(Error::InvalidArg(format!(
                "example {} ({:?}) has an empty instruction or output",
                i, ex.id
            )));
        }
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::DuplicateId {
                id: ex.id.clone(),
                line: i + 1,
            });
        }
    }
    Ok(())
}
