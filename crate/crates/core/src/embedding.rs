//! Per-example representation vectors and the EMB1 on-disk format.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! magic   b"EMB1"
//! version u32
//! rows    u64
//! dim     u64
//! meta    u64 byte length + UTF-8 JSON {"corpus_name", "spec", "ids"}
//! rows * dim f32 values, row-major
//! ```
//!
//! Vectors are stored exactly as the provider returned them; cosine
//! normalization happens at compute time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::provenance::ContentHasher;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;

pub const PLACEHOLDER_INSTRUCTION: &str = "{instruction}";
pub const PLACEHOLDER_INPUT: &str = "{input}";
pub const PLACEHOLDER_OUTPUT: &str = "{output}";

/// Pooling contract requested from the representation provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Final hidden state of the last completion token.
    LastToken,
}

impl Pooling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pooling::LastToken => "last_token",
        }
    }
}

/// Names the external representation model and how example text is rendered
/// for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub model_id: String,
    /// Must contain `{instruction}` and `{output}`; `{input}` is optional and
    /// renders as the empty string when the example has no input.
    pub template: String,
    pub pooling: Pooling,
}

impl EmbeddingSpec {
    pub fn new(model_id: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let spec = EmbeddingSpec {
            model_id: model_id.into(),
            template: template.into(),
            pooling: Pooling::LastToken,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for ph in [PLACEHOLDER_INSTRUCTION, PLACEHOLDER_OUTPUT] {
            if !self.template.contains(ph) {
                return Err(Error::InvalidArg(format!(
                    "embedding template must contain {ph}"
                )));
            }
        }
        Ok(())
    }

    /// Render the text sent to the provider for one example.
    pub fn render(&self, example: &Example) -> String {
        self.template
            .replace(PLACEHOLDER_INSTRUCTION, &example.instruction)
            .replace(PLACEHOLDER_INPUT, example.input.as_deref().unwrap_or(""))
            .replace(PLACEHOLDER_OUTPUT, &example.output)
    }
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            model_id: "unspecified".to_string(),
            template: "{instruction}\n{output}".to_string(),
            pooling: Pooling::LastToken,
        }
    }
}

/// Row-per-example vector matrix with provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub corpus_name: String,
    pub ids: Vec<String>,
    pub dim: usize,
    rows: Vec<f32>,
    pub spec: EmbeddingSpec,
    pub digest: String,
}

impl EmbeddingMatrix {
    /// Validates invariants and computes the content digest.
    pub fn new(
        corpus_name: impl Into<String>,
        ids: Vec<String>,
        dim: usize,
        rows: Vec<f32>,
        spec: EmbeddingSpec,
    ) -> Result<Self> {
        let corpus_name = corpus_name.into();
        if dim == 0 {
            return Err(Error::InvalidArg("embedding dim must be positive".into()));
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("embedding matrix has no rows".into()));
        }
        if rows.len() != ids.len() * dim {
            return Err(Error::DimMismatch {
                left: rows.len(),
                right: ids.len() * dim,
            });
        }
        spec.validate()?;
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArg(format!(
                    "row for id {:?} contains a non-finite value",
                    ids[i]
                )));
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(Error::ZeroNormRow {
                    id: ids[i].clone(),
                });
            }
        }
        let digest = Self::content_digest(&corpus_name, &ids, dim, &rows, &spec);
        Ok(EmbeddingMatrix {
            corpus_name,
            ids,
            dim,
            rows,
            spec,
            digest,
        })
    }

    fn content_digest(
        corpus_name: &str,
        ids: &[String],
        dim: usize,
        rows: &[f32],
        spec: &EmbeddingSpec,
    ) -> String {
        let mut h = ContentHasher::new("simsift/emb1");
        h.str_field(corpus_name).u64_field(dim as u64);
        for id in ids {
            h.str_field(id);
        }
        h.str_field(&serde_json::to_string(spec).expect("spec serializes"));
        h.f32_slice_field(rows);
        h.finish()
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    /// Re-check all invariants, including that the stored digest still
    /// matches the content.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::new(
            self.corpus_name.clone(),
            self.ids.clone(),
            self.dim,
            self.rows.clone(),
            self.spec.clone(),
        )?;
        if rebuilt.digest != self.digest {
            return Err(Error::DigestMismatch {
                expected: self.digest.clone(),
                actual: rebuilt.digest,
            });
        }
        Ok(())
    }

    /// Copy with every value multiplied by a scalar. Intended for
    /// scale-invariance checks.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let rows = self.rows.iter().map(|v| v * factor).collect();
        Self::new(
            self.corpus_name.clone(),
            self.ids.clone(),
            self.dim,
            rows,
            self.spec.clone(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Emb1Meta {
    corpus_name: String,
    spec: EmbeddingSpec,
    ids: Vec<String>,
}

/// Write a matrix in EMB1 format. Invariants are re-checked first.
pub fn write_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    m.validate()?;
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };

    let meta = serde_json::to_vec(&Emb1Meta {
        corpus_name: m.corpus_name.clone(),
        spec: m.spec.clone(),
        ids: m.ids.clone(),
    })
    .expect("meta serializes");

    w.write_all(EMB1_MAGIC).map_err(io_err)?;
    w.write_all(&EMB1_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.n_rows() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.dim as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta).map_err(io_err)?;
    for v in &m.rows {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read an EMB1 file, validating header, metadata, and payload size.
pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix> {
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
    let mut r = BufReader::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let truncated = |reason: String| Error::TruncatedPayload {
        path: path.to_path_buf(),
        reason,
    };

    let mut magic = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || &magic != EMB1_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }

    let version = read_u32(&mut r).map_err(|_| truncated("header ends before version".into()))?;
    if version != EMB1_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = read_u64(&mut r).map_err(|_| truncated("header ends before row count".into()))? as usize;
    let dim = read_u64(&mut r).map_err(|_| truncated("header ends before dim".into()))? as usize;
    if dim == 0 {
        return Err(Error::InvalidArg(format!(
            "{}: header declares dim 0",
            path.display()
        )));
    }
    let meta_len =
        read_u64(&mut r).map_err(|_| truncated("header ends before metadata length".into()))? as usize;

    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| truncated(format!("metadata block shorter than declared {meta_len} bytes")))?;
    let meta: Emb1Meta = serde_json::from_slice(&meta_bytes).map_err(|e| {
        Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("invalid metadata JSON: {e}"),
        }
    })?;
    if meta.ids.len() != rows {
        return Err(truncated(format!(
            "header declares {rows} rows but metadata carries {} ids",
            meta.ids.len()
        )));
    }

    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| truncated("row count * dim overflows".into()))?;
    let mut payload = Vec::with_capacity(expected.min(1 << 30));
    r.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() != expected {
        return Err(truncated(format!(
            "expected {expected} payload bytes ({rows} rows x {dim} dims), found {}",
            payload.len()
        )));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    EmbeddingMatrix::new(meta.corpus_name, meta.ids, dim, values, meta.spec)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
