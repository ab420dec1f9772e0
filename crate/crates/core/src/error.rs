use std::fmt;

use crate::bundle::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Bad magic, malformed header, or undecodable JSON.
    #[error("format error: {0}")]
    Format(String),

    /// Lengths, offsets, or checksum disagree with the header.
    #[error("corruption: {0}")]
    Corruption(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid bundle: {}", DiagList(.0))]
    Invalid(Vec<Diagnostic>),

    /// An operation was asked to act on the wrong kind of layer.
    #[error("type error: {0}")]
    Type(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("length mismatch: {0}")]
    Length(String),

    /// Cluster index sets that overlap, are empty, or fall outside the matrix.
    #[error("bad cluster sets: {0}")]
    Partition(String),

    /// Two graphs compared for cost differ in more than channel counts.
    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("shape mismatch at {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
