//! Sketch-and-extrude data model and its token language.

mod canon;
mod codec;
mod model;
mod token;
mod validate;

use std::fmt;

use sha2::{Digest, Sha256};

pub use canon::{canonical_face, canonical_loop, canonical_sketch, canonicalize};
pub use codec::{flatten, flatten_unchecked, infer_topology, parse, parse_extrude, parse_geometry, split, views};
pub use model::*;
pub use token::*;
pub use validate::{validate, Diagnostic, PrimitivePath, Rule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeqError {
    #[error("invalid model: {}", summarize(.0))]
    InvalidModel(Vec<Diagnostic>),
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error("curve ending at position {position} has {count} geometry tokens (expected 1, 2 or 4)")]
    BadCurveArity { position: usize, count: usize },
    #[error("{sketches} sketches but {extrudes} extrusion blocks")]
    CountMismatch { sketches: usize, extrudes: usize },
    #[error("coordinate {0} outside the unit interval")]
    OutOfRange(f64),
    #[error("class {class} at position {index} outside the {view} layout")]
    ClassOutOfRange { view: ViewKind, index: usize, class: u16 },
    #[error("bad token text: {0}")]
    BadText(String),
}

impl SeqError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        SeqError::MalformedSequence(msg.into())
    }
}

fn summarize(d: &[Diagnostic]) -> String {
    match d {
        [] => "no diagnostics".into(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (+{} more)", rest.len()),
    }
}

/// Slack above 1.0 accepted by [`quantize`] for coordinates that were
/// normalized with rounding error.
pub const QUANTIZE_EPS: f64 = 1e-9;

/// Maps a coordinate in `[0, 1)` to its 6-bit bin.
pub fn quantize_coord(v: f64) -> Result<u8, SeqError> {
    if !(0.0..1.0 + QUANTIZE_EPS).contains(&v) || v.is_nan() {
        return Err(SeqError::OutOfRange(v));
    }
    Ok(((v * GRID_SIZE as f64).floor() as i64).clamp(0, GRID_MAX as i64) as u8)
}

/// Bin center of a 6-bit coordinate.
pub fn dequantize_coord(bin: u8) -> f64 {
    (bin as f64 + 0.5) / GRID_SIZE as f64
}

pub fn quantize(p: [f64; 2]) -> Result<GridPoint, SeqError> {
    Ok(GridPoint::new(quantize_coord(p[0])?, quantize_coord(p[1])?))
}

pub fn dequantize(p: GridPoint) -> [f64; 2] {
    [dequantize_coord(p.x), dequantize_coord(p.y)]
}

/// Opaque identity of a token sequence under 6-bit quantization.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey([u8; 32]);

impl fmt::Debug for DedupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

fn digest_views<'a>(subs: impl IntoIterator<Item = &'a SubSeq>) -> DedupKey {
    let mut h = Sha256::new();
    for s in subs {
        h.update([s.kind as u8]);
        h.update((s.classes.len() as u64).to_le_bytes());
        for c in &s.classes {
            h.update(c.to_le_bytes());
        }
    }
    DedupKey(h.finalize().into())
}

/// Equal keys iff the canonical flattened sequences are token-identical.
pub fn dedup_key(model: &CadModel) -> DedupKey {
    let seq = flatten_unchecked(model);
    match split(&seq) {
        Ok(v) => digest_views([&v.geometry, &v.topology, &v.extrude]),
        // out-of-range tokens: fall back to the debug rendering
        Err(_) => {
            let mut h = Sha256::new();
            h.update(format!("{:?}", seq.0).as_bytes());
            DedupKey(h.finalize().into())
        }
    }
}

impl SubSeq {
    /// Key for de-duplicating a single view.
    pub fn dedup_key(&self) -> DedupKey {
        digest_views([self])
    }
}
