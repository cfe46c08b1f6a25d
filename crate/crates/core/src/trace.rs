//! Attention traces: per-layer, per-head query and key matrices.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "KVCR" | version: u32 | num_layers, num_heads, head_dim, seq_len, precision: u32
//!        | model_name: u32 length + UTF-8 bytes
//!        | for each layer, for each head: Q then K, row-major f32
//!        | optional: "LBLS" + seq_len u32 ground-truth labels
//! ```
//!
//! Scalars are always stored as `f32`; `precision` only records the width
//! the source model used, for memory accounting.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KVCR";
pub const LABELS_TAG: &[u8; 4] = b"LBLS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub model_name: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub seq_len: usize,
    /// Bytes per scalar in the source model (2 or 4).
    pub precision: usize,
}

impl TraceHeader {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("seq_len", self.seq_len),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::MalformedHeader {
                    offset: 0,
                    reason: format!("{name} must be at least 1"),
                });
            }
            if u32::try_from(value).is_err() {
                return Err(Error::MalformedHeader {
                    offset: 0,
                    reason: format!("{name} = {value} does not fit in u32"),
                });
            }
        }
        if self.precision != 2 && self.precision != 4 {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!("precision must be 2 or 4, got {}", self.precision),
            });
        }
        Ok(())
    }

    fn matrix_len(&self) -> usize {
        self.seq_len * self.head_dim
    }
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// Query and key projections of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensors {
    pub query: Matrix,
    pub key: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    header: TraceHeader,
    /// Indexed `[layer][head]`.
    layers: Vec<Vec<HeadTensors>>,
    labels: Option<Vec<u32>>,
}

impl AttentionTrace {
    /// Builds a trace, checking every shape against the header and rejecting
    /// non-finite scalars.
    pub fn new(
        header: TraceHeader,
        layers: Vec<Vec<HeadTensors>>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        header.validate()?;
        if layers.len() != header.num_layers {
            return Err(Error::DimensionMismatch {
                layer: layers.len(),
                head: 0,
                offset: 0,
                reason: format!("expected {} layers", header.num_layers),
            });
        }
        for (l, heads) in layers.iter().enumerate() {
            if heads.len() != header.num_heads {
                return Err(Error::DimensionMismatch {
                    layer: l,
                    head: heads.len(),
                    offset: 0,
                    reason: format!("expected {} heads", header.num_heads),
                });
            }
            for (h, t) in heads.iter().enumerate() {
                for (name, m) in [("Q", &t.query), ("K", &t.key)] {
                    if m.rows != header.seq_len || m.cols != header.head_dim {
                        return Err(Error::DimensionMismatch {
                            layer: l,
                            head: h,
                            offset: 0,
                            reason: format!(
                                "{name} is {}x{}, expected {}x{}",
                                m.rows, m.cols, header.seq_len, header.head_dim
                            ),
                        });
                    }
                    if let Some(offset) = m.first_non_finite() {
                        return Err(Error::NonFiniteValue {
                            layer: l,
                            head: h,
                            tensor: name,
                            offset,
                        });
                    }
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != header.seq_len {
                return Err(Error::DimensionMismatch {
                    layer: 0,
                    head: 0,
                    offset: 0,
                    reason: format!(
                        "{} labels for sequence length {}",
                        labels.len(),
                        header.seq_len
                    ),
                });
            }
        }
        Ok(Self {
            header,
            layers,
            labels,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn seq_len(&self) -> usize {
        self.header.seq_len
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.header.num_heads
    }

    pub fn head(&self, layer: usize, head: usize) -> &HeadTensors {
        &self.layers[layer][head]
    }

    pub fn layer(&self, layer: usize) -> Result<&[HeadTensors]> {
        self.layers
            .get(layer)
            .map(Vec::as_slice)
            .ok_or(Error::LayerOutOfRange {
                layer,
                num_layers: self.header.num_layers,
            })
    }

    /// Ground-truth token groups planted by the synthetic generator.
    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let tensor_bytes = 2 * h.num_layers * h.num_heads * h.matrix_len() * 4;
        let mut out = Vec::with_capacity(32 + h.model_name.len() + tensor_bytes);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for v in [h.num_layers, h.num_heads, h.head_dim, h.seq_len, h.precision] {
            put_u32(&mut out, v as u32);
        }
        put_u32(&mut out, h.model_name.len() as u32);
        out.extend_from_slice(h.model_name.as_bytes());
        for heads in &self.layers {
            for t in heads {
                for m in [&t.query, &t.key] {
                    for v in &m.data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        if let Some(labels) = &self.labels {
            out.extend_from_slice(LABELS_TAG);
            for &l in labels {
                put_u32(&mut out, l);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).ok_or_else(|| r.header_err("file shorter than magic"))?;
        if magic != MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let version = r.header_u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader {
                offset: 4,
                reason: format!("unsupported format version {version}"),
            });
        }
        let num_layers = r.header_u32("num_layers")? as usize;
        let num_heads = r.header_u32("num_heads")? as usize;
        let head_dim = r.header_u32("head_dim")? as usize;
        let seq_len = r.header_u32("seq_len")? as usize;
        let precision = r.header_u32("precision")? as usize;
        let name_len = r.header_u32("model_name length")? as usize;
        let name_offset = r.pos;
        let name = r
            .take(name_len)
            .ok_or_else(|| r.header_err("model_name truncated"))?;
        let model_name = String::from_utf8(name.to_vec()).map_err(|_| Error::MalformedHeader {
            offset: name_offset,
            reason: "model_name is not UTF-8".into(),
        })?;
        let header = TraceHeader {
            model_name,
            num_layers,
            num_heads,
            head_dim,
            seq_len,
            precision,
        };
        header.validate().map_err(|e| match e {
            Error::MalformedHeader { reason, .. } => Error::MalformedHeader { offset: 8, reason },
            other => other,
        })?;

        let n = header.matrix_len();
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let mut heads = Vec::with_capacity(num_heads);
            for h in 0..num_heads {
                let mut pair = [Vec::new(), Vec::new()];
                for (slot, name) in pair.iter_mut().zip(["Q", "K"]) {
                    let offset = r.pos;
                    let raw = r.take(n * 4).ok_or_else(|| Error::DimensionMismatch {
                        layer: l,
                        head: h,
                        offset,
                        reason: format!(
                            "{name} needs {} bytes, {} remain",
                            n * 4,
                            bytes.len() - offset
                        ),
                    })?;
                    *slot = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                }
                let [q, k] = pair;
                heads.push(HeadTensors {
                    query: Matrix {
                        rows: seq_len,
                        cols: head_dim,
                        data: q,
                    },
                    key: Matrix {
                        rows: seq_len,
                        cols: head_dim,
                        data: k,
                    },
                });
            }
            layers.push(heads);
        }

        let labels = if r.remaining() == 0 {
            None
        } else {
            let offset = r.pos;
            let tag = r.take(4);
            if tag != Some(LABELS_TAG.as_slice()) {
                return Err(Error::DimensionMismatch {
                    layer: num_layers,
                    head: 0,
                    offset,
                    reason: format!("{} trailing bytes after tensors", bytes.len() - offset),
                });
            }
            if r.remaining() != seq_len * 4 {
                return Err(Error::DimensionMismatch {
                    layer: num_layers,
                    head: 0,
                    offset: r.pos,
                    reason: format!(
                        "label section has {} bytes, expected {}",
                        r.remaining(),
                        seq_len * 4
                    ),
                });
            }
            let raw = r.take(seq_len * 4).expect("length checked");
            Some(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        };
        Self::new(header, layers, labels)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn header_err(&self, reason: &str) -> Error {
        Error::MalformedHeader {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn header_u32(&mut self, field: &str) -> Result<u32> {
        let b = self
            .take(4)
            .ok_or_else(|| self.header_err(&format!("truncated before {field}")))?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<AttentionTrace> {
    let bytes = fs::read(path)?;
    AttentionTrace::from_bytes(&bytes)
}

/// Writes the canonical encoding. The trace was validated at construction,
/// so only I/O can fail here.
pub fn write_trace(trace: &AttentionTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "empty output path",
        )));
    }
    fs::write(path, trace.to_bytes())?;
    Ok(())
}

/// KV cache size in bytes: `2 * batch * layers * heads * seq_len * head_dim * precision`.
pub fn kv_memory_bytes(header: &TraceHeader, batch: usize) -> Result<u64> {
    if batch == 0 {
        return Err(Error::InvalidConfig("batch must be at least 1".into()));
    }
    [
        batch,
        header.num_layers,
        header.num_heads,
        header.seq_len,
        header.head_dim,
        header.precision,
    ]
    .iter()
    .try_fold(2u64, |acc, &x| acc.checked_mul(x as u64))
    .ok_or(Error::OverflowExceedsAddressSpace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AttentionTrace {
        let header = TraceHeader {
            model_name: "tiny".into(),
            num_layers: 1,
            num_heads: 1,
            head_dim: 2,
            seq_len: 1,
            precision: 4,
        };
        let m = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        AttentionTrace::new(
            header,
            vec![vec![HeadTensors {
                query: m.clone(),
                key: m,
            }]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn smallest_trace_round_trips() {
        let t = tiny();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let back = AttentionTrace::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.head(0, 0).query.row(0), &[1.0, 0.0]);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_tensor_is_dimension_mismatch() {
        let bytes = tiny().to_bytes();
        let err = AttentionTrace::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { layer: 0, head: 0, .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_precision_are_malformed_header() {
        let mut bytes = tiny().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            AttentionTrace::from_bytes(&bytes),
            Err(Error::MalformedHeader { offset: 0, .. })
        ));
        let mut bytes = tiny().to_bytes();
        bytes[24..28].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            AttentionTrace::from_bytes(&bytes),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn nan_is_rejected_with_location() {
        let mut t = tiny();
        t.layers[0][0].key.data[1] = f32::NAN;
        let err = AttentionTrace::new(t.header.clone(), t.layers.clone(), None).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteValue { layer: 0, head: 0, tensor: "K", offset: 1 }
        ));
        // Encoded NaN is caught on read as well.
        let mut bytes = tiny().to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            AttentionTrace::from_bytes(&bytes),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn empty_path_is_io_failure() {
        assert!(matches!(write_trace(&tiny(), ""), Err(Error::Io(_))));
        assert!(matches!(
            write_trace(&tiny(), "/nonexistent-dir/x/t.kvcr"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn labels_section() {
        let t = tiny();
        let with = AttentionTrace::new(t.header.clone(), t.layers.clone(), Some(vec![3])).unwrap();
        let bytes = with.to_bytes();
        assert_eq!(&bytes[bytes.len() - 8..bytes.len() - 4], LABELS_TAG);
        assert_eq!(AttentionTrace::from_bytes(&bytes).unwrap().labels(), Some(&[3u32][..]));
        let mut junk = t.to_bytes();
        junk.extend_from_slice(b"ABCD");
        assert!(matches!(
            AttentionTrace::from_bytes(&junk),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kv_memory_reference_points() {
        let mut h = TraceHeader {
            model_name: String::new(),
            num_layers: 1,
            num_heads: 1,
            head_dim: 1,
            seq_len: 1,
            precision: 2,
        };
        assert_eq!(kv_memory_bytes(&h, 1).unwrap(), 4);
        h.seq_len = 7;
        let a = kv_memory_bytes(&h, 3).unwrap();
        h.seq_len = 14;
        assert_eq!(kv_memory_bytes(&h, 3).unwrap(), 2 * a);
        h.num_layers = usize::MAX;
        assert!(matches!(
            kv_memory_bytes(&h, 2),
            Err(Error::OverflowExceedsAddressSpace)
        ));
        assert!(kv_memory_bytes(&h, 0).is_err());
    }
}
