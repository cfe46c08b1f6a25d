//! Scaled dot-product attention weights recomputed from stored Q and K.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::{AttentionTrace, Matrix};

/// Square row-stochastic matrix of attention weights, `f64` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::ShapeMismatch("attention matrix must be square".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::ShapeMismatch(
                "attention weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            size,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, query: usize, key: usize) -> f64 {
        self.data[query * self.size + key]
    }

    pub fn row(&self, query: usize) -> &[f64] {
        &self.data[query * self.size..(query + 1) * self.size]
    }

    /// Attention received by each key position, summed over the query rows
    /// in `rows`.
    pub fn column_sums(&self, rows: std::ops::Range<usize>) -> Vec<f64> {
        let mut sums = vec![0.0; self.size];
        for q in rows {
            for (s, &a) in sums.iter_mut().zip(self.row(q)) {
                *s += a;
            }
        }
        sums
    }
}

/// `softmax(Q K^T / sqrt(d_k))`, optionally with a causal mask.
///
/// Masked entries are exactly zero; each row is normalized over the
/// unmasked columns using the max-subtraction form.
pub fn attention_matrix(query: &Matrix, key: &Matrix, causal: bool) -> Result<AttentionMatrix> {
    if query.rows() != key.rows() || query.cols() != key.cols() {
        return Err(Error::ShapeMismatch(format!(
            "Q is {}x{}, K is {}x{}",
            query.rows(),
            query.cols(),
            key.rows(),
            key.cols()
        )));
    }
    if query.cols() == 0 {
        return Err(Error::ShapeMismatch("head_dim must be at least 1".into()));
    }
    if let Some(i) = query
        .as_slice()
        .iter()
        .chain(key.as_slice())
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteValue {
            layer: 0,
            head: 0,
            tensor: if i < query.as_slice().len() { "Q" } else { "K" },
            offset: i % query.as_slice().len().max(1),
        });
    }

    let s = query.rows();
    let scale = 1.0 / (query.cols() as f64).sqrt();
    let mut data = vec![0.0f64; s * s];
    for (q, out) in data.chunks_exact_mut(s).enumerate() {
        let qrow = query.row(q);
        let visible = if causal { q + 1 } else { s };
        let mut max = f64::NEG_INFINITY;
        for (k, slot) in out[..visible].iter_mut().enumerate() {
            let dot: f64 = qrow
                .iter()
                .zip(key.row(k))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            *slot = dot * scale;
            max = max.max(*slot);
        }
        let mut total = 0.0;
        for slot in &mut out[..visible] {
            *slot = (*slot - max).exp();
            total += *slot;
        }
        for slot in &mut out[..visible] {
            *slot /= total;
        }
    }
    Ok(AttentionMatrix { size: s, data })
}

/// All heads of one layer, computed once and shared by scoring,
/// fingerprinting and evaluation.
#[derive(Debug, Clone)]
pub struct LayerAttention {
    layer: usize,
    heads: Vec<AttentionMatrix>,
}

impl LayerAttention {
    pub fn compute(trace: &AttentionTrace, layer: usize, causal: bool) -> Result<Self> {
        let tensors = trace.layer(layer)?;
        let heads = tensors
            .par_iter()
            .map(|t| attention_matrix(&t.query, &t.key, causal))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layer, heads })
    }

    pub fn from_heads(layer: usize, heads: Vec<AttentionMatrix>) -> Result<Self> {
        let size = heads.first().ok_or(Error::EmptyInput)?.size();
        if heads.iter().any(|h| h.size() != size) {
            return Err(Error::ShapeMismatch("heads disagree on sequence length".into()));
        }
        Ok(Self { layer, heads })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn seq_len(&self) -> usize {
        self.heads[0].size()
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[AttentionMatrix] {
        &self.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.row_mut(i)[i] = 1.0;
        }
        m
    }

    // Independent scalar softmax for a single row of logits.
    fn softmax(logits: &[f64]) -> Vec<f64> {
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        logits.iter().map(|x| x.exp() / z).collect()
    }

    #[test]
    fn single_token() {
        let q = Matrix::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let a = attention_matrix(&q, &q, true).unwrap();
        assert_eq!(a.row(0), &[1.0]);
    }

    #[test]
    fn identity_causal_example() {
        let a = attention_matrix(&identity(2), &identity(2), true).unwrap();
        assert_eq!(a.row(0), &[1.0, 0.0]);
        let expected = softmax(&[0.0, 1.0 / 2f64.sqrt()]);
        // 1 / (1 + e^{1/sqrt 2}) = 0.330238...
        assert!((expected[0] - 0.330238).abs() < 1e-6);
        for (got, want) in a.row(1).iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_is_exact_zero_and_rows_normalize() {
        let q = Matrix::from_rows(&[
            vec![1.0, 2.0, -1.0],
            vec![0.5, 0.0, 3.0],
            vec![-2.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.1],
        ])
        .unwrap();
        let k = Matrix::from_rows(&[
            vec![0.2, 1.0, 0.0],
            vec![1.0, -1.0, 2.0],
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        for causal in [true, false] {
            let a = attention_matrix(&q, &k, causal).unwrap();
            for r in 0..4 {
                let sum: f64 = a.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                if causal {
                    assert!(a.row(r)[r + 1..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(3, 3);
        assert!(matches!(attention_matrix(&a, &b, true), Err(Error::ShapeMismatch(_))));
        let mut c = Matrix::zeros(2, 3);
        c.row_mut(1)[2] = f32::NAN;
        assert!(matches!(
            attention_matrix(&a, &c, true),
            Err(Error::NonFiniteValue { tensor: "K", offset: 5, .. })
        ));
    }
}
