//! Binary per-head token fingerprints.
//!
//! For every head, each token gets a normalized importance score (the mean
//! attention it receives). A per-head threshold keeps a target fraction of
//! tokens; bit `h` of a token's fingerprint records whether head `h` keeps it.

use crate::attention::{AttentionMatrix, LayerAttention};
use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::trace::AttentionTrace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub token_index: usize,
    pub bits: BitVector,
}

impl Fingerprint {
    pub fn width(&self) -> usize {
        self.bits.len()
    }
}

/// Per-token, per-head importance scores and the thresholds derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScores {
    tokens: Vec<usize>,
    num_heads: usize,
    /// Token-major: `values[i * num_heads + h]`.
    values: Vec<f64>,
    thresholds: Vec<f64>,
}

impl HeadScores {
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    /// Score of the `i`-th token in `tokens()` under head `h`.
    pub fn score(&self, i: usize, h: usize) -> f64 {
        self.values[i * self.num_heads + h]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// Column mean of an attention matrix: `w(t) = (1/S) * sum_j A(j, t)`,
/// the average attention token `t` receives.
pub fn head_scores(attn: &AttentionMatrix) -> Vec<f64> {
    let s = attn.size() as f64;
    attn.column_sums(0..attn.size())
        .into_iter()
        .map(|c| c / s)
        .collect()
}

fn retained_count(retain_fraction: f64, n: usize) -> Result<usize> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(Error::InvalidFraction(retain_fraction));
    }
    // Guard against 0.3 * 10 = 3.0000000000000004 style rounding.
    let k = (retain_fraction * n as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, n))
}

/// Thresholds per-head scores into fingerprints.
///
/// `per_head[h][i]` is the score of `tokens[i]` under head `h`. For every
/// head exactly `ceil(retain_fraction * n)` tokens get their bit set: the
/// highest scores, with ties going to the earlier position in `tokens`.
/// The recorded threshold is the lowest retained score.
pub fn threshold_fingerprints(
    tokens: &[usize],
    per_head: &[Vec<f64>],
    retain_fraction: f64,
) -> Result<(Vec<Fingerprint>, HeadScores)> {
    let n = tokens.len();
    if n == 0 || per_head.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = per_head.iter().find(|s| s.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {n} tokens",
            bad.len()
        )));
    }
    if per_head.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::ShapeMismatch("scores must be finite and non-negative".into()));
    }
    let k = retained_count(retain_fraction, n)?;
    let num_heads = per_head.len();

    let mut bits = vec![BitVector::zeros(num_heads); n];
    let mut thresholds = Vec::with_capacity(num_heads);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (h, scores) in per_head.iter().enumerate() {
        order.clear();
        order.extend(0..n);
        // Stable: equal scores keep ascending position.
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        for &i in &order[..k] {
            bits[i].set(h, true);
        }
        thresholds.push(scores[order[k - 1]]);
    }

    let mut values = Vec::with_capacity(n * num_heads);
    for i in 0..n {
        values.extend(per_head.iter().map(|s| s[i]));
    }
    let fingerprints = tokens
        .iter()
        .zip(bits)
        .map(|(&token_index, bits)| Fingerprint { token_index, bits })
        .collect();
    Ok((
        fingerprints,
        HeadScores {
            tokens: tokens.to_vec(),
            num_heads,
            values,
            thresholds,
        },
    ))
}

/// Fingerprints for a subset of tokens of one layer. Scores come from the
/// full attention matrices; thresholds are taken over the subset only.
pub fn fingerprint_tokens(
    attn: &LayerAttention,
    tokens: &[usize],
    retain_fraction: f64,
) -> Result<(Vec<Fingerprint>, HeadScores)> {
    let s = attn.seq_len();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= s) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            seq_len: s,
        });
    }
    let per_head: Vec<Vec<f64>> = attn
        .heads()
        .iter()
        .map(|a| {
            let w = head_scores(a);
            tokens.iter().map(|&t| w[t]).collect()
        })
        .collect();
    threshold_fingerprints(tokens, &per_head, retain_fraction)
}

/// Fingerprints for every token of `layer`, using causal attention.
pub fn compute_fingerprints(
    trace: &AttentionTrace,
    layer: usize,
    retain_fraction: f64,
) -> Result<(Vec<Fingerprint>, HeadScores)> {
    retained_count(retain_fraction, 1)?;
    let attn = LayerAttention::compute(trace, layer, true)?;
    let tokens: Vec<usize> = (0..trace.seq_len()).collect();
    fingerprint_tokens(&attn, &tokens, retain_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_of(fps: &[Fingerprint], h: usize) -> Vec<u8> {
        fps.iter().map(|f| f.bits.get(h) as u8).collect()
    }

    #[test]
    fn column_means_by_hand() {
        let a = AttentionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.33, 0.67]]).unwrap();
        let w = head_scores(&a);
        assert!((w[0] - 0.665).abs() < 1e-12);
        assert!((w[1] - 0.335).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_scores_are_one_over_s() {
        let s = 5;
        let a = AttentionMatrix::from_rows(&vec![vec![0.2; s]; s]).unwrap();
        let w = head_scores(&a);
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-12));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_retention_by_enumeration() {
        let (fps, hs) =
            threshold_fingerprints(&[0, 1, 2, 3], &[vec![0.4, 0.3, 0.2, 0.1]], 0.5).unwrap();
        assert_eq!(bits_of(&fps, 0), vec![1, 1, 0, 0]);
        assert_eq!(hs.thresholds(), &[0.3]);
    }

    #[test]
    fn full_retention_gives_all_ones() {
        let scores = vec![vec![0.5, 0.1, 0.9], vec![0.0, 0.0, 0.0]];
        let (fps, hs) = threshold_fingerprints(&[4, 7, 9], &scores, 1.0).unwrap();
        assert!(fps.iter().all(|f| f.bits.count_ones() == 2));
        assert_eq!(hs.thresholds(), &[0.1, 0.0]);
        assert_eq!(fps[1].token_index, 7);
    }

    #[test]
    fn ties_go_to_earlier_tokens() {
        let (fps, _) = threshold_fingerprints(&[0, 1, 2, 3], &[vec![0.2; 4]], 0.5).unwrap();
        assert_eq!(bits_of(&fps, 0), vec![1, 1, 0, 0]);
    }

    #[test]
    fn identical_heads_identical_columns() {
        let s = vec![0.3, 0.1, 0.7, 0.2, 0.9];
        let (fps, _) =
            threshold_fingerprints(&[0, 1, 2, 3, 4], &[s.clone(), s], 0.4).unwrap();
        assert_eq!(bits_of(&fps, 0), bits_of(&fps, 1));
        assert_eq!(bits_of(&fps, 0), vec![0, 0, 1, 0, 1]);
    }

    #[test]
    fn fraction_validation() {
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                threshold_fingerprints(&[0], &[vec![1.0]], f),
                Err(Error::InvalidFraction(_))
            ));
        }
    }
}
