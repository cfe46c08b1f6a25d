//! Importance-based eviction baselines, expressed as token rankings over a
//! recomputed attention trace.
//!
//! These are trace-level analogues of the published policies, not ports:
//!
//! * H2O: cumulative attention received, summed over heads and all query rows.
//! * Window: attention sinks plus a recency window (StreamingLLM style).
//! * SnapKV: attention received from the last `window` query rows only, summed
//!   over heads, then max-pooled over neighbouring positions. Pooling is
//!   applied to the head-aggregated score rather than per head.
//! * PyramidKV: SnapKV scoring with a per-layer budget that tapers
//!   geometrically from the first to the last layer.
//! * FullKV: keeps everything; the zero-error reference.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::LayerAttention;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub scores: Vec<f64>,
    /// Token indices by descending score; ties keep ascending index.
    pub order: Vec<usize>,
}

impl ImportanceRanking {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Self { scores, order }
    }

    /// The `budget` best tokens, sorted by index.
    pub fn top(&self, budget: usize) -> Vec<usize> {
        let mut kept = self.order[..budget.min(self.order.len())].to_vec();
        kept.sort_unstable();
        kept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "fullkv")]
    FullKv,
    #[serde(rename = "h2o")]
    H2o,
    #[serde(rename = "window")]
    Window,
    #[serde(rename = "snapkv")]
    SnapKv,
    #[serde(rename = "pyramidkv")]
    PyramidKv,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        Self::FullKv,
        Self::H2o,
        Self::Window,
        Self::SnapKv,
        Self::PyramidKv,
    ];
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::FullKv => "fullkv",
            Self::H2o => "h2o",
            Self::Window => "window",
            Self::SnapKv => "snapkv",
            Self::PyramidKv => "pyramidkv",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fullkv" | "full" => Ok(Self::FullKv),
            "h2o" => Ok(Self::H2o),
            "window" | "streaming" => Ok(Self::Window),
            "snapkv" => Ok(Self::SnapKv),
            "pyramidkv" => Ok(Self::PyramidKv),
            other => Err(Error::InvalidConfig(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// SnapKV / PyramidKV observation window (trailing query rows).
    pub window: usize,
    /// SnapKV / PyramidKV max-pool width; must be odd.
    pub pool_width: usize,
    pub sinks: usize,
    pub recents: usize,
    /// PyramidKV ratio between consecutive layer budgets.
    pub taper: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::H2o,
            window: 32,
            pool_width: 7,
            sinks: 32,
            recents: 128,
            taper: 0.5,
        }
    }
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Token ranking this policy uses for one layer.
    pub fn rank(&self, attn: &LayerAttention) -> Result<ImportanceRanking> {
        let s = attn.seq_len();
        match self.kind {
            PolicyKind::FullKv => Ok(ImportanceRanking::from_scores(vec![1.0; s])),
            PolicyKind::H2o => Ok(h2o_rank_attention(attn)),
            PolicyKind::Window => window_rank(s, self.sinks, self.recents),
            PolicyKind::SnapKv | PolicyKind::PyramidKv => {
                snapkv_rank_attention(attn, self.window, self.pool_width)
            }
        }
    }

    /// Token budget for `layer`; only PyramidKV deviates from `budget`.
    pub fn layer_budget(&self, budget: usize, layer: usize, num_layers: usize) -> Result<usize> {
        match self.kind {
            PolicyKind::PyramidKv => Ok(pyramid_budgets(budget, num_layers, self.taper)?[layer]),
            _ => Ok(budget),
        }
    }
}

fn sum_over_heads(attn: &LayerAttention, rows: std::ops::Range<usize>) -> Vec<f64> {
    let mut total = vec![0.0; attn.seq_len()];
    for head in attn.heads() {
        for (t, c) in total.iter_mut().zip(head.column_sums(rows.clone())) {
            *t += c;
        }
    }
    total
}

/// `score(t) = sum_h sum_j A_h(j, t)` over every query row.
pub fn h2o_rank_attention(attn: &LayerAttention) -> ImportanceRanking {
    ImportanceRanking::from_scores(sum_over_heads(attn, 0..attn.seq_len()))
}

pub fn h2o_rank(trace: &crate::trace::AttentionTrace, layer: usize) -> Result<ImportanceRanking> {
    let attn = LayerAttention::compute(trace, layer, true)?;
    Ok(h2o_rank_attention(&attn))
}

/// Indices `[0, sinks) ∪ [seq_len - recents, seq_len)`, ascending.
pub fn window_select(seq_len: usize, sinks: usize, recents: usize) -> Result<Vec<usize>> {
    if sinks + recents > seq_len {
        return Err(Error::BudgetExceedsSequence {
            sinks,
            recents,
            seq_len,
        });
    }
    Ok((0..sinks).chain(seq_len - recents..seq_len).collect())
}

/// Ranking that puts sinks first, then the recency window, then the rest
/// from most to least recent. Its top `sinks + recents` is `window_select`.
pub fn window_rank(seq_len: usize, sinks: usize, recents: usize) -> Result<ImportanceRanking> {
    window_select(seq_len, sinks, recents)?;
    let s = seq_len as f64;
    let scores = (0..seq_len)
        .map(|t| {
            if t < sinks {
                3.0
            } else if t >= seq_len - recents {
                2.0
            } else {
                t as f64 / s
            }
        })
        .collect();
    Ok(ImportanceRanking::from_scores(scores))
}

/// Centered 1-D max pool; the window is truncated at the sequence edges.
pub fn max_pool(scores: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(Error::InvalidPoolWidth(width));
    }
    let half = width / 2;
    let n = scores.len();
    Ok((0..n)
        .map(|t| {
            scores[t.saturating_sub(half)..(t + half + 1).min(n)]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

pub fn snapkv_rank_attention(
    attn: &LayerAttention,
    window: usize,
    pool_width: usize,
) -> Result<ImportanceRanking> {
    let s = attn.seq_len();
    if window == 0 || window > s {
        return Err(Error::WindowTooLarge { window, seq_len: s });
    }
    let raw = sum_over_heads(attn, s - window..s);
    Ok(ImportanceRanking::from_scores(max_pool(&raw, pool_width)?))
}

pub fn snapkv_rank(
    trace: &crate::trace::AttentionTrace,
    layer: usize,
    window: usize,
    pool_width: usize,
) -> Result<ImportanceRanking> {
    let attn = LayerAttention::compute(trace, layer, true)?;
    snapkv_rank_attention(&attn, window, pool_width)
}

/// Per-layer budgets `∝ taper^layer`, rescaled so they sum to
/// `num_layers * budget_per_layer` (largest-remainder rounding), each at
/// least one token.
pub fn pyramid_budgets(budget_per_layer: usize, num_layers: usize, taper: f64) -> Result<Vec<usize>> {
    if num_layers == 0 {
        return Err(Error::InvalidConfig("num_layers must be at least 1".into()));
    }
    if !(taper > 0.0 && taper <= 1.0) {
        return Err(Error::InvalidConfig(format!("taper {taper} outside (0, 1]")));
    }
    if budget_per_layer == 0 {
        return Err(Error::BudgetTooSmall("per-layer budget is zero".into()));
    }
    let total = budget_per_layer * num_layers;
    let weights: Vec<f64> = (0..num_layers).map(|l| taper.powi(l as i32)).collect();
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut budgets: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remainder = total - budgets.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..num_layers).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa)
    });
    for &l in &by_fraction {
        if remainder == 0 {
            break;
        }
        budgets[l] += 1;
        remainder -= 1;
    }
    // Lift starved layers to one token, taking from the largest.
    for l in 0..num_layers {
        if budgets[l] == 0 {
            let donor = (0..num_layers)
                .max_by_key(|&i| (budgets[i], std::cmp::Reverse(i)))
                .expect("num_layers >= 1");
            if budgets[donor] <= 1 {
                return Err(Error::BudgetTooSmall(format!(
                    "{total} tokens cannot give {num_layers} layers one each"
                )));
            }
            budgets[donor] -= 1;
            budgets[l] = 1;
        }
    }
    Ok(budgets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionMatrix;

    fn layer(heads: Vec<Vec<Vec<f64>>>) -> LayerAttention {
        LayerAttention::from_heads(
            0,
            heads
                .iter()
                .map(|rows| AttentionMatrix::from_rows(rows).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn h2o_uniform_is_identity_order() {
        let a = layer(vec![vec![vec![0.25; 4]; 4]]);
        let r = h2o_rank_attention(&a);
        assert_eq!(r.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn h2o_causal_two_token_example() {
        let a = layer(vec![vec![vec![1.0, 0.0], vec![0.33, 0.67]]]);
        let r = h2o_rank_attention(&a);
        assert_eq!(r.order, vec![0, 1]);
        assert!((r.scores[0] - 1.33).abs() < 1e-12);
    }

    #[test]
    fn h2o_ignores_head_order() {
        let h1 = vec![vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.1, 0.2, 0.7]];
        let h2 = vec![vec![1.0, 0.0, 0.0], vec![0.9, 0.1, 0.0], vec![0.3, 0.3, 0.4]];
        let a = h2o_rank_attention(&layer(vec![h1.clone(), h2.clone()]));
        let b = h2o_rank_attention(&layer(vec![h2, h1]));
        assert_eq!(a.order, b.order);
    }

    #[test]
    fn window_selection() {
        let w = window_select(672, 32, 128).unwrap();
        assert_eq!(w.len(), 160);
        assert_eq!(w[31], 31);
        assert_eq!(w[32], 544);
        assert_eq!(window_select(10, 0, 10).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(window_select(10, 4, 6).unwrap().len(), 10);
        assert!(matches!(
            window_select(10, 5, 6),
            Err(Error::BudgetExceedsSequence { .. })
        ));
        let r = window_rank(20, 2, 3).unwrap();
        assert_eq!(r.top(5), window_select(20, 2, 3).unwrap());
        assert_eq!(r.order[5], 16);
    }

    #[test]
    fn snapkv_pooling_spreads_a_delta() {
        // Every query row puts all its mass on token 2.
        let s = 5;
        let rows: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..s).map(|t| if t == 2 { 1.0 } else { 0.0 }).collect())
            .collect();
        let a = layer(vec![rows]);
        let pooled = snapkv_rank_attention(&a, 2, 3).unwrap();
        assert_eq!(pooled.scores, vec![0.0, 2.0, 2.0, 2.0, 0.0]);
        let plain = snapkv_rank_attention(&a, 2, 1).unwrap();
        assert_eq!(plain.scores, vec![0.0, 0.0, 2.0, 0.0, 0.0]);
        let full = snapkv_rank_attention(&a, s, 1).unwrap();
        assert_eq!(full.scores, h2o_rank_attention(&a).scores);
        assert!(matches!(
            snapkv_rank_attention(&a, 6, 1),
            Err(Error::WindowTooLarge { .. })
        ));
        assert!(matches!(
            snapkv_rank_attention(&a, 2, 2),
            Err(Error::InvalidPoolWidth(2))
        ));
    }

    #[test]
    fn pyramid_schedule() {
        assert_eq!(pyramid_budgets(100, 2, 0.5).unwrap(), vec![133, 67]);
        assert_eq!(pyramid_budgets(50, 4, 1.0).unwrap(), vec![50; 4]);
        let b = pyramid_budgets(64, 7, 0.6).unwrap();
        assert_eq!(b.iter().sum::<usize>(), 64 * 7);
        assert!(b.windows(2).all(|w| w[0] >= w[1]));
        let starved = pyramid_budgets(1, 6, 0.1).unwrap();
        assert!(starved.iter().all(|&x| x >= 1));
        assert_eq!(starved.iter().sum::<usize>(), 6);
        assert!(matches!(pyramid_budgets(0, 3, 0.5), Err(Error::BudgetTooSmall(_))));
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.to_string().parse::<PolicyKind>().unwrap(), k);
        }
    }
}
