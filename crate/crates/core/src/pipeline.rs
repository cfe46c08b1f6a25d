//! Budget split and merge: baseline-kept tokens plus grouped representatives.
//!
//! A total budget `B` is split into `B_rep = round(fraction * B)` slots for
//! representatives and `B - B_rep` for the baseline policy. The baseline
//! keeps its top tokens; fingerprints are then computed over everything it
//! dropped, grouped, and one representative per group is kept. Slots left
//! unused by empty groups are backfilled from the baseline ranking so every
//! layer keeps exactly `min(B, S)` tokens.
//!
//! Chunk and page granularity run the same flow over contiguous blocks of
//! tokens: block fingerprints are the concatenation of member fingerprints,
//! and the slot count is `B / block_size` rounded down, with the token
//! remainder backfilled.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::LayerAttention;
use crate::baselines::{ImportanceRanking, PolicyConfig, PolicyKind};
use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint_tokens, Fingerprint};
use crate::grouping::{kvcrush_group_counted, AnchorStrategy, RepresentativeSet};
use crate::kmeans::kmeans_oracle;
use crate::trace::AttentionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "size")]
pub enum Granularity {
    Token,
    Chunk(usize),
    Page(usize),
}

impl Granularity {
    pub fn block_size(&self) -> usize {
        match *self {
            Self::Token => 1,
            Self::Chunk(n) | Self::Page(n) => n,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Token => "token".to_string(),
            Self::Chunk(n) => format!("chunk{n}"),
            Self::Page(n) => format!("page{n}"),
        };
        f.pad(&s)
    }
}

impl FromStr for Granularity {
    type Err = Error;

    /// Accepts `token`, `chunkN`/`chunk:N` and `pageN`/`page:N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let size = |rest: &str| -> Result<usize> {
            rest.trim_start_matches(':')
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad block size in {s:?}")))
        };
        if s == "token" {
            Ok(Self::Token)
        } else if let Some(rest) = s.strip_prefix("chunk") {
            Ok(Self::Chunk(size(rest)?))
        } else if let Some(rest) = s.strip_prefix("page") {
            Ok(Self::Page(size(rest)?))
        } else {
            Err(Error::InvalidConfig(format!("unknown granularity {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub total: usize,
    pub kvcrush_fraction: f64,
    pub granularity: Granularity,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            total: 2048,
            kvcrush_fraction: 0.25,
            granularity: Granularity::Token,
        }
    }
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::BudgetTooSmall("total budget is zero".into()));
        }
        if !(0.0..=1.0).contains(&self.kvcrush_fraction) {
            return Err(Error::InvalidConfig(format!(
                "kvcrush fraction {} outside [0, 1]",
                self.kvcrush_fraction
            )));
        }
        if self.granularity.block_size() == 0 {
            return Err(Error::InvalidConfig("block size must be at least 1".into()));
        }
        Ok(())
    }

    /// Representative slots out of `slots`.
    pub fn representative_slots(&self, slots: usize) -> usize {
        ((self.kvcrush_fraction * slots as f64).round() as usize).min(slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupingMethod {
    /// Anchor-based Hamming bucketing.
    KvCrush,
    /// k-means with `iters` Lloyd iterations; comparison only.
    KMeans { iters: usize },
}

impl fmt::Display for GroupingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::KvCrush => "kvcrush".to_string(),
            Self::KMeans { iters } => format!("kmeans{iters}"),
        };
        f.pad(&s)
    }
}

impl FromStr for GroupingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        if s == "kvcrush" {
            return Ok(Self::KvCrush);
        }
        match s.strip_prefix("kmeans") {
            Some("") => Ok(Self::KMeans { iters: 100 }),
            Some(n) => n
                .trim_start_matches(':')
                .parse()
                .map(|iters| Self::KMeans { iters })
                .map_err(|_| Error::InvalidConfig(format!("bad k-means iterations in {s:?}"))),
            None => Err(Error::InvalidConfig(format!("unknown grouping {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectConfig {
    pub budget: BudgetSpec,
    pub policy: PolicyConfig,
    /// Per-head fraction of tokens whose fingerprint bit is set.
    pub retain_fraction: f64,
    pub anchor: AnchorStrategy,
    pub grouping: GroupingMethod,
    pub seed: u64,
    pub causal: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            budget: BudgetSpec::default(),
            policy: PolicyConfig::default(),
            retain_fraction: 0.5,
            anchor: AnchorStrategy::Mean,
            grouping: GroupingMethod::KvCrush,
            seed: 0,
            causal: true,
        }
    }
}

impl SelectConfig {
    pub fn layer_seed(&self, layer: usize) -> u64 {
        self.seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Important,
    Representative,
    Backfill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainedToken {
    pub index: usize,
    pub provenance: Provenance,
}

/// Wall-clock time per selection phase, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub scoring_ns: u64,
    pub fingerprint_ns: u64,
    pub grouping_ns: u64,
    pub merge_ns: u64,
    pub distance_ops: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDecision {
    pub layer: usize,
    /// Sorted by index, no duplicates.
    pub retained: Vec<RetainedToken>,
    pub compression_ratio: f64,
    #[serde(skip)]
    pub stats: SelectionStats,
}

/// Timing is not part of a decision's identity.
impl PartialEq for LayerDecision {
    fn eq(&self, other: &Self) -> bool {
        self.layer == other.layer
            && self.retained == other.retained
            && self.compression_ratio == other.compression_ratio
    }
}

impl LayerDecision {
    fn from_parts(layer: usize, seq_len: usize, mut retained: Vec<RetainedToken>) -> Self {
        retained.sort_by_key(|r| r.index);
        let compression_ratio = seq_len as f64 / retained.len().max(1) as f64;
        Self {
            layer,
            retained,
            compression_ratio,
            stats: SelectionStats::default(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.retained.iter().map(|r| r.index).collect()
    }

    pub fn with_provenance(&self, p: Provenance) -> Vec<usize> {
        self.retained
            .iter()
            .filter(|r| r.provenance == p)
            .map(|r| r.index)
            .collect()
    }

    pub fn full(layer: usize, seq_len: usize) -> Self {
        Self::from_parts(
            layer,
            seq_len,
            (0..seq_len)
                .map(|index| RetainedToken {
                    index,
                    provenance: Provenance::Important,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionDecision {
    pub seq_len: usize,
    pub layers: Vec<LayerDecision>,
}

impl EvictionDecision {
    pub fn full(seq_len: usize, num_layers: usize) -> Self {
        Self {
            seq_len,
            layers: (0..num_layers).map(|l| LayerDecision::full(l, seq_len)).collect(),
        }
    }

    /// Checks that indices are in range, sorted and unique, and that no
    /// layer is empty.
    pub fn validate(&self) -> Result<()> {
        for d in &self.layers {
            if d.retained.is_empty() {
                return Err(Error::EmptyDecision(d.layer));
            }
            for (i, r) in d.retained.iter().enumerate() {
                if r.index >= self.seq_len {
                    return Err(Error::IndexOutOfRange {
                        index: r.index,
                        seq_len: self.seq_len,
                    });
                }
                if i > 0 && d.retained[i - 1].index >= r.index {
                    return Err(Error::InvalidConfig(format!(
                        "layer {} retained indices not strictly increasing at {}",
                        d.layer, r.index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decision serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)
            .map_err(|e| Error::InvalidConfig(format!("decision JSON: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

/// Concatenates the fingerprints of a page's tokens in order and pads with
/// zeros to `page_size * width` bits.
pub fn page_fingerprint(page_index: usize, members: &[Fingerprint], page_size: usize) -> Result<Fingerprint> {
    let width = members.first().ok_or(Error::EmptyPage)?.width();
    if members.len() > page_size {
        return Err(Error::InvalidPartition(format!(
            "{} tokens in a page of size {page_size}",
            members.len()
        )));
    }
    let mut bits = BitVector::zeros(0);
    for m in members {
        if m.width() != width {
            return Err(Error::LengthMismatch {
                left: width,
                right: m.width(),
            });
        }
        bits.extend_from(&m.bits);
    }
    bits.pad_to(page_size * width);
    Ok(Fingerprint {
        token_index: page_index,
        bits,
    })
}

/// Contiguous blocks `[0, n), [n, 2n), ...`; the last may be short.
pub fn block_ranges(seq_len: usize, block_size: usize) -> Vec<Range<usize>> {
    (0..seq_len)
        .step_by(block_size.max(1))
        .map(|start| start..(start + block_size).min(seq_len))
        .collect()
}

/// Page score: attention received by the page's tokens, summed over all
/// query rows and heads.
pub fn page_importance(attn: &LayerAttention, pages: &[Range<usize>]) -> Result<Vec<f64>> {
    let s = attn.seq_len();
    let mut expected = 0;
    for p in pages {
        if p.start != expected || p.end <= p.start {
            return Err(Error::InvalidPartition(format!(
                "page {p:?} does not continue at {expected}"
            )));
        }
        expected = p.end;
    }
    if expected != s {
        return Err(Error::InvalidPartition(format!(
            "pages cover [0, {expected}), sequence has {s} tokens"
        )));
    }
    let mut token_mass = vec![0.0; s];
    for head in attn.heads() {
        for (m, c) in token_mass.iter_mut().zip(head.column_sums(0..s)) {
            *m += c;
        }
    }
    Ok(pages
        .iter()
        .map(|p| token_mass[p.clone()].iter().sum())
        .collect())
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

/// Runs the split-budget selection for one layer whose attention is
/// already computed.
pub fn kvcrush_select_layer(
    attn: &LayerAttention,
    num_layers: usize,
    cfg: &SelectConfig,
) -> Result<LayerDecision> {
    cfg.budget.validate()?;
    let layer = attn.layer();
    let s = attn.seq_len();
    let budget = cfg.policy.layer_budget(cfg.budget.total, layer, num_layers)?;
    if budget >= s || cfg.policy.kind == PolicyKind::FullKv {
        return Ok(LayerDecision::full(layer, s));
    }
    if cfg.policy.kind == PolicyKind::Window && cfg.policy.sinks + cfg.policy.recents > budget {
        return Err(Error::InvalidConfig(format!(
            "sinks + recents = {} exceed the budget {budget}",
            cfg.policy.sinks + cfg.policy.recents
        )));
    }

    let mut stats = SelectionStats::default();
    let t = Instant::now();
    let token_rank = cfg.policy.rank(attn)?;
    let block = cfg.budget.granularity.block_size();
    let units = block_ranges(s, block);
    let unit_rank = match cfg.budget.granularity {
        Granularity::Token => token_rank.clone(),
        Granularity::Chunk(_) => ImportanceRanking::from_scores(
            units
                .iter()
                .map(|u| token_rank.scores[u.clone()].iter().sum())
                .collect(),
        ),
        Granularity::Page(_) => ImportanceRanking::from_scores(page_importance(attn, &units)?),
    };
    stats.scoring_ns = elapsed_ns(t);

    let slots = budget / block;
    let rep_slots = cfg.budget.representative_slots(slots);
    let imp_slots = slots - rep_slots;

    let t = Instant::now();
    let mut provenance: Vec<Option<Provenance>> = vec![None; s];
    let important_units = unit_rank.top(imp_slots);
    let mut unit_taken = vec![false; units.len()];
    for &u in &important_units {
        unit_taken[u] = true;
        for tok in units[u].clone() {
            provenance[tok] = Some(Provenance::Important);
        }
    }
    let candidate_units: Vec<usize> = (0..units.len()).filter(|&u| !unit_taken[u]).collect();
    stats.merge_ns += elapsed_ns(t);

    if rep_slots > 0 && !candidate_units.is_empty() {
        let t = Instant::now();
        let candidate_tokens: Vec<usize> = candidate_units
            .iter()
            .flat_map(|&u| units[u].clone())
            .collect();
        let (token_fps, _) = fingerprint_tokens(attn, &candidate_tokens, cfg.retain_fraction)?;
        let mut unit_fps = Vec::with_capacity(candidate_units.len());
        let mut cursor = 0;
        for &u in &candidate_units {
            let n = units[u].len();
            unit_fps.push(page_fingerprint(u, &token_fps[cursor..cursor + n], block)?);
            cursor += n;
        }
        stats.fingerprint_ns = elapsed_ns(t);

        let t = Instant::now();
        let reps: RepresentativeSet = match cfg.grouping {
            GroupingMethod::KvCrush => {
                let (reps, ops) =
                    kvcrush_group_counted(&unit_fps, rep_slots, cfg.anchor, cfg.layer_seed(layer))?;
                stats.distance_ops = ops;
                reps
            }
            GroupingMethod::KMeans { iters } => kmeans_oracle(
                &unit_fps,
                rep_slots.min(unit_fps.len()),
                iters,
                cfg.layer_seed(layer),
            )?,
        };
        stats.grouping_ns = elapsed_ns(t);

        let t = Instant::now();
        for &u in &reps.tokens {
            for tok in units[u].clone() {
                provenance[tok] = Some(Provenance::Representative);
            }
        }
        stats.merge_ns += elapsed_ns(t);
    }

    let t = Instant::now();
    let mut kept = provenance.iter().filter(|p| p.is_some()).count();
    for &tok in &token_rank.order {
        if kept >= budget {
            break;
        }
        if provenance[tok].is_none() {
            provenance[tok] = Some(Provenance::Backfill);
            kept += 1;
        }
    }
    let retained = provenance
        .iter()
        .enumerate()
        .filter_map(|(index, p)| p.map(|provenance| RetainedToken { index, provenance }))
        .collect();
    let mut decision = LayerDecision::from_parts(layer, s, retained);
    stats.merge_ns += elapsed_ns(t);
    decision.stats = stats;
    Ok(decision)
}

/// Selection for one layer of a trace.
pub fn kvcrush_select(trace: &AttentionTrace, layer: usize, cfg: &SelectConfig) -> Result<LayerDecision> {
    let attn = LayerAttention::compute(trace, layer, cfg.causal)?;
    kvcrush_select_layer(&attn, trace.num_layers(), cfg)
}

/// Selection at chunk granularity; identical to `kvcrush_select` with
/// `Granularity::Chunk(chunk_size)`.
pub fn chunked_select(
    trace: &AttentionTrace,
    layer: usize,
    cfg: &SelectConfig,
    chunk_size: usize,
) -> Result<LayerDecision> {
    let mut cfg = cfg.clone();
    cfg.budget.granularity = Granularity::Chunk(chunk_size);
    kvcrush_select(trace, layer, &cfg)
}

/// Pure baseline: the policy's top `B` tokens (or blocks, then token
/// backfill), all tagged Important or Backfill.
pub fn baseline_select_layer(
    attn: &LayerAttention,
    num_layers: usize,
    cfg: &SelectConfig,
) -> Result<LayerDecision> {
    let mut base = cfg.clone();
    base.budget.kvcrush_fraction = 0.0;
    if cfg.budget.granularity != Granularity::Token {
        return kvcrush_select_layer(attn, num_layers, &base);
    }
    base.budget.validate()?;
    let s = attn.seq_len();
    let budget = cfg.policy.layer_budget(cfg.budget.total, attn.layer(), num_layers)?;
    if budget >= s || cfg.policy.kind == PolicyKind::FullKv {
        return Ok(LayerDecision::full(attn.layer(), s));
    }
    let retained = cfg
        .policy
        .rank(attn)?
        .top(budget)
        .into_iter()
        .map(|index| RetainedToken {
            index,
            provenance: Provenance::Important,
        })
        .collect();
    Ok(LayerDecision::from_parts(attn.layer(), s, retained))
}

/// Selection for every layer.
pub fn select_trace(trace: &AttentionTrace, cfg: &SelectConfig) -> Result<EvictionDecision> {
    let layers = (0..trace.num_layers())
        .map(|l| kvcrush_select(trace, l, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvictionDecision {
        seq_len: trace.seq_len(),
        layers,
    })
}

/// Pure-baseline selection for every layer.
pub fn baseline_select_trace(trace: &AttentionTrace, cfg: &SelectConfig) -> Result<EvictionDecision> {
    let layers = (0..trace.num_layers())
        .map(|l| {
            let attn = LayerAttention::compute(trace, l, cfg.causal)?;
            baseline_select_layer(&attn, trace.num_layers(), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvictionDecision {
        seq_len: trace.seq_len(),
        layers,
    })
}
