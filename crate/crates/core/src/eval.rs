//! Fidelity of a compressed cache against the full cache, measured on the
//! attention distributions of the last query rows.
//!
//! For a query row `a` (full attention) and retained set `R`:
//!
//! * retained mass = `sum_{t in R} a_t / sum_t a_t`
//! * output error  = `|| a / sum(a) - (a * 1_R) / sum_{t in R} a_t ||_2`
//!
//! Both are normalized by the row's own sum, which makes the full cache
//! score exactly (1, 0) regardless of floating-point rounding in softmax.
//! If the retained tokens receive no attention at all the compressed row
//! is taken as zero.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMatrix, LayerAttention};
use crate::error::{Error, Result};
use crate::grouping::{kvcrush_group_counted, AnchorStrategy};
use crate::kmeans::kmeans_oracle;
use crate::pipeline::{kvcrush_select_layer, EvictionDecision, LayerDecision, SelectConfig, SelectionStats};
use crate::synthetic::{gen_synthetic, SyntheticSpec};
use crate::trace::AttentionTrace;
use crate::bits::BitVector;
use crate::fingerprint::Fingerprint;

/// Query rows treated as decode-time queries.
pub const DECODE_PROXY_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub attention_mass_retained: f64,
    pub renormalized_output_error: f64,
    pub compression_ratio: f64,
    pub scoring_ns: u64,
    pub fingerprint_ns: u64,
    pub grouping_ns: u64,
    pub merge_ns: u64,
    pub distance_op_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layers: Vec<LayerReport>,
    pub attention_mass_retained: f64,
    pub renormalized_output_error: f64,
    pub compression_ratio: f64,
    pub phase_ns: PhaseLatencies,
    pub distance_op_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLatencies {
    pub scoring: u64,
    pub fingerprint: u64,
    pub grouping: u64,
    pub merge: u64,
}

/// Mean retained mass and mean error of one head over the decode-proxy rows.
pub fn row_fidelity(attn: &AttentionMatrix, retained: &[bool]) -> (f64, f64) {
    let s = attn.size();
    let rows = DECODE_PROXY_ROWS.min(s);
    let mut mass_sum = 0.0;
    let mut err_sum = 0.0;
    for q in s - rows..s {
        let row = attn.row(q);
        let total: f64 = row.iter().sum();
        let kept: f64 = row
            .iter()
            .zip(retained)
            .filter(|(_, &r)| r)
            .map(|(a, _)| a)
            .sum();
        mass_sum += kept / total;
        let mut sq = 0.0;
        for (a, &r) in row.iter().zip(retained) {
            let full = a / total;
            let compressed = if r && kept > 0.0 { a / kept } else { 0.0 };
            sq += (full - compressed) * (full - compressed);
        }
        err_sum += sq.sqrt();
    }
    (mass_sum / rows as f64, err_sum / rows as f64)
}

fn layer_report(attn: &LayerAttention, decision: &LayerDecision) -> Result<LayerReport> {
    let s = attn.seq_len();
    if decision.retained.is_empty() {
        return Err(Error::EmptyDecision(decision.layer));
    }
    let mut mask = vec![false; s];
    for r in &decision.retained {
        *mask.get_mut(r.index).ok_or(Error::IndexOutOfRange {
            index: r.index,
            seq_len: s,
        })? = true;
    }
    let per_head: Vec<(f64, f64)> = attn.heads().iter().map(|h| row_fidelity(h, &mask)).collect();
    let n = per_head.len() as f64;
    let SelectionStats {
        scoring_ns,
        fingerprint_ns,
        grouping_ns,
        merge_ns,
        distance_ops,
    } = decision.stats;
    Ok(LayerReport {
        layer: decision.layer,
        attention_mass_retained: per_head.iter().map(|p| p.0).sum::<f64>() / n,
        renormalized_output_error: per_head.iter().map(|p| p.1).sum::<f64>() / n,
        compression_ratio: s as f64 / decision.retained.len() as f64,
        scoring_ns,
        fingerprint_ns,
        grouping_ns,
        merge_ns,
        distance_op_count: distance_ops,
    })
}

fn aggregate(layers: Vec<LayerReport>) -> EvalReport {
    let n = layers.len().max(1) as f64;
    let mean = |f: fn(&LayerReport) -> f64| layers.iter().map(f).sum::<f64>() / n;
    let sum = |f: fn(&LayerReport) -> u64| layers.iter().map(f).sum::<u64>();
    EvalReport {
        attention_mass_retained: mean(|l| l.attention_mass_retained),
        renormalized_output_error: mean(|l| l.renormalized_output_error),
        compression_ratio: mean(|l| l.compression_ratio),
        phase_ns: PhaseLatencies {
            scoring: sum(|l| l.scoring_ns),
            fingerprint: sum(|l| l.fingerprint_ns),
            grouping: sum(|l| l.grouping_ns),
            merge: sum(|l| l.merge_ns),
        },
        distance_op_count: layers.iter().map(|l| l.distance_op_count).sum(),
        layers,
    }
}

/// Evaluates one layer against attention that is already computed.
pub fn evaluate_layer(attn: &LayerAttention, decision: &LayerDecision) -> Result<LayerReport> {
    layer_report(attn, decision)
}

pub fn evaluate(trace: &AttentionTrace, decision: &EvictionDecision) -> Result<EvalReport> {
    if decision.seq_len != trace.seq_len() {
        return Err(Error::InvalidConfig(format!(
            "decision is for {} tokens, trace has {}",
            decision.seq_len,
            trace.seq_len()
        )));
    }
    decision.validate()?;
    let layers = decision
        .layers
        .iter()
        .map(|d| {
            let attn = LayerAttention::compute(trace, d.layer, true)?;
            layer_report(&attn, d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(layers))
}

impl EvalReport {
    pub fn from_layers(layers: Vec<LayerReport>) -> Self {
        aggregate(layers)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per layer.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for l in &self.layers {
            w.serialize(l).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub seq_len: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub select: SelectConfig,
    /// Repetitions per measurement; at least 5 are always run.
    pub repetitions: usize,
    /// Also time k-means with this many iterations on the same input.
    pub kmeans_iters: Option<usize>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            seq_len: 1024,
            num_heads: 32,
            head_dim: 16,
            select: SelectConfig::default(),
            repetitions: 5,
            kmeans_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Median over repetitions of each selection phase on a synthetic trace.
    pub phases: PhaseLatencies,
    /// `(S, median grouping ns)` for S, 2S and 4S.
    pub grouping_scaling: Vec<(usize, u64)>,
    pub kmeans_ns: Option<u64>,
    pub distance_ops: usize,
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Uniformly random fingerprints, for timing the grouping phase alone.
pub fn random_fingerprints(count: usize, width: usize, seed: u64) -> Vec<Fingerprint> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|token_index| {
            let bools: Vec<bool> = (0..width).map(|_| rng.random::<bool>()).collect();
            Fingerprint {
                token_index,
                bits: BitVector::from_bools(&bools),
            }
        })
        .collect()
}

/// Median wall time of `f` over `reps` runs. Each sample repeats `f` until
/// at least a millisecond has elapsed and reports the per-call average, so
/// microsecond-scale phases are not lost in timer noise.
pub fn median_ns(reps: usize, mut f: impl FnMut()) -> u64 {
    f();
    let samples = (0..reps.max(5))
        .map(|_| {
            let start = Instant::now();
            let mut calls = 0u64;
            loop {
                f();
                calls += 1;
                let e = start.elapsed();
                if e.as_micros() >= 1000 {
                    break e.as_nanos() as u64 / calls;
                }
            }
        })
        .collect();
    median(samples)
}

/// Median grouping time for `count` random fingerprints of `width` bits.
pub fn time_grouping(count: usize, width: usize, buckets: usize, anchor: AnchorStrategy, reps: usize, seed: u64) -> Result<u64> {
    let fps = random_fingerprints(count, width, seed);
    kvcrush_group_counted(&fps, buckets, anchor, seed)?;
    Ok(median_ns(reps, || {
        std::hint::black_box(kvcrush_group_counted(&fps, buckets, anchor, seed).expect("validated above"));
    }))
}

/// Median k-means representative-selection time on the same input shape.
pub fn time_kmeans(count: usize, width: usize, k: usize, iters: usize, reps: usize, seed: u64) -> Result<u64> {
    let fps = random_fingerprints(count, width, seed);
    kmeans_oracle(&fps, k, iters, seed)?;
    let samples = (0..reps.max(5))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(kmeans_oracle(&fps, k, iters, seed).expect("validated above"));
            start.elapsed().as_nanos() as u64
        })
        .collect();
    Ok(median(samples))
}

/// Phase latencies on a synthetic trace plus the grouping scaling series.
pub fn measure_latency(workload: &WorkloadSpec) -> Result<LatencyReport> {
    let spec = SyntheticSpec {
        seq_len: workload.seq_len,
        num_heads: workload.num_heads,
        head_dim: workload.head_dim,
        num_clusters: 8.min(workload.seq_len),
        rng_seed: workload.select.seed,
        ..SyntheticSpec::default()
    };
    let trace = gen_synthetic(&spec)?;
    let attn = LayerAttention::compute(&trace, 0, workload.select.causal)?;
    let reps = workload.repetitions.max(5);
    let runs = (0..reps)
        .map(|_| kvcrush_select_layer(&attn, 1, &workload.select).map(|d| d.stats))
        .collect::<Result<Vec<_>>>()?;
    let phases = PhaseLatencies {
        scoring: median(runs.iter().map(|s| s.scoring_ns).collect()),
        fingerprint: median(runs.iter().map(|s| s.fingerprint_ns).collect()),
        grouping: median(runs.iter().map(|s| s.grouping_ns).collect()),
        merge: median(runs.iter().map(|s| s.merge_ns).collect()),
    };
    let buckets = workload
        .select
        .budget
        .representative_slots(workload.select.budget.total)
        .max(1);
    let grouping_scaling = [1, 2, 4]
        .iter()
        .map(|m| {
            let n = workload.seq_len * m;
            time_grouping(n, workload.num_heads, buckets, workload.select.anchor, reps, workload.select.seed)
                .map(|ns| (n, ns))
        })
        .collect::<Result<Vec<_>>>()?;
    let kmeans_ns = workload
        .kmeans_iters
        .map(|iters| {
            time_kmeans(
                workload.seq_len,
                workload.num_heads,
                buckets.min(workload.seq_len),
                iters,
                reps,
                workload.select.seed,
            )
        })
        .transpose()?;
    Ok(LatencyReport {
        phases,
        grouping_scaling,
        kmeans_ns,
        distance_ops: runs[0].distance_ops,
    })
}
