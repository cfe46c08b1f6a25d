//! Token-level KV-cache compression with binary head fingerprints.
//!
//! Each token gets one bit per attention head (did this head attend to it
//! above that head's threshold?). Tokens an eviction policy would drop are
//! grouped by Hamming distance to a single anchor vector, and one
//! representative per group is kept alongside the policy's important
//! tokens. The crate also carries the baselines, a synthetic trace
//! generator, a binary trace format and a fidelity evaluator.
//!
//! ```
//! use kvcrush::{gen_synthetic, select_trace, evaluate, SelectConfig, SyntheticSpec};
//!
//! let trace = gen_synthetic(&SyntheticSpec { seq_len: 128, ..Default::default() }).unwrap();
//! let mut cfg = SelectConfig::default();
//! cfg.budget.total = 32;
//! let decision = select_trace(&trace, &cfg).unwrap();
//! let report = evaluate(&trace, &decision).unwrap();
//! assert!(report.attention_mass_retained <= 1.0);
//! ```

pub mod attention;
pub mod baselines;
pub mod bits;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod grouping;
pub mod kmeans;
pub mod pipeline;
pub mod synthetic;
pub mod trace;

pub use attention::{attention_matrix, AttentionMatrix, LayerAttention};
pub use baselines::{ImportanceRanking, PolicyConfig, PolicyKind};
pub use bits::BitVector;
pub use error::{Error, Result};
pub use eval::{evaluate, measure_latency, EvalReport, LatencyReport, WorkloadSpec};
pub use fingerprint::{compute_fingerprints, Fingerprint, HeadScores};
pub use grouping::{kvcrush_group, AnchorStrategy, BucketAssignment, RepresentativeSet};
pub use kmeans::kmeans_oracle;
pub use pipeline::{
    chunked_select, kvcrush_select, select_trace, BudgetSpec, EvictionDecision, Granularity,
    GroupingMethod, LayerDecision, Provenance, SelectConfig,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use trace::{kv_memory_bytes, read_trace, write_trace, AttentionTrace, TraceHeader};
