//! Run configuration: a TOML file merged under command-line flags.
//!
//! ```toml
//! trace = "run.kvcr"          # or a [synthetic] table, not both
//! budget = 2048
//! kvcrush_frac = 0.25
//! granularity = "page"        # token | chunk | page | chunkN | pageN
//! page_size = 32
//! anchor = "mean"
//! grouping = "kvcrush"        # or kmeans / kmeansN
//! retain_fraction = 0.5
//! seed = 0
//!
//! [policy]
//! kind = "h2o"
//! window = 32
//!
//! [sweep]
//! anchor = ["random", "mean", "alternating"]
//! seeds = [0, 1, 2]
//! ```

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use crate::baselines::{PolicyConfig, PolicyKind};
use crate::error::{Error, Result};
use crate::grouping::AnchorStrategy;
use crate::pipeline::{Granularity, GroupingMethod, SelectConfig};
use crate::synthetic::{gen_synthetic, SyntheticSpec};
use crate::trace::{read_trace, AttentionTrace};

pub const DEFAULT_CHUNK_SIZE: usize = 8;
pub const DEFAULT_PAGE_SIZE: usize = 32;
pub const DEFAULT_MAX_CELLS: usize = 4096;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub trace: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub retain_fraction: Option<f64>,
    pub anchor: Option<String>,
    pub grouping: Option<String>,
    pub causal: Option<bool>,
    pub budget: Option<usize>,
    pub kvcrush_frac: Option<f64>,
    pub granularity: Option<String>,
    pub chunk_size: Option<usize>,
    pub page_size: Option<usize>,
    pub policy: Option<PolicyConfig>,
    pub synthetic: Option<SyntheticSpec>,
    pub sweep: Option<SweepGrid>,
}

/// Lists of values to take the Cartesian product over. An empty list keeps
/// the single value from the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub anchor: Vec<String>,
    pub kvcrush_frac: Vec<f64>,
    pub budget: Vec<usize>,
    pub policy: Vec<String>,
    pub grouping: Vec<String>,
    pub granularity: Vec<String>,
    pub seeds: Vec<u64>,
    pub max_cells: Option<usize>,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Flags shared by every command that reads a trace and selects tokens.
#[derive(Debug, Clone, Default, Args)]
pub struct SelectArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace file to read.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Tokens kept per layer.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Share of the budget given to representatives, in [0, 1].
    #[arg(long)]
    pub kvcrush_frac: Option<f64>,
    /// fullkv, h2o, window, snapkv or pyramidkv.
    #[arg(long)]
    pub policy: Option<String>,
    /// random, mean or alternating.
    #[arg(long)]
    pub anchor: Option<String>,
    /// kvcrush, kmeans or kmeansN (N Lloyd iterations).
    #[arg(long)]
    pub grouping: Option<String>,
    /// Per-head fraction of tokens whose fingerprint bit is set.
    #[arg(long)]
    pub retain_fraction: Option<f64>,
    /// token, chunk or page (sizes from --chunk-size / --page-size).
    #[arg(long)]
    pub granularity: Option<String>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub page_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attend to every position instead of only earlier ones.
    #[arg(long)]
    pub bidirectional: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

impl TraceSource {
    /// Loads the trace; a synthetic source is regenerated with `seed` when
    /// one is given.
    pub fn load(&self, seed: Option<u64>) -> Result<AttentionTrace> {
        match self {
            Self::File(p) => read_trace(p),
            Self::Synthetic(spec) => {
                let mut spec = spec.clone();
                if let Some(s) = seed {
                    spec.rng_seed = s;
                }
                gen_synthetic(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: TraceSource,
    pub select: SelectConfig,
    pub output: Option<PathBuf>,
    pub sweep: SweepGrid,
}

fn granularity(name: &str, chunk: usize, page: usize) -> Result<Granularity> {
    match name.to_ascii_lowercase().as_str() {
        "chunk" => Ok(Granularity::Chunk(chunk)),
        "page" => Ok(Granularity::Page(page)),
        other => other.parse(),
    }
}

pub fn parse_granularity(name: &str, chunk: Option<usize>, page: Option<usize>) -> Result<Granularity> {
    granularity(
        name,
        chunk.unwrap_or(DEFAULT_CHUNK_SIZE),
        page.unwrap_or(DEFAULT_PAGE_SIZE),
    )
}

impl RunConfig {
    /// Merges flags over the config file over defaults.
    pub fn resolve(args: &SelectArgs, output: Option<PathBuf>) -> Result<Self> {
        let file = match &args.config {
            Some(p) => load_file_config(p)?,
            None => FileConfig::default(),
        };
        let source = match (&args.trace, &file.trace, &file.synthetic) {
            (Some(p), _, _) => TraceSource::File(p.clone()),
            (None, Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "config gives both `trace` and [synthetic]; pick one".into(),
                ))
            }
            (None, Some(p), None) => TraceSource::File(p.clone()),
            (None, None, Some(spec)) => {
                spec.validate()?;
                TraceSource::Synthetic(spec.clone())
            }
            (None, None, None) => {
                return Err(Error::InvalidConfig(
                    "no trace: pass --trace or give `trace`/[synthetic] in the config".into(),
                ))
            }
        };

        let mut select = SelectConfig::default();
        if let Some(p) = file.policy {
            select.policy = p;
        }
        if let Some(kind) = args.policy.as_deref() {
            select.policy.kind = kind.parse::<PolicyKind>()?;
        }
        if let Some(b) = args.budget.or(file.budget) {
            select.budget.total = b;
        }
        if let Some(f) = args.kvcrush_frac.or(file.kvcrush_frac) {
            select.budget.kvcrush_fraction = f;
        }
        let chunk = args.chunk_size.or(file.chunk_size);
        let page = args.page_size.or(file.page_size);
        if let Some(g) = args.granularity.as_deref().or(file.granularity.as_deref()) {
            select.budget.granularity = parse_granularity(g, chunk, page)?;
        }
        if let Some(a) = args.anchor.as_deref().or(file.anchor.as_deref()) {
            select.anchor = a.parse::<AnchorStrategy>()?;
        }
        if let Some(g) = args.grouping.as_deref().or(file.grouping.as_deref()) {
            select.grouping = g.parse::<GroupingMethod>()?;
        }
        if let Some(f) = args.retain_fraction.or(file.retain_fraction) {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidFraction(f));
            }
            select.retain_fraction = f;
        }
        if let Some(s) = args.seed.or(file.seed) {
            select.seed = s;
        }
        select.causal = !args.bidirectional && file.causal.unwrap_or(true);
        select.budget.validate()?;

        Ok(Self {
            source,
            select,
            output: output.or(file.output),
            sweep: file.sweep.unwrap_or_default(),
        })
    }
}
