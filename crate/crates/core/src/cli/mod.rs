//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when something fails while running, 2 for
//! bad flags, config files or mismatched inputs.

pub mod config;
pub mod sweep;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::pipeline::{baseline_select_trace, select_trace, EvictionDecision};
use crate::synthetic::{gen_synthetic, SyntheticSpec};
use crate::trace::{kv_memory_bytes, read_trace, write_trace, TraceHeader};
use config::{load_file_config, RunConfig, SelectArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kvcrush", version, about = "KV-cache token selection with head-behaviour fingerprints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Select tokens to keep and write the decision as JSON.
    Select(SelectCmd),
    /// Score a decision against its trace.
    Eval(EvalArgs),
    /// Run a parameter grid and write one CSV row per cell.
    Sweep(SweepArgs),
    /// KV-cache size in bytes.
    Mem(MemArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML config; its [synthetic] table supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub sink_fraction: Option<f64>,
    #[arg(long)]
    pub recency_bias: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectCmd {
    #[command(flatten)]
    pub select: SelectArgs,
    /// Ignore the representative share and run the baseline alone.
    #[arg(long)]
    pub baseline: bool,
    /// Decision file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub select: SelectArgs,
    /// Decision JSON written by `select`.
    #[arg(long)]
    pub decision: PathBuf,
    /// One CSV row per layer instead of JSON.
    #[arg(long)]
    pub csv: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long, value_delimiter = ',')]
    pub anchors: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub fracs: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub groupings: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub granularities: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Refuse grids with more cells than this.
    #[arg(long)]
    pub max_cells: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MemArgs {
    /// Take layers, heads, head size, length and precision from a trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Bytes per element.
    #[arg(long)]
    pub precision: Option<usize>,
}

#[derive(Debug, Serialize)]
struct MemReport {
    bytes: u64,
    gib: f64,
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => load_file_config(p)?.synthetic.unwrap_or_default(),
        None => SyntheticSpec::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.seq_len, a.seq_len);
    set(&mut spec.num_layers, a.layers);
    set(&mut spec.num_heads, a.heads);
    set(&mut spec.head_dim, a.head_dim);
    set(&mut spec.num_clusters, a.clusters);
    if let Some(v) = a.spread {
        spec.cluster_spread = v;
    }
    if let Some(v) = a.sink_fraction {
        spec.sink_fraction = v;
    }
    if let Some(v) = a.recency_bias {
        spec.recency_bias = v;
    }
    if let Some(v) = a.seed {
        spec.rng_seed = v;
    }
    let trace = gen_synthetic(&spec)?;
    write_trace(&trace, &a.output)?;
    let h = trace.header();
    eprintln!(
        "{}: {} layers x {} heads, d={}, S={}, {} clusters",
        a.output.display(),
        h.num_layers,
        h.num_heads,
        h.head_dim,
        h.seq_len,
        spec.num_clusters
    );
    Ok(())
}

fn cmd_select(a: SelectCmd) -> Result<()> {
    let rc = RunConfig::resolve(&a.select, a.output)?;
    let trace = rc.source.load(None)?;
    let decision = if a.baseline {
        baseline_select_trace(&trace, &rc.select)?
    } else {
        select_trace(&trace, &rc.select)?
    };
    let mut json = decision.to_json();
    json.push('\n');
    emit(rc.output.as_deref(), json.as_bytes())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let rc = RunConfig::resolve(&a.select, a.output)?;
    let text = std::fs::read_to_string(&a.decision)?;
    let decision = EvictionDecision::from_json(&text)?;
    let trace = rc.source.load(None)?;
    let report = evaluate(&trace, &decision)?;
    if a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        emit(rc.output.as_deref(), &buf)
    } else {
        let mut json = report.to_json();
        json.push('\n');
        emit(rc.output.as_deref(), json.as_bytes())
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut rc = RunConfig::resolve(&a.select, a.output)?;
    let g = &mut rc.sweep;
    let replace = |dst: &mut Vec<String>, src: Vec<String>| {
        if !src.is_empty() {
            *dst = src;
        }
    };
    replace(&mut g.anchor, a.anchors);
    replace(&mut g.policy, a.policies);
    replace(&mut g.grouping, a.groupings);
    replace(&mut g.granularity, a.granularities);
    if !a.fracs.is_empty() {
        g.kvcrush_frac = a.fracs;
    }
    if !a.budgets.is_empty() {
        g.budget = a.budgets;
    }
    if !a.seeds.is_empty() {
        g.seeds = a.seeds;
    }
    if a.max_cells.is_some() {
        g.max_cells = a.max_cells;
    }
    let rows = sweep::run_sweep(&rc)?;
    let mut buf = Vec::new();
    sweep::write_rows(&rows, &mut buf)?;
    emit(rc.output.as_deref(), &buf)
}

fn cmd_mem(a: MemArgs) -> Result<()> {
    let mut header = match &a.trace {
        Some(p) => read_trace(p)?.header().clone(),
        None => TraceHeader {
            model_name: String::new(),
            num_layers: 0,
            num_heads: 0,
            head_dim: 0,
            seq_len: 0,
            precision: 2,
        },
    };
    let fields = [
        (&mut header.num_layers, a.layers, "--layers"),
        (&mut header.num_heads, a.heads, "--heads"),
        (&mut header.seq_len, a.seq_len, "--seq-len"),
        (&mut header.head_dim, a.head_dim, "--head-dim"),
        (&mut header.precision, a.precision, "--precision"),
    ];
    for (dst, v, flag) in fields {
        if let Some(v) = v {
            *dst = v;
        }
        if *dst == 0 {
            return Err(Error::InvalidConfig(format!("{flag} is required and must be at least 1")));
        }
    }
    let bytes = kv_memory_bytes(&header, a.batch)?;
    let report = MemReport {
        bytes,
        gib: bytes as f64 / (1u64 << 30) as f64,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    emit(None, json.as_bytes())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Select(a) => cmd_select(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Mem(a) => cmd_mem(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
