//! Grid sweeps: one selection plus evaluation per cell, tidy CSV out.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{parse_granularity, RunConfig, SweepGrid, TraceSource, DEFAULT_MAX_CELLS};
use crate::attention::LayerAttention;
use crate::baselines::PolicyKind;
use crate::error::{Error, Result};
use crate::eval::{evaluate_layer, EvalReport};
use crate::grouping::AnchorStrategy;
use crate::pipeline::{kvcrush_select_layer, Granularity, GroupingMethod, SelectConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub policy: String,
    pub budget: usize,
    pub kvcrush_frac: f64,
    pub granularity: String,
    pub anchor: String,
    pub grouping: String,
    pub retain_fraction: f64,
    pub attention_mass_retained: f64,
    pub renormalized_output_error: f64,
    pub compression_ratio: f64,
    pub distance_op_count: usize,
    pub grouping_ns: u64,
}

fn or_base<T: Clone>(values: Vec<T>, base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values
    }
}

fn parse_all<T: std::str::FromStr<Err = Error>>(xs: &[String]) -> Result<Vec<T>> {
    xs.iter().map(|s| s.parse()).collect()
}

/// Every cell's selection config, in canonical order: seed, policy,
/// budget, fraction, granularity, anchor, grouping.
pub fn expand_grid(base: &SelectConfig, grid: &SweepGrid) -> Result<Vec<SelectConfig>> {
    let block = base.budget.granularity.block_size();
    let seeds = or_base(grid.seeds.clone(), base.seed);
    let policies = or_base(parse_all::<PolicyKind>(&grid.policy)?, base.policy.kind);
    let budgets = or_base(grid.budget.clone(), base.budget.total);
    let fracs = or_base(grid.kvcrush_frac.clone(), base.budget.kvcrush_fraction);
    let grans = or_base(
        grid.granularity
            .iter()
            .map(|g| parse_granularity(g, Some(block), Some(block)))
            .collect::<Result<Vec<Granularity>>>()?,
        base.budget.granularity,
    );
    let anchors = or_base(parse_all::<AnchorStrategy>(&grid.anchor)?, base.anchor);
    let groupings = or_base(parse_all::<GroupingMethod>(&grid.grouping)?, base.grouping);

    let cap = grid.max_cells.unwrap_or(DEFAULT_MAX_CELLS);
    let count = [
        seeds.len(),
        policies.len(),
        budgets.len(),
        fracs.len(),
        grans.len(),
        anchors.len(),
        groupings.len(),
    ]
    .iter()
    .try_fold(1usize, |acc, &n| acc.checked_mul(n))
    .unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::InvalidConfig(format!(
            "sweep has {count} cells, above the cap of {cap}"
        )));
    }

    let mut cells = Vec::with_capacity(count);
    for &seed in &seeds {
        for &policy in &policies {
            for &budget in &budgets {
                for &frac in &fracs {
                    for &gran in &grans {
                        for &anchor in &anchors {
                            for &grouping in &groupings {
                                let mut c = base.clone();
                                c.seed = seed;
                                c.policy.kind = policy;
                                c.budget.total = budget;
                                c.budget.kvcrush_fraction = frac;
                                c.budget.granularity = gran;
                                c.anchor = anchor;
                                c.grouping = grouping;
                                c.budget.validate()?;
                                cells.push(c);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(attn: &[LayerAttention], cfg: &SelectConfig) -> Result<SweepRow> {
    let layers = attn
        .iter()
        .map(|a| {
            let d = kvcrush_select_layer(a, attn.len(), cfg)?;
            evaluate_layer(a, &d)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_layers(layers);
    Ok(SweepRow {
        seed: cfg.seed,
        policy: cfg.policy.kind.to_string(),
        budget: cfg.budget.total,
        kvcrush_frac: cfg.budget.kvcrush_fraction,
        granularity: cfg.budget.granularity.to_string(),
        anchor: cfg.anchor.to_string(),
        grouping: cfg.grouping.to_string(),
        retain_fraction: cfg.retain_fraction,
        attention_mass_retained: report.attention_mass_retained,
        renormalized_output_error: report.renormalized_output_error,
        compression_ratio: report.compression_ratio,
        distance_op_count: report.distance_op_count,
        grouping_ns: report.phase_ns.grouping,
    })
}

/// Runs every cell. Cells sharing a seed share one trace, so policies are
/// compared on identical inputs. Rows come back in canonical cell order.
pub fn run_sweep(rc: &RunConfig) -> Result<Vec<SweepRow>> {
    let cells = expand_grid(&rc.select, &rc.sweep)?;
    let mut rows = Vec::with_capacity(cells.len());
    let mut start = 0;
    while start < cells.len() {
        let seed = cells[start].seed;
        let end = start + cells[start..].iter().take_while(|c| c.seed == seed).count();
        let trace = match &rc.source {
            TraceSource::File(_) => rc.source.load(None)?,
            TraceSource::Synthetic(_) => rc.source.load(Some(seed))?,
        };
        let attn = (0..trace.num_layers())
            .into_par_iter()
            .map(|l| LayerAttention::compute(&trace, l, rc.select.causal))
            .collect::<Result<Vec<_>>>()?;
        let chunk: Vec<SweepRow> = cells[start..end]
            .par_iter()
            .map(|c| run_cell(&attn, c))
            .collect::<Result<_>>()?;
        rows.extend(chunk);
        start = end;
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
