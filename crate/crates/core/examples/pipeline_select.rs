//! Split-budget selection: important tokens from H2O, representatives from
//! the grouping, backfill for any slots left over.

use kvcrush::{gen_synthetic, select_trace, Provenance, SelectConfig, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let trace = gen_synthetic(&SyntheticSpec {
        seq_len: 256,
        num_layers: 2,
        num_heads: 16,
        rng_seed: 11,
        ..Default::default()
    })?;
    let mut cfg = SelectConfig::default();
    cfg.budget.total = 64;
    cfg.budget.kvcrush_fraction = 0.25;

    let decision = select_trace(&trace, &cfg)?;
    let labels = trace.labels().unwrap();
    for d in &decision.layers {
        let reps = d.with_provenance(Provenance::Representative);
        let rep_labels: Vec<u32> = reps.iter().map(|&i| labels[i]).collect();
        println!(
            "layer {}: {} important, {} representative, {} backfill (ratio {:.1}x)",
            d.layer,
            d.with_provenance(Provenance::Important).len(),
            reps.len(),
            d.with_provenance(Provenance::Backfill).len(),
            d.compression_ratio
        );
        println!("  representative groups: {rep_labels:?}");
        println!(
            "  distance ops {}, grouping {} ns",
            d.stats.distance_ops, d.stats.grouping_ns
        );
    }
    Ok(())
}
