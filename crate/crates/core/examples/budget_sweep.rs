//! Sweep the representative share of the budget from 0 to 0.9 on paired
//! seeds and print mean retained mass per share.
//!
//! cargo run --release --example budget_sweep

use kvcrush::eval::evaluate_layer;
use kvcrush::pipeline::kvcrush_select_layer;
use kvcrush::{gen_synthetic, AnchorStrategy, LayerAttention, SelectConfig, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let seeds = 0..8u64;
    let fractions: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let mut mass = vec![vec![0.0; fractions.len()]; AnchorStrategy::ALL.len()];
    for seed in seeds.clone() {
        let trace = gen_synthetic(&SyntheticSpec {
            seq_len: 512,
            num_heads: 16,
            sink_fraction: 0.125,
            recency_bias: 0.25,
            rng_seed: seed,
            ..Default::default()
        })?;
        let attn = LayerAttention::compute(&trace, 0, true)?;
        for (a, anchor) in AnchorStrategy::ALL.into_iter().enumerate() {
            for (i, &f) in fractions.iter().enumerate() {
                let mut cfg = SelectConfig::default();
                cfg.budget.total = 128;
                cfg.budget.kvcrush_fraction = f;
                cfg.anchor = anchor;
                cfg.seed = seed;
                let d = kvcrush_select_layer(&attn, 1, &cfg)?;
                mass[a][i] += evaluate_layer(&attn, &d)?.attention_mass_retained;
            }
        }
    }
    let n = seeds.count() as f64;
    print!("{:<12}", "fraction");
    for f in &fractions {
        print!("{f:>7.1}");
    }
    println!();
    for (a, anchor) in AnchorStrategy::ALL.into_iter().enumerate() {
        print!("{anchor:<12}");
        for m in &mass[a] {
            print!("{:>7.4}", m / n);
        }
        println!();
    }
    Ok(())
}
