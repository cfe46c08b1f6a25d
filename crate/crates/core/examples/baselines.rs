//! The eviction baselines side by side on one layer.

use kvcrush::baselines::{pyramid_budgets, window_select};
use kvcrush::eval::evaluate_layer;
use kvcrush::pipeline::baseline_select_layer;
use kvcrush::{gen_synthetic, LayerAttention, PolicyKind, SelectConfig, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let trace = gen_synthetic(&SyntheticSpec {
        seq_len: 512,
        num_heads: 16,
        sink_fraction: 0.125,
        recency_bias: 0.25,
        rng_seed: 3,
        ..Default::default()
    })?;
    let attn = LayerAttention::compute(&trace, 0, true)?;

    for kind in PolicyKind::ALL {
        let mut cfg = SelectConfig::default();
        cfg.policy.kind = kind;
        cfg.policy.sinks = 8;
        cfg.policy.recents = 56;
        cfg.budget.total = 128;
        let d = baseline_select_layer(&attn, 1, &cfg)?;
        let r = evaluate_layer(&attn, &d)?;
        println!(
            "{kind:<10} kept {:>3}  mass {:.4}  error {:.4}",
            d.retained.len(),
            r.attention_mass_retained,
            r.renormalized_output_error
        );
    }

    println!("window(16, 2, 3) = {:?}", window_select(16, 2, 3)?);
    println!("pyramid budgets for 8 layers at 128: {:?}", pyramid_budgets(128, 8, 0.7)?);
    Ok(())
}
