//! Fidelity report for one decision, as JSON and as per-layer CSV.

use kvcrush::{evaluate, gen_synthetic, select_trace, SelectConfig, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let trace = gen_synthetic(&SyntheticSpec {
        seq_len: 256,
        num_layers: 2,
        rng_seed: 2,
        ..Default::default()
    })?;
    let mut cfg = SelectConfig::default();
    cfg.budget.total = 64;
    let report = evaluate(&trace, &select_trace(&trace, &cfg)?)?;
    println!("{}", report.to_json());
    report.write_csv(std::io::stdout())?;
    Ok(())
}
