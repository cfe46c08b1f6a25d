//! Generate a synthetic trace, write it, read it back.
//!
//! cargo run --example gen_trace -- /tmp/demo.kvcr

use kvcrush::{gen_synthetic, read_trace, write_trace, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "demo.kvcr".into());
    let spec = SyntheticSpec {
        seq_len: 128,
        num_layers: 2,
        num_heads: 8,
        num_clusters: 4,
        sink_fraction: 0.125,
        recency_bias: 0.25,
        rng_seed: 7,
        ..Default::default()
    };
    let trace = gen_synthetic(&spec)?;
    write_trace(&trace, &path)?;

    let back = read_trace(&path)?;
    assert_eq!(back, trace);
    let h = back.header();
    println!("{path}: {} layers, {} heads, d={}, S={}", h.num_layers, h.num_heads, h.head_dim, h.seq_len);

    let labels = back.labels().expect("synthetic traces carry labels");
    let mut counts = vec![0; spec.num_clusters];
    for &l in labels {
        counts[l as usize] += 1;
    }
    println!("tokens per planted group: {counts:?}");
    Ok(())
}
