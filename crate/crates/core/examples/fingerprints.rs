//! Per-head binary fingerprints for every token of one layer.

use kvcrush::{compute_fingerprints, gen_synthetic, SyntheticSpec};

fn main() -> kvcrush::Result<()> {
    let trace = gen_synthetic(&SyntheticSpec {
        seq_len: 32,
        num_heads: 12,
        num_clusters: 3,
        rng_seed: 1,
        ..Default::default()
    })?;
    let (fps, scores) = compute_fingerprints(&trace, 0, 0.25)?;
    let labels = trace.labels().unwrap();

    println!("threshold per head: {:.4?}", scores.thresholds());
    println!("token  group  bits (head 0 first)");
    for f in &fps {
        println!("{:>5}  {:>5}  {}", f.token_index, labels[f.token_index], f.bits);
    }
    // each head marks exactly a quarter of the tokens
    for h in 0..scores.num_heads() {
        assert_eq!(fps.iter().filter(|f| f.bits.get(h)).count(), 8);
    }
    Ok(())
}
