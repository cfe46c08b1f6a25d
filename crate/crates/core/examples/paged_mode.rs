//! Chunk and page granularity: whole blocks are kept or dropped.

use kvcrush::{gen_synthetic, select_trace, Granularity, SelectConfig, SyntheticSpec};

fn runs(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some((_, end)) if *end == i => *end = i + 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

fn main() -> kvcrush::Result<()> {
    let trace = gen_synthetic(&SyntheticSpec {
        seq_len: 512,
        num_heads: 16,
        rng_seed: 5,
        ..Default::default()
    })?;
    for gran in [Granularity::Token, Granularity::Chunk(8), Granularity::Page(32)] {
        let mut cfg = SelectConfig::default();
        cfg.budget.total = 128;
        cfg.budget.granularity = gran;
        let d = select_trace(&trace, &cfg)?;
        let kept = d.layers[0].indices();
        let r = runs(&kept);
        println!("{gran:<7} {} tokens in {} contiguous runs", kept.len(), r.len());
        println!("        first runs: {:?}", &r[..r.len().min(6)]);
    }
    Ok(())
}
