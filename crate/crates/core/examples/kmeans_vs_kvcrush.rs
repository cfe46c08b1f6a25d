//! Latency of the one-pass grouping against Lloyd's k-means on the same
//! random fingerprints.
//!
//! cargo run --release --example kmeans_vs_kvcrush

use kvcrush::eval::{time_grouping, time_kmeans};
use kvcrush::AnchorStrategy;

fn main() -> kvcrush::Result<()> {
    let heads = 32;
    let k = 64;
    println!("{:>6} {:>14} {:>16} {:>8}", "S", "grouping (us)", "k-means100 (us)", "ratio");
    for s in [1024, 2048, 4096] {
        let g = time_grouping(s, heads, k, AnchorStrategy::Mean, 5, 0)?;
        let km = time_kmeans(s, heads, k, 100, 5, 0)?;
        println!(
            "{s:>6} {:>14.1} {:>16.1} {:>7.0}x",
            g as f64 / 1e3,
            km as f64 / 1e3,
            km as f64 / g as f64
        );
    }
    Ok(())
}
