//! Anchor-based Hamming grouping on a handful of fingerprints, step by step.

use kvcrush::grouping::{bucketize, kvcrush_group_counted, make_anchor, select_representatives};
use kvcrush::{AnchorStrategy, Fingerprint};

fn main() -> kvcrush::Result<()> {
    let bits = ["0101", "1101", "1001", "1011", "0101", "1111"];
    let fps: Vec<Fingerprint> = bits
        .iter()
        .enumerate()
        .map(|(i, b)| Fingerprint {
            token_index: i,
            bits: b.parse().unwrap(),
        })
        .collect();

    for strategy in AnchorStrategy::ALL {
        let anchor = make_anchor(strategy, &fps, 4, 42)?;
        let buckets = bucketize(&fps, &anchor, 3)?;
        let reps = select_representatives(&fps, &buckets)?;
        let (_, ops) = kvcrush_group_counted(&fps, 3, strategy, 42)?;
        println!(
            "{strategy:<11} anchor {}  buckets {:?}  representatives {:?}  distance ops {ops}",
            anchor.bits, buckets.bucket_of, reps.tokens
        );
    }
    Ok(())
}
