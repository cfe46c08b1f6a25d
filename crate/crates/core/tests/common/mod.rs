//! Test helpers shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use kvcrush::{AnchorStrategy, Fingerprint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fingerprints from 0/1 byte rows; token indices follow row order.
pub fn from_bytes(rows: &[Vec<u8>]) -> Vec<Fingerprint> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| Fingerprint {
            token_index: i,
            bits: r.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect::<String>().parse().unwrap(),
        })
        .collect()
}

pub fn to_bytes(f: &Fingerprint) -> Vec<u8> {
    f.bits.iter().map(u8::from).collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, s: usize, h: usize) -> Vec<Vec<u8>> {
    (0..s).map(|_| (0..h).map(|_| rng.random_range(0..2u8)).collect()).collect()
}

/// Straightforward grouping reference: one byte per bit, no word tricks,
/// every step spelled out. Returns (token, bucket) pairs sorted by token.
pub fn naive_group(
    rows: &[Vec<u8>],
    token_index: &[usize],
    b_rep: usize,
    strategy: AnchorStrategy,
    seed: u64,
) -> Vec<(usize, usize)> {
    let h = rows[0].len();
    let s = rows.len();

    // anchor
    let anchor: Vec<u8> = match strategy {
        AnchorStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..h).map(|_| u8::from(rng.random::<bool>())).collect()
        }
        AnchorStrategy::Mean => (0..h)
            .map(|j| {
                let ones = rows.iter().filter(|r| r[j] == 1).count();
                u8::from(ones * 2 >= s)
            })
            .collect(),
        AnchorStrategy::Alternating => (0..h).map(|j| (j % 2) as u8).collect(),
    };

    let dist = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| x != y).count();

    // buckets
    let mut buckets: Vec<Vec<usize>> = vec![vec![]; b_rep];
    for (i, r) in rows.iter().enumerate() {
        let d = dist(r, &anchor);
        let mut b = d * b_rep / (h + 1);
        if b > b_rep - 1 {
            b = b_rep - 1;
        }
        buckets[b].push(i);
    }

    // representatives
    let mut out = vec![];
    for (b, members) in buckets.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut centroid = vec![0u8; h];
        for (j, c) in centroid.iter_mut().enumerate() {
            let ones = members.iter().filter(|&&i| rows[i][j] == 1).count();
            *c = u8::from(ones * 2 >= members.len());
        }
        let mut best = members[0];
        for &i in members {
            let di = dist(&rows[i], &centroid);
            let db = dist(&rows[best], &centroid);
            if di < db || (di == db && token_index[i] < token_index[best]) {
                best = i;
            }
        }
        out.push((token_index[best], b));
    }
    out.sort();
    out.dedup_by_key(|p| p.0);
    out
}

/// Scalar softmax of `q . k / sqrt(d)` for every row, causal.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = q.len();
    let d = q[0].len() as f64;
    (0..s)
        .map(|i| {
            let logits: Vec<f64> = (0..=i)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut row: Vec<f64> = e.iter().map(|x| x / z).collect();
            row.resize(s, 0.0);
            row
        })
        .collect()
}

/// Fixed seed list for the paired fidelity comparison.
pub const FIDELITY_SEEDS: [u64; 100] = {
    let mut s = [0u64; 100];
    let mut i = 0;
    while i < 100 {
        s[i] = 1000 + 7 * i as u64;
        i += 1;
    }
    s
};
