//! Lloyd's k-means over fingerprints embedded as 0/1 reals.
//!
//! Used only as a comparison point for the anchor grouping: same output
//! shape (one representative per cluster), quadratic-ish cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::grouping::RepresentativeSet;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn embed(fingerprints: &[Fingerprint]) -> Result<Vec<Vec<f64>>> {
    let width = fingerprints.first().map_or(0, Fingerprint::width);
    fingerprints
        .iter()
        .map(|f| {
            if f.width() != width {
                return Err(Error::LengthMismatch {
                    left: width,
                    right: f.width(),
                });
            }
            Ok(f.bits.iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
        })
        .collect()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance to the nearest chosen center. Falls back to the first unchosen
/// point when every remaining point coincides with a center.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if nearest[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| nearest[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Cluster assignment after at most `iters` Lloyd iterations (stops early
/// once assignments stop changing). Empty clusters keep their old center.
pub fn kmeans_assign(
    fingerprints: &[Fingerprint],
    k: usize,
    iters: usize,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if fingerprints.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 || k > fingerprints.len() {
        return Err(Error::KTooLarge {
            k,
            points: fingerprints.len(),
        });
    }
    if iters == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one iteration".into()));
    }
    let points = embed(fingerprints)?;
    let width = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut centers = seed_centers(&points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();

    for _ in 0..iters {
        let mut sums = vec![vec![0.0; width]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centers[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
        let changed = next != assign;
        assign = next;
        if !changed {
            break;
        }
    }
    Ok((assign, centers))
}

/// Representatives from k-means: for each non-empty cluster, the member
/// nearest its final center (earliest token index on ties).
pub fn kmeans_oracle(
    fingerprints: &[Fingerprint],
    k: usize,
    iters: usize,
    rng_seed: u64,
) -> Result<RepresentativeSet> {
    let (assign, centers) = kmeans_assign(fingerprints, k, iters, rng_seed)?;
    let points = embed(fingerprints)?;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; k];
    for ((p, &c), f) in points.iter().zip(&assign).zip(fingerprints) {
        let d = sq_dist(p, &centers[c]);
        let better = match best[c] {
            None => true,
            Some((bd, bt)) => d < bd || (d == bd && f.token_index < bt),
        };
        if better {
            best[c] = Some((d, f.token_index));
        }
    }
    let mut pairs: Vec<(usize, usize)> = best
        .iter()
        .enumerate()
        .filter_map(|(c, b)| b.map(|(_, t)| (t, c)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup_by_key(|p| p.0);
    let (tokens, buckets) = pairs.into_iter().unzip();
    Ok(RepresentativeSet { tokens, buckets })
}
