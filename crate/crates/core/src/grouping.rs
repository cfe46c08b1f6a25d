//! Anchor-based Hamming grouping and representative selection.
//!
//! Every fingerprint is compared against one anchor vector; the distance
//! picks a bucket by uniform binning of `[0, width]`. Each non-empty bucket
//! contributes the member closest to its majority-bit centroid. The whole
//! pass costs at most two distance computations per token.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorStrategy {
    Random,
    Mean,
    Alternating,
}

impl AnchorStrategy {
    pub const ALL: [AnchorStrategy; 3] = [Self::Random, Self::Mean, Self::Alternating];
}

impl fmt::Display for AnchorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::Random => "random",
            Self::Mean => "mean",
            Self::Alternating => "alternating",
        })
    }
}

impl FromStr for AnchorStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "mean" => Ok(Self::Mean),
            "alternating" | "alternate" => Ok(Self::Alternating),
            other => Err(Error::InvalidConfig(format!("unknown anchor strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub bits: BitVector,
    pub strategy: AnchorStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketAssignment {
    /// Bucket of each fingerprint, by position in the input list.
    pub bucket_of: Vec<usize>,
    pub bucket_count: usize,
}

impl BucketAssignment {
    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.bucket_count];
        for &b in &self.bucket_of {
            sizes[b] += 1;
        }
        sizes
    }
}

/// One representative token per non-empty group, sorted by token index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RepresentativeSet {
    pub tokens: Vec<usize>,
    /// Source bucket (or cluster) of each entry of `tokens`.
    pub buckets: Vec<usize>,
}

impl RepresentativeSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup_by_key(|p| p.0);
        let (tokens, buckets) = pairs.into_iter().unzip();
        Self { tokens, buckets }
    }
}

fn uniform_width(fingerprints: &[Fingerprint]) -> Result<usize> {
    let width = fingerprints.first().ok_or(Error::EmptyInput)?.width();
    for f in fingerprints {
        if f.width() != width {
            return Err(Error::LengthMismatch {
                left: width,
                right: f.width(),
            });
        }
    }
    Ok(width)
}

/// Builds an anchor with the requested strategy.
///
/// `width` is only consulted when `fingerprints` is empty (Random and
/// Alternating tolerate an empty list).
pub fn make_anchor(
    strategy: AnchorStrategy,
    fingerprints: &[Fingerprint],
    width: usize,
    rng_seed: u64,
) -> Result<Anchor> {
    let width = if fingerprints.is_empty() {
        width
    } else {
        uniform_width(fingerprints)?
    };
    let bits = match strategy {
        AnchorStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let bools: Vec<bool> = (0..width).map(|_| rng.random::<bool>()).collect();
            BitVector::from_bools(&bools)
        }
        AnchorStrategy::Mean => {
            if fingerprints.is_empty() {
                return Err(Error::EmptyInput);
            }
            let counts = bit_counts(fingerprints.iter().map(|f| &f.bits), width);
            majority(&counts, fingerprints.len())
        }
        AnchorStrategy::Alternating => {
            let bools: Vec<bool> = (0..width).map(|i| i % 2 == 1).collect();
            BitVector::from_bools(&bools)
        }
    };
    Ok(Anchor { bits, strategy })
}

fn bit_counts<'a>(vectors: impl Iterator<Item = &'a BitVector>, width: usize) -> Vec<usize> {
    let mut counts = vec![0usize; width];
    for v in vectors {
        for (w, &word) in v.words().iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                counts[w * 64 + bit] += 1;
                word &= word - 1;
            }
        }
    }
    counts
}

/// Bit `i` is set iff at least half of the `n` vectors set it.
fn majority(counts: &[usize], n: usize) -> BitVector {
    let bools: Vec<bool> = counts.iter().map(|&c| 2 * c >= n).collect();
    BitVector::from_bools(&bools)
}

pub fn hamming(a: &BitVector, b: &BitVector) -> Result<usize> {
    a.hamming(b)
}

/// Bucket index for a distance `d` in `[0, width]`.
#[inline]
pub fn bucket_for_distance(d: usize, width: usize, bucket_count: usize) -> usize {
    (d * bucket_count / (width + 1)).min(bucket_count - 1)
}

fn bucketize_counted(
    fingerprints: &[Fingerprint],
    anchor: &Anchor,
    bucket_count: usize,
    ops: &mut usize,
) -> Result<BucketAssignment> {
    if bucket_count == 0 {
        return Err(Error::ZeroBuckets);
    }
    let width = uniform_width(fingerprints)?;
    if anchor.bits.len() != width {
        return Err(Error::LengthMismatch {
            left: anchor.bits.len(),
            right: width,
        });
    }
    let bucket_of = fingerprints
        .iter()
        .map(|f| {
            *ops += 1;
            f.bits
                .hamming(&anchor.bits)
                .map(|d| bucket_for_distance(d, width, bucket_count))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BucketAssignment {
        bucket_of,
        bucket_count,
    })
}

/// Assigns each fingerprint to `floor(d * B / (width + 1))`, capped at `B - 1`,
/// where `d` is its Hamming distance to the anchor.
pub fn bucketize(
    fingerprints: &[Fingerprint],
    anchor: &Anchor,
    bucket_count: usize,
) -> Result<BucketAssignment> {
    bucketize_counted(fingerprints, anchor, bucket_count, &mut 0)
}

fn select_counted(
    fingerprints: &[Fingerprint],
    assignment: &BucketAssignment,
    ops: &mut usize,
) -> Result<RepresentativeSet> {
    if assignment.bucket_of.len() != fingerprints.len() {
        return Err(Error::InconsistentAssignment(format!(
            "{} assignments for {} fingerprints",
            assignment.bucket_of.len(),
            fingerprints.len()
        )));
    }
    if let Some(&b) = assignment
        .bucket_of
        .iter()
        .find(|&&b| b >= assignment.bucket_count)
    {
        return Err(Error::InconsistentAssignment(format!(
            "bucket {b} >= bucket count {}",
            assignment.bucket_count
        )));
    }
    if fingerprints.is_empty() {
        return Ok(RepresentativeSet::default());
    }
    let width = uniform_width(fingerprints)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.bucket_count];
    for (i, &b) in assignment.bucket_of.iter().enumerate() {
        members[b].push(i);
    }

    let mut pairs = Vec::new();
    for (bucket, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let counts = bit_counts(idx.iter().map(|&i| &fingerprints[i].bits), width);
        let centroid = majority(&counts, idx.len());
        let mut best: Option<(usize, usize)> = None; // (distance, token)
        for &i in idx {
            *ops += 1;
            let d = fingerprints[i].bits.hamming(&centroid)?;
            let token = fingerprints[i].token_index;
            if best.is_none_or(|b| (d, token) < b) {
                best = Some((d, token));
            }
        }
        pairs.push((best.expect("bucket is non-empty").1, bucket));
    }
    Ok(RepresentativeSet::from_pairs(pairs))
}

/// Picks, for each non-empty bucket, the member nearest to the bucket's
/// majority-bit centroid (ties to the smaller token index).
pub fn select_representatives(
    fingerprints: &[Fingerprint],
    assignment: &BucketAssignment,
) -> Result<RepresentativeSet> {
    select_counted(fingerprints, assignment, &mut 0)
}

/// Full grouping pass. Returns the representatives and the number of
/// Hamming distance computations performed (always `<= 2 * S`).
pub fn kvcrush_group_counted(
    fingerprints: &[Fingerprint],
    bucket_count: usize,
    strategy: AnchorStrategy,
    rng_seed: u64,
) -> Result<(RepresentativeSet, usize)> {
    if bucket_count == 0 {
        return Err(Error::ZeroBuckets);
    }
    let anchor = make_anchor(strategy, fingerprints, 0, rng_seed)?;
    let mut ops = 0;
    let assignment = bucketize_counted(fingerprints, &anchor, bucket_count, &mut ops)?;
    let reps = select_counted(fingerprints, &assignment, &mut ops)?;
    Ok((reps, ops))
}

pub fn kvcrush_group(
    fingerprints: &[Fingerprint],
    bucket_count: usize,
    strategy: AnchorStrategy,
    rng_seed: u64,
) -> Result<RepresentativeSet> {
    kvcrush_group_counted(fingerprints, bucket_count, strategy, rng_seed).map(|(r, _)| r)
}
