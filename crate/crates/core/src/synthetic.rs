//! Seeded synthetic traces with planted token groups and mixed head roles.
//!
//! Every token belongs to one of `num_clusters` latent groups; its key in
//! every head sits near the group's center. Heads take one of three roles:
//!
//! * sink heads pull attention toward the first few positions,
//! * recency heads attend to nearby positions through a rotary component,
//! * content heads each favor one group, so the group's tokens are the
//!   ones that head deems important.
//!
//! Groups differ in salience: content heads are split across groups in a
//! staircase (the k-th most salient group gets roughly `k` shares), so each
//! group has a distinct cross-head importance signature. The ground-truth
//! group of every token is stored with the trace.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AttentionTrace, HeadTensors, Matrix, TraceHeader};

/// Norm of a group center.
const CENTER_NORM: f64 = 4.0;
/// Logit advantage of a favored group's tokens in a content head.
const CONTENT_MARGIN: f64 = 5.0;
/// Logit advantage of sink tokens in a sink head.
const SINK_MARGIN: f64 = 6.0;
/// Number of leading positions a sink head attends to.
const SINK_TOKENS: usize = 4;
/// Peak of the rotary logit in recency heads; sets the window to roughly
/// `S / 16` positions.
const RECENCY_PEAK: f64 = 26.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seq_len: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub rng_seed: u64,
    pub num_clusters: usize,
    /// Key noise norm as a fraction of the distance between group centers.
    pub cluster_spread: f64,
    /// Fraction of heads acting as attention sinks.
    pub sink_fraction: f64,
    /// Fraction of heads attending to recent positions.
    pub recency_bias: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seq_len: 256,
            num_layers: 1,
            num_heads: 16,
            head_dim: 16,
            rng_seed: 0,
            num_clusters: 8,
            cluster_spread: 0.05,
            sink_fraction: 0.0,
            recency_bias: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("num_clusters", self.num_clusters),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        if self.num_clusters > self.seq_len {
            return Err(Error::InvalidSpec(format!(
                "num_clusters {} exceeds seq_len {}",
                self.num_clusters, self.seq_len
            )));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::InvalidSpec("cluster_spread must be finite and >= 0".into()));
        }
        for (name, v) in [
            ("sink_fraction", self.sink_fraction),
            ("recency_bias", self.recency_bias),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidSpec(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadRole {
    Sink,
    Recency,
    /// Favors the group with this label.
    Content(usize),
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `count` unit vectors; the first `min(count, dim)` are orthonormal.
fn directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut v = gaussian(rng, dim);
        if i < dim {
            for prev in &out {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
            }
        }
        normalize(&mut v);
        out.push(v);
    }
    out
}

/// Content-head share of each salience rank: rank `r` gets about
/// `(r + 1) / sum(1..=C)` of the heads; the last rank takes the remainder.
fn staircase(content_heads: usize, clusters: usize) -> Vec<usize> {
    let total: usize = (1..=clusters).sum();
    let mut shares: Vec<usize> = (0..clusters.saturating_sub(1))
        .map(|r| content_heads * (r + 1) / total)
        .collect();
    let used: usize = shares.iter().sum();
    shares.push(content_heads - used);
    shares
}

fn head_roles(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<HeadRole> {
    let h = spec.num_heads;
    let sinks = ((spec.sink_fraction * h as f64).round() as usize).min(h);
    let recency = ((spec.recency_bias * h as f64).round() as usize).min(h - sinks);
    let content = h - sinks - recency;

    let mut salience: Vec<usize> = (0..spec.num_clusters).collect();
    salience.shuffle(rng);
    let mut roles = vec![HeadRole::Sink; sinks];
    roles.extend(std::iter::repeat_n(HeadRole::Recency, recency));
    for (rank, share) in staircase(content, spec.num_clusters).into_iter().enumerate() {
        roles.extend(std::iter::repeat_n(HeadRole::Content(salience[rank]), share));
    }
    roles.shuffle(rng);
    roles
}

fn to_matrix(rows: Vec<Vec<f64>>, dim: usize) -> Matrix {
    let n = rows.len();
    let data = rows.into_iter().flatten().map(|x| x as f32).collect();
    Matrix::new(n, dim, data).expect("generator builds consistent shapes")
}

/// Generates a trace. Pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<AttentionTrace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let s = spec.seq_len;
    let d = spec.head_dim;
    let c = spec.num_clusters;

    let mut labels: Vec<u32> = (0..s).map(|t| (t % c) as u32).collect();
    labels.shuffle(&mut rng);

    // Orthonormal centers of norm CENTER_NORM are CENTER_NORM * sqrt(2) apart.
    let separation = CENTER_NORM * std::f64::consts::SQRT_2;
    let noise_scale = spec.cluster_spread * separation / (d as f64).sqrt();
    let sqrt_d = (d as f64).sqrt();

    let mut layers = Vec::with_capacity(spec.num_layers);
    for _ in 0..spec.num_layers {
        let roles = head_roles(spec, &mut rng);
        let mut heads = Vec::with_capacity(spec.num_heads);
        for role in roles {
            let centers = directions(&mut rng, c, d);
            let mut keys: Vec<Vec<f64>> = labels
                .iter()
                .map(|&l| {
                    let n = gaussian(&mut rng, d);
                    centers[l as usize]
                        .iter()
                        .zip(n)
                        .map(|(cv, z)| CENTER_NORM * cv + noise_scale * z)
                        .collect()
                })
                .collect();
            let queries: Vec<Vec<f64>> = match role {
                HeadRole::Content(fav) => {
                    let scale = CONTENT_MARGIN * sqrt_d / CENTER_NORM;
                    (0..s)
                        .map(|_| {
                            let n = gaussian(&mut rng, d);
                            centers[fav]
                                .iter()
                                .zip(n)
                                .map(|(cv, z)| scale * cv + noise_scale * z)
                                .collect()
                        })
                        .collect()
                }
                HeadRole::Sink => {
                    let u = directions(&mut rng, 1, d).remove(0);
                    let boost = CENTER_NORM;
                    let scale = SINK_MARGIN * sqrt_d / boost;
                    for key in keys.iter_mut().take(SINK_TOKENS.min(s)) {
                        key.iter_mut().zip(&u).for_each(|(k, uv)| *k += boost * uv);
                    }
                    (0..s).map(|_| u.iter().map(|uv| scale * uv).collect()).collect()
                }
                HeadRole::Recency if d >= 2 => {
                    // Rotary pair on the first two coordinates: the logit
                    // between positions j and t is RECENCY_PEAK * cos(pi (j - t) / S).
                    let amp = (RECENCY_PEAK * sqrt_d).sqrt();
                    let angle = |t: usize| std::f64::consts::PI * t as f64 / s as f64;
                    for (t, key) in keys.iter_mut().enumerate() {
                        key[0] += amp * angle(t).cos();
                        key[1] += amp * angle(t).sin();
                    }
                    (0..s)
                        .map(|j| {
                            let mut q = vec![0.0; d];
                            q[0] = amp * angle(j).cos();
                            q[1] = amp * angle(j).sin();
                            q
                        })
                        .collect()
                }
                HeadRole::Recency => vec![vec![0.0; d]; s],
            };
            heads.push(HeadTensors {
                query: to_matrix(queries, d),
                key: to_matrix(keys, d),
            });
        }
        layers.push(heads);
    }

    let header = TraceHeader {
        model_name: format!("synthetic-seed{}", spec.rng_seed),
        num_layers: spec.num_layers,
        num_heads: spec.num_heads,
        head_dim: d,
        seq_len: s,
        precision: 4,
    };
    AttentionTrace::new(header, layers, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec {
            seq_len: 40,
            rng_seed: 7,
            sink_fraction: 0.25,
            recency_bias: 0.25,
            ..SyntheticSpec::default()
        };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let other = gen_synthetic(&SyntheticSpec { rng_seed: 8, ..spec }).unwrap();
        assert_ne!(a.to_bytes(), other.to_bytes());
    }

    #[test]
    fn degenerate_cluster_has_identical_keys() {
        let spec = SyntheticSpec {
            seq_len: 12,
            num_clusters: 1,
            cluster_spread: 0.0,
            ..SyntheticSpec::default()
        };
        let t = gen_synthetic(&spec).unwrap();
        for h in 0..t.num_heads() {
            let k = &t.head(0, h).key;
            for r in 1..k.rows() {
                assert_eq!(k.row(r), k.row(0));
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let t = gen_synthetic(&SyntheticSpec {
            seq_len: 64,
            num_clusters: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let labels = t.labels().unwrap();
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 16);
        }
    }

    #[test]
    fn staircase_shares() {
        assert_eq!(staircase(16, 4), vec![1, 3, 4, 8]);
        assert_eq!(staircase(8, 4), vec![0, 1, 2, 5]);
        assert_eq!(staircase(5, 1), vec![5]);
    }

    #[test]
    fn invalid_specs() {
        let base = SyntheticSpec::default();
        for bad in [
            SyntheticSpec { seq_len: 0, ..base.clone() },
            SyntheticSpec { num_clusters: 300, ..base.clone() },
            SyntheticSpec { sink_fraction: 1.5, ..base.clone() },
            SyntheticSpec { cluster_spread: -1.0, ..base.clone() },
        ] {
            assert!(matches!(gen_synthetic(&bad), Err(Error::InvalidSpec(_))));
        }
    }
}
