//! Online clustering of the target domain. Rank statistics declare two
//! features "same cluster" when their top-k component index sets coincide;
//! those labels train the cluster head `g` through the pairwise BCE. A seeded
//! Lloyd k-means is kept alongside for the clustering-algorithm ablation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{pairwise_bce, PairLabel, PairwiseBce};
use crate::model::{Head, ModelVars};

/// Rank-statistics parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankStatConfig {
    /// How many of the largest components to compare; must satisfy
    /// `1 <= k <= feature_dim`.
    pub k: usize,
}

impl Default for RankStatConfig {
    fn default() -> Self {
        RankStatConfig { k: 5 }
    }
}

impl RankStatConfig {
    /// The default top-k clipped to short feature vectors.
    pub fn for_feature_dim(feature_dim: usize) -> Self {
        RankStatConfig {
            k: 5.min(feature_dim),
        }
    }
}

/// Indices of the k largest components, ties broken toward the lower index.
/// Returned sorted ascending so set comparison is a plain equality check.
fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// True iff the index sets of the k largest components of `x1` and `x2`
/// coincide (unordered comparison).
pub fn rank_stat_pair_label(x1: &[f64], x2: &[f64], k: usize) -> Result<bool> {
    if x1.len() != x2.len() {
        return Err(Error::Dimension {
            op: "rank_stat_pair_label",
            detail: format!("feature lengths {} and {} differ", x1.len(), x2.len()),
        });
    }
    if k == 0 || k > x1.len() {
        return Err(Error::Config(format!(
            "rank-statistics k={k} must be in [1, {}]",
            x1.len()
        )));
    }
    Ok(top_k_indices(x1, k) == top_k_indices(x2, k))
}

/// All unordered pairs labeled by the rank statistic.
pub fn rank_stat_pairs(features: &[Vec<f64>], k: usize) -> Result<Vec<PairLabel>> {
    let tops: Vec<Vec<usize>> = features
        .iter()
        .map(|f| {
            if k == 0 || k > f.len() {
                return Err(Error::Config(format!(
                    "rank-statistics k={k} must be in [1, {}]",
                    f.len()
                )));
            }
            Ok(top_k_indices(f, k))
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            pairs.push(PairLabel {
                i,
                j,
                same: tops[i] == tops[j],
            });
        }
    }
    Ok(pairs)
}

/// Pairwise BCE over `g` outputs for a target batch, with rank-statistics
/// labels computed from the backbone feature values (no gradient flows
/// through the label computation). With `detach_backbone` the head sees the
/// feature values as constants, so this term's gradients stop at `g`;
/// otherwise they reach the backbone as well. A batch smaller than two
/// returns the no-pairs status.
pub fn cluster_head_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &[Vec<f64>],
    cfg: &RankStatConfig,
    detach_backbone: bool,
) -> Result<PairwiseBce> {
    if batch.len() < 2 {
        return Ok(PairwiseBce {
            value: tape.scalar(0.0),
            pair_count: 0,
        });
    }
    let feature_nodes: Vec<Var> = batch
        .iter()
        .map(|x| vars.features(tape, x))
        .collect::<Result<_>>()?;
    let feature_values: Vec<Vec<f64>> = feature_nodes
        .iter()
        .map(|&v| tape.value(v).to_vec())
        .collect();
    let pairs = rank_stat_pairs(&feature_values, cfg.k)?;

    let g_outputs: Vec<Var> = if detach_backbone {
        feature_values
            .iter()
            .map(|f| {
                let constant = tape.vector(f);
                vars.head(tape, constant, Head::G)
            })
            .collect::<Result<_>>()?
    } else {
        feature_nodes
            .iter()
            .map(|&f| vars.head(tape, f, Head::G))
            .collect::<Result<_>>()?
    };
    pairwise_bce(tape, &g_outputs, &pairs)
}

/// Lloyd k-means with seeded farthest-point initialization. Deterministic
/// for a fixed seed; empty clusters are re-seeded to the sample farthest
/// from its assigned centroid.
pub fn kmeans_assign(
    features: &[Vec<f64>],
    num_clusters: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if num_clusters == 0 {
        return Err(Error::Config("num_clusters must be positive".into()));
    }
    if features.len() < num_clusters {
        return Err(Error::Config(format!(
            "{} samples cannot form {num_clusters} clusters",
            features.len()
        )));
    }
    if iters == 0 {
        return Err(Error::Config("iters must be at least 1".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Dimension {
            op: "kmeans_assign",
            detail: "features have mixed lengths".into(),
        });
    }

    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // Farthest-point init: random first center, then maximin.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(num_clusters);
    centroids.push(features[rng.random_range(0..features.len())].clone());
    while centroids.len() < num_clusters {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, f) in features.iter().enumerate() {
            let nearest = centroids
                .iter()
                .map(|c| dist2(f, c))
                .fold(f64::INFINITY, f64::min);
            if nearest > best.1 {
                best = (i, nearest);
            }
        }
        centroids.push(features[best.0].clone());
    }

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        features
            .iter()
            .map(|f| {
                let mut best = (0usize, f64::INFINITY);
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = dist2(f, centroid);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect()
    };

    let mut assignment = assign(&centroids);
    for _ in 0..iters {
        // Means of each cluster.
        let mut sums = vec![vec![0.0; dim]; num_clusters];
        let mut counts = vec![0usize; num_clusters];
        for (f, &c) in features.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(f) {
                *s += v;
            }
        }
        for c in 0..num_clusters {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            } else {
                // Re-seed an empty cluster to the farthest point.
                let far = features
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = dist2(a, &centroids[assignment[0]]);
                        let db = dist2(b, &centroids[assignment[0]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = features[far].clone();
            }
        }
        let next = assign(&centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(assignment)
}
