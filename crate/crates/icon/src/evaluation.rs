//! Accuracy metrics, confusion matrices, and the pair probe that measures
//! how often the classifier head contradicts target structure the cluster
//! head has found. This is the only module whose interfaces accept target
//! labels.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Head, ModelState};
use crate::rng::{substream, Stream};

/// Fraction of argmax-`f` predictions equal to the labels.
pub fn accuracy(model: &ModelState, samples: &[(Vec<f64>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Evaluation("accuracy: empty sample set".into()));
    }
    let mut correct = 0usize;
    for (x, y) in samples {
        if model.predict_class(x, Head::F)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Unweighted mean of per-class recalls; every class must be present.
pub fn mean_class_accuracy(model: &ModelState, samples: &[(Vec<f64>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Evaluation(
            "mean_class_accuracy: empty sample set".into(),
        ));
    }
    let classes = model.num_classes;
    let mut counts = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (x, y) in samples {
        if *y >= classes {
            return Err(Error::LabelOutOfRange {
                index: *y,
                classes,
            });
        }
        counts[*y] += 1;
        if model.predict_class(x, Head::F)? == *y {
            correct[*y] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..classes {
        if counts[c] == 0 {
            return Err(Error::Evaluation(format!(
                "mean_class_accuracy: class {c} has no samples"
            )));
        }
        total += correct[c] as f64 / counts[c] as f64;
    }
    Ok(total / classes as f64)
}

/// Counts with rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        self.counts.iter().enumerate().map(|(i, row)| row[i]).sum()
    }

    /// CSV grid with a class-index header row and column.
    pub fn to_csv(&self) -> String {
        let classes = self.counts.len();
        let mut out = String::new();
        for c in 0..classes {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (truth, row) in self.counts.iter().enumerate() {
            out.push_str(&truth.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(model: &ModelState, samples: &[(Vec<f64>, usize)]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Evaluation("confusion: empty sample set".into()));
    }
    let classes = model.num_classes;
    let mut counts = vec![vec![0usize; classes]; classes];
    for (x, y) in samples {
        if *y >= classes {
            return Err(Error::LabelOutOfRange {
                index: *y,
                classes,
            });
        }
        counts[*y][model.predict_class(x, Head::F)?] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Probe outcome. `percentage` is `100 x |f fails and g succeeds| / |f fails|`
/// over the examined pairs; when `f` never fails the percentage is 0 and
/// [`ProbeResult::no_failures`] is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub percentage: f64,
    pub f_failures: usize,
    pub pairs_examined: usize,
}

impl ProbeResult {
    pub fn no_failures(&self) -> bool {
        self.f_failures == 0
    }
}

/// Sample size at or below which the probe enumerates every pair instead of
/// sampling.
const EXHAUSTIVE_LIMIT: usize = 200;

/// On each examined target pair, `f` succeeds iff the equality of its argmax
/// predictions matches the equality of the labels; likewise for `g` (over its
/// own cluster space, with no cluster-to-class alignment). Returns the
/// percentage of `f`-failure pairs on which `g` succeeds.
///
/// Pairs are sampled without replacement from the seeded probe stream; with
/// at most 200 samples (or when `n_pairs` covers all pairs) enumeration is
/// exhaustive and the seed is irrelevant.
pub fn probe_g_vs_f(
    model: &ModelState,
    target_samples: &[(Vec<f64>, usize)],
    n_pairs: usize,
    seed: u64,
) -> Result<ProbeResult> {
    let n = target_samples.len();
    if n < 2 {
        return Err(Error::Evaluation(format!(
            "probe needs at least 2 target samples, got {n}"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::Evaluation("probe needs n_pairs >= 1".into()));
    }

    let f_preds: Vec<usize> = target_samples
        .iter()
        .map(|(x, _)| model.predict_class(x, Head::F))
        .collect::<Result<_>>()?;
    let g_preds: Vec<usize> = target_samples
        .iter()
        .map(|(x, _)| model.predict_class(x, Head::G))
        .collect::<Result<_>>()?;

    let total_pairs = n * (n - 1) / 2;
    let mut f_failures = 0usize;
    let mut g_rescues = 0usize;
    let mut pairs_examined = 0usize;
    let mut examine = |i: usize, j: usize| {
        pairs_examined += 1;
        let same_label = target_samples[i].1 == target_samples[j].1;
        let f_ok = (f_preds[i] == f_preds[j]) == same_label;
        if !f_ok {
            f_failures += 1;
            if (g_preds[i] == g_preds[j]) == same_label {
                g_rescues += 1;
            }
        }
    };

    if n <= EXHAUSTIVE_LIMIT || n_pairs >= total_pairs {
        for i in 0..n {
            for j in i + 1..n {
                examine(i, j);
            }
        }
    } else {
        let mut rng = substream(seed, Stream::Probe);
        let mut seen = HashSet::with_capacity(n_pairs);
        while seen.len() < n_pairs {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if seen.insert(pair) {
                examine(pair.0, pair.1);
            }
        }
    }

    let percentage = if f_failures == 0 {
        0.0
    } else {
        100.0 * g_rescues as f64 / f_failures as f64
    };
    Ok(ProbeResult {
        percentage,
        f_failures,
        pairs_examined,
    })
}
