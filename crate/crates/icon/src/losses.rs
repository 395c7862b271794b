//! Loss terms: cross-entropy, the pairwise similarity BCE used for
//! consistency in both domains, the variance penalty over the two domain
//! losses, and the self-training variants.

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{argmax, Head, ModelState};

/// An unordered sample pair with its binary same-class/same-cluster label.
/// Always stored with `i < j` so each pair is counted once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

impl PairLabel {
    pub fn new(a: usize, b: usize, same: bool) -> Result<PairLabel> {
        if a == b {
            return Err(Error::Config(format!("pair ({a}, {b}) must be distinct")));
        }
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        Ok(PairLabel { i, j, same })
    }
}

/// All unordered pairs `(i, j)` with `same = (labels[i] == labels[j])`.
pub fn pairs_from_class_labels(labels: &[usize]) -> Vec<PairLabel> {
    let mut pairs = Vec::with_capacity(labels.len() * labels.len().saturating_sub(1) / 2);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            pairs.push(PairLabel {
                i,
                j,
                same: labels[i] == labels[j],
            });
        }
    }
    pairs
}

/// Pairs over the samples whose max cluster probability reaches
/// `conf_threshold`; `same` compares argmax cluster indices. May be empty.
pub fn pairs_from_clusters(g_outputs: &[Vec<f64>], conf_threshold: f64) -> Vec<PairLabel> {
    let confident: Vec<usize> = (0..g_outputs.len())
        .filter(|&i| {
            g_outputs[i]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                >= conf_threshold
        })
        .collect();
    let cluster_of: Vec<usize> = g_outputs.iter().map(|p| argmax(p)).collect();
    let mut pairs = Vec::new();
    for (a, &i) in confident.iter().enumerate() {
        for &j in &confident[a + 1..] {
            pairs.push(PairLabel {
                i,
                j,
                same: cluster_of[i] == cluster_of[j],
            });
        }
    }
    pairs
}

/// `-log p[y]` with the probability clamped away from 0 and 1.
pub fn cross_entropy(tape: &mut Tape, p: Var, y: usize) -> Result<Var> {
    let classes = match tape.shape(p) {
        Shape::Vector(n) => n,
        s => {
            return Err(Error::Dimension {
                op: "cross_entropy",
                detail: format!("prediction is {s}, not a vector"),
            })
        }
    };
    if y >= classes {
        return Err(Error::LabelOutOfRange { index: y, classes });
    }
    let py = tape.select(p, y)?;
    let log = tape.log_clamped(py)?;
    Ok(tape.neg(log))
}

/// A pairwise loss term together with the number of pairs it averaged over.
/// `pair_count == 0` is the no-pairs status: the value is a constant zero and
/// the caller should skip the term.
#[derive(Debug, Clone, Copy)]
pub struct PairwiseBce {
    pub value: Var,
    pub pair_count: usize,
}

impl PairwiseBce {
    pub fn no_pairs(&self) -> bool {
        self.pair_count == 0
    }
}

/// Mean over pairs of `-[b log(y) + (1-b) log(1-y)]` where `y` is the dot
/// product of the two prediction vectors, clamped inside each log.
pub fn pairwise_bce(tape: &mut Tape, preds: &[Var], pairs: &[PairLabel]) -> Result<PairwiseBce> {
    if preds.is_empty() {
        return Err(Error::Evaluation("pairwise_bce: empty predictions".into()));
    }
    if pairs.is_empty() {
        return Ok(PairwiseBce {
            value: tape.scalar(0.0),
            pair_count: 0,
        });
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.j >= preds.len() || pair.i >= pair.j {
            return Err(Error::Config(format!(
                "pair ({}, {}) invalid for {} predictions",
                pair.i,
                pair.j,
                preds.len()
            )));
        }
        let similarity = tape.dot(preds[pair.i], preds[pair.j])?;
        let log = if pair.same {
            tape.log_clamped(similarity)?
        } else {
            let opposite = tape.one_minus(similarity)?;
            tape.log_clamped(opposite)?
        };
        terms.push(tape.neg(log));
    }
    let value = tape.mean(&terms)?;
    Ok(PairwiseBce {
        value,
        pair_count: pairs.len(),
    })
}

/// Variance of the two-element loss set `{loss_s, loss_t}` under the
/// population convention: `(loss_s - loss_t)^2 / 4`.
pub fn rex_penalty(tape: &mut Tape, loss_s: Var, loss_t: Var) -> Result<Var> {
    tape.scalar_value(loss_s)?;
    tape.scalar_value(loss_t)?;
    let diff = tape.sub(loss_s, loss_t)?;
    let sq = tape.square(diff);
    Ok(tape.scale(sq, 0.25))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!(
            "confidence threshold must be in (0, 1), got {tau}"
        )));
    }
    Ok(())
}

/// Self-training on a weak/strong augmentation pair: when the detached weak
/// view is confident (`max > tau`), cross-entropy of the strong view against
/// the weak argmax; otherwise a constant zero with no gradient.
pub fn fixmatch_loss(tape: &mut Tape, p_weak: &[f64], p_strong: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let confidence = p_weak.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if confidence > tau {
        cross_entropy(tape, p_strong, argmax(p_weak))
    } else {
        Ok(tape.scalar(0.0))
    }
}

/// Single-view self-training: `ramp * CE(p, argmax p)` when confident, with
/// the pseudo-label taken from the detached values of `p`.
pub fn pseudolabel_loss(tape: &mut Tape, p: Var, tau: f64, ramp: f64) -> Result<Var> {
    check_tau(tau)?;
    if !(0.0..=1.0).contains(&ramp) {
        return Err(Error::Config(format!("ramp must be in [0, 1], got {ramp}")));
    }
    let values = tape.value(p).to_vec();
    let confidence = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ramp == 0.0 || confidence <= tau {
        return Ok(tape.scalar(0.0));
    }
    let ce = cross_entropy(tape, p, argmax(&values))?;
    Ok(tape.scale(ce, ramp))
}

/// Epoch-start pseudo-labels: argmax of `f` over every target input, with no
/// confidence filtering. The caller holds them fixed for the whole epoch.
pub fn noisy_student_targets(model: &ModelState, target_inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
    target_inputs
        .iter()
        .map(|x| model.predict_class(x, Head::F))
        .collect()
}

/// Similarity for scalar regression outputs: `-(y1 - y2)^2`.
pub fn regression_similarity(tape: &mut Tape, y1: Var, y2: Var) -> Result<Var> {
    tape.scalar_value(y1)?;
    tape.scalar_value(y2)?;
    let diff = tape.sub(y1, y2)?;
    let sq = tape.square(diff);
    Ok(tape.neg(sq))
}

/// Per-step decomposition of the training objective into named scalar terms.
/// A `None` term was disabled or skipped for that step and contributes
/// nothing to `total`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LossReport {
    pub ce_s: f64,
    pub bce_s: Option<f64>,
    pub bce_t: Option<f64>,
    pub st: Option<f64>,
    pub rex: Option<f64>,
    pub cluster: Option<f64>,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_cluster: f64,
}

impl LossReport {
    /// Recomputes the configured weighted sum of the present terms, in the
    /// same order the trainer composes them.
    pub fn weighted_sum(&self) -> f64 {
        let mut total = self.ce_s;
        if let Some(v) = self.bce_s {
            total += v;
        }
        if let Some(v) = self.bce_t {
            total += v;
        }
        if let Some(v) = self.st {
            total += self.alpha * v;
        }
        if let Some(v) = self.rex {
            total += self.beta * v;
        }
        if let Some(v) = self.cluster {
            total += self.lambda_cluster * v;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::PROB_EPS;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(tape: &Tape, v: Var) -> f64 {
        tape.scalar_value(v).unwrap()
    }

    #[test]
    fn cross_entropy_known_values() {
        let mut tape = Tape::new();
        let p = tape.vector(&[0.5, 0.5]);
        let l = cross_entropy(&mut tape, p, 0).unwrap();
        assert!((scalar_of(&tape, l) - 0.6931471805599453).abs() < 1e-12);

        let p = tape.vector(&[1.0, 0.0]);
        let l = cross_entropy(&mut tape, p, 0).unwrap();
        assert!(scalar_of(&tape, l) <= 1e-6);

        let p = tape.vector(&[0.25, 0.75]);
        let l = cross_entropy(&mut tape, p, 1).unwrap();
        assert!((scalar_of(&tape, l) - 0.2876820724517809).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let p = tape.vector(&[0.5, 0.5]);
        let err = cross_entropy(&mut tape, p, 2).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange {
                index: 2,
                classes: 2
            }
        ));
    }

    #[test]
    fn pairs_from_class_labels_enumeration() {
        assert_eq!(
            pairs_from_class_labels(&[0, 0]),
            vec![PairLabel {
                i: 0,
                j: 1,
                same: true
            }]
        );
        assert_eq!(
            pairs_from_class_labels(&[0, 1]),
            vec![PairLabel {
                i: 0,
                j: 1,
                same: false
            }]
        );
        assert_eq!(
            pairs_from_class_labels(&[0, 0, 1]),
            vec![
                PairLabel {
                    i: 0,
                    j: 1,
                    same: true
                },
                PairLabel {
                    i: 0,
                    j: 2,
                    same: false
                },
                PairLabel {
                    i: 1,
                    j: 2,
                    same: false
                },
            ]
        );
    }

    #[test]
    fn pairs_from_clusters_filters_by_confidence() {
        let outputs = vec![vec![0.95, 0.05], vec![0.96, 0.04]];
        let pairs = pairs_from_clusters(&outputs, 0.9);
        assert_eq!(
            pairs,
            vec![PairLabel {
                i: 0,
                j: 1,
                same: true
            }]
        );

        let outputs = vec![vec![0.6, 0.4], vec![0.95, 0.05]];
        assert!(pairs_from_clusters(&outputs, 0.9).is_empty());
    }

    #[test]
    fn pairs_from_clusters_at_zero_threshold_reduces_to_argmax_labels() {
        let outputs = vec![
            vec![0.7, 0.3],
            vec![0.2, 0.8],
            vec![0.55, 0.45],
            vec![0.1, 0.9],
        ];
        let argmax_labels: Vec<usize> = outputs.iter().map(|p| argmax(p)).collect();
        assert_eq!(
            pairs_from_clusters(&outputs, 0.0),
            pairs_from_class_labels(&argmax_labels)
        );
    }

    #[test]
    fn pairwise_bce_matched_one_hot_pair_is_near_zero() {
        let mut tape = Tape::new();
        let preds = vec![tape.vector(&[1.0, 0.0]), tape.vector(&[1.0, 0.0])];
        let pairs = vec![PairLabel {
            i: 0,
            j: 1,
            same: true,
        }];
        let out = pairwise_bce(&mut tape, &preds, &pairs).unwrap();
        assert!(scalar_of(&tape, out.value) <= 1e-6);
        assert_eq!(out.pair_count, 1);
    }

    #[test]
    fn pairwise_bce_uniform_mismatched_pair() {
        let mut tape = Tape::new();
        let preds = vec![tape.vector(&[0.5, 0.5]), tape.vector(&[0.5, 0.5])];
        let pairs = vec![PairLabel {
            i: 0,
            j: 1,
            same: false,
        }];
        let out = pairwise_bce(&mut tape, &preds, &pairs).unwrap();
        assert!((scalar_of(&tape, out.value) - 0.6931471805599453).abs() < 1e-12);
    }

    #[test]
    fn pairwise_bce_empty_pairs_is_flagged_zero() {
        let mut tape = Tape::new();
        let preds = vec![tape.vector(&[0.5, 0.5])];
        let out = pairwise_bce(&mut tape, &preds, &[]).unwrap();
        assert!(out.no_pairs());
        assert_eq!(scalar_of(&tape, out.value), 0.0);
    }

    /// Brute-force mean of the per-pair BCE, written independently of the
    /// tape machinery.
    fn bce_oracle(preds: &[Vec<f64>], labels: &[usize]) -> f64 {
        let clamp = |v: f64| v.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..preds.len() {
            for j in i + 1..preds.len() {
                let sim: f64 = preds[i].iter().zip(&preds[j]).map(|(a, b)| a * b).sum();
                total -= if labels[i] == labels[j] {
                    clamp(sim).ln()
                } else {
                    clamp(1.0 - sim).ln()
                };
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn pairwise_bce_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for _ in 0..50 {
            let n = rng.random_range(2..=64);
            let classes = rng.random_range(2..=4);
            let preds_values: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let logits: Vec<f64> =
                        (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
                    crate::model::softmax_values(&logits)
                })
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let pairs = pairs_from_class_labels(&labels);

            let mut tape = Tape::new();
            let preds: Vec<Var> = preds_values.iter().map(|p| tape.vector(p)).collect();
            let out = pairwise_bce(&mut tape, &preds, &pairs).unwrap();
            let got = scalar_of(&tape, out.value);
            let want = bce_oracle(&preds_values, &labels);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn pairwise_bce_is_symmetric_in_pair_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let preds_values: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                crate::model::softmax_values(&logits)
            })
            .collect();
        let labels = [0, 1, 2, 0, 1, 2];
        let pairs = pairs_from_class_labels(&labels);
        let mut reversed = pairs.clone();
        reversed.reverse();

        let eval = |pairs: &[PairLabel]| {
            let mut tape = Tape::new();
            let preds: Vec<Var> = preds_values.iter().map(|p| tape.vector(p)).collect();
            let out = pairwise_bce(&mut tape, &preds, pairs).unwrap();
            scalar_of(&tape, out.value)
        };
        assert!((eval(&pairs) - eval(&reversed)).abs() < 1e-12);
    }

    #[test]
    fn rex_penalty_known_values() {
        let mut tape = Tape::new();
        let a = tape.scalar(1.0);
        let b = tape.scalar(0.0);
        let r = rex_penalty(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, r), 0.25);

        let a = tape.scalar(0.7);
        let b = tape.scalar(0.7);
        let r = rex_penalty(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, r), 0.0);

        let a = tape.scalar(0.2);
        let b = tape.scalar(0.6);
        let r = rex_penalty(&mut tape, a, b).unwrap();
        assert!((scalar_of(&tape, r) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn rex_penalty_is_symmetric_nonnegative_and_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = rng.random_range(0.0..2.0);
            let b = rng.random_range(0.0..2.0);
            let c = rng.random_range(0.1..3.0);
            let eval = |x: f64, y: f64| {
                let mut tape = Tape::new();
                let xv = tape.scalar(x);
                let yv = tape.scalar(y);
                let r = rex_penalty(&mut tape, xv, yv).unwrap();
                scalar_of(&tape, r)
            };
            let fwd = eval(a, b);
            assert!(fwd >= 0.0);
            assert!((fwd - eval(b, a)).abs() < 1e-15);
            // scaling both losses by c scales the variance by c^2
            assert!((eval(c * a, c * b) - c * c * fwd).abs() < 1e-10);
            if a != b {
                assert!(fwd > 0.0);
            }
        }
    }

    #[test]
    fn fixmatch_loss_thresholding() {
        let mut tape = Tape::new();
        let strong = tape.vector(&[0.9, 0.1]);
        let l = fixmatch_loss(&mut tape, &[0.98, 0.02], strong, 0.97).unwrap();
        assert!((scalar_of(&tape, l) - 0.10536051565782628).abs() < 1e-12);

        let strong = tape.vector(&[0.9, 0.1]);
        let l = fixmatch_loss(&mut tape, &[0.9, 0.1], strong, 0.97).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);
    }

    #[test]
    fn fixmatch_gradient_is_zero_when_filtered() {
        let mut tape = Tape::new();
        let logits = tape.vector(&[0.4, -0.4]);
        let strong = tape.softmax(logits).unwrap();
        let l = fixmatch_loss(&mut tape, &[0.6, 0.4], strong, 0.97).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(logits), &[0.0, 0.0]);
    }

    #[test]
    fn pseudolabel_loss_examples() {
        let mut tape = Tape::new();
        let p = tape.vector(&[0.99, 0.01]);
        let l = pseudolabel_loss(&mut tape, p, 0.9, 0.0).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);

        let p = tape.vector(&[0.99, 0.01]);
        let l = pseudolabel_loss(&mut tape, p, 0.9, 1.0).unwrap();
        assert!((scalar_of(&tape, l) - 0.01005033585350145).abs() < 1e-12);

        let p = tape.vector(&[0.99, 0.01]);
        let l = pseudolabel_loss(&mut tape, p, 0.9, 0.5).unwrap();
        assert!((scalar_of(&tape, l) - 0.5 * 0.01005033585350145).abs() < 1e-12);
    }

    #[test]
    fn noisy_student_targets_tie_break_and_fit() {
        use crate::model::{init_model, AffineParams, BackboneSpec};
        // uniform model: zeroed f head predicts class 0 everywhere
        let mut m = init_model(&BackboneSpec::identity(2), 2, 1.0, 0).unwrap();
        m.head_f = AffineParams::zeroed(2, 2);
        let inputs = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        assert_eq!(noisy_student_targets(&m, &inputs).unwrap(), vec![0, 0]);

        // a perfectly fitted linear head recovers the ground truth
        m.head_f = AffineParams {
            rows: 2,
            cols: 2,
            weight: vec![5.0, 0.0, -5.0, 0.0],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(noisy_student_targets(&m, &inputs).unwrap(), vec![0, 1]);
    }

    #[test]
    fn regression_similarity_examples() {
        let mut tape = Tape::new();
        let a = tape.scalar(0.7);
        let b = tape.scalar(0.7);
        let s = regression_similarity(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, s), 0.0);

        let a = tape.scalar(1.0);
        let b = tape.scalar(3.0);
        let s = regression_similarity(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, s), -4.0);
        let s2 = regression_similarity(&mut tape, b, a).unwrap();
        assert_eq!(scalar_of(&tape, s2), -4.0);
    }

    #[test]
    fn loss_report_weighted_sum_matches_total() {
        let report = LossReport {
            ce_s: 0.5,
            bce_s: None,
            bce_t: Some(0.3),
            st: Some(0.2),
            rex: Some(0.01),
            cluster: Some(0.4),
            total: 0.5 + 0.3 + 0.75 * 0.2 + 0.15 * 0.01 + 1.0 * 0.4,
            alpha: 0.75,
            beta: 0.15,
            lambda_cluster: 1.0,
        };
        assert!((report.total - report.weighted_sum()).abs() < 1e-10);
    }
}
