//! Training-signal losses: detection regression/classification and the
//! contrastive embedding losses used for appearance learning, with exact
//! analytic gradients.
//!
//! The contrastive losses are written in softplus form,
//! `log(1 + sum exp(s_neg - s_pos))`, which is algebraically equal to the
//! textbook cross-entropy-over-similarities formulation but stays finite
//! for any similarity values; all exponential sums here are evaluated with
//! max-shifting so large logits cannot overflow.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// A dense feature vector. Non-empty and finite by construction; norms may
/// be arbitrary (normalize explicitly where a direction is needed).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Builds an embedding, rejecting empty or non-finite vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite component".into()));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Inner product; the dimensions must match.
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "embedding dot product",
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Unit-norm copy; zero-norm vectors have no direction and are rejected.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::InvalidEmbedding(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

/// One proposal's contribution to the detection loss: a predicted box, the
/// ground-truth box it should regress to, and raw class logits with the
/// index of the true class.
#[derive(Debug, Clone)]
pub struct DetectionLossInput {
    pub predicted: BoundingBox,
    pub target: BoundingBox,
    pub class_logits: Vec<f64>,
    pub target_class: usize,
}

/// Weights for the two detection-loss terms.
#[derive(Debug, Clone, Copy)]
pub struct DetectionLossWeights {
    pub regression: f64,
    pub classification: f64,
}

impl Default for DetectionLossWeights {
    fn default() -> Self {
        DetectionLossWeights {
            regression: 1.0,
            classification: 1.0,
        }
    }
}

/// Smooth-L1 (Huber-style) penalty with transition point `beta = 1`.
fn smooth_l1(diff: f64) -> f64 {
    let a = diff.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

/// `log(sum(exp(z)))` with max-shifting; `z` must be non-empty.
fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean per-proposal detection loss:
/// `regression * smoothL1(pred - target)` summed over the four raw box
/// coordinates, plus `classification * crossEntropy(softmax(logits), class)`.
///
/// Errors on an empty batch, empty/non-finite logits, an out-of-range
/// target class, or negative/non-finite weights.
pub fn detection_loss(
    inputs: &[DetectionLossInput],
    weights: &DetectionLossWeights,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("detection loss batch"));
    }
    for w in [weights.regression, weights.classification] {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "detection loss weight {w} must be finite and non-negative"
            )));
        }
    }
    let mut total = 0.0;
    for input in inputs {
        if input.class_logits.is_empty() {
            return Err(Error::EmptyInput("class logits"));
        }
        if input.class_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class logits"));
        }
        if input.target_class >= input.class_logits.len() {
            return Err(Error::InvalidConfig(format!(
                "target class {} out of range for {} logits",
                input.target_class,
                input.class_logits.len()
            )));
        }
        let p = input.predicted;
        let t = input.target;
        let reg = smooth_l1(p.x() - t.x())
            + smooth_l1(p.y() - t.y())
            + smooth_l1(p.w() - t.w())
            + smooth_l1(p.h() - t.h());
        let ce = log_sum_exp(&input.class_logits) - input.class_logits[input.target_class];
        total += weights.regression * reg + weights.classification * ce;
    }
    Ok(total / inputs.len() as f64)
}

/// Shared softplus core: given pairwise exponents `z`, returns
/// `(log(1 + sum exp(z)), softmax-style weights exp(z)/(1 + sum exp(z)))`.
fn softplus_over_pairs(z: &[f64]) -> (f64, Vec<f64>) {
    // Shift by max(0, max z): the implicit `1 +` term contributes exp(0).
    let m = z.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let shifted: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let denom = (-m).exp() + shifted.iter().sum::<f64>();
    let loss = m + denom.ln();
    let weights = shifted.iter().map(|&e| e / denom).collect();
    (loss, weights)
}

fn check_dims(anchor: &Embedding, others: &[&Embedding], context: &'static str) -> Result<()> {
    for e in others {
        if e.dim() != anchor.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: anchor.dim(),
                actual: e.dim(),
            });
        }
    }
    Ok(())
}

/// Contrastive loss for one anchor, one positive, and any number of
/// negatives: `log(1 + sum_n exp(a.n - a.p))`. Zero when there are no
/// negatives; always non-negative.
pub fn similarity_loss(
    anchor: &Embedding,
    positive: &Embedding,
    negatives: &[Embedding],
) -> Result<f64> {
    let refs: Vec<&Embedding> = std::iter::once(positive).chain(negatives).collect();
    check_dims(anchor, &refs, "similarity loss")?;
    let s_p = anchor.dot(positive)?;
    let z: Vec<f64> = negatives
        .iter()
        .map(|n| anchor.dot(n).map(|s_n| s_n - s_p))
        .collect::<Result<_>>()?;
    Ok(softplus_over_pairs(&z).0)
}

/// Contrastive loss over every positive/negative pair:
/// `log(1 + sum_p sum_n exp(a.n - a.p))`. Zero when either side is empty;
/// collapses to [`similarity_loss`] for a single positive.
pub fn multiple_positive_loss(
    anchor: &Embedding,
    positives: &[Embedding],
    negatives: &[Embedding],
) -> Result<f64> {
    let refs: Vec<&Embedding> = positives.iter().chain(negatives).collect();
    check_dims(anchor, &refs, "multiple-positive loss")?;
    let z = pair_exponents(anchor, positives, negatives)?;
    Ok(softplus_over_pairs(&z).0)
}

/// Exponents `s_n - s_p` for all (positive, negative) pairs, positives
/// outermost (row-major).
fn pair_exponents(
    anchor: &Embedding,
    positives: &[Embedding],
    negatives: &[Embedding],
) -> Result<Vec<f64>> {
    let s_p: Vec<f64> = positives
        .iter()
        .map(|p| anchor.dot(p))
        .collect::<Result<_>>()?;
    let s_n: Vec<f64> = negatives
        .iter()
        .map(|n| anchor.dot(n))
        .collect::<Result<_>>()?;
    let mut z = Vec::with_capacity(s_p.len() * s_n.len());
    for &sp in &s_p {
        for &sn in &s_n {
            z.push(sn - sp);
        }
    }
    Ok(z)
}

/// Which contrastive loss a gradient request refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastiveKind {
    /// Single positive ([`similarity_loss`]).
    Similarity,
    /// Any number of positives ([`multiple_positive_loss`]).
    MultiplePositive,
}

/// Analytic gradients of a contrastive loss with respect to the anchor,
/// each positive, and each negative.
#[derive(Debug, Clone)]
pub struct ContrastiveGradients {
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Computes exact gradients of the selected contrastive loss.
///
/// With pair weights `w_pn = exp(s_n - s_p) / (1 + sum exp)`:
/// - `dL/da = sum_pn w_pn (n - p)`
/// - `dL/dp = -(sum_n w_pn) a`
/// - `dL/dn = (sum_p w_pn) a`
///
/// An empty negative (or, for the multiple-positive loss, positive) set
/// yields all-zero gradients. [`ContrastiveKind::Similarity`] requires
/// exactly one positive.
pub fn loss_gradient(
    kind: ContrastiveKind,
    anchor: &Embedding,
    positives: &[Embedding],
    negatives: &[Embedding],
) -> Result<ContrastiveGradients> {
    if kind == ContrastiveKind::Similarity && positives.len() != 1 {
        return Err(Error::DimensionMismatch {
            context: "similarity loss positives",
            expected: 1,
            actual: positives.len(),
        });
    }
    let refs: Vec<&Embedding> = positives.iter().chain(negatives).collect();
    check_dims(anchor, &refs, "contrastive gradient")?;

    let d = anchor.dim();
    let z = pair_exponents(anchor, positives, negatives)?;
    let (_, w) = softplus_over_pairs(&z);

    let mut grad_anchor = vec![0.0; d];
    let mut grad_pos = vec![vec![0.0; d]; positives.len()];
    let mut grad_neg = vec![vec![0.0; d]; negatives.len()];

    for (pi, p) in positives.iter().enumerate() {
        for (ni, n) in negatives.iter().enumerate() {
            let w_pn = w[pi * negatives.len() + ni];
            for (k, g) in grad_anchor.iter_mut().enumerate() {
                *g += w_pn * (n.values()[k] - p.values()[k]);
            }
            for k in 0..d {
                grad_pos[pi][k] -= w_pn * anchor.values()[k];
                grad_neg[ni][k] += w_pn * anchor.values()[k];
            }
        }
    }

    Ok(ContrastiveGradients {
        anchor: grad_anchor,
        positives: grad_pos,
        negatives: grad_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Embedding::new(v).unwrap()
    }

    #[test]
    fn embedding_validation() {
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![1.0, f64::NAN]).is_err());
        assert!(Embedding::new(vec![0.0]).is_ok());
        assert!(emb(&[0.0, 0.0]).normalized().is_err());
        let n = emb(&[3.0, 4.0]).normalized().unwrap();
        assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-12);
        assert!(emb(&[1.0]).dot(&emb(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn detection_loss_perfect_box_uniform_logits_is_ln_k() {
        // Exact box match contributes nothing; uniform logits over K classes
        // give cross-entropy ln K regardless of which class is correct.
        for k in [2usize, 3, 7] {
            let input = DetectionLossInput {
                predicted: bb(5.0, 5.0, 10.0, 20.0),
                target: bb(5.0, 5.0, 10.0, 20.0),
                class_logits: vec![0.7; k],
                target_class: k - 1,
            };
            let loss = detection_loss(&[input], &DetectionLossWeights::default()).unwrap();
            assert_abs_diff_eq!(loss, (k as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn detection_loss_unit_offset_adds_half_reg_weight() {
        // One coordinate off by exactly 1.0 sits at the smooth-L1 kink,
        // contributing 0.5; a confident correct logit removes the CE term.
        let input = DetectionLossInput {
            predicted: bb(6.0, 5.0, 10.0, 20.0),
            target: bb(5.0, 5.0, 10.0, 20.0),
            class_logits: vec![100.0, 0.0],
            target_class: 0,
        };
        let w = DetectionLossWeights {
            regression: 2.0,
            classification: 1.0,
        };
        let loss = detection_loss(&[input], &w).unwrap();
        assert_abs_diff_eq!(loss, 2.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn detection_loss_averages_over_batch() {
        let perfect = DetectionLossInput {
            predicted: bb(0.0, 0.0, 1.0, 1.0),
            target: bb(0.0, 0.0, 1.0, 1.0),
            class_logits: vec![50.0, 0.0],
            target_class: 0,
        };
        let off = DetectionLossInput {
            predicted: bb(3.0, 0.0, 1.0, 1.0), // |dx| = 3 -> 2.5
            target: bb(0.0, 0.0, 1.0, 1.0),
            class_logits: vec![50.0, 0.0],
            target_class: 0,
        };
        let loss =
            detection_loss(&[perfect, off], &DetectionLossWeights::default()).unwrap();
        assert_abs_diff_eq!(loss, 2.5 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn detection_loss_rejects_bad_inputs() {
        assert!(detection_loss(&[], &DetectionLossWeights::default()).is_err());
        let bad_class = DetectionLossInput {
            predicted: bb(0.0, 0.0, 1.0, 1.0),
            target: bb(0.0, 0.0, 1.0, 1.0),
            class_logits: vec![0.0, 0.0],
            target_class: 2,
        };
        assert!(detection_loss(&[bad_class], &DetectionLossWeights::default()).is_err());
        let neg_weight = DetectionLossWeights {
            regression: -1.0,
            classification: 1.0,
        };
        let ok = DetectionLossInput {
            predicted: bb(0.0, 0.0, 1.0, 1.0),
            target: bb(0.0, 0.0, 1.0, 1.0),
            class_logits: vec![0.0],
            target_class: 0,
        };
        assert!(detection_loss(&[ok], &neg_weight).is_err());
    }

    #[test]
    fn similarity_loss_equal_scores_is_ln_two() {
        // s_p = s_n = 1 => log(1 + e^0) = ln 2.
        let a = emb(&[1.0, 0.0]);
        let p = emb(&[1.0, 0.0]);
        let n = emb(&[1.0, 0.0]);
        let loss = similarity_loss(&a, &p, &[n]).unwrap();
        assert_abs_diff_eq!(loss, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn similarity_loss_unit_margin() {
        // s_p = 1, s_n = 0 => log(1 + e^{-1}).
        let a = emb(&[1.0, 0.0]);
        let p = emb(&[1.0, 0.0]);
        let n = emb(&[0.0, 1.0]);
        let loss = similarity_loss(&a, &p, &[n]).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn similarity_loss_no_negatives_is_zero() {
        let a = emb(&[1.0, 0.0]);
        let p = emb(&[0.5, 0.5]);
        assert_abs_diff_eq!(similarity_loss(&a, &p, &[]).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn similarity_loss_survives_huge_logits() {
        // The exponent reaches 2000; a naive exp() would overflow.
        let a = emb(&[1000.0, 0.0]);
        let p = emb(&[-1.0, 0.0]);
        let n = emb(&[1.0, 0.0]);
        let loss = similarity_loss(&a, &p, &[n]).unwrap();
        assert!(loss.is_finite());
        // log(1 + e^2000) ~ 2000.
        assert_abs_diff_eq!(loss, 2000.0, epsilon = 1e-9);
    }

    #[test]
    fn multiple_positive_two_pos_one_neg() {
        // s_p = {1, 1}, s_n = 0 => log(1 + 2 e^{-1}).
        let a = emb(&[1.0, 0.0, 0.0]);
        let p1 = emb(&[1.0, 0.0, 0.0]);
        let p2 = emb(&[1.0, 0.0, 0.0]);
        let n = emb(&[0.0, 1.0, 0.0]);
        let loss = multiple_positive_loss(&a, &[p1, p2], &[n]).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + 2.0 * (-1.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn multiple_positive_empty_sides_are_zero() {
        let a = emb(&[1.0, 0.0]);
        let e = emb(&[0.0, 1.0]);
        assert_eq!(
            multiple_positive_loss(&a, &[], std::slice::from_ref(&e)).unwrap(),
            0.0
        );
        assert_eq!(multiple_positive_loss(&a, &[e], &[]).unwrap(), 0.0);
    }

    #[test]
    fn multiple_positive_single_pos_matches_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_embedding(&mut rng, 6);
            let p = random_embedding(&mut rng, 6);
            let negs: Vec<Embedding> =
                (0..4).map(|_| random_embedding(&mut rng, 6)).collect();
            let s = similarity_loss(&a, &p, &negs).unwrap();
            let m = multiple_positive_loss(&a, std::slice::from_ref(&p), &negs).unwrap();
            assert_abs_diff_eq!(s, m, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_decreases_as_positive_aligns() {
        // Pulling the positive toward the anchor (raising s_p) must lower
        // the loss; pushing a negative toward it must raise the loss.
        let a = emb(&[1.0, 0.0]);
        let n = emb(&[0.3, 0.9]);
        let weak_p = emb(&[0.2, 0.9]);
        let strong_p = emb(&[0.9, 0.2]);
        let weak = similarity_loss(&a, &weak_p, std::slice::from_ref(&n)).unwrap();
        let strong = similarity_loss(&a, &strong_p, std::slice::from_ref(&n)).unwrap();
        assert!(strong < weak);

        let p = emb(&[0.9, 0.2]);
        let mild_n = emb(&[0.1, 0.9]);
        let harsh_n = emb(&[0.95, 0.1]);
        let mild = similarity_loss(&a, &p, &[mild_n]).unwrap();
        let harsh = similarity_loss(&a, &p, &[harsh_n]).unwrap();
        assert!(harsh > mild);
    }

    #[test]
    fn similarity_gradient_requires_single_positive() {
        let a = emb(&[1.0, 0.0]);
        let p = emb(&[0.0, 1.0]);
        let err = loss_gradient(
            ContrastiveKind::Similarity,
            &a,
            &[p.clone(), p.clone()],
            &[],
        );
        assert!(err.is_err());
        assert!(loss_gradient(ContrastiveKind::Similarity, &a, &[p], &[]).is_ok());
    }

    #[test]
    fn gradient_zero_without_negatives() {
        let a = emb(&[1.0, 2.0]);
        let p = emb(&[0.5, 0.5]);
        let g = loss_gradient(ContrastiveKind::Similarity, &a, &[p], &[]).unwrap();
        assert!(g.anchor.iter().all(|&v| v == 0.0));
        assert!(g.positives[0].iter().all(|&v| v == 0.0));
        assert!(g.negatives.is_empty());
    }

    /// Central finite differences of the loss with respect to every
    /// coordinate of every input embedding.
    fn numeric_gradients(
        kind: ContrastiveKind,
        anchor: &Embedding,
        positives: &[Embedding],
        negatives: &[Embedding],
        h: f64,
    ) -> ContrastiveGradients {
        let eval = |a: &Embedding, ps: &[Embedding], ns: &[Embedding]| -> f64 {
            match kind {
                ContrastiveKind::Similarity => similarity_loss(a, &ps[0], ns).unwrap(),
                ContrastiveKind::MultiplePositive => {
                    multiple_positive_loss(a, ps, ns).unwrap()
                }
            }
        };
        let perturb = |e: &Embedding, k: usize, delta: f64| -> Embedding {
            let mut v = e.values().to_vec();
            v[k] += delta;
            Embedding::new(v).unwrap()
        };
        let d = anchor.dim();
        let mut out = ContrastiveGradients {
            anchor: vec![0.0; d],
            positives: vec![vec![0.0; d]; positives.len()],
            negatives: vec![vec![0.0; d]; negatives.len()],
        };
        for k in 0..d {
            let up = eval(&perturb(anchor, k, h), positives, negatives);
            let dn = eval(&perturb(anchor, k, -h), positives, negatives);
            out.anchor[k] = (up - dn) / (2.0 * h);
        }
        for (pi, p) in positives.iter().enumerate() {
            for k in 0..d {
                let mut ps = positives.to_vec();
                ps[pi] = perturb(p, k, h);
                let up = eval(anchor, &ps, negatives);
                ps[pi] = perturb(p, k, -h);
                let dn = eval(anchor, &ps, negatives);
                out.positives[pi][k] = (up - dn) / (2.0 * h);
            }
        }
        for (ni, n) in negatives.iter().enumerate() {
            for k in 0..d {
                let mut ns = negatives.to_vec();
                ns[ni] = perturb(n, k, h);
                let up = eval(anchor, positives, &ns);
                ns[ni] = perturb(n, k, -h);
                let dn = eval(anchor, positives, &ns);
                out.negatives[ni][k] = (up - dn) / (2.0 * h);
            }
        }
        out
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for trial in 0..10 {
            let kind = if trial % 2 == 0 {
                ContrastiveKind::Similarity
            } else {
                ContrastiveKind::MultiplePositive
            };
            let n_pos = if kind == ContrastiveKind::Similarity {
                1
            } else {
                1 + trial % 3
            };
            let anchor = random_embedding(&mut rng, 8);
            let positives: Vec<Embedding> =
                (0..n_pos).map(|_| random_embedding(&mut rng, 8)).collect();
            let negatives: Vec<Embedding> =
                (0..3).map(|_| random_embedding(&mut rng, 8)).collect();

            let analytic = loss_gradient(kind, &anchor, &positives, &negatives).unwrap();
            let numeric = numeric_gradients(kind, &anchor, &positives, &negatives, h);

            assert!(max_rel_err(&analytic.anchor, &numeric.anchor) < 1e-4);
            for (a, n) in analytic.positives.iter().zip(&numeric.positives) {
                assert!(max_rel_err(a, n) < 1e-4);
            }
            for (a, n) in analytic.negatives.iter().zip(&numeric.negatives) {
                assert!(max_rel_err(a, n) < 1e-4);
            }
        }
    }
}
