//! Cross-view consistency: scoring how well detections from two augmented
//! views of the same frame agree once mapped back to original coordinates,
//! and recovering low-confidence objects that both views saw.
//!
//! Agreement is measured with generalized IoU so that near-misses still
//! produce a useful (possibly negative) signal instead of a flat zero.

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, giou_matrix, nms, AffineTransform, BoundingBox, Detection};
use ndarray::Array2;

/// Detections from one view of a frame. If the view was produced by an
/// affine augmentation, the inverse transform is required to compare its
/// boxes with any other view; supplying `augmented = true` without an
/// inverse is accepted at construction but fails loudly the moment the
/// boxes are needed in original coordinates.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    detections: Vec<Detection>,
    augmented: bool,
    inverse: Option<AffineTransform>,
}

impl AugmentedView {
    /// A view already in original coordinates.
    pub fn original(detections: Vec<Detection>) -> Self {
        AugmentedView {
            detections,
            augmented: false,
            inverse: None,
        }
    }

    /// A view produced by an affine augmentation; `inverse` maps its boxes
    /// back to original coordinates.
    pub fn augmented(detections: Vec<Detection>, inverse: Option<AffineTransform>) -> Self {
        AugmentedView {
            detections,
            augmented: true,
            inverse,
        }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Boxes mapped back to original coordinates (identity for
    /// non-augmented views). Errors if the view is augmented but carries
    /// no inverse transform.
    pub fn original_boxes(&self) -> Result<Vec<BoundingBox>> {
        if !self.augmented {
            return Ok(self.detections.iter().map(|d| d.bbox()).collect());
        }
        let inverse = self.inverse.ok_or(Error::MissingInverseTransform)?;
        self.detections
            .iter()
            .map(|d| apply_affine(&inverse, d.bbox()))
            .collect()
    }
}

/// Pairwise generalized IoU between two views in original coordinates:
/// entry `(i, j)` compares detection `i` of `a` with detection `j` of `b`.
pub fn agreement_matrix(a: &AugmentedView, b: &AugmentedView) -> Result<Array2<f64>> {
    Ok(giou_matrix(&a.original_boxes()?, &b.original_boxes()?))
}

/// Average disagreement of the first view's detections with their best
/// counterparts in the second view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementLoss {
    /// `mean_i (1 - max_j agreement[i, j])`; zero for perfectly matching
    /// views, and defined as zero when either view is empty.
    pub value: f64,
    /// Set when either view had no detections, so the zero value means
    /// "nothing to compare" rather than "perfect agreement".
    pub no_objects: bool,
}

/// Computes the agreement loss from a pairwise agreement matrix.
pub fn agreement_loss(matrix: &Array2<f64>) -> AgreementLoss {
    let (n, m) = matrix.dim();
    if n == 0 || m == 0 {
        return AgreementLoss {
            value: 0.0,
            no_objects: true,
        };
    }
    let total: f64 = (0..n)
        .map(|i| {
            let best = matrix.row(i).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            1.0 - best
        })
        .sum();
    AgreementLoss {
        value: total / n as f64,
        no_objects: false,
    }
}

/// A matched detection pair across views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementPair {
    pub index_a: usize,
    pub index_b: usize,
    pub agreement: f64,
}

/// Full cross-view agreement report.
#[derive(Debug, Clone)]
pub struct AgreementResult {
    pub matrix: Array2<f64>,
    pub loss: AgreementLoss,
    /// Row-wise best matches with agreement at or above the pair
    /// threshold; ties go to the lower column index.
    pub pairs: Vec<AgreementPair>,
}

/// Scores two views against each other: matrix, loss, and thresholded
/// best-match pairs.
pub fn agree(a: &AugmentedView, b: &AugmentedView, pair_threshold: f64) -> Result<AgreementResult> {
    if !pair_threshold.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "pair threshold {pair_threshold} must be finite"
        )));
    }
    let matrix = agreement_matrix(a, b)?;
    let loss = agreement_loss(&matrix);
    let mut pairs = Vec::new();
    let (n, m) = matrix.dim();
    for i in 0..n {
        let mut best = 0usize;
        for j in 1..m {
            if matrix[[i, j]] > matrix[[i, best]] {
                best = j;
            }
        }
        if m > 0 && matrix[[i, best]] >= pair_threshold {
            pairs.push(AgreementPair {
                index_a: i,
                index_b: best,
                agreement: matrix[[i, best]],
            });
        }
    }
    Ok(AgreementResult { matrix, loss, pairs })
}

/// Thresholds governing proposal recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    /// Minimum score a detection needs in *both* views to participate.
    pub low_score_threshold: f64,
    /// Minimum cross-view agreement (generalized IoU) for a pair to count.
    pub pair_threshold: f64,
    /// IoU threshold for the final suppression pass.
    pub nms_threshold: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            low_score_threshold: 0.3,
            pair_threshold: 0.4,
            nms_threshold: 0.5,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.low_score_threshold.is_finite()
            || !(0.0..=1.0).contains(&self.low_score_threshold)
        {
            return Err(Error::InvalidConfig(format!(
                "low score threshold {} must lie in [0, 1]",
                self.low_score_threshold
            )));
        }
        if !self.pair_threshold.is_finite() || !(-1.0..=1.0).contains(&self.pair_threshold) {
            return Err(Error::InvalidConfig(format!(
                "pair threshold {} must lie in [-1, 1]",
                self.pair_threshold
            )));
        }
        if !self.nms_threshold.is_finite() || !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::InvalidConfig(format!(
                "suppression threshold {} must lie in [0, 1]",
                self.nms_threshold
            )));
        }
        Ok(())
    }
}

/// Recovers objects that both views observed, even at low confidence.
///
/// Detections scoring at least `low_score_threshold` in each view are
/// cross-matched (row-wise best agreement, at or above `pair_threshold`);
/// each surviving pair emits the first view's box in original coordinates
/// with the pair's mean score, and the emissions are de-duplicated with
/// NMS. Either view having no qualifying detections yields an empty
/// result.
pub fn recover_proposals(
    a: &AugmentedView,
    b: &AugmentedView,
    config: &RecoveryConfig,
) -> Result<Vec<Detection>> {
    config.validate()?;
    let boxes_a = a.original_boxes()?;
    let boxes_b = b.original_boxes()?;

    let keep = |view: &AugmentedView, boxes: &[BoundingBox]| -> Vec<(BoundingBox, f64)> {
        view.detections()
            .iter()
            .zip(boxes)
            .filter(|(d, _)| d.score() >= config.low_score_threshold)
            .map(|(d, &b)| (b, d.score()))
            .collect()
    };
    let kept_a = keep(a, &boxes_a);
    let kept_b = keep(b, &boxes_b);
    if kept_a.is_empty() || kept_b.is_empty() {
        return Ok(Vec::new());
    }

    let only_a: Vec<BoundingBox> = kept_a.iter().map(|&(b, _)| b).collect();
    let only_b: Vec<BoundingBox> = kept_b.iter().map(|&(b, _)| b).collect();
    let matrix = giou_matrix(&only_a, &only_b);

    let mut candidates = Vec::new();
    for (i, &(box_a, score_a)) in kept_a.iter().enumerate() {
        let mut best = 0usize;
        for j in 1..kept_b.len() {
            if matrix[[i, j]] > matrix[[i, best]] {
                best = j;
            }
        }
        if matrix[[i, best]] >= config.pair_threshold {
            let score_b = kept_b[best].1;
            candidates.push(Detection::new(box_a, (score_a + score_b) / 2.0)?);
        }
    }
    Ok(nms(&candidates, config.nms_threshold))
}
