//! Axis-aligned box geometry: overlap measures, non-maximum suppression,
//! and invertible affine view transforms.
//!
//! Boxes are stored as top-left corner plus size in pixel-like continuous
//! coordinates. Degenerate boxes (zero or negative extent, non-finite
//! fields) are rejected at construction rather than silently clamped, so
//! all downstream overlap math can assume positive areas.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Linear-part determinants below this magnitude are treated as singular.
const MIN_DETERMINANT: f64 = 1e-12;

/// An axis-aligned bounding box: top-left corner `(x, y)`, width `w`,
/// height `h`, all finite with `w > 0` and `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite fields and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite fields ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size {w}x{h}"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Right edge, `x + w`.
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    /// Bottom edge, `y + h`.
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Area, always positive.
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Center point.
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// The four corners in (x, y) order: TL, TR, BR, BL.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x, self.y),
            (self.right(), self.y),
            (self.right(), self.bottom()),
            (self.x, self.bottom()),
        ]
    }
}

/// A detection: a box plus a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    bbox: BoundingBox,
    score: f64,
}

impl Detection {
    /// Builds a detection, rejecting scores outside `[0, 1]` or non-finite.
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Detection { bbox, score })
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Intersection area of two boxes; zero when they do not overlap.
fn intersection_area(a: BoundingBox, b: BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x().max(b.x())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y().max(b.y())).max(0.0);
    iw * ih
}

/// Area recomputed from the box corners. Overlap math uses this instead
/// of [`BoundingBox::area`] so coincident boxes yield *bit-identical*
/// intersection and union: `x + w` rounds, and mixing the rounded corner
/// with the exact `w * h` area would leave `iou(a, a)` one ulp shy of 1.
fn corner_area(b: BoundingBox) -> f64 {
    (b.right() - b.x()) * (b.bottom() - b.y())
}

/// Intersection over union. Always in `[0, 1]`; exactly `1` iff the boxes
/// coincide.
pub fn iou(a: BoundingBox, b: BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = corner_area(a) + corner_area(b) - inter;
    inter / union
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box
/// not covered by the union. Ranges over `(-1, 1]`; equals IoU when the
/// enclosing box is exactly the union, and goes negative for disjoint
/// boxes (approaching `-1` as they separate).
pub fn giou(a: BoundingBox, b: BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = corner_area(a) + corner_area(b) - inter;
    let ew = a.right().max(b.right()) - a.x().min(b.x());
    let eh = a.bottom().max(b.bottom()) - a.y().min(b.y());
    let enclosing = ew * eh;
    inter / union - (enclosing - union) / enclosing
}

/// Pairwise generalized IoU: entry `(i, j)` is `giou(a[i], b[j])`.
/// Either side may be empty, yielding a matrix with a zero dimension.
pub fn giou_matrix(a: &[BoundingBox], b: &[BoundingBox]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| giou(a[i], b[j]))
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in descending score order (ties keep input
/// order); a detection is kept unless it overlaps an already-kept one with
/// IoU strictly above `iou_threshold`. The result is sorted by descending
/// score, and no two kept boxes have IoU above the threshold.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    // Stable sort: equal scores stay in input order.
    order.sort_by(|&i, &j| detections[j].score.total_cmp(&detections[i].score));

    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let candidate = detections[i];
        let suppressed = kept
            .iter()
            .any(|k| iou(k.bbox, candidate.bbox) > iou_threshold);
        if !suppressed {
            kept.push(candidate);
        }
    }
    kept
}

/// An invertible 2-D affine transform mapping `(x, y)` to
/// `(a·x + b·y + tx, c·x + d·y + ty)`.
///
/// The linear part must have a determinant of meaningful magnitude; this
/// is enforced at construction so a stored transform is always invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    tx: f64,
    ty: f64,
}

impl AffineTransform {
    /// Builds a transform from the six coefficients, rejecting non-finite
    /// entries and (near-)singular linear parts.
    pub fn new(a: f64, b: f64, c: f64, d: f64, tx: f64, ty: f64) -> Result<Self> {
        for v in [a, b, c, d, tx, ty] {
            if !v.is_finite() {
                return Err(Error::DegenerateTransform(format!(
                    "non-finite coefficient {v}"
                )));
            }
        }
        let det = a * d - b * c;
        if !det.is_finite() || det.abs() <= MIN_DETERMINANT {
            return Err(Error::DegenerateTransform(format!(
                "singular linear part (determinant {det})"
            )));
        }
        Ok(AffineTransform { a, b, c, d, tx, ty })
    }

    /// The identity transform.
    pub fn identity() -> Self {
        AffineTransform {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Pure translation by `(tx, ty)`.
    pub fn translation(tx: f64, ty: f64) -> Result<Self> {
        AffineTransform::new(1.0, 0.0, 0.0, 1.0, tx, ty)
    }

    /// Axis-aligned scaling by `(sx, sy)` about the origin.
    pub fn scaling(sx: f64, sy: f64) -> Result<Self> {
        AffineTransform::new(sx, 0.0, 0.0, sy, 0.0, 0.0)
    }

    /// Rotation by `theta` radians about the origin.
    pub fn rotation(theta: f64) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        AffineTransform::new(c, -s, s, c, 0.0, 0.0)
    }

    /// Row-major coefficients `[[a, b, tx], [c, d, ty]]`.
    pub fn coefficients(&self) -> [[f64; 3]; 2] {
        [[self.a, self.b, self.tx], [self.c, self.d, self.ty]]
    }

    /// Determinant of the linear part.
    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Whether the linear part is diagonal (pure scale + translation).
    /// Such transforms map axis-aligned boxes to axis-aligned boxes
    /// exactly, so box round-trips through them are lossless.
    pub fn is_axis_preserving(&self) -> bool {
        self.b == 0.0 && self.c == 0.0
    }

    /// Applies the transform to a point.
    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    /// The inverse transform. Construction guarantees a usable determinant,
    /// but extreme coefficient magnitudes can still push the inverse out of
    /// finite range, which is reported as a degenerate transform.
    pub fn invert(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        let ia = self.d / det;
        let ib = -self.b / det;
        let ic = -self.c / det;
        let id = self.a / det;
        let itx = -(ia * self.tx + ib * self.ty);
        let ity = -(ic * self.tx + id * self.ty);
        AffineTransform::new(ia, ib, ic, id, itx, ity)
    }
}

/// Transforms a box by mapping its four corners and re-enclosing them in
/// an axis-aligned box.
///
/// For axis-preserving transforms (diagonal linear part) this is exact and
/// invertible; for rotations/shears the result is the tightest axis-aligned
/// cover of the transformed corners, which grows the box. A transform whose
/// image collapses to zero extent in floating point is reported as
/// degenerate.
pub fn apply_affine(t: &AffineTransform, b: BoundingBox) -> Result<BoundingBox> {
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for (cx, cy) in b.corners() {
        let (px, py) = t.apply_point(cx, cy);
        min_x = min_x.min(px);
        min_y = min_y.min(py);
        max_x = max_x.max(px);
        max_y = max_y.max(py);
    }
    BoundingBox::new(min_x, min_y, max_x - min_x, max_y - min_y).map_err(|_| {
        Error::DegenerateTransform(format!(
            "box collapsed under transform (extent {}x{})",
            max_x - min_x,
            max_y - min_y
        ))
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (
            -100.0f64..100.0,
            -100.0f64..100.0,
            0.1f64..50.0,
            0.1f64..50.0,
        )
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        (arb_box(), 0.0f64..=1.0).prop_map(|(b, s)| Detection::new(b, s).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(a, b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou(b, a)).abs() < 1e-12);
        }

        #[test]
        fn giou_never_exceeds_iou(a in arb_box(), b in arb_box()) {
            let g = giou(a, b);
            prop_assert!(g <= iou(a, b) + 1e-12);
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!((g - giou(b, a)).abs() < 1e-12);
        }

        #[test]
        fn giou_self_is_one(a in arb_box()) {
            prop_assert!((giou(a, a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_outputs_are_subset_with_bounded_overlap(
            dets in proptest::collection::vec(arb_detection(), 0..12),
            thr in 0.0f64..=1.0,
        ) {
            let kept = nms(&dets, thr);
            prop_assert!(kept.len() <= dets.len());
            for k in &kept {
                prop_assert!(dets.iter().any(|d| d == k));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(a.bbox(), b.bbox()) <= thr + 1e-12);
                }
            }
            // Scores are non-increasing.
            for pair in kept.windows(2) {
                prop_assert!(pair[0].score() >= pair[1].score());
            }
            // Idempotence: suppressing again changes nothing.
            let again = nms(&kept, thr);
            prop_assert_eq!(again.len(), kept.len());
        }

        #[test]
        fn axis_preserving_affine_round_trip(
            b in arb_box(),
            sx in prop_oneof![0.2f64..3.0, -3.0f64..-0.2],
            sy in prop_oneof![0.2f64..3.0, -3.0f64..-0.2],
            tx in -200.0f64..200.0,
            ty in -200.0f64..200.0,
        ) {
            let t = AffineTransform::new(sx, 0.0, 0.0, sy, tx, ty).unwrap();
            let fwd = apply_affine(&t, b).unwrap();
            let back = apply_affine(&t.invert().unwrap(), fwd).unwrap();
            prop_assert!((back.x() - b.x()).abs() < 1e-9);
            prop_assert!((back.y() - b.y()).abs() < 1e-9);
            prop_assert!((back.w() - b.w()).abs() < 1e-9);
            prop_assert!((back.h() - b.h()).abs() < 1e-9);
        }

        #[test]
        fn general_affine_round_trip_contains_original(
            b in arb_box(),
            theta in -3.0f64..3.0,
            tx in -50.0f64..50.0,
            ty in -50.0f64..50.0,
        ) {
            let rot = AffineTransform::rotation(theta).unwrap();
            let [[a_, b_, _], [c_, d_, _]] = rot.coefficients();
            let t = AffineTransform::new(a_, b_, c_, d_, tx, ty).unwrap();
            let fwd = apply_affine(&t, b).unwrap();
            let back = apply_affine(&t.invert().unwrap(), fwd).unwrap();
            prop_assert!(back.x() <= b.x() + 1e-9);
            prop_assert!(back.y() <= b.y() + 1e-9);
            prop_assert!(back.right() >= b.right() - 1e-9);
            prop_assert!(back.bottom() >= b.bottom() - 1e-9);
        }
    }
}
