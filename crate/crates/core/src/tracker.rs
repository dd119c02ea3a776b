//! Online tracking-by-detection: carries identities across frames by
//! associating each frame's detections with live tracks, spawning new
//! identities for confident leftovers, and retiring tracks that stay
//! unseen past a patience window.
//!
//! Three interchangeable association rules cover the design space:
//!
//! * [`AssociationMode::Bisoftmax`] — appearance similarity sharpened by
//!   a symmetric pair of softmaxes (over tracks and over detections),
//!   then matched greedily. A pair only scores high when each side is
//!   the other's clear favorite.
//! * [`AssociationMode::OtSinkhorn`] — appearance cost solved as an
//!   entropic transport problem with a slack sink absorbing the count
//!   imbalance, then rounded to a hard assignment.
//! * [`AssociationMode::IouGreedy`] — geometry only; the classic
//!   overlap-based greedy baseline, and the control arm that appearance
//!   modes are expected to beat when paths cross.
//!
//! Matched tracks fold the new appearance into an exponential moving
//! average (renormalized to the unit sphere), so identity evidence
//! accumulates instead of being overwritten.

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Detection};
use crate::losses::Embedding;
use crate::transport::{
    cosine_cost, extract_hard_assignment, sinkhorn_solve, SinkhornConfig,
};
use crate::assignment::marginals_one_to_one;
use ndarray::Array2;

/// Lifecycle of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Matched in the most recent frame.
    Active,
    /// Unmatched recently, still eligible for re-association.
    Lost,
    /// Unseen past the patience window; retired for good.
    Removed,
}

/// Which rule turns per-frame evidence into track-detection matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssociationMode {
    Bisoftmax,
    OtSinkhorn,
    IouGreedy,
}

impl std::str::FromStr for AssociationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisoftmax" => Ok(AssociationMode::Bisoftmax),
            "ot" | "ot_sinkhorn" => Ok(AssociationMode::OtSinkhorn),
            "iou" | "iou_greedy" => Ok(AssociationMode::IouGreedy),
            other => Err(Error::InvalidConfig(format!(
                "unknown association mode '{other}' (expected bisoftmax, ot, or iou)"
            ))),
        }
    }
}

impl std::fmt::Display for AssociationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AssociationMode::Bisoftmax => "bisoftmax",
            AssociationMode::OtSinkhorn => "ot",
            AssociationMode::IouGreedy => "iou",
        };
        f.write_str(s)
    }
}

/// Tracker behavior knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Minimum detection score to start a new track.
    pub init_score_threshold: f64,
    /// Lower spawn bar used when `allow_low_score_spawn` is set, letting
    /// externally vetted low-confidence detections start tracks.
    pub low_score_threshold: f64,
    /// Minimum association quality to accept a match. Interpreted in the
    /// active mode's own units: bisoftmax probability, cosine similarity
    /// (`1 - cost`), or IoU.
    pub match_threshold: f64,
    /// Frames a track may stay unmatched before removal.
    pub patience: usize,
    /// Weight of the previous appearance in the EMA update.
    pub ema_momentum: f64,
    pub association: AssociationMode,
    /// When set, detections scoring in `[low_score_threshold,
    /// init_score_threshold)` may also spawn tracks.
    pub allow_low_score_spawn: bool,
    /// Solver settings for [`AssociationMode::OtSinkhorn`].
    pub sinkhorn: SinkhornConfig,
    /// Cost of routing a track or detection to the slack sink in the
    /// transport formulation.
    pub slack_cost: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            init_score_threshold: 0.5,
            low_score_threshold: 0.3,
            match_threshold: 0.5,
            patience: 10,
            ema_momentum: 0.9,
            association: AssociationMode::Bisoftmax,
            allow_low_score_spawn: false,
            sinkhorn: SinkhornConfig::default(),
            slack_cost: 1.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("init_score_threshold", self.init_score_threshold),
            ("low_score_threshold", self.low_score_threshold),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} {v} must lie in [0, 1]"
                )));
            }
        }
        if self.low_score_threshold > self.init_score_threshold {
            return Err(Error::InvalidConfig(format!(
                "low_score_threshold {} exceeds init_score_threshold {}",
                self.low_score_threshold, self.init_score_threshold
            )));
        }
        if !self.match_threshold.is_finite() || !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(Error::InvalidConfig(format!(
                "match_threshold {} must lie in [0, 1]",
                self.match_threshold
            )));
        }
        if !self.ema_momentum.is_finite() || !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidConfig(format!(
                "ema_momentum {} must lie in [0, 1)",
                self.ema_momentum
            )));
        }
        if !self.slack_cost.is_finite() {
            return Err(Error::NonFinite("slack cost"));
        }
        self.sinkhorn.validate()
    }
}

/// One tracked identity. Fields are tracker-maintained; mutate only
/// through [`Tracker::step`].
#[derive(Debug, Clone)]
pub struct Track {
    id: u64,
    bbox: BoundingBox,
    embedding: Option<Embedding>,
    status: TrackStatus,
    frames_since_seen: usize,
    age: usize,
    last_score: f64,
}

impl Track {
    /// Stable identity, 1-based, never reused.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Most recently associated box.
    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Unit-norm appearance EMA, when the tracker has seen embeddings.
    pub fn embedding(&self) -> Option<&Embedding> {
        self.embedding.as_ref()
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    /// Frames since the last successful match (0 while active).
    pub fn frames_since_seen(&self) -> usize {
        self.frames_since_seen
    }

    /// Steps survived since spawn, inclusive of the spawning step.
    pub fn age(&self) -> usize {
        self.age
    }

    /// Score of the detection that last updated this track.
    pub fn last_score(&self) -> f64 {
        self.last_score
    }
}

/// What one tracker step did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepResult {
    /// `(track id, detection index)` for every accepted match, in track
    /// order.
    pub matches: Vec<(u64, usize)>,
    /// Ids spawned this step, in detection order.
    pub spawned: Vec<u64>,
    /// Ids that fell from active to lost this step.
    pub newly_lost: Vec<u64>,
    /// Ids retired this step.
    pub removed: Vec<u64>,
}

/// The association engine's online state.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    retired: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            tracks: Vec::new(),
            retired: Vec::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks: active and lost, in spawn order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Tracks retired after exceeding the patience window.
    pub fn retired(&self) -> &[Track] {
        &self.retired
    }

    /// Live tracks currently matched.
    pub fn active_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
    }

    /// Advances one frame. `embeddings`, when given, must align
    /// index-for-index with `detections`; the appearance-based modes
    /// require them whenever there are detections.
    pub fn step(
        &mut self,
        detections: &[Detection],
        embeddings: Option<&[Embedding]>,
    ) -> Result<StepResult> {
        if let Some(embs) = embeddings {
            if embs.len() != detections.len() {
                return Err(Error::DimensionMismatch {
                    context: "detection embeddings",
                    expected: detections.len(),
                    actual: embs.len(),
                });
            }
        }
        let appearance_mode = matches!(
            self.config.association,
            AssociationMode::Bisoftmax | AssociationMode::OtSinkhorn
        );
        if appearance_mode && !detections.is_empty() && embeddings.is_none() {
            return Err(Error::EmbeddingsRequired(
                "appearance-based association needs per-detection embeddings",
            ));
        }

        let pairs = self.associate(detections, embeddings)?;

        let mut result = StepResult::default();
        let mut det_matched = vec![false; detections.len()];
        let mut track_matched = vec![false; self.tracks.len()];
        for &(ti, dj) in &pairs {
            track_matched[ti] = true;
            det_matched[dj] = true;
        }

        // Matched tracks absorb the detection; unmatched ones decay.
        for (ti, track) in self.tracks.iter_mut().enumerate() {
            track.age += 1;
            if track_matched[ti] {
                let dj = pairs.iter().find(|&&(t, _)| t == ti).map(|&(_, d)| d).unwrap();
                track.bbox = detections[dj].bbox();
                track.last_score = detections[dj].score();
                track.frames_since_seen = 0;
                track.status = TrackStatus::Active;
                if let Some(embs) = embeddings {
                    track.embedding = Some(ema_update(
                        track.embedding.as_ref(),
                        &embs[dj],
                        self.config.ema_momentum,
                    )?);
                }
                result.matches.push((track.id, dj));
            } else {
                track.frames_since_seen += 1;
                if track.status == TrackStatus::Active {
                    track.status = TrackStatus::Lost;
                    result.newly_lost.push(track.id);
                }
                if track.frames_since_seen > self.config.patience {
                    track.status = TrackStatus::Removed;
                    result.removed.push(track.id);
                }
            }
        }
        // Retire in one sweep, preserving order.
        let mut keep = Vec::with_capacity(self.tracks.len());
        for track in self.tracks.drain(..) {
            if track.status == TrackStatus::Removed {
                self.retired.push(track);
            } else {
                keep.push(track);
            }
        }
        self.tracks = keep;

        // Confident leftovers start new identities.
        let spawn_floor = if self.config.allow_low_score_spawn {
            self.config.low_score_threshold
        } else {
            self.config.init_score_threshold
        };
        for (dj, det) in detections.iter().enumerate() {
            if det_matched[dj] || det.score() < spawn_floor {
                continue;
            }
            let embedding = match embeddings {
                Some(embs) => Some(spawn_embedding(&embs[dj])?),
                None => None,
            };
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                bbox: det.bbox(),
                embedding,
                status: TrackStatus::Active,
                frames_since_seen: 0,
                age: 1,
                last_score: det.score(),
            });
            result.spawned.push(id);
        }

        Ok(result)
    }

    /// Produces accepted `(track index, detection index)` pairs for one
    /// frame under the configured mode.
    fn associate(
        &self,
        detections: &[Detection],
        embeddings: Option<&[Embedding]>,
    ) -> Result<Vec<(usize, usize)>> {
        if self.tracks.is_empty() || detections.is_empty() {
            return Ok(Vec::new());
        }
        match self.config.association {
            AssociationMode::IouGreedy => {
                let scores = Array2::from_shape_fn(
                    (self.tracks.len(), detections.len()),
                    |(i, j)| iou(self.tracks[i].bbox, detections[j].bbox()),
                );
                Ok(greedy_pairs(&scores, self.config.match_threshold))
            }
            AssociationMode::Bisoftmax => {
                let track_embs = self.track_embeddings()?;
                let scores = bisoftmax_scores(&track_embs, embeddings.unwrap())?;
                Ok(greedy_pairs(&scores, self.config.match_threshold))
            }
            AssociationMode::OtSinkhorn => {
                let track_embs = self.track_embeddings()?;
                let cost = cosine_cost(&track_embs, embeddings.unwrap())?;
                let (marginals, slack) =
                    marginals_one_to_one(self.tracks.len(), detections.len())?;
                let padded = cost.with_slack(&slack, self.config.slack_cost)?;
                let plan = sinkhorn_solve(&padded, &marginals, &self.config.sinkhorn)?;
                let hard = extract_hard_assignment(&plan, &slack);
                let gate = 1.0 - self.config.match_threshold;
                Ok(hard
                    .pairs
                    .into_iter()
                    .filter(|&(i, j)| cost.values()[[i, j]] <= gate)
                    .collect())
            }
        }
    }

    fn track_embeddings(&self) -> Result<Vec<Embedding>> {
        self.tracks
            .iter()
            .map(|t| {
                t.embedding.clone().ok_or(Error::EmbeddingsRequired(
                    "a live track has no stored appearance embedding",
                ))
            })
            .collect()
    }
}

/// Folds a new appearance into the track's running average:
/// `momentum * old + (1 - momentum) * new`, renormalized to unit length.
/// Degenerate results (or a zero-norm first observation) keep the old
/// embedding rather than corrupt it.
fn ema_update(old: Option<&Embedding>, observed: &Embedding, momentum: f64) -> Result<Embedding> {
    let unit_new = match observed.normalized() {
        Ok(e) => e,
        Err(_) => {
            return old
                .cloned()
                .ok_or_else(|| Error::InvalidEmbedding("zero-norm first observation".into()))
        }
    };
    let Some(old) = old else {
        return Ok(unit_new);
    };
    if old.dim() != unit_new.dim() {
        return Err(Error::DimensionMismatch {
            context: "appearance EMA",
            expected: old.dim(),
            actual: unit_new.dim(),
        });
    }
    let blended: Vec<f64> = old
        .values()
        .iter()
        .zip(unit_new.values())
        .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
        .collect();
    let blended = Embedding::new(blended)?;
    match blended.normalized() {
        Ok(e) => Ok(e),
        // Perfect cancellation; the old direction remains the best guess.
        Err(_) => Ok(old.clone()),
    }
}

/// Unit-norm copy for a freshly spawned track; zero-norm embeddings are
/// stored as-is (they cannot be normalized, and the first EMA update
/// will replace them).
fn spawn_embedding(observed: &Embedding) -> Result<Embedding> {
    Ok(observed.normalized().unwrap_or_else(|_| observed.clone()))
}

/// Symmetric softmax association scores. Embeddings are normalized, dot
/// products sharpened by a softmax across detections (per track) and a
/// softmax across tracks (per detection), and the two averaged. High
/// values mean "mutual favorite"; the score of a perfect match shrinks
/// as the candidate pool grows, so thresholds must scale with it.
pub fn bisoftmax_scores(tracks: &[Embedding], detections: &[Embedding]) -> Result<Array2<f64>> {
    if tracks.is_empty() || detections.is_empty() {
        return Ok(Array2::zeros((tracks.len(), detections.len())));
    }
    let unit = |es: &[Embedding]| -> Result<Vec<Embedding>> {
        es.iter().map(|e| e.normalized()).collect()
    };
    let t = unit(tracks)?;
    let d = unit(detections)?;
    let n = t.len();
    let m = d.len();
    let mut dots = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            dots[[i, j]] = t[i].dot(&d[j])?;
        }
    }
    let mut scores = Array2::zeros((n, m));
    for i in 0..n {
        let row = dots.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for j in 0..m {
            scores[[i, j]] += 0.5 * (dots[[i, j]] - max).exp() / denom;
        }
    }
    for j in 0..m {
        let col = dots.column(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = col.iter().map(|&v| (v - max).exp()).sum();
        for i in 0..n {
            scores[[i, j]] += 0.5 * (dots[[i, j]] - max).exp() / denom;
        }
    }
    Ok(scores)
}

/// Greedy one-to-one matching: repeatedly take the highest-scoring
/// still-free pair at or above `threshold`. Ties break toward lower row,
/// then lower column, keeping the procedure deterministic.
fn greedy_pairs(scores: &Array2<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = scores
        .indexed_iter()
        .filter(|&(_, &s)| s >= threshold)
        .map(|(idx, _)| idx)
        .collect();
    order.sort_by(|&(i1, j1), &(i2, j2)| {
        scores[[i2, j2]]
            .total_cmp(&scores[[i1, j1]])
            .then(i1.cmp(&i2))
            .then(j1.cmp(&j2))
    });
    let (n, m) = scores.dim();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let mut pairs = Vec::new();
    for (i, j) in order {
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        pairs.push((i, j));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, MotionModel, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn det(x: f64, score: f64) -> Detection {
        Detection::new(BoundingBox::new(x, 100.0, 40.0, 40.0).unwrap(), score).unwrap()
    }

    fn axis_embedding(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding::new(v).unwrap()
    }

    fn iou_tracker(match_threshold: f64) -> Tracker {
        Tracker::new(TrackerConfig {
            association: AssociationMode::IouGreedy,
            match_threshold,
            ..TrackerConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        assert!(TrackerConfig::default().validate().is_ok());
        let bad = [
            TrackerConfig {
                init_score_threshold: 1.5,
                ..TrackerConfig::default()
            },
            TrackerConfig {
                low_score_threshold: 0.8, // above init threshold
                ..TrackerConfig::default()
            },
            TrackerConfig {
                ema_momentum: 1.0,
                ..TrackerConfig::default()
            },
            TrackerConfig {
                match_threshold: -0.1,
                ..TrackerConfig::default()
            },
            TrackerConfig {
                slack_cost: f64::NAN,
                ..TrackerConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?} should be rejected");
        }
    }

    #[test]
    fn spawning_respects_score_thresholds() {
        let mut tracker = iou_tracker(0.5);
        let dets = [det(100.0, 0.9), det(200.0, 0.4), det(300.0, 0.2)];
        let result = tracker.step(&dets, None).unwrap();
        assert_eq!(result.spawned, vec![1]);
        assert_eq!(tracker.tracks().len(), 1);
        assert_eq!(tracker.tracks()[0].id(), 1);
        assert_eq!(tracker.tracks()[0].last_score(), 0.9);

        let mut permissive = Tracker::new(TrackerConfig {
            association: AssociationMode::IouGreedy,
            allow_low_score_spawn: true,
            ..TrackerConfig::default()
        })
        .unwrap();
        let result = permissive.step(&dets, None).unwrap();
        // The 0.4 detection clears the lowered bar; 0.2 still does not.
        assert_eq!(result.spawned, vec![1, 2]);
    }

    #[test]
    fn ids_are_assigned_in_detection_order_and_never_reused() {
        let mut tracker = Tracker::new(TrackerConfig {
            association: AssociationMode::IouGreedy,
            patience: 1,
            ..TrackerConfig::default()
        })
        .unwrap();
        let result = tracker
            .step(&[det(100.0, 0.9), det(400.0, 0.9)], None)
            .unwrap();
        assert_eq!(result.spawned, vec![1, 2]);

        // Both vanish long enough to be retired.
        tracker.step(&[], None).unwrap();
        let result = tracker.step(&[], None).unwrap();
        assert_eq!(result.removed, vec![1, 2]);
        assert!(tracker.tracks().is_empty());
        assert_eq!(tracker.retired().len(), 2);

        // Fresh arrivals get fresh ids even at the exact same spots.
        let result = tracker
            .step(&[det(100.0, 0.9), det(400.0, 0.9)], None)
            .unwrap();
        assert_eq!(result.spawned, vec![3, 4]);
    }

    #[test]
    fn iou_mode_carries_identities_across_small_motion() {
        let mut tracker = iou_tracker(0.5);
        tracker
            .step(&[det(100.0, 0.9), det(400.0, 0.9)], None)
            .unwrap();
        let result = tracker
            .step(&[det(104.0, 0.9), det(404.0, 0.9)], None)
            .unwrap();
        assert_eq!(result.matches, vec![(1, 0), (2, 1)]);
        assert!(result.spawned.is_empty());
        assert_eq!(tracker.tracks()[0].bbox().x(), 104.0);
        assert_eq!(tracker.tracks()[0].frames_since_seen(), 0);
        assert_eq!(tracker.tracks()[0].age(), 2);
    }

    #[test]
    fn lost_tracks_reassociate_within_patience() {
        let mut tracker = iou_tracker(0.5);
        tracker.step(&[det(100.0, 0.9)], None).unwrap();

        // Missing for three frames: lost, but not yet removed.
        for expected_gap in 1..=3 {
            let result = tracker.step(&[], None).unwrap();
            assert_eq!(tracker.tracks()[0].status(), TrackStatus::Lost);
            assert_eq!(tracker.tracks()[0].frames_since_seen(), expected_gap);
            if expected_gap == 1 {
                assert_eq!(result.newly_lost, vec![1]);
            } else {
                assert!(result.newly_lost.is_empty());
            }
        }

        // Reappears near the last known position: same identity.
        let result = tracker.step(&[det(102.0, 0.9)], None).unwrap();
        assert_eq!(result.matches, vec![(1, 0)]);
        assert!(result.spawned.is_empty());
        assert_eq!(tracker.tracks()[0].status(), TrackStatus::Active);
    }

    #[test]
    fn removal_happens_strictly_after_patience_frames() {
        let mut tracker = Tracker::new(TrackerConfig {
            association: AssociationMode::IouGreedy,
            patience: 2,
            ..TrackerConfig::default()
        })
        .unwrap();
        tracker.step(&[det(100.0, 0.9)], None).unwrap();
        assert!(tracker.step(&[], None).unwrap().removed.is_empty());
        assert!(tracker.step(&[], None).unwrap().removed.is_empty());
        let result = tracker.step(&[], None).unwrap();
        assert_eq!(result.removed, vec![1]);
        assert_eq!(tracker.retired()[0].status(), TrackStatus::Removed);
    }

    #[test]
    fn appearance_modes_demand_embeddings() {
        for mode in [AssociationMode::Bisoftmax, AssociationMode::OtSinkhorn] {
            let mut tracker = Tracker::new(TrackerConfig {
                association: mode,
                ..TrackerConfig::default()
            })
            .unwrap();
            match tracker.step(&[det(100.0, 0.9)], None) {
                Err(Error::EmbeddingsRequired(_)) => {}
                other => panic!("{mode}: expected EmbeddingsRequired, got {other:?}"),
            }
            // Empty frames are fine without embeddings.
            assert!(tracker.step(&[], None).is_ok());
        }
    }

    #[test]
    fn embedding_count_must_match_detections() {
        let mut tracker = iou_tracker(0.5);
        let embs = [axis_embedding(4, 0)];
        match tracker.step(&[det(100.0, 0.9), det(200.0, 0.9)], Some(&embs)) {
            Err(Error::DimensionMismatch { .. }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn bisoftmax_scores_match_closed_form() {
        // Orthonormal embeddings give a dot matrix of I; each softmax of a
        // row/column of I is e/(e+n-1) on the diagonal.
        let tracks = [axis_embedding(4, 0), axis_embedding(4, 1)];
        let dets = [axis_embedding(4, 0), axis_embedding(4, 1)];
        let scores = bisoftmax_scores(&tracks, &dets).unwrap();
        let e = std::f64::consts::E;
        let diag = e / (e + 1.0);
        let off = 1.0 / (e + 1.0);
        assert_abs_diff_eq!(scores[[0, 0]], diag, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[[1, 1]], diag, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[[0, 1]], off, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[[1, 0]], off, epsilon = 1e-12);
        // Swapped detections move the high scores off-diagonal.
        let swapped = [axis_embedding(4, 1), axis_embedding(4, 0)];
        let scores = bisoftmax_scores(&tracks, &swapped).unwrap();
        assert!(scores[[0, 1]] > scores[[0, 0]]);
    }

    #[test]
    fn bisoftmax_mode_matches_by_appearance_not_geometry() {
        let mut tracker = Tracker::new(TrackerConfig {
            association: AssociationMode::Bisoftmax,
            match_threshold: 0.3,
            ..TrackerConfig::default()
        })
        .unwrap();
        let e0 = axis_embedding(4, 0);
        let e1 = axis_embedding(4, 1);
        tracker
            .step(
                &[det(100.0, 0.9), det(400.0, 0.9)],
                Some(&[e0.clone(), e1.clone()]),
            )
            .unwrap();
        // Boxes swap places, embeddings stay put: appearance wins.
        let result = tracker
            .step(
                &[det(400.0, 0.9), det(100.0, 0.9)],
                Some(&[e0.clone(), e1.clone()]),
            )
            .unwrap();
        assert_eq!(result.matches, vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn ot_mode_matches_spawns_and_gates() {
        let mut tracker = Tracker::new(TrackerConfig {
            association: AssociationMode::OtSinkhorn,
            ..TrackerConfig::default()
        })
        .unwrap();
        let e0 = axis_embedding(4, 0);
        let e1 = axis_embedding(4, 1);
        let e2 = axis_embedding(4, 2);
        tracker
            .step(
                &[det(100.0, 0.9), det(400.0, 0.9)],
                Some(&[e0.clone(), e1.clone()]),
            )
            .unwrap();
        // A third, unfamiliar appearance arrives.
        let result = tracker
            .step(
                &[det(104.0, 0.9), det(404.0, 0.9), det(700.0, 0.9)],
                Some(&[e0.clone(), e1.clone(), e2.clone()]),
            )
            .unwrap();
        assert_eq!(result.matches, vec![(1, 0), (2, 1)]);
        assert_eq!(result.spawned, vec![3]);

        // All-orthogonal appearances cost 1.0 each, beyond the gate:
        // nothing matches, and the newcomers spawn.
        let result = tracker
            .step(
                &[det(108.0, 0.9)],
                Some(&[axis_embedding(4, 3)]),
            )
            .unwrap();
        assert!(result.matches.is_empty());
        assert_eq!(result.spawned, vec![4]);
    }

    #[test]
    fn ema_blends_and_renormalizes() {
        let mut tracker = Tracker::new(TrackerConfig {
            association: AssociationMode::Bisoftmax,
            match_threshold: 0.3,
            ema_momentum: 0.9,
            ..TrackerConfig::default()
        })
        .unwrap();
        let e0 = axis_embedding(2, 0);
        // Spawn along e0, then observe something 45 degrees away.
        tracker
            .step(&[det(100.0, 0.9)], Some(std::slice::from_ref(&e0)))
            .unwrap();
        let tilted = Embedding::new(vec![std::f64::consts::FRAC_1_SQRT_2; 2]).unwrap();
        tracker.step(&[det(102.0, 0.9)], Some(&[tilted])).unwrap();

        let emb = tracker.tracks()[0].embedding().unwrap();
        let expected = {
            let raw = [
                0.9 + 0.1 * std::f64::consts::FRAC_1_SQRT_2,
                0.1 * std::f64::consts::FRAC_1_SQRT_2,
            ];
            let norm = raw[0].hypot(raw[1]);
            [raw[0] / norm, raw[1] / norm]
        };
        assert_abs_diff_eq!(emb.values()[0], expected[0], epsilon = 1e-12);
        assert_abs_diff_eq!(emb.values()[1], expected[1], epsilon = 1e-12);
        assert_abs_diff_eq!(emb.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn greedy_prefers_higher_scores_then_lower_indices() {
        let scores =
            Array2::from_shape_vec((2, 2), vec![0.9, 0.8, 0.8, 0.9]).unwrap();
        assert_eq!(greedy_pairs(&scores, 0.5), vec![(0, 0), (1, 1)]);
        // A uniform matrix falls back to index order.
        let flat = Array2::from_elem((2, 3), 0.7);
        assert_eq!(greedy_pairs(&flat, 0.5), vec![(0, 0), (1, 1)]);
        // Below-threshold pairs are never taken.
        assert!(greedy_pairs(&flat, 0.71).is_empty());
    }

    /// Full pass over a synthetic sequence: every frame's detections must
    /// re-associate to the identity they were born with.
    fn assert_perfect_persistence(mode: AssociationMode, match_threshold: f64) {
        let cfg = SynthConfig {
            n_objects: 5,
            n_frames: 40,
            motion: MotionModel::Linear,
            embed_dim: 8,
            ..SynthConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let mut tracker = Tracker::new(TrackerConfig {
            association: mode,
            match_threshold,
            ..TrackerConfig::default()
        })
        .unwrap();
        for t in 0..cfg.n_frames {
            let result = tracker
                .step(&seq.detections[t], Some(&seq.embeddings[t]))
                .unwrap();
            if t == 0 {
                assert_eq!(result.spawned.len(), 5, "{mode}: initial spawn");
            } else {
                assert!(result.spawned.is_empty(), "{mode}: spurious spawn at {t}");
                // Detection k was generated by object k, whose id is k + 1.
                for (id, dj) in result.matches {
                    assert_eq!(id, (dj + 1) as u64, "{mode}: identity drift at {t}");
                }
            }
        }
    }

    #[test]
    fn noiseless_sequences_keep_identities_in_every_mode() {
        // Bisoftmax scores shrink with the candidate pool (5 candidates
        // put a perfect match at ~0.42), so its threshold sits lower.
        assert_perfect_persistence(AssociationMode::Bisoftmax, 0.2);
        assert_perfect_persistence(AssociationMode::OtSinkhorn, 0.5);
        assert_perfect_persistence(AssociationMode::IouGreedy, 0.5);
    }
}
