//! Deterministic synthetic sequences for exercising the tracker and
//! evaluator at desk scale: known ground truth, controllable noise, and
//! motion patterns chosen to stress association in specific ways.
//!
//! All randomness flows through a caller-seeded ChaCha stream, so equal
//! configs produce bit-identical sequences on every platform.
//!
//! The **crossing** pattern deserves a note: opposing objects travel the
//! same horizontal corridor in pairs, with starts and speeds chosen so
//! that each pair produces one frame where an incoming detection lands
//! *exactly* on the opposing track's previous box. Lanes are vertically
//! offset by 10px, so at zero noise the true continuation still wins on
//! IoU (0.667 vs 0.6) — but a couple of pixels of jitter can flip that
//! preference, which is precisely the failure appearance-based
//! association is supposed to survive.

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, iou, AffineTransform, BoundingBox, Detection};
use crate::losses::Embedding;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Canvas width in pixels.
pub const CANVAS_WIDTH: f64 = 1920.0;
/// Canvas height in pixels.
pub const CANVAS_HEIGHT: f64 = 1080.0;

// Vertical band objects live in, leaving margins for noise and box extent.
const BAND_TOP: f64 = 60.0;
const BAND_HEIGHT: f64 = 960.0;
// Horizontal margins.
const X_MARGIN: f64 = 60.0;
// Box side lengths are drawn from this range (except crossing, fixed 40).
const BOX_MIN: f64 = 32.0;
const BOX_MAX: f64 = 48.0;
// Crossing-pattern constants; see the module docs for why these numbers.
const CROSS_BOX: f64 = 40.0;
const CROSS_SPEED: f64 = 8.0;
const CROSS_LANE_OFFSET: f64 = 10.0;
const CROSS_START_A: f64 = 288.0;
const CROSS_START_B: f64 = 1256.0;
const CROSS_STAGGER: f64 = 32.0;
// Base confidence of a true detection before depression/noise.
const BASE_SCORE: f64 = 0.9;
// False positives score uniformly in this range (kept below typical spawn
// thresholds but straddling recovery thresholds).
const FP_SCORE_MIN: f64 = 0.05;
const FP_SCORE_MAX: f64 = 0.45;
// Score noise scales with location noise by this factor.
const SCORE_NOISE_PER_PIXEL: f64 = 0.01;

/// How objects move across the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    /// Constant horizontal velocity on separated lanes.
    Linear,
    /// Opposing pairs passing through each other (see module docs).
    Crossing,
    /// Horizontal drift with a vertical sine sway.
    Sinusoidal,
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MotionModel::Linear),
            "crossing" => Ok(MotionModel::Crossing),
            "sinusoidal" => Ok(MotionModel::Sinusoidal),
            other => Err(Error::InvalidConfig(format!(
                "unknown motion model '{other}' (expected linear, crossing, or sinusoidal)"
            ))),
        }
    }
}

impl std::fmt::Display for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MotionModel::Linear => "linear",
            MotionModel::Crossing => "crossing",
            MotionModel::Sinusoidal => "sinusoidal",
        };
        f.write_str(s)
    }
}

/// Generation parameters. Everything is deterministic given `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    pub motion: MotionModel,
    /// Probability a true detection is dropped (missed) per frame.
    pub fn_rate: f64,
    /// Probability (per object slot, per frame) of injecting a spurious
    /// detection.
    pub fp_rate: f64,
    /// Standard deviation of detection box position noise, pixels.
    pub loc_noise_sigma: f64,
    /// Subtracted from the base confidence of every true detection,
    /// pushing objects toward "low-score" territory.
    pub score_depression: f64,
    /// Embedding dimensionality; must exceed `n_objects`.
    pub embed_dim: usize,
    /// Per-component Gaussian noise added to each detection embedding.
    pub embed_noise_sigma: f64,
    /// Angular separation between object appearance anchors: 1 makes them
    /// mutually orthogonal, 0 makes every object look identical.
    pub appearance_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_objects: 10,
            n_frames: 100,
            motion: MotionModel::Linear,
            fn_rate: 0.0,
            fp_rate: 0.0,
            loc_noise_sigma: 0.0,
            score_depression: 0.0,
            embed_dim: 512,
            embed_noise_sigma: 0.05,
            appearance_separation: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::InvalidConfig("n_objects must be at least 1".into()));
        }
        if self.n_frames == 0 {
            return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
        }
        for (name, v) in [("fn_rate", self.fn_rate), ("fp_rate", self.fp_rate)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} {v} must lie in [0, 1]"
                )));
            }
        }
        for (name, v) in [
            ("loc_noise_sigma", self.loc_noise_sigma),
            ("score_depression", self.score_depression),
            ("embed_noise_sigma", self.embed_noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} {v} must be finite and non-negative"
                )));
            }
        }
        if !self.appearance_separation.is_finite()
            || !(0.0..=1.0).contains(&self.appearance_separation)
        {
            return Err(Error::InvalidConfig(format!(
                "appearance_separation {} must lie in [0, 1]",
                self.appearance_separation
            )));
        }
        if self.embed_dim < self.n_objects + 1 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} too small for {} objects (need at least n_objects + 1)",
                self.embed_dim, self.n_objects
            )));
        }
        lane_cell(self)?;
        Ok(())
    }
}

/// One ground-truth object instance in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthObject {
    /// Stable positive identity, 1-based.
    pub id: u64,
    pub bbox: BoundingBox,
}

/// A generated sequence: per-frame ground truth, detections, and
/// per-detection embeddings (index-aligned with the detections).
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub ground_truth: Vec<Vec<GroundTruthObject>>,
    pub detections: Vec<Vec<Detection>>,
    pub embeddings: Vec<Vec<Embedding>>,
    /// Per-object appearance anchors (index `k` belongs to id `k + 1`).
    pub anchors: Vec<Embedding>,
}

/// Vertical lane cell height for a config, validating that the layout can
/// keep identities spatially separable.
fn lane_cell(config: &SynthConfig) -> Result<f64> {
    let lanes = match config.motion {
        MotionModel::Crossing => config.n_objects.div_ceil(2),
        _ => config.n_objects,
    };
    let cell = BAND_HEIGHT / lanes as f64;
    let needed = match config.motion {
        MotionModel::Linear => 50.0,
        MotionModel::Crossing => 60.0,
        // Room for the sway: 2 * min amplitude (5) + max box + breathing.
        MotionModel::Sinusoidal => 62.0,
    };
    if cell < needed {
        return Err(Error::InvalidConfig(format!(
            "{} objects do not fit the {} lane layout (cell {cell:.1}px < {needed}px)",
            config.n_objects, config.motion
        )));
    }
    Ok(cell)
}

/// Draws a horizontal start/velocity pair that keeps `[x, x+w]` inside the
/// canvas margins for the whole sequence.
fn horizontal_motion(
    rng: &mut ChaCha8Rng,
    w: f64,
    n_frames: usize,
    direction_hint: usize,
) -> (f64, f64) {
    let steps = n_frames.saturating_sub(1).max(1) as f64;
    let span = (CANVAS_WIDTH - 2.0 * X_MARGIN) - w;
    let magnitude: f64 = rng.random_range(2.0..6.0);
    let sign = if direction_hint.is_multiple_of(2) { 1.0 } else { -1.0 };
    let v = magnitude.min(span / steps) * sign;
    let (lo, hi) = if v >= 0.0 {
        (X_MARGIN, CANVAS_WIDTH - X_MARGIN - w - v * steps)
    } else {
        (X_MARGIN - v * steps, CANVAS_WIDTH - X_MARGIN - w)
    };
    let x0 = if hi - lo > 1e-9 {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    (x0, v)
}

/// Per-object box trajectories, indexed `[object][frame]`.
fn build_paths(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<BoundingBox>>> {
    let cell = lane_cell(config)?;
    let n = config.n_objects;
    let t_count = config.n_frames;
    let mut paths = Vec::with_capacity(n);

    match config.motion {
        MotionModel::Linear => {
            for k in 0..n {
                let w = rng.random_range(BOX_MIN..BOX_MAX);
                let h = rng.random_range(BOX_MIN..BOX_MAX);
                let midline = BAND_TOP + (k as f64 + 0.5) * cell;
                let (x0, v) = horizontal_motion(rng, w, t_count, k);
                let boxes = (0..t_count)
                    .map(|t| BoundingBox::new(x0 + v * t as f64, midline - h / 2.0, w, h))
                    .collect::<Result<Vec<_>>>()?;
                paths.push(boxes);
            }
        }
        MotionModel::Crossing => {
            for k in 0..n {
                let pair = (k / 2) as f64;
                let from_right = k % 2 == 1;
                let a_mid = BAND_TOP + (pair + 0.5) * cell - CROSS_LANE_OFFSET / 2.0;
                let midline = a_mid + if from_right { CROSS_LANE_OFFSET } else { 0.0 };
                let boxes = (0..t_count)
                    .map(|t| {
                        let raw = if from_right {
                            CROSS_START_B - CROSS_STAGGER * pair - CROSS_SPEED * t as f64
                        } else {
                            CROSS_START_A + CROSS_STAGGER * pair + CROSS_SPEED * t as f64
                        };
                        // Objects park at the margin once their run is done.
                        let x = raw.clamp(10.0, CANVAS_WIDTH - 10.0 - CROSS_BOX);
                        BoundingBox::new(x, midline - CROSS_BOX / 2.0, CROSS_BOX, CROSS_BOX)
                    })
                    .collect::<Result<Vec<_>>>()?;
                paths.push(boxes);
            }
        }
        MotionModel::Sinusoidal => {
            let amplitude = 25.0f64.min((cell - 52.0) / 2.0);
            for k in 0..n {
                let w = rng.random_range(BOX_MIN..BOX_MAX);
                let h = rng.random_range(BOX_MIN..BOX_MAX);
                let midline = BAND_TOP + (k as f64 + 0.5) * cell;
                let (x0, v) = horizontal_motion(rng, w, t_count, k);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let boxes = (0..t_count)
                    .map(|t| {
                        let y = midline
                            + amplitude
                                * (std::f64::consts::TAU * t as f64 / 100.0 + phase).sin();
                        BoundingBox::new(x0 + v * t as f64, y - h / 2.0, w, h)
                    })
                    .collect::<Result<Vec<_>>>()?;
                paths.push(boxes);
            }
        }
    }
    Ok(paths)
}

/// Unit-norm appearance anchors: object `k` points along
/// `cos(θ)·e_0 + sin(θ)·e_{k+1}` with `θ = separation · π/2`, so
/// separation 1 gives mutually orthogonal identities and separation 0
/// collapses them all onto one direction.
fn build_anchors(config: &SynthConfig) -> Result<Vec<Embedding>> {
    let theta = config.appearance_separation * std::f64::consts::FRAC_PI_2;
    let (s, c) = theta.sin_cos();
    (0..config.n_objects)
        .map(|k| {
            let mut v = vec![0.0; config.embed_dim];
            v[0] = c;
            v[k + 1] = s;
            Embedding::new(v)
        })
        .collect()
}

/// Generates a full synthetic sequence from the config (see
/// [`SynthConfig`] for the knobs). Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SyntheticSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let paths = build_paths(config, &mut rng)?;
    let anchors = build_anchors(config)?;

    let score_sigma = config.loc_noise_sigma * SCORE_NOISE_PER_PIXEL;
    let mut ground_truth = Vec::with_capacity(config.n_frames);
    let mut detections = Vec::with_capacity(config.n_frames);
    let mut embeddings = Vec::with_capacity(config.n_frames);

    for t in 0..config.n_frames {
        let mut gt_row = Vec::with_capacity(config.n_objects);
        let mut det_row = Vec::new();
        let mut emb_row = Vec::new();

        for (k, path) in paths.iter().enumerate() {
            let bbox = path[t];
            gt_row.push(GroundTruthObject {
                id: (k + 1) as u64,
                bbox,
            });

            // Noise draws happen unconditionally so the stream layout does
            // not depend on earlier outcomes.
            let dx: f64 = rng.sample::<f64, _>(StandardNormal) * config.loc_noise_sigma;
            let dy: f64 = rng.sample::<f64, _>(StandardNormal) * config.loc_noise_sigma;
            let ds: f64 = rng.sample::<f64, _>(StandardNormal) * score_sigma;
            let dropped = rng.random::<f64>() < config.fn_rate;
            let noise: Vec<f64> = (0..config.embed_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * config.embed_noise_sigma)
                .collect();
            if dropped {
                continue;
            }
            let noisy = BoundingBox::new(bbox.x() + dx, bbox.y() + dy, bbox.w(), bbox.h())?;
            let score = (BASE_SCORE - config.score_depression + ds).clamp(0.0, 1.0);
            det_row.push(Detection::new(noisy, score)?);
            let emb: Vec<f64> = anchors[k]
                .values()
                .iter()
                .zip(&noise)
                .map(|(a, n)| a + n)
                .collect();
            emb_row.push(Embedding::new(emb)?);
        }

        // Spurious detections: one coin per object slot.
        for _ in 0..config.n_objects {
            if rng.random::<f64>() >= config.fp_rate {
                continue;
            }
            let w = rng.random_range(BOX_MIN..BOX_MAX);
            let h = rng.random_range(BOX_MIN..BOX_MAX);
            let x = rng.random_range(X_MARGIN..(CANVAS_WIDTH - X_MARGIN - w));
            let y = rng.random_range(BAND_TOP..(BAND_TOP + BAND_HEIGHT - h));
            let score = rng.random_range(FP_SCORE_MIN..FP_SCORE_MAX);
            det_row.push(Detection::new(BoundingBox::new(x, y, w, h)?, score)?);
            let emb: Vec<f64> = (0..config.embed_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            emb_row.push(Embedding::new(emb)?);
        }

        ground_truth.push(gt_row);
        detections.push(det_row);
        embeddings.push(emb_row);
    }

    Ok(SyntheticSequence {
        ground_truth,
        detections,
        embeddings,
        anchors,
    })
}

/// Parameters for deriving two jittered views of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualViewConfig {
    /// Position jitter applied independently per view, pixels.
    pub jitter_sigma: f64,
    /// Score jitter applied independently per view.
    pub score_sigma: f64,
    /// When set, the second view additionally passes through a random
    /// axis-preserving affine (scale 0.9–1.1, translation ±20px).
    pub affine_view_b: bool,
}

impl Default for DualViewConfig {
    fn default() -> Self {
        DualViewConfig {
            jitter_sigma: 1.0,
            score_sigma: 0.02,
            affine_view_b: false,
        }
    }
}

/// Two views of the same detections, index-aligned with the input. When
/// view B was affine-augmented, `inverse_b` maps its boxes back to the
/// original coordinates.
#[derive(Debug, Clone)]
pub struct DualViews {
    pub view_a: Vec<Detection>,
    pub view_b: Vec<Detection>,
    pub inverse_b: Option<AffineTransform>,
}

/// Re-jitters one frame's detections into two independent views.
pub fn dual_views<R: Rng>(
    detections: &[Detection],
    config: &DualViewConfig,
    rng: &mut R,
) -> Result<DualViews> {
    for (name, v) in [
        ("jitter_sigma", config.jitter_sigma),
        ("score_sigma", config.score_sigma),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{name} {v} must be finite and non-negative"
            )));
        }
    }
    let jitter = |d: &Detection, rng: &mut R| -> Result<Detection> {
        let dx: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
        let dy: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
        let ds: f64 = rng.sample::<f64, _>(StandardNormal) * config.score_sigma;
        let b = d.bbox();
        Detection::new(
            BoundingBox::new(b.x() + dx, b.y() + dy, b.w(), b.h())?,
            (d.score() + ds).clamp(0.0, 1.0),
        )
    };
    let view_a: Vec<Detection> = detections
        .iter()
        .map(|d| jitter(d, rng))
        .collect::<Result<_>>()?;
    let raw_b: Vec<Detection> = detections
        .iter()
        .map(|d| jitter(d, rng))
        .collect::<Result<_>>()?;

    if !config.affine_view_b {
        return Ok(DualViews {
            view_a,
            view_b: raw_b,
            inverse_b: None,
        });
    }
    let sx: f64 = rng.random_range(0.9..1.1);
    let sy: f64 = rng.random_range(0.9..1.1);
    let tx: f64 = rng.random_range(-20.0..20.0);
    let ty: f64 = rng.random_range(-20.0..20.0);
    let forward = AffineTransform::new(sx, 0.0, 0.0, sy, tx, ty)?;
    let view_b = raw_b
        .iter()
        .map(|d| Detection::new(apply_affine(&forward, d.bbox())?, d.score()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DualViews {
        view_a,
        view_b,
        inverse_b: Some(forward.invert()?),
    })
}

/// Parameters for sampling training proposals around ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    pub positives_per_object: usize,
    pub negatives: usize,
    /// IoU (with the owning object) a positive must reach.
    pub positive_min_iou: f64,
    /// Positional jitter for positives, pixels.
    pub jitter_sigma: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            positives_per_object: 2,
            negatives: 6,
            positive_min_iou: 0.5,
            jitter_sigma: 2.0,
        }
    }
}

/// Samples positives (jittered copies meeting the IoU floor, owned by
/// their object's index) and IoU-stratified negatives (spread across
/// three bins of best-IoU-to-any-object below the floor).
///
/// Errors with [`Error::SamplingExhausted`] when the requested counts
/// cannot be met — e.g. an IoU floor so tight that jitter never satisfies
/// it, or a middle stratum that the geometry cannot produce.
pub fn sample_proposals<R: Rng>(
    ground_truth: &[GroundTruthObject],
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<crate::assignment::SampledProposals> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyInput("proposal ground truth"));
    }
    if !config.positive_min_iou.is_finite() || !(0.0..=1.0).contains(&config.positive_min_iou)
    {
        return Err(Error::InvalidConfig(format!(
            "positive_min_iou {} must lie in [0, 1]",
            config.positive_min_iou
        )));
    }
    if !config.jitter_sigma.is_finite() || config.jitter_sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "jitter_sigma {} must be finite and non-negative",
            config.jitter_sigma
        )));
    }

    const POSITIVE_ATTEMPTS: usize = 100;
    let mut positives = Vec::new();
    for (owner, obj) in ground_truth.iter().enumerate() {
        for _ in 0..config.positives_per_object {
            let mut accepted = false;
            for _ in 0..POSITIVE_ATTEMPTS {
                let b = obj.bbox;
                let dx: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
                let dy: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
                let scale = 1.0
                    + rng.sample::<f64, _>(StandardNormal) * (config.jitter_sigma / 40.0);
                let scale = scale.clamp(0.5, 1.5);
                let candidate =
                    BoundingBox::new(b.x() + dx, b.y() + dy, b.w() * scale, b.h() * scale)?;
                if iou(candidate, b) >= config.positive_min_iou {
                    positives.push((candidate, owner));
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::SamplingExhausted {
                    message: format!(
                        "no positive met IoU {} for object {}",
                        config.positive_min_iou, obj.id
                    ),
                    attempts: POSITIVE_ATTEMPTS,
                });
            }
        }
    }

    // Stratify negatives into three best-IoU bins below the floor.
    let floor = config.positive_min_iou;
    let remainder = config.negatives % 3;
    let wanted = [
        config.negatives / 3 + usize::from(remainder > 0),
        config.negatives / 3 + usize::from(remainder > 1),
        config.negatives / 3,
    ];
    let mut bins: [Vec<BoundingBox>; 3] = Default::default();
    let max_attempts = 200 * config.negatives.max(1) + 1000;
    let mut attempts = 0;
    while bins[0].len() < wanted[0] || bins[1].len() < wanted[1] || bins[2].len() < wanted[2] {
        if attempts >= max_attempts {
            return Err(Error::SamplingExhausted {
                message: format!(
                    "negative strata unfilled ({}/{}, {}/{}, {}/{})",
                    bins[0].len(),
                    wanted[0],
                    bins[1].len(),
                    wanted[1],
                    bins[2].len(),
                    wanted[2]
                ),
                attempts,
            });
        }
        attempts += 1;
        let candidate = if attempts % 2 == 0 {
            // Anywhere on the canvas.
            let w = rng.random_range(BOX_MIN..BOX_MAX);
            let h = rng.random_range(BOX_MIN..BOX_MAX);
            let x = rng.random_range(0.0..(CANVAS_WIDTH - w));
            let y = rng.random_range(0.0..(CANVAS_HEIGHT - h));
            BoundingBox::new(x, y, w, h)?
        } else {
            // A displaced copy of some object, for the mid-IoU strata.
            let obj = &ground_truth[rng.random_range(0..ground_truth.len())];
            let b = obj.bbox;
            let dx = b.w() * rng.random_range(0.2..1.6) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let dy = b.h() * rng.random_range(0.0..0.8) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            BoundingBox::new(b.x() + dx, b.y() + dy, b.w(), b.h())?
        };
        let best = ground_truth
            .iter()
            .map(|g| iou(candidate, g.bbox))
            .fold(0.0f64, f64::max);
        if best >= floor {
            continue;
        }
        let bin = ((best / floor) * 3.0).min(2.0) as usize;
        if bins[bin].len() < wanted[bin] {
            bins[bin].push(candidate);
        }
    }

    let negatives: Vec<BoundingBox> = bins.into_iter().flatten().collect();
    Ok(crate::assignment::SampledProposals {
        positives,
        negatives,
    })
}
