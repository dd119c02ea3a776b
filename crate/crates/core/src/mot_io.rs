//! Text formats for sequences, embeddings, per-frame transforms, the
//! engine's TOML configuration, and metric reports.
//!
//! Box records use the de-facto tracking CSV layout —
//! `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z` — with the
//! trailing world coordinates written as `-1` and ignored on read.
//! Frames are 1-based; conversions to per-frame vectors densify to
//! `1..=max`, so a frame with no records is an empty (not missing)
//! entry. All floats are written with six decimals, which keeps output
//! byte-stable across runs and platforms.
//!
//! Parse errors report 1-based line numbers. Blank lines and `#`
//! comments are allowed everywhere.

use crate::agreement::RecoveryConfig;
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, BoundingBox, Detection};
use crate::losses::Embedding;
use crate::metrics::{SequenceEvalResult, TrackedBox};
use crate::synth::GroundTruthObject;
use crate::tracker::{AssociationMode, TrackerConfig};
use crate::transport::{SinkhornConfig, Stabilization};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One line of a box CSV file, uninterpreted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    /// 1-based frame number.
    pub frame: usize,
    /// Track identity; `-1` conventionally means "no identity".
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// Confidence (detections/results) or validity flag (ground truth).
    pub conf: f64,
}

const EMBEDDINGS_HEADER: &str = "frame,index,dim";

/// Lines that carry no record.
fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} '{}'", field.trim()),
    })
}

fn finite_field(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = parse_field(field, line, what)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what} '{}'", field.trim()),
        });
    }
    Ok(v)
}

/// Serializes rows in the standard column order, trailing `-1,-1,-1`.
pub fn format_mot(rows: &[MotRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1\n",
            r.frame, r.id, r.x, r.y, r.w, r.h, r.conf
        ));
    }
    out
}

/// Parses box CSV text. Requires at least the first seven columns;
/// anything after `conf` is ignored.
pub fn parse_mot(text: &str) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if is_skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 7 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected at least 7 fields, found {}", fields.len()),
            });
        }
        let frame: usize = parse_field(fields[0], lineno, "frame")?;
        if frame == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "frame numbers are 1-based".into(),
            });
        }
        rows.push(MotRow {
            frame,
            id: parse_field(fields[1], lineno, "id")?,
            x: finite_field(fields[2], lineno, "bb_left")?,
            y: finite_field(fields[3], lineno, "bb_top")?,
            w: finite_field(fields[4], lineno, "bb_width")?,
            h: finite_field(fields[5], lineno, "bb_height")?,
            conf: finite_field(fields[6], lineno, "conf")?,
        });
    }
    Ok(rows)
}

/// Groups rows into dense per-frame buckets `1..=max`.
fn densify(rows: &[MotRow]) -> Vec<Vec<MotRow>> {
    let max_frame = rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let mut frames = vec![Vec::new(); max_frame];
    for &r in rows {
        frames[r.frame - 1].push(r);
    }
    frames
}

/// Interprets rows as ground truth: identities must be positive and
/// boxes valid.
pub fn rows_to_ground_truth(rows: &[MotRow]) -> Result<Vec<Vec<GroundTruthObject>>> {
    densify(rows)
        .iter()
        .map(|bucket| {
            bucket
                .iter()
                .map(|r| {
                    if r.id < 1 {
                        return Err(Error::InvalidConfig(format!(
                            "ground-truth id {} in frame {} must be positive",
                            r.id, r.frame
                        )));
                    }
                    Ok(GroundTruthObject {
                        id: r.id as u64,
                        bbox: BoundingBox::new(r.x, r.y, r.w, r.h)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Interprets rows as raw detections; identities are ignored and `conf`
/// must be a valid score.
pub fn rows_to_detections(rows: &[MotRow]) -> Result<Vec<Vec<Detection>>> {
    densify(rows)
        .iter()
        .map(|bucket| {
            bucket
                .iter()
                .map(|r| Detection::new(BoundingBox::new(r.x, r.y, r.w, r.h)?, r.conf))
                .collect()
        })
        .collect()
}

/// Interprets rows as tracker output: positive identities with scores.
pub fn rows_to_tracked(rows: &[MotRow]) -> Result<Vec<Vec<TrackedBox>>> {
    densify(rows)
        .iter()
        .map(|bucket| {
            bucket
                .iter()
                .map(|r| {
                    if r.id < 1 {
                        return Err(Error::InvalidConfig(format!(
                            "result id {} in frame {} must be positive",
                            r.id, r.frame
                        )));
                    }
                    Ok(TrackedBox {
                        id: r.id as u64,
                        bbox: BoundingBox::new(r.x, r.y, r.w, r.h)?,
                        score: r.conf,
                    })
                })
                .collect()
        })
        .collect()
}

pub fn ground_truth_to_rows(frames: &[Vec<GroundTruthObject>]) -> Vec<MotRow> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(t, frame)| {
            frame.iter().map(move |g| MotRow {
                frame: t + 1,
                id: g.id as i64,
                x: g.bbox.x(),
                y: g.bbox.y(),
                w: g.bbox.w(),
                h: g.bbox.h(),
                conf: 1.0,
            })
        })
        .collect()
}

pub fn detections_to_rows(frames: &[Vec<Detection>]) -> Vec<MotRow> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(t, frame)| {
            frame.iter().map(move |d| MotRow {
                frame: t + 1,
                id: -1,
                x: d.bbox().x(),
                y: d.bbox().y(),
                w: d.bbox().w(),
                h: d.bbox().h(),
                conf: d.score(),
            })
        })
        .collect()
}

pub fn tracked_to_rows(frames: &[Vec<TrackedBox>]) -> Vec<MotRow> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(t, frame)| {
            frame.iter().map(move |r| MotRow {
                frame: t + 1,
                id: r.id as i64,
                x: r.bbox.x(),
                y: r.bbox.y(),
                w: r.bbox.w(),
                h: r.bbox.h(),
                conf: r.score,
            })
        })
        .collect()
}

/// Serializes per-frame embeddings: a `frame,index,dim` header, then one
/// row per embedding carrying its frame, in-frame detection index, and
/// components.
pub fn format_embeddings(frames: &[Vec<Embedding>]) -> String {
    let mut out = String::from(EMBEDDINGS_HEADER);
    out.push('\n');
    for (t, frame) in frames.iter().enumerate() {
        for (j, e) in frame.iter().enumerate() {
            out.push_str(&format!("{},{}", t + 1, j));
            for v in e.values() {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Parses an embeddings file. Enforces the header, a constant component
/// count, and contiguous 0-based indices within each frame.
pub fn parse_embeddings(text: &str) -> Result<Vec<Vec<Embedding>>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if is_skippable(l) => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Err(Error::EmptyInput("embeddings file")),
        }
    };
    if header.1.trim() != EMBEDDINGS_HEADER {
        return Err(Error::Parse {
            line: header.0,
            message: format!("expected header '{EMBEDDINGS_HEADER}'"),
        });
    }

    let mut frames: Vec<Vec<Embedding>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in lines {
        let lineno = i + 1;
        if is_skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                message: "expected frame, index, and at least one component".into(),
            });
        }
        let frame: usize = parse_field(fields[0], lineno, "frame")?;
        if frame == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "frame numbers are 1-based".into(),
            });
        }
        let index: usize = parse_field(fields[1], lineno, "index")?;
        let values = fields[2..]
            .iter()
            .map(|f| finite_field(f, lineno, "component"))
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {d} components, found {}", values.len()),
                });
            }
            Some(_) => {}
        }
        if frames.len() < frame {
            frames.resize_with(frame, Vec::new);
        }
        if frames[frame - 1].len() != index {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "index {index} out of order in frame {frame} (expected {})",
                    frames[frame - 1].len()
                ),
            });
        }
        frames[frame - 1].push(Embedding::new(values)?);
    }
    Ok(frames)
}

/// Serializes one transform per frame: `frame,a,b,c,d,tx,ty` where the
/// linear part maps `(x, y)` to `(a x + b y + tx, c x + d y + ty)`.
pub fn format_transforms(transforms: &[AffineTransform]) -> String {
    let mut out = String::new();
    for (t, tr) in transforms.iter().enumerate() {
        let [[a, b, tx], [c, d, ty]] = tr.coefficients();
        out.push_str(&format!(
            "{},{a:.6},{b:.6},{c:.6},{d:.6},{tx:.6},{ty:.6}\n",
            t + 1
        ));
    }
    out
}

/// Parses a transforms file into a dense per-frame list: every frame
/// `1..=max` must appear exactly once.
pub fn parse_transforms(text: &str) -> Result<Vec<AffineTransform>> {
    let mut entries: Vec<(usize, usize, AffineTransform)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if is_skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let frame: usize = parse_field(fields[0], lineno, "frame")?;
        if frame == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "frame numbers are 1-based".into(),
            });
        }
        let a = finite_field(fields[1], lineno, "a")?;
        let b = finite_field(fields[2], lineno, "b")?;
        let c = finite_field(fields[3], lineno, "c")?;
        let d = finite_field(fields[4], lineno, "d")?;
        let tx = finite_field(fields[5], lineno, "tx")?;
        let ty = finite_field(fields[6], lineno, "ty")?;
        entries.push((frame, lineno, AffineTransform::new(a, b, c, d, tx, ty)?));
    }
    let mut out: Vec<Option<AffineTransform>> =
        vec![None; entries.iter().map(|e| e.0).max().unwrap_or(0)];
    for (frame, lineno, tr) in entries {
        if out[frame - 1].replace(tr).is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate transform for frame {frame}"),
            });
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(t, tr)| {
            tr.ok_or(Error::Parse {
                line: 0,
                message: format!("missing transform for frame {}", t + 1),
            })
        })
        .collect()
}

/// Flat `name,value` report of the evaluation metrics, floats with six
/// decimals.
pub fn format_metrics_report(result: &SequenceEvalResult) -> String {
    format!(
        "mota,{:.6}\nidf1,{:.6}\nmostly_tracked,{}\nmostly_lost,{}\nid_switches,{}\n\
         false_positives,{}\nfalse_negatives,{}\ngt_count,{}\ndetection_ap,{:.6}\n",
        result.mota,
        result.idf1,
        result.mostly_tracked,
        result.mostly_lost,
        result.id_switches,
        result.false_positives,
        result.false_negatives,
        result.gt_count,
        result.detection_ap,
    )
}

// ---------------------------------------------------------------------
// Engine configuration (TOML)
// ---------------------------------------------------------------------

/// Complete engine configuration, loadable from TOML. Every field has a
/// default, so a config file only states deviations; unknown keys are
/// rejected to catch typos.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub tracker: TrackerSection,
    pub sinkhorn: SinkhornSection,
    pub agreement: AgreementSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub init_score_threshold: f64,
    pub low_score_threshold: f64,
    pub match_threshold: f64,
    pub patience: usize,
    pub ema_momentum: f64,
    /// `bisoftmax`, `ot`, or `iou`.
    pub association: String,
    pub allow_low_score_spawn: bool,
    pub slack_cost: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerConfig::default();
        TrackerSection {
            init_score_threshold: d.init_score_threshold,
            low_score_threshold: d.low_score_threshold,
            match_threshold: d.match_threshold,
            patience: d.patience,
            ema_momentum: d.ema_momentum,
            association: d.association.to_string(),
            allow_low_score_spawn: d.allow_low_score_spawn,
            slack_cost: d.slack_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornSection {
    pub reg: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// `auto`, `standard`, or `log`.
    pub stabilization: String,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        let d = SinkhornConfig::default();
        SinkhornSection {
            reg: d.reg,
            max_iterations: d.max_iterations,
            convergence_tol: d.convergence_tol,
            stabilization: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgreementSection {
    pub low_score_threshold: f64,
    pub pair_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for AgreementSection {
    fn default() -> Self {
        let d = RecoveryConfig::default();
        AgreementSection {
            low_score_threshold: d.low_score_threshold,
            pair_threshold: d.pair_threshold,
            nms_threshold: d.nms_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { iou_threshold: 0.5 }
    }
}

impl EngineConfig {
    /// Parses TOML text; error messages carry the deserializer's own
    /// diagnostics (unknown keys, type mismatches, syntax).
    pub fn from_toml(text: &str) -> Result<Self> {
        // `message()` instead of `to_string()`: the Display form spans
        // several lines (it quotes the source), and config errors surface
        // on single-line diagnostics.
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.message().to_string()))
    }

    /// Validated solver settings.
    pub fn sinkhorn_config(&self) -> Result<SinkhornConfig> {
        let stabilization = match self.sinkhorn.stabilization.as_str() {
            "auto" => Stabilization::Auto,
            "standard" => Stabilization::Standard,
            "log" | "log_domain" => Stabilization::LogDomain,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown stabilization '{other}' (expected auto, standard, or log)"
                )))
            }
        };
        let config = SinkhornConfig {
            reg: self.sinkhorn.reg,
            max_iterations: self.sinkhorn.max_iterations,
            convergence_tol: self.sinkhorn.convergence_tol,
            stabilization,
        };
        config.validate()?;
        Ok(config)
    }

    /// Validated tracker settings (includes the solver section).
    pub fn tracker_config(&self) -> Result<TrackerConfig> {
        let config = TrackerConfig {
            init_score_threshold: self.tracker.init_score_threshold,
            low_score_threshold: self.tracker.low_score_threshold,
            match_threshold: self.tracker.match_threshold,
            patience: self.tracker.patience,
            ema_momentum: self.tracker.ema_momentum,
            association: self.tracker.association.parse::<AssociationMode>()?,
            allow_low_score_spawn: self.tracker.allow_low_score_spawn,
            sinkhorn: self.sinkhorn_config()?,
            slack_cost: self.tracker.slack_cost,
        };
        config.validate()?;
        Ok(config)
    }

    /// Validated cross-view recovery settings.
    pub fn recovery_config(&self) -> Result<RecoveryConfig> {
        let config = RecoveryConfig {
            low_score_threshold: self.agreement.low_score_threshold,
            pair_threshold: self.agreement.pair_threshold,
            nms_threshold: self.agreement.nms_threshold,
        };
        config.validate()?;
        Ok(config)
    }
}

// ---------------------------------------------------------------------
// Path-based convenience wrappers
// ---------------------------------------------------------------------

/// Reads a whole file, annotating failures with the path.
pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a whole file, annotating failures with the path.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}
