//! Tracking-by-detection association engine.
//!
//! The crate provides the numerical core of a multi-object tracker that
//! treats frame-to-frame data association as an entropy-regularized optimal
//! transport problem, plus the surrounding machinery needed to exercise it
//! end to end without any learned components:
//!
//! - [`geometry`] — axis-aligned boxes, IoU / generalized IoU, NMS, and
//!   affine view transforms.
//! - [`transport`] — cost matrices, Sinkhorn-Knopp scaling (standard and
//!   log-domain), a brute-force exact assignment oracle, and hard-assignment
//!   extraction from soft plans.
//! - [`assignment`] — marginal construction for one-to-one and one-to-many
//!   association problems, soft label selection, and the plan-consistency
//!   auxiliary loss.
//! - [`agreement`] — cross-view consistency scoring between two augmented
//!   views of the same frame and proposal recovery from low-confidence
//!   detections.
//! - [`losses`] — detection (smooth-L1 + cross-entropy) and contrastive
//!   embedding losses with analytic gradients.
//! - [`tracker`] — the online track lifecycle (spawn / update / lose /
//!   remove) over pluggable association strategies.
//! - [`metrics`] — CLEAR-style evaluation (MOTA, ID switches, MT/ML) and
//!   identity-preservation scoring (IDF1), plus single-class detection AP.
//! - [`synth`] — deterministic synthetic sequence generation for testing
//!   and benchmarking the pipeline at desk scale.
//! - [`mot_io`] — plain-text interchange formats (MOT-style CSV, embedding
//!   tables, affine transforms, TOML configuration, metric reports).
//!
//! Everything is plain Rust over `f64`; the only matrix type exposed is
//! [`ndarray::Array2`].

pub mod agreement;
pub mod assignment;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod mot_io;
pub mod synth;
pub mod tracker;
pub mod transport;

pub use error::{Error, Result};
