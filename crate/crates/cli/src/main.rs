//! `sinktrack` — drive the association engine from the shell.
//!
//! Subcommands cover the full desk-scale loop: `synth` writes a
//! deterministic synthetic sequence, `track` runs the tracker over
//! detection files, `eval` scores results against ground truth, `agree`
//! compares two detection views and recovers cross-view-consistent
//! proposals, and `sinkhorn` solves a single transport problem for
//! inspection.
//!
//! Settings resolve in precedence order: explicit flags beat the
//! `--config` TOML file, which beats built-in defaults. All file output
//! goes through fixed-precision formatters, so identical inputs produce
//! byte-identical outputs.
//!
//! Errors print as a single `error: ...` line on stderr with exit
//! status 1.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use sinktrack::agreement::{agree, recover_proposals, AugmentedView};
use sinktrack::geometry::{iou, Detection};
use sinktrack::losses::Embedding;
use sinktrack::metrics::{evaluate, TrackedBox};
use sinktrack::mot_io::{self, EngineConfig};
use sinktrack::synth::{dual_views, generate, DualViewConfig, SynthConfig};
use sinktrack::tracker::Tracker;
use sinktrack::transport::{sinkhorn_solve, CostMatrix};
use sinktrack::{assignment, Error, Result};

#[derive(Parser)]
#[command(
    name = "sinktrack",
    version,
    about = "Tracking-by-detection association engine",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic sequence.
    Synth(SynthArgs),
    /// Associate detections into tracks.
    Track(TrackArgs),
    /// Score tracking results against ground truth.
    Eval(EvalArgs),
    /// Compare two detection views and recover consistent proposals.
    Agree(AgreeArgs),
    /// Solve one entropic transport problem on random costs.
    Sinkhorn(SinkhornArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the generated files (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    objects: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Motion pattern: linear, crossing, or sinusoidal.
    #[arg(long, default_value = "linear")]
    motion: String,
    /// Per-frame probability of dropping a true detection.
    #[arg(long, default_value_t = 0.0)]
    fn_rate: f64,
    /// Per-object-slot probability of injecting a spurious detection.
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    /// Box position noise, pixels (also scales score noise).
    #[arg(long, default_value_t = 0.0)]
    loc_noise: f64,
    /// Subtracted from every true detection's confidence.
    #[arg(long, default_value_t = 0.0)]
    score_depression: f64,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    embed_noise: f64,
    /// Appearance separation between objects: 1 orthogonal, 0 identical.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also derive two independently jittered views per frame.
    #[arg(long)]
    views: bool,
    /// Position jitter for the derived views, pixels.
    #[arg(long, default_value_t = 1.0)]
    view_jitter: f64,
    /// Pass view B through a random scale+translation per frame.
    #[arg(long)]
    view_affine: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Detections file (box CSV).
    #[arg(long)]
    dets: PathBuf,
    /// Embeddings sidecar; required by the appearance-based modes.
    #[arg(long)]
    embeds: Option<PathBuf>,
    /// Engine configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Association mode: bisoftmax, ot, or iou.
    #[arg(long)]
    association: Option<String>,
    #[arg(long)]
    match_threshold: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    init_score_threshold: Option<f64>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth file (box CSV).
    #[arg(long)]
    gt: PathBuf,
    /// Tracking results file (box CSV).
    #[arg(long)]
    results: PathBuf,
    /// Engine configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overlap threshold for a true positive.
    #[arg(long)]
    iou: Option<f64>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgreeArgs {
    /// First view (box CSV).
    #[arg(long)]
    view_a: PathBuf,
    /// Second view (box CSV).
    #[arg(long)]
    view_b: PathBuf,
    /// Per-frame transforms mapping view-B boxes back to the original
    /// coordinates.
    #[arg(long)]
    transforms: Option<PathBuf>,
    /// Engine configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum per-view score for recovery.
    #[arg(long)]
    low_threshold: Option<f64>,
    /// Minimum cross-view overlap for a pair.
    #[arg(long)]
    pair_threshold: Option<f64>,
    /// Suppression overlap for recovered proposals.
    #[arg(long)]
    nms_threshold: Option<f64>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated low-score thresholds to sweep; emits a
    /// threshold/recall table instead of proposals. Requires --gt.
    #[arg(long, value_delimiter = ',')]
    sweep_low_thresholds: Vec<f64>,
    /// Ground truth for scoring swept thresholds.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct SinkhornArgs {
    /// Problem size as ROWSxCOLS, e.g. 100x20.
    #[arg(long, default_value = "8x8")]
    size: String,
    /// Engine configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cost of the slack row/column absorbing any count imbalance.
    #[arg(long, default_value_t = 1.0)]
    slack_cost: f64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Track(args) => run_track(args),
        Command::Eval(args) => run_eval(args),
        Command::Agree(args) => run_agree(args),
        Command::Sinkhorn(args) => run_sinkhorn(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Loads the TOML config when given, otherwise defaults.
fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::from_toml(&mot_io::read_file(p)?),
        None => Ok(EngineConfig::default()),
    }
}

/// Writes to the file when given, otherwise to stdout.
fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => mot_io::write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_objects: args.objects,
        n_frames: args.frames,
        motion: args.motion.parse()?,
        fn_rate: args.fn_rate,
        fp_rate: args.fp_rate,
        loc_noise_sigma: args.loc_noise,
        score_depression: args.score_depression,
        embed_dim: args.embed_dim,
        embed_noise_sigma: args.embed_noise,
        appearance_separation: args.separation,
        seed: args.seed,
    };
    let sequence = generate(&config)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let write = |name: &str, contents: &str| -> Result<()> {
        mot_io::write_file(&args.out_dir.join(name), contents)
    };
    write(
        "gt.txt",
        &mot_io::format_mot(&mot_io::ground_truth_to_rows(&sequence.ground_truth)),
    )?;
    write(
        "dets.txt",
        &mot_io::format_mot(&mot_io::detections_to_rows(&sequence.detections)),
    )?;
    write("embeds.txt", &mot_io::format_embeddings(&sequence.embeddings))?;

    if args.views {
        // The view stream is separate from the sequence stream, so adding
        // views never changes the sequence itself.
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rng.set_stream(1);
        let view_config = DualViewConfig {
            jitter_sigma: args.view_jitter,
            score_sigma: 0.02,
            affine_view_b: args.view_affine,
        };
        let mut view_a_frames = Vec::with_capacity(sequence.detections.len());
        let mut view_b_frames = Vec::with_capacity(sequence.detections.len());
        let mut inverses = Vec::with_capacity(sequence.detections.len());
        for dets in &sequence.detections {
            let views = dual_views(dets, &view_config, &mut rng)?;
            view_a_frames.push(views.view_a);
            view_b_frames.push(views.view_b);
            inverses.push(
                views
                    .inverse_b
                    .unwrap_or_else(sinktrack::geometry::AffineTransform::identity),
            );
        }
        write(
            "view_a.txt",
            &mot_io::format_mot(&mot_io::detections_to_rows(&view_a_frames)),
        )?;
        write(
            "view_b.txt",
            &mot_io::format_mot(&mot_io::detections_to_rows(&view_b_frames)),
        )?;
        // Stored transforms map view-B boxes back to original coordinates.
        write("transforms.txt", &mot_io::format_transforms(&inverses))?;
    }
    Ok(())
}

fn run_track(args: TrackArgs) -> Result<()> {
    let mut engine = load_config(args.config.as_deref())?;
    if let Some(mode) = args.association {
        engine.tracker.association = mode;
    }
    if let Some(v) = args.match_threshold {
        engine.tracker.match_threshold = v;
    }
    if let Some(v) = args.patience {
        engine.tracker.patience = v;
    }
    if let Some(v) = args.init_score_threshold {
        engine.tracker.init_score_threshold = v;
    }
    let tracker_config = engine.tracker_config()?;

    let detections =
        mot_io::rows_to_detections(&mot_io::parse_mot(&mot_io::read_file(&args.dets)?)?)?;
    let embeddings: Option<Vec<Vec<Embedding>>> = match &args.embeds {
        Some(path) => {
            let mut frames = mot_io::parse_embeddings(&mot_io::read_file(path)?)?;
            // Trailing detection-free frames may be absent from the
            // sidecar; materialize them as empty.
            if frames.len() > detections.len() {
                return Err(Error::MisalignedFrames {
                    gt_frames: detections.len(),
                    result_frames: frames.len(),
                });
            }
            frames.resize_with(detections.len(), Vec::new);
            Some(frames)
        }
        None => None,
    };

    let mut tracker = Tracker::new(tracker_config)?;
    let mut frames: Vec<Vec<TrackedBox>> = Vec::with_capacity(detections.len());
    for (t, dets) in detections.iter().enumerate() {
        tracker.step(dets, embeddings.as_ref().map(|e| e[t].as_slice()))?;
        frames.push(
            tracker
                .active_tracks()
                .map(|track| TrackedBox {
                    id: track.id(),
                    bbox: track.bbox(),
                    score: track.last_score(),
                })
                .collect(),
        );
    }
    emit(
        args.out.as_deref(),
        &mot_io::format_mot(&mot_io::tracked_to_rows(&frames)),
    )
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let engine = load_config(args.config.as_deref())?;
    let iou_threshold = args.iou.unwrap_or(engine.eval.iou_threshold);

    let ground_truth =
        mot_io::rows_to_ground_truth(&mot_io::parse_mot(&mot_io::read_file(&args.gt)?)?)?;
    let mut results =
        mot_io::rows_to_tracked(&mot_io::parse_mot(&mot_io::read_file(&args.results)?)?)?;
    // A tracker that reported nothing in the trailing frames still covers
    // them; results that claim frames beyond the ground truth do not.
    if results.len() > ground_truth.len() {
        return Err(Error::MisalignedFrames {
            gt_frames: ground_truth.len(),
            result_frames: results.len(),
        });
    }
    results.resize_with(ground_truth.len(), Vec::new);

    let scores = evaluate(&ground_truth, &results, iou_threshold)?;
    emit(args.out.as_deref(), &mot_io::format_metrics_report(&scores))
}

fn run_agree(args: AgreeArgs) -> Result<()> {
    let engine = load_config(args.config.as_deref())?;
    let mut recovery = engine.recovery_config()?;
    if let Some(v) = args.low_threshold {
        recovery.low_score_threshold = v;
    }
    if let Some(v) = args.pair_threshold {
        recovery.pair_threshold = v;
    }
    if let Some(v) = args.nms_threshold {
        recovery.nms_threshold = v;
    }
    recovery.validate()?;

    let view_a =
        mot_io::rows_to_detections(&mot_io::parse_mot(&mot_io::read_file(&args.view_a)?)?)?;
    let view_b =
        mot_io::rows_to_detections(&mot_io::parse_mot(&mot_io::read_file(&args.view_b)?)?)?;
    if view_a.len() != view_b.len() {
        return Err(Error::MisalignedFrames {
            gt_frames: view_a.len(),
            result_frames: view_b.len(),
        });
    }
    let transforms = match &args.transforms {
        Some(path) => {
            let ts = mot_io::parse_transforms(&mot_io::read_file(path)?)?;
            if ts.len() != view_b.len() {
                return Err(Error::MisalignedFrames {
                    gt_frames: view_b.len(),
                    result_frames: ts.len(),
                });
            }
            Some(ts)
        }
        None => None,
    };

    let frame_views = |t: usize| -> (AugmentedView, AugmentedView) {
        let a = AugmentedView::original(view_a[t].clone());
        let b = match &transforms {
            Some(ts) => AugmentedView::augmented(view_b[t].clone(), Some(ts[t])),
            None => AugmentedView::original(view_b[t].clone()),
        };
        (a, b)
    };

    if !args.sweep_low_thresholds.is_empty() {
        let gt_path = args.gt.as_ref().ok_or(Error::InvalidConfig(
            "--sweep-low-thresholds requires --gt for scoring".into(),
        ))?;
        let ground_truth =
            mot_io::rows_to_ground_truth(&mot_io::parse_mot(&mot_io::read_file(gt_path)?)?)?;
        if ground_truth.len() != view_a.len() {
            return Err(Error::MisalignedFrames {
                gt_frames: ground_truth.len(),
                result_frames: view_a.len(),
            });
        }
        let mut table = String::from(
            "low_threshold,recovered,true_positives,false_positives,false_negatives\n",
        );
        for &threshold in &args.sweep_low_thresholds {
            let mut swept = recovery;
            swept.low_score_threshold = threshold;
            swept.validate()?;
            let (mut recovered, mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
            for (t, gt_frame) in ground_truth.iter().enumerate() {
                let (a, b) = frame_views(t);
                let proposals = recover_proposals(&a, &b, &swept)?;
                recovered += proposals.len();
                let (frame_tp, frame_fp, frame_fn) = score_proposals(&proposals, gt_frame);
                tp += frame_tp;
                fp += frame_fp;
                fn_ += frame_fn;
            }
            table.push_str(&format!("{threshold:.6},{recovered},{tp},{fp},{fn_}\n"));
        }
        return emit(args.out.as_deref(), &table);
    }

    // Normal mode: recovered proposals as box records, plus a trailing
    // comment with the mean agreement loss across non-empty frames.
    let mut frames: Vec<Vec<Detection>> = Vec::with_capacity(view_a.len());
    let mut loss_sum = 0.0;
    let mut loss_frames = 0usize;
    for t in 0..view_a.len() {
        let (a, b) = frame_views(t);
        let result = agree(&a, &b, recovery.pair_threshold)?;
        if !result.loss.no_objects {
            loss_sum += result.loss.value;
            loss_frames += 1;
        }
        frames.push(recover_proposals(&a, &b, &recovery)?);
    }
    let mut out = mot_io::format_mot(&mot_io::detections_to_rows(&frames));
    let mean_loss = if loss_frames > 0 {
        loss_sum / loss_frames as f64
    } else {
        0.0
    };
    out.push_str(&format!("# mean_agreement_loss,{mean_loss:.6}\n"));
    emit(args.out.as_deref(), &out)
}

/// Greedy per-frame proposal scoring against ground truth at IoU 0.5.
fn score_proposals(
    proposals: &[Detection],
    ground_truth: &[sinktrack::synth::GroundTruthObject],
) -> (usize, usize, usize) {
    let mut taken = vec![false; ground_truth.len()];
    let mut tp = 0usize;
    for p in proposals {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in ground_truth.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let overlap = iou(p.bbox(), g.bbox);
            if overlap >= 0.5 && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            tp += 1;
        }
    }
    (tp, proposals.len() - tp, ground_truth.len() - tp)
}

fn run_sinkhorn(args: SinkhornArgs) -> Result<()> {
    let engine = load_config(args.config.as_deref())?;
    let mut solver = engine.sinkhorn_config()?;
    if let Some(v) = args.reg {
        solver.reg = v;
    }
    if let Some(v) = args.iterations {
        solver.max_iterations = v;
    }
    solver.validate()?;

    let (rows, cols) = parse_size(&args.size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let cost = CostMatrix::new(ndarray::Array2::from_shape_fn((rows, cols), |_| {
        rand::Rng::random_range(&mut rng, 0.0..1.0)
    }))?;

    let (marginals, slack) = assignment::marginals_one_to_one(rows, cols)?;
    let padded = cost.with_slack(&slack, args.slack_cost)?;
    let plan = sinkhorn_solve(&padded, &marginals, &solver)?;
    let violation = plan.marginal_violation(&marginals)?;
    let transport_cost = plan.transport_cost(&padded)?;

    let report = format!(
        "rows,{rows}\ncols,{cols}\nreg,{:.6}\niterations,{}\nconverged,{}\n\
         marginal_violation,{:.9}\ntransport_cost,{:.6}\n",
        solver.reg,
        plan.iterations(),
        plan.converged(),
        violation,
        transport_cost,
    );
    emit(args.out.as_deref(), &report)
}

/// Parses `ROWSxCOLS`.
fn parse_size(size: &str) -> Result<(usize, usize)> {
    let invalid = || {
        Error::InvalidConfig(format!(
            "size '{size}' must look like ROWSxCOLS, e.g. 100x20"
        ))
    };
    let (r, c) = size.split_once('x').ok_or_else(invalid)?;
    let rows: usize = r.trim().parse().map_err(|_| invalid())?;
    let cols: usize = c.trim().parse().map_err(|_| invalid())?;
    if rows == 0 || cols == 0 {
        return Err(invalid());
    }
    Ok((rows, cols))
}
