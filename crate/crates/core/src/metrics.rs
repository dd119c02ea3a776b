//! Multi-object tracking evaluation: event-based accuracy (MOTA and its
//! components), identity-based F1 (IDF1), per-object coverage classes
//! (mostly tracked / mostly lost), and a detection average precision that
//! ignores identities entirely.
//!
//! The two headline numbers answer different questions. MOTA counts
//! frame-local events — misses, false alarms, identity switches — so a
//! tracker that swaps two identities once pays once. IDF1 instead asks
//! for the best *global* one-to-one pairing of ground-truth and
//! hypothesis identities and measures how many frames agree with it, so
//! a mid-sequence swap keeps hurting for as long as it persists.

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::synth::GroundTruthObject;
use crate::transport::{
    exact_assignment_oracle, extract_hard_assignment, sinkhorn_solve, CostMatrix, Marginals,
    SinkhornConfig, SlackInfo, Stabilization, ORACLE_MAX_SIZE,
};
use ndarray::Array2;
use std::collections::BTreeMap;

/// One tracker output in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    /// Hypothesis identity (stable across frames).
    pub id: u64,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Aggregate scores for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEvalResult {
    /// `1 - (FP + FN + IDSW) / total ground-truth instances`. Can go
    /// negative when errors outnumber objects.
    pub mota: f64,
    /// Identity F1 under the best global id pairing.
    pub idf1: f64,
    /// Ground-truth identities covered in at least 80% of their frames.
    pub mostly_tracked: usize,
    /// Ground-truth identities covered in at most 20% of their frames.
    pub mostly_lost: usize,
    pub id_switches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Total ground-truth instances (the MOTA denominator).
    pub gt_count: usize,
    /// Identity-agnostic detection AP at the same IoU threshold.
    pub detection_ap: f64,
}

/// Evaluates a tracker's per-frame output against per-frame ground truth.
///
/// The two sequences must cover the same frames index-for-index; callers
/// with ragged data pad the short side explicitly rather than having the
/// evaluator guess an alignment. A box pair counts as co-located when its
/// IoU reaches `iou_threshold`.
pub fn evaluate(
    ground_truth: &[Vec<GroundTruthObject>],
    results: &[Vec<TrackedBox>],
    iou_threshold: f64,
) -> Result<SequenceEvalResult> {
    if ground_truth.len() != results.len() {
        return Err(Error::MisalignedFrames {
            gt_frames: ground_truth.len(),
            result_frames: results.len(),
        });
    }
    if !iou_threshold.is_finite() || !(0.0..=1.0).contains(&iou_threshold) || iou_threshold == 0.0
    {
        return Err(Error::InvalidConfig(format!(
            "iou_threshold {iou_threshold} must lie in (0, 1]"
        )));
    }
    let gt_count: usize = ground_truth.iter().map(Vec::len).sum();
    if gt_count == 0 {
        return Err(Error::EmptyInput("ground truth instances"));
    }
    for (t, frame) in ground_truth.iter().enumerate() {
        check_unique_ids(frame.iter().map(|g| g.id), "ground-truth", t)?;
    }
    for (t, frame) in results.iter().enumerate() {
        check_unique_ids(frame.iter().map(|r| r.id), "hypothesis", t)?;
    }

    // --- CLEAR event loop ---------------------------------------------
    let mut false_negatives = 0usize;
    let mut false_positives = 0usize;
    let mut id_switches = 0usize;
    // Ground-truth id -> hypothesis id it was last matched to.
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    // Per ground-truth id: (frames present, frames matched).
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    // Identity co-location counts for IDF1.
    let mut pair_frames: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut gt_frames: BTreeMap<u64, usize> = BTreeMap::new();
    let mut hyp_frames: BTreeMap<u64, usize> = BTreeMap::new();

    for (gt_row, hyp_row) in ground_truth.iter().zip(results) {
        for g in gt_row {
            coverage.entry(g.id).or_insert((0, 0)).0 += 1;
            *gt_frames.entry(g.id).or_insert(0) += 1;
        }
        for h in hyp_row {
            *hyp_frames.entry(h.id).or_insert(0) += 1;
        }
        // Identity co-location is independent of the event matching.
        for g in gt_row {
            for h in hyp_row {
                if iou(g.bbox, h.bbox) >= iou_threshold {
                    *pair_frames.entry((g.id, h.id)).or_insert(0) += 1;
                }
            }
        }

        let mut gt_free: Vec<usize> = (0..gt_row.len()).collect();
        let mut hyp_free: Vec<usize> = (0..hyp_row.len()).collect();
        let mut matches: Vec<(usize, usize)> = Vec::new();

        // Continuity first: a pair matched last time stays matched while
        // it still overlaps, even if some newcomer overlaps better.
        gt_free.retain(|&gi| {
            let g = &gt_row[gi];
            let Some(&wanted_hyp) = last_match.get(&g.id) else {
                return true;
            };
            let Some(pos) = hyp_free
                .iter()
                .position(|&hj| hyp_row[hj].id == wanted_hyp)
            else {
                return true;
            };
            let hj = hyp_free[pos];
            if iou(g.bbox, hyp_row[hj].bbox) >= iou_threshold {
                matches.push((gi, hj));
                hyp_free.remove(pos);
                false
            } else {
                true
            }
        });

        // Fresh pairs for whatever continuity left over.
        if !gt_free.is_empty() && !hyp_free.is_empty() {
            let mut weights = Array2::zeros((gt_free.len(), hyp_free.len()));
            for (a, &gi) in gt_free.iter().enumerate() {
                for (b, &hj) in hyp_free.iter().enumerate() {
                    let overlap = iou(gt_row[gi].bbox, hyp_row[hj].bbox);
                    if overlap >= iou_threshold {
                        weights[[a, b]] = overlap;
                    }
                }
            }
            for (a, b) in max_weight_matching(&weights)? {
                matches.push((gt_free[a], hyp_free[b]));
            }
        }

        for &(gi, hj) in &matches {
            let gt_id = gt_row[gi].id;
            let hyp_id = hyp_row[hj].id;
            if let Some(&prev) = last_match.get(&gt_id) {
                if prev != hyp_id {
                    id_switches += 1;
                }
            }
            last_match.insert(gt_id, hyp_id);
            coverage.get_mut(&gt_id).unwrap().1 += 1;
        }
        false_negatives += gt_row.len() - matches.len();
        false_positives += hyp_row.len() - matches.len();
    }

    let mota =
        1.0 - (false_positives + false_negatives + id_switches) as f64 / gt_count as f64;

    // --- IDF1 ------------------------------------------------------------
    let idf1 = identity_f1(&pair_frames, &gt_frames, &hyp_frames)?;

    // --- Coverage classes -------------------------------------------------
    let mut mostly_tracked = 0usize;
    let mut mostly_lost = 0usize;
    for &(present, matched) in coverage.values() {
        let ratio = matched as f64 / present as f64;
        if ratio >= 0.8 {
            mostly_tracked += 1;
        }
        if ratio <= 0.2 {
            mostly_lost += 1;
        }
    }

    let detection_ap = detection_average_precision(ground_truth, results, iou_threshold)?;

    Ok(SequenceEvalResult {
        mota,
        idf1,
        mostly_tracked,
        mostly_lost,
        id_switches,
        false_positives,
        false_negatives,
        gt_count,
        detection_ap,
    })
}

fn check_unique_ids(
    ids: impl Iterator<Item = u64>,
    side: &str,
    frame: usize,
) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidConfig(format!(
                "duplicate {side} id {id} in frame {frame}"
            )));
        }
    }
    Ok(())
}

/// IDF1 from co-location counts: pick the one-to-one id pairing that
/// maximizes total co-located frames (IDTP), then
/// `2 * IDTP / (gt frames + hypothesis frames)`.
fn identity_f1(
    pair_frames: &BTreeMap<(u64, u64), usize>,
    gt_frames: &BTreeMap<u64, usize>,
    hyp_frames: &BTreeMap<u64, usize>,
) -> Result<f64> {
    let total_gt: usize = gt_frames.values().sum();
    let total_hyp: usize = hyp_frames.values().sum();
    if total_gt + total_hyp == 0 {
        return Ok(0.0);
    }
    if pair_frames.is_empty() {
        return Ok(0.0);
    }
    let gt_ids: Vec<u64> = gt_frames.keys().copied().collect();
    let hyp_ids: Vec<u64> = hyp_frames.keys().copied().collect();
    let gt_index: BTreeMap<u64, usize> =
        gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let hyp_index: BTreeMap<u64, usize> =
        hyp_ids.iter().enumerate().map(|(j, &id)| (id, j)).collect();
    let mut weights = Array2::zeros((gt_ids.len(), hyp_ids.len()));
    for (&(g, h), &frames) in pair_frames {
        weights[[gt_index[&g], hyp_index[&h]]] = frames as f64;
    }
    let idtp: f64 = max_weight_matching(&weights)?
        .into_iter()
        .map(|(i, j)| weights[[i, j]])
        .sum();
    Ok(2.0 * idtp / (total_gt + total_hyp) as f64)
}

/// Maximum-weight bipartite matching. Zero-weight pairs are ineligible;
/// the returned pairs all carry positive weight.
///
/// The graph splits into connected components first. Small components
/// (at most [`ORACLE_MAX_SIZE`] on the longer side) are solved exactly by
/// the enumeration oracle on a square-padded negated-weight matrix;
/// larger ones fall back to a sharply regularized transport solve, which
/// is near-exact when the component has a dominant assignment.
pub fn max_weight_matching(weights: &Array2<f64>) -> Result<Vec<(usize, usize)>> {
    let (n, m) = weights.dim();
    for &w in weights.iter() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::NonFinite("matching weights"));
        }
    }
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }

    // Connected components over rows/columns joined by positive weights.
    let mut row_comp = vec![usize::MAX; n];
    let mut pairs = Vec::new();
    let mut visited_cols = vec![false; m];
    for start in 0..n {
        if row_comp[start] != usize::MAX {
            continue;
        }
        // BFS from this row over the bipartite adjacency.
        let mut rows = vec![start];
        let mut cols: Vec<usize> = Vec::new();
        row_comp[start] = start;
        let mut queue_rows = vec![start];
        while let Some(r) = queue_rows.pop() {
            for c in 0..m {
                if weights[[r, c]] <= 0.0 || visited_cols[c] {
                    continue;
                }
                visited_cols[c] = true;
                cols.push(c);
                for r2 in 0..n {
                    if weights[[r2, c]] > 0.0 && row_comp[r2] == usize::MAX {
                        row_comp[r2] = start;
                        rows.push(r2);
                        queue_rows.push(r2);
                    }
                }
            }
        }
        if cols.is_empty() {
            continue;
        }
        pairs.extend(match_component(weights, &rows, &cols)?);
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Solves one connected component, returning global index pairs.
fn match_component(
    weights: &Array2<f64>,
    rows: &[usize],
    cols: &[usize],
) -> Result<Vec<(usize, usize)>> {
    let k = rows.len().max(cols.len());
    let peak = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| weights[[r, c]]))
        .fold(0.0f64, f64::max);

    let assignment: Vec<(usize, usize)> = if k <= ORACLE_MAX_SIZE {
        // Exact: square-pad and minimize negated weights. Dummy and
        // ineligible cells cost 0, the same as leaving a row unmatched.
        let mut cost = Array2::zeros((k, k));
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in cols.iter().enumerate() {
                cost[[a, b]] = -weights[[r, c]];
            }
        }
        let (perm, _) = exact_assignment_oracle(&CostMatrix::new(cost)?)?;
        perm.into_iter().enumerate().collect()
    } else {
        // Fallback: entropic assignment on normalized costs.
        let mut cost = Array2::from_elem((k, k), 1.0);
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in cols.iter().enumerate() {
                cost[[a, b]] = 1.0 - weights[[r, c]] / peak;
            }
        }
        let marginals = Marginals::new(vec![1.0; k], vec![1.0; k])?;
        let config = SinkhornConfig {
            reg: 0.01,
            max_iterations: 1000,
            convergence_tol: 1e-9,
            stabilization: Stabilization::Auto,
        };
        let plan = sinkhorn_solve(&CostMatrix::new(cost)?, &marginals, &config)?;
        extract_hard_assignment(&plan, &SlackInfo::none()).pairs
    };

    Ok(assignment
        .into_iter()
        .filter(|&(a, b)| {
            a < rows.len() && b < cols.len() && weights[[rows[a], cols[b]]] > 0.0
        })
        .map(|(a, b)| (rows[a], cols[b]))
        .collect())
}

/// Identity-agnostic detection average precision with all-points
/// interpolation: detections are pooled across frames, sorted by score,
/// greedily matched within their own frame, and the precision envelope
/// integrated over recall.
pub fn detection_average_precision(
    ground_truth: &[Vec<GroundTruthObject>],
    results: &[Vec<TrackedBox>],
    iou_threshold: f64,
) -> Result<f64> {
    if ground_truth.len() != results.len() {
        return Err(Error::MisalignedFrames {
            gt_frames: ground_truth.len(),
            result_frames: results.len(),
        });
    }
    let total_gt: usize = ground_truth.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::EmptyInput("ground truth instances"));
    }

    // Pool detections as (score, frame, index), best first.
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (t, frame) in results.iter().enumerate() {
        for (j, r) in frame.iter().enumerate() {
            if !r.score.is_finite() {
                return Err(Error::InvalidScore(r.score));
            }
            pool.push((r.score, t, j));
        }
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gt_taken: Vec<Vec<bool>> =
        ground_truth.iter().map(|f| vec![false; f.len()]).collect();
    let mut tp_flags = Vec::with_capacity(pool.len());
    for &(_, t, j) in &pool {
        let bbox = results[t][j].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in ground_truth[t].iter().enumerate() {
            if gt_taken[t][gi] {
                continue;
            }
            let overlap = iou(bbox, g.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[t][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }

    // Precision/recall points, then the interpolated envelope.
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(tp_flags.len());
    for (k, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1;
        }
        points.push((
            tp as f64 / total_gt as f64,
            tp as f64 / (k + 1) as f64,
        ));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            let envelope = points[k..]
                .iter()
                .map(|&(_, p)| p)
                .fold(0.0f64, f64::max);
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    Ok(ap)
}
