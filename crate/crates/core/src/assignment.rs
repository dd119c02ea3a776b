//! Marginal construction for association problems and the training-side
//! consumers of solved plans: soft label selection and the plan-consistency
//! auxiliary loss.
//!
//! Two marginal layouts are supported:
//!
//! - **one-to-one** (inference): every track and detection carries unit
//!   mass; when the sides are unbalanced, the deficient side is extended
//!   with a single slack entry absorbing the surplus, so unmatched mass
//!   has somewhere explicit to go.
//! - **one-to-many** (training): each track row carries mass equal to the
//!   number of proposals assigned to it, positive proposal columns carry
//!   unit mass, and negative proposal columns carry zero.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::transport::{Marginals, SlackInfo, TransportPlan};

/// Proposals sampled around ground truth for training-style assignment:
/// positives carry the row (track) index that owns them; negatives belong
/// to no row. Column order in derived matrices is positives first, then
/// negatives.
#[derive(Debug, Clone, Default)]
pub struct SampledProposals {
    pub positives: Vec<(BoundingBox, usize)>,
    pub negatives: Vec<BoundingBox>,
}

impl SampledProposals {
    pub fn n_columns(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    /// All proposal boxes in column order.
    pub fn columns(&self) -> Vec<BoundingBox> {
        self.positives
            .iter()
            .map(|&(b, _)| b)
            .chain(self.negatives.iter().copied())
            .collect()
    }
}

/// Unit-mass marginals for matching `n_rows` tracks against `n_cols`
/// detections. The deficient side gains one slack entry holding the
/// surplus `|n_rows - n_cols|`, making the problem balanced; a balanced
/// input gets no slack at all.
pub fn marginals_one_to_one(n_rows: usize, n_cols: usize) -> Result<(Marginals, SlackInfo)> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptyInput("one-to-one marginals"));
    }
    let mut row = vec![1.0; n_rows];
    let mut col = vec![1.0; n_cols];
    let mut slack = SlackInfo::none();
    match n_rows.cmp(&n_cols) {
        std::cmp::Ordering::Less => {
            row.push((n_cols - n_rows) as f64);
            slack.row = Some(n_rows);
        }
        std::cmp::Ordering::Greater => {
            col.push((n_rows - n_cols) as f64);
            slack.col = Some(n_cols);
        }
        std::cmp::Ordering::Equal => {}
    }
    Ok((Marginals::new(row, col)?, slack))
}

/// Marginals for assigning sampled proposals to `rows` tracks: row mass
/// counts owned positives (possibly zero), positive columns carry one unit
/// each, negative columns none. Owners must index a valid row.
pub fn marginals_one_to_many(rows: usize, sampled: &SampledProposals) -> Result<Marginals> {
    if rows == 0 {
        return Err(Error::EmptyInput("one-to-many rows"));
    }
    if sampled.n_columns() == 0 {
        return Err(Error::EmptyInput("one-to-many proposals"));
    }
    let mut row = vec![0.0; rows];
    for &(_, owner) in &sampled.positives {
        if owner >= rows {
            return Err(Error::ProposalOwnerOutOfRange { owner, rows });
        }
        row[owner] += 1.0;
    }
    let mut col = vec![1.0; sampled.positives.len()];
    col.extend(std::iter::repeat_n(0.0, sampled.negatives.len()));
    Marginals::new(row, col)
}

/// Per-row training targets distilled from a plan: the column to treat as
/// the positive example and the column to treat as the hardest negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftLabel {
    pub row: usize,
    pub positive_col: usize,
    pub negative_col: usize,
}

/// For every real row of `plan`, selects the highest-mass real column as
/// the positive and the lowest-mass real column as the negative.
///
/// Ties go to the lowest index, with the negative choice skipping the
/// already-chosen positive so the two labels always differ. Requires at
/// least two real (non-slack) columns.
pub fn select_soft_labels(plan: &TransportPlan, slack: &SlackInfo) -> Result<Vec<SoftLabel>> {
    let p = plan.plan();
    let (n, m) = p.dim();
    let real_cols: Vec<usize> = (0..m).filter(|&j| Some(j) != slack.col).collect();
    if real_cols.len() < 2 {
        return Err(Error::SoftLabelsNeedColumns(real_cols.len()));
    }
    let mut labels = Vec::new();
    for i in 0..n {
        if Some(i) == slack.row {
            continue;
        }
        let mut pos = real_cols[0];
        for &j in &real_cols[1..] {
            if p[[i, j]] > p[[i, pos]] {
                pos = j;
            }
        }
        let mut neg = usize::MAX;
        for &j in &real_cols {
            if j != pos && (neg == usize::MAX || p[[i, j]] < p[[i, neg]]) {
                neg = j;
            }
        }
        labels.push(SoftLabel {
            row: i,
            positive_col: pos,
            negative_col: neg,
        });
    }
    Ok(labels)
}

/// Mean squared deviation between a one-to-many plan and its binary
/// ownership targets (`1` where a positive column meets its owning row).
///
/// A plan that concentrates each positive's unit mass on its owner scores
/// zero; mass leaking to other rows or to negatives is penalized
/// quadratically.
pub fn auxiliary_loss(plan: &TransportPlan, sampled: &SampledProposals) -> Result<f64> {
    let p = plan.plan();
    let (n, m) = p.dim();
    if m != sampled.n_columns() {
        return Err(Error::DimensionMismatch {
            context: "auxiliary loss columns",
            expected: sampled.n_columns(),
            actual: m,
        });
    }
    for &(_, owner) in &sampled.positives {
        if owner >= n {
            return Err(Error::ProposalOwnerOutOfRange { owner, rows: n });
        }
    }
    let n_pos = sampled.positives.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let target = if j < n_pos && sampled.positives[j].1 == i {
                1.0
            } else {
                0.0
            };
            let d = p[[i, j]] - target;
            total += d * d;
        }
    }
    Ok(total / (n * m) as f64)
}
