//! Entropy-regularized optimal transport for data association.
//!
//! The solver is Sinkhorn-Knopp matrix scaling: given a cost matrix `C`,
//! marginals `(p, q)`, and regularization strength `reg`, it alternates
//!
//! ```text
//! v_i = p_i / (K u)_i        u_j = q_j / (K^T v)_j        K = exp(-C / reg)
//! ```
//!
//! and returns the scaled plan `diag(v) K diag(u)`. Small regularization
//! drives the plan toward the exact assignment but shrinks kernel entries
//! toward zero; below [`LOG_DOMAIN_REG_THRESHOLD`] the solver switches to
//! log-domain potentials (logsumexp updates) which cannot underflow.
//!
//! Unbalanced problems (more tracks than detections or vice versa) are made
//! balanced upstream by augmenting the deficient side with a slack
//! ("dustbin") row or column; [`SlackInfo`] records where it sits so hard
//! assignments can route unmatched mass there.

use crate::error::{Error, Result};
use crate::losses::Embedding;
use ndarray::Array2;

/// Below this regularization strength, `Auto` stabilization switches from
/// plain scaling to log-domain updates.
pub const LOG_DOMAIN_REG_THRESHOLD: f64 = 0.05;

/// Largest problem size accepted by [`exact_assignment_oracle`].
pub const ORACLE_MAX_SIZE: usize = 8;

/// Relative tolerance used when checking that marginal sums balance.
const MARGINAL_SUM_TOLERANCE: f64 = 1e-9;

/// A finite, non-empty pairwise association cost matrix (rows: sources,
/// e.g. tracks; columns: targets, e.g. detections).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    /// Wraps a matrix, rejecting empty dimensions and non-finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::EmptyInput("cost matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        Ok(CostMatrix { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Returns a copy augmented with the slack row/column described by
    /// `slack`, every new entry costing `slack_cost`. The slack indices
    /// must sit exactly one past the real rows/columns.
    pub fn with_slack(&self, slack: &SlackInfo, slack_cost: f64) -> Result<CostMatrix> {
        if !slack_cost.is_finite() {
            return Err(Error::NonFinite("slack cost"));
        }
        let (n, m) = self.values.dim();
        if let Some(r) = slack.row {
            if r != n {
                return Err(Error::InvalidConfig(format!(
                    "slack row index {r} does not extend a {n}-row matrix"
                )));
            }
        }
        if let Some(c) = slack.col {
            if c != m {
                return Err(Error::InvalidConfig(format!(
                    "slack column index {c} does not extend a {m}-column matrix"
                )));
            }
        }
        let nn = n + usize::from(slack.row.is_some());
        let mm = m + usize::from(slack.col.is_some());
        let mut out = Array2::from_elem((nn, mm), slack_cost);
        out.slice_mut(ndarray::s![..n, ..m]).assign(&self.values);
        CostMatrix::new(out)
    }
}

/// Position of the slack row/column inside an augmented cost matrix or
/// transport plan. `None` on both sides means the problem was already
/// balanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlackInfo {
    pub row: Option<usize>,
    pub col: Option<usize>,
}

impl SlackInfo {
    /// No slack on either side.
    pub fn none() -> Self {
        SlackInfo::default()
    }
}

/// Row and column mass targets for a transport problem. Entries are
/// non-negative and finite, and the two sides carry equal total mass
/// (within a small relative tolerance).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    row: Vec<f64>,
    col: Vec<f64>,
}

impl Marginals {
    pub fn new(row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        if row.is_empty() || col.is_empty() {
            return Err(Error::InvalidMarginals("empty side".into()));
        }
        for v in row.iter().chain(&col) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidMarginals(format!(
                    "entry {v} must be finite and non-negative"
                )));
            }
        }
        let sr: f64 = row.iter().sum();
        let sc: f64 = col.iter().sum();
        let tol = MARGINAL_SUM_TOLERANCE * sr.abs().max(sc.abs()).max(1.0);
        if (sr - sc).abs() > tol {
            return Err(Error::InvalidMarginals(format!(
                "mass mismatch: rows sum to {sr}, columns to {sc}"
            )));
        }
        Ok(Marginals { row, col })
    }

    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub fn col(&self) -> &[f64] {
        &self.col
    }

    /// Total transported mass (row-side sum).
    pub fn total_mass(&self) -> f64 {
        self.row.iter().sum()
    }
}

/// Numerical strategy for the Sinkhorn iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stabilization {
    /// Standard scaling, switching to log-domain below
    /// [`LOG_DOMAIN_REG_THRESHOLD`].
    #[default]
    Auto,
    /// Plain exponential-kernel scaling; fails loudly on underflow.
    Standard,
    /// Logsumexp potential updates; slower but underflow-proof.
    LogDomain,
}

/// Sinkhorn solver parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization strength; must be positive.
    pub reg: f64,
    /// Upper bound on scaling sweeps; at least 1.
    pub max_iterations: usize,
    /// Largest acceptable marginal violation for convergence; positive.
    pub convergence_tol: f64,
    pub stabilization: Stabilization,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            reg: 0.5,
            max_iterations: 100,
            convergence_tol: 1e-3,
            stabilization: Stabilization::Auto,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.reg.is_finite() || self.reg <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "regularization strength {} must be positive",
                self.reg
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !self.convergence_tol.is_finite() || self.convergence_tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "convergence tolerance {} must be positive",
                self.convergence_tol
            )));
        }
        Ok(())
    }

    fn use_log_domain(&self) -> bool {
        match self.stabilization {
            Stabilization::Auto => self.reg < LOG_DOMAIN_REG_THRESHOLD,
            Stabilization::Standard => false,
            Stabilization::LogDomain => true,
        }
    }
}

/// A solved (or best-effort) transport plan.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    plan: Array2<f64>,
    iterations: usize,
    converged: bool,
}

impl TransportPlan {
    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    /// Scaling sweeps actually performed.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Whether the marginal violation dropped below the tolerance before
    /// the iteration budget ran out.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Largest absolute deviation of the plan's row/column sums from the
    /// requested marginals.
    pub fn marginal_violation(&self, marginals: &Marginals) -> Result<f64> {
        let (n, m) = self.plan.dim();
        if marginals.row().len() != n {
            return Err(Error::DimensionMismatch {
                context: "plan row marginals",
                expected: n,
                actual: marginals.row().len(),
            });
        }
        if marginals.col().len() != m {
            return Err(Error::DimensionMismatch {
                context: "plan column marginals",
                expected: m,
                actual: marginals.col().len(),
            });
        }
        let mut worst = 0.0f64;
        for (i, &target) in marginals.row().iter().enumerate() {
            let sum: f64 = self.plan.row(i).sum();
            worst = worst.max((sum - target).abs());
        }
        for (j, &target) in marginals.col().iter().enumerate() {
            let sum: f64 = self.plan.column(j).sum();
            worst = worst.max((sum - target).abs());
        }
        Ok(worst)
    }

    /// Linear transport objective `sum_ij C_ij * plan_ij`; the cost matrix
    /// must match the plan's shape (use the augmented cost for augmented
    /// plans).
    pub fn transport_cost(&self, cost: &CostMatrix) -> Result<f64> {
        if cost.values().dim() != self.plan.dim() {
            return Err(Error::DimensionMismatch {
                context: "transport cost matrix rows",
                expected: self.plan.nrows(),
                actual: cost.nrows(),
            });
        }
        Ok(self
            .plan
            .iter()
            .zip(cost.values().iter())
            .map(|(p, c)| p * c)
            .sum())
    }
}

/// Cosine-distance cost between two embedding sets: `1 - cos(a_i, b_j)`,
/// always in `[0, 2]`. Both sides must be non-empty, share one dimension,
/// and contain no zero-norm vectors.
pub fn cosine_cost(rows: &[Embedding], cols: &[Embedding]) -> Result<CostMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::EmptyInput("cosine cost embeddings"));
    }
    let dim = rows[0].dim();
    let unit = |e: &Embedding| -> Result<Vec<f64>> {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "cosine cost embeddings",
                expected: dim,
                actual: e.dim(),
            });
        }
        Ok(e.normalized()?.values().to_vec())
    };
    let r: Vec<Vec<f64>> = rows.iter().map(unit).collect::<Result<_>>()?;
    let c: Vec<Vec<f64>> = cols.iter().map(unit).collect::<Result<_>>()?;
    let values = Array2::from_shape_fn((r.len(), c.len()), |(i, j)| {
        let dot: f64 = r[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
        // Unit vectors keep the dot in [-1, 1] up to rounding; clamp so the
        // cost invariant holds exactly.
        1.0 - dot.clamp(-1.0, 1.0)
    });
    CostMatrix::new(values)
}

/// `log(sum(exp(v)))` over an iterator, tolerating `-inf` entries (an
/// all-`-inf` input yields `-inf`, never NaN).
fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Solves the entropy-regularized transport problem, honoring the
/// stabilization policy in `config`.
///
/// The returned plan is always populated; `converged()` reports whether
/// the marginal violation reached `convergence_tol` within the iteration
/// budget. Standard-mode kernel underflow (all-zero row or column for a
/// positive marginal) is reported as an error rather than silently
/// producing NaNs.
pub fn sinkhorn_solve(
    cost: &CostMatrix,
    marginals: &Marginals,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    let (n, m) = cost.values().dim();
    if marginals.row().len() != n {
        return Err(Error::DimensionMismatch {
            context: "sinkhorn row marginals",
            expected: n,
            actual: marginals.row().len(),
        });
    }
    if marginals.col().len() != m {
        return Err(Error::DimensionMismatch {
            context: "sinkhorn column marginals",
            expected: m,
            actual: marginals.col().len(),
        });
    }
    if config.use_log_domain() {
        sinkhorn_log_domain(cost, marginals, config)
    } else {
        sinkhorn_standard(cost, marginals, config)
    }
}

fn sinkhorn_standard(
    cost: &CostMatrix,
    marginals: &Marginals,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.values().dim();
    let p = marginals.row();
    let q = marginals.col();
    let kernel = cost.values().mapv(|c| (-c / config.reg).exp());

    // A kernel row/column that underflowed to all zeros can never carry the
    // positive mass its marginal demands.
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 && kernel.row(i).sum() == 0.0 {
            return Err(Error::SinkhornUnderflow { reg: config.reg });
        }
    }
    for (j, &qj) in q.iter().enumerate() {
        if qj > 0.0 && kernel.column(j).sum() == 0.0 {
            return Err(Error::SinkhornUnderflow { reg: config.reg });
        }
    }

    let mut u = vec![1.0f64; m];
    let mut v = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..config.max_iterations {
        iterations += 1;
        // v_i = p_i / (K u)_i
        for i in 0..n {
            let ku: f64 = kernel
                .row(i)
                .iter()
                .zip(&u)
                .map(|(k, uj)| k * uj)
                .sum();
            if p[i] == 0.0 {
                v[i] = 0.0;
            } else if ku == 0.0 || !ku.is_finite() {
                return Err(Error::SinkhornUnderflow { reg: config.reg });
            } else {
                v[i] = p[i] / ku;
            }
        }
        // u_j = q_j / (K^T v)_j
        for j in 0..m {
            let kv: f64 = kernel
                .column(j)
                .iter()
                .zip(&v)
                .map(|(k, vi)| k * vi)
                .sum();
            if q[j] == 0.0 {
                u[j] = 0.0;
            } else if kv == 0.0 || !kv.is_finite() {
                return Err(Error::SinkhornUnderflow { reg: config.reg });
            } else {
                u[j] = q[j] / kv;
            }
        }
        // Columns are exact right after the u update; convergence is about
        // how far the rows have drifted.
        let mut violation = 0.0f64;
        for i in 0..n {
            let row_sum: f64 = kernel
                .row(i)
                .iter()
                .zip(&u)
                .map(|(k, uj)| k * uj)
                .sum::<f64>()
                * v[i];
            violation = violation.max((row_sum - p[i]).abs());
        }
        if violation <= config.convergence_tol {
            converged = true;
            break;
        }
    }

    let plan = Array2::from_shape_fn((n, m), |(i, j)| v[i] * kernel[[i, j]] * u[j]);
    if plan.iter().any(|x| !x.is_finite()) {
        return Err(Error::SinkhornUnderflow { reg: config.reg });
    }
    Ok(TransportPlan {
        plan,
        iterations,
        converged,
    })
}

fn sinkhorn_log_domain(
    cost: &CostMatrix,
    marginals: &Marginals,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.values().dim();
    let p = marginals.row();
    let q = marginals.col();
    // lk_ij = -C_ij / reg; potentials f (rows), g (columns) in log space.
    let lk = cost.values().mapv(|c| -c / config.reg);
    let log_p: Vec<f64> = p.iter().map(|&x| x.ln()).collect(); // ln 0 = -inf
    let log_q: Vec<f64> = q.iter().map(|&x| x.ln()).collect();

    let mut f = vec![f64::NEG_INFINITY; n];
    let mut g = vec![0.0f64; m];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..config.max_iterations {
        iterations += 1;
        for i in 0..n {
            let lse = log_sum_exp(lk.row(i).iter().zip(&g).map(|(k, gj)| k + gj));
            f[i] = log_p[i] - lse;
        }
        for j in 0..m {
            let lse = log_sum_exp(lk.column(j).iter().zip(&f).map(|(k, fi)| k + fi));
            g[j] = log_q[j] - lse;
        }
        let mut violation = 0.0f64;
        for i in 0..n {
            let row_sum = log_sum_exp(lk.row(i).iter().zip(&g).map(|(k, gj)| k + gj))
                .exp()
                * f[i].exp();
            violation = violation.max((row_sum - p[i]).abs());
        }
        if violation <= config.convergence_tol {
            converged = true;
            break;
        }
    }

    let plan = Array2::from_shape_fn((n, m), |(i, j)| (f[i] + lk[[i, j]] + g[j]).exp());
    Ok(TransportPlan {
        plan,
        iterations,
        converged,
    })
}

/// Exhaustive minimum-cost assignment for square matrices up to
/// [`ORACLE_MAX_SIZE`]: returns `assignment[row] = column` and the optimal
/// cost, breaking ties toward the lexicographically smallest assignment.
///
/// Deliberately brute force — it exists as independent ground truth for
/// the transport solver, not as a production matcher.
pub fn exact_assignment_oracle(cost: &CostMatrix) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.values().dim();
    if n != m {
        return Err(Error::DimensionMismatch {
            context: "assignment oracle (square matrix required)",
            expected: n,
            actual: m,
        });
    }
    if n > ORACLE_MAX_SIZE {
        return Err(Error::OracleTooLarge {
            size: n,
            max: ORACLE_MAX_SIZE,
        });
    }
    let c = cost.values();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        // Strict improvement keeps the lexicographically first optimum,
        // since permutations are visited in lexicographic order.
        if total < best_cost {
            best_cost = total;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best, best_cost))
}

/// Advances `perm` to its lexicographic successor; returns false (leaving
/// the slice sorted descending) when it was already the last permutation.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// A hard matching pulled out of a soft plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    /// `(row, column)` pairs over the real (non-slack) indices, sorted by
    /// row.
    pub pairs: Vec<(usize, usize)>,
    /// Real rows whose mass went to slack, lost a conflict, or was zero.
    pub unmatched_rows: Vec<usize>,
    /// Real columns no surviving pair claimed.
    pub unmatched_cols: Vec<usize>,
}

/// Extracts a conflict-free hard assignment from a transport plan.
///
/// Each real row picks its highest-mass column (ties to the lowest index);
/// picking the slack column, an all-zero row, or losing a column conflict
/// (higher mass wins, then lower row index) leaves the row unmatched.
/// Slack rows/columns never appear in the output.
pub fn extract_hard_assignment(plan: &TransportPlan, slack: &SlackInfo) -> HardAssignment {
    let p = plan.plan();
    let (n, m) = p.dim();

    // Row index -> chosen column and its mass.
    let mut claims: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        if Some(i) == slack.row {
            continue;
        }
        let mut best_j = 0usize;
        let mut best_mass = f64::NEG_INFINITY;
        for j in 0..m {
            let mass = p[[i, j]];
            if mass > best_mass {
                best_mass = mass;
                best_j = j;
            }
        }
        if best_mass > 0.0 && Some(best_j) != slack.col {
            claims.push((i, best_j, best_mass));
        }
    }

    // Resolve column conflicts: keep the heaviest claim per column, with
    // lower row index winning ties (claims are already in row order).
    let mut winner_for_col: Vec<Option<(usize, f64)>> = vec![None; m];
    for &(i, j, mass) in &claims {
        match winner_for_col[j] {
            Some((_, held)) if held >= mass => {}
            _ => winner_for_col[j] = Some((i, mass)),
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut matched_rows = vec![false; n];
    let mut matched_cols = vec![false; m];
    for (j, winner) in winner_for_col.iter().enumerate() {
        if let Some((i, _)) = winner {
            pairs.push((*i, j));
            matched_rows[*i] = true;
            matched_cols[j] = true;
        }
    }
    pairs.sort_unstable();

    let unmatched_rows = (0..n)
        .filter(|&i| Some(i) != slack.row && !matched_rows[i])
        .collect();
    let unmatched_cols = (0..m)
        .filter(|&j| Some(j) != slack.col && !matched_cols[j])
        .collect();

    HardAssignment {
        pairs,
        unmatched_rows,
        unmatched_cols,
    }
}
