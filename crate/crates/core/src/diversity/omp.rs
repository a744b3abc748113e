//! Sparse coverage selection: greedily pick `N` columns of a similarity
//! matrix `D` whose box-constrained combination best reconstructs the score
//! vector, `min ‖Dx − s‖²` with `‖x‖₀ = N` and `0 ≤ x ≤ 1`.
//!
//! Similar items have nearly parallel columns, so once one is active the
//! residual has little correlation left with its near-duplicates.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{CandidatePool, Metric, SelectionBatch, SelectionError};

/// Stopping threshold on the projected-gradient step, `‖x − P(x − ∇f/L)‖∞`.
pub const SOLVER_TOLERANCE: f64 = 1e-8;
pub const SOLVER_MAX_ITERATIONS: usize = 10_000;
/// Iterations between attempts to solve the free coordinates exactly.
const POLISH_EVERY: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    /// Indices in insertion order.
    pub active: Vec<usize>,
    /// Coefficients parallel to `active`.
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
}

/// Turns distances into similarities `exp(-d / σ)` in place, with `σ` the
/// median off-diagonal distance. If that median is zero, `σ` falls back to
/// the mean of the positive distances, then to 1.
pub fn similarity_kernel(mut distances: Array2<f64>) -> Array2<f64> {
    let sigma = kernel_bandwidth(&distances);
    distances.mapv_inplace(|d| (-d / sigma).exp());
    distances
}

pub fn kernel_bandwidth(distances: &Array2<f64>) -> f64 {
    let m = distances.nrows();
    let mut off: Vec<f64> = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        off.extend(distances.row(i).iter().skip(i + 1).copied());
    }
    if off.is_empty() {
        return 1.0;
    }
    let mid = off.len() / 2;
    let (_, &mut upper, _) = off.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if off.len() % 2 == 1 {
        upper
    } else {
        let lower = off[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 {
        return median;
    }
    let positive: Vec<f64> = off.into_iter().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        1.0
    } else {
        positive.iter().sum::<f64>() / positive.len() as f64
    }
}

/// Runs the greedy pursuit on an explicit similarity matrix. `n` is clamped
/// to the number of columns; correlation ties go to the lower index.
pub fn omp_with_matrix(
    sim: &Array2<f64>,
    scores: &[f64],
    n: usize,
) -> Result<OmpResult, SelectionError> {
    let m = sim.ncols();
    if sim.nrows() != scores.len() {
        return Err(SelectionError::ShapeMismatch {
            rows: sim.nrows(),
            scores: scores.len(),
        });
    }
    let n = n.min(m);
    let s = ArrayView1::from(scores);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut is_active = vec![false; m];
    let mut gram: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rhs: Vec<f64> = Vec::with_capacity(n);
    let mut x: Vec<f64> = Vec::with_capacity(n);
    let mut residual = s.to_owned();
    while active.len() < n {
        let corr = sim.t().dot(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if is_active[j] {
                continue;
            }
            let c = c.abs();
            if !c.is_finite() {
                return Err(SelectionError::SolverDivergence(format!(
                    "non-finite correlation at column {j}"
                )));
            }
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((j, c));
            }
        }
        let Some((j, _)) = best else { break };
        let col_j = sim.column(j);
        for (row, &a) in gram.iter_mut().zip(&active) {
            row.push(sim.column(a).dot(&col_j));
        }
        let mut new_row: Vec<f64> = active.iter().map(|&a| sim.column(a).dot(&col_j)).collect();
        new_row.push(col_j.dot(&col_j));
        gram.push(new_row);
        rhs.push(col_j.dot(&s));
        active.push(j);
        is_active[j] = true;
        x.push(0.0);
        let k = active.len();
        let q = DMatrix::from_fn(k, k, |r, c| gram[r][c]);
        x = solve_box_qp(&q, &DVector::from_column_slice(&rhs), x)?;
        residual = reconstruct_residual(sim, &s, &active, &x);
    }
    let residual_norm = residual.dot(&residual).sqrt();
    Ok(OmpResult {
        active,
        coefficients: x,
        residual_norm,
    })
}

fn reconstruct_residual(
    sim: &Array2<f64>,
    s: &ArrayView1<f64>,
    active: &[usize],
    x: &[f64],
) -> Array1<f64> {
    let mut r = s.to_owned();
    for (&a, &coef) in active.iter().zip(x) {
        r.scaled_add(-coef, &sim.column(a));
    }
    r
}

/// `argmin ‖Ax − b‖²` over `x ∈ [0, 1]^k`.
pub fn box_constrained_lsq(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>, SelectionError> {
    if a.nrows() != b.len() {
        return Err(SelectionError::ShapeMismatch {
            rows: a.nrows(),
            scores: b.len(),
        });
    }
    let k = a.ncols();
    let bv = ArrayView1::from(b);
    let q = DMatrix::from_fn(k, k, |r, c| a.column(r).dot(&a.column(c)));
    let rhs = DVector::from_iterator(k, a.axis_iter(Axis(1)).map(|col| col.dot(&bv)));
    solve_box_qp(&q, &rhs, vec![0.0; k])
}

/// Minimises `½xᵀQx − bᵀx` over the unit box for positive semidefinite `Q`.
///
/// Accelerated projected gradient with adaptive restart and step `1/L`, `L`
/// the Gershgorin bound on `Q`'s largest eigenvalue. Every few iterations the
/// coordinates strictly inside the box are solved exactly with the others
/// held at their bounds; the result is kept if it meets the tolerance.
pub fn solve_box_qp(
    q: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: Vec<f64>,
) -> Result<Vec<f64>, SelectionError> {
    let k = b.len();
    let lipschitz = (0..k)
        .map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !lipschitz.is_finite() {
        return Err(SelectionError::SolverDivergence(
            "non-finite Gram matrix".into(),
        ));
    }
    if lipschitz == 0.0 {
        // Linear objective: each coordinate goes to whichever bound lowers it.
        return Ok(b.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect());
    }
    let step = 1.0 / lipschitz;
    let project = |v: f64| v.clamp(0.0, 1.0);
    let stationarity = |x: &DVector<f64>| {
        let g = q * x - b;
        x.iter()
            .zip(g.iter())
            .map(|(&xi, &gi)| (xi - project(xi - step * gi)).abs())
            .fold(0.0, f64::max)
    };

    let mut x = DVector::from_iterator(k, x0.into_iter().map(project));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for it in 0..SOLVER_MAX_ITERATIONS {
        if it % POLISH_EVERY == 0 {
            if let Some(exact) = polish(q, b, &x) {
                if stationarity(&exact) < SOLVER_TOLERANCE {
                    return Ok(exact.iter().copied().collect());
                }
            }
        }
        let grad = q * &y - b;
        let x_next = DVector::from_iterator(
            k,
            y.iter()
                .zip(grad.iter())
                .map(|(&yi, &gi)| project(yi - step * gi)),
        );
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(SelectionError::SolverDivergence(format!(
                "non-finite iterate at step {it}"
            )));
        }
        let moved = (&y - &x_next).amax();
        let delta = &x_next - &x;
        if moved < SOLVER_TOLERANCE && stationarity(&x_next) < SOLVER_TOLERANCE {
            return Ok(x_next.iter().copied().collect());
        }
        if grad.dot(&delta) > 0.0 {
            // Momentum is pointing uphill: restart from the plain step.
            t = 1.0;
            y = x_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_next + delta * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_next;
    }
    Err(SelectionError::SolverDivergence(format!(
        "box-constrained solve did not reach {SOLVER_TOLERANCE} in {SOLVER_MAX_ITERATIONS} iterations"
    )))
}

/// Solves the free coordinates of `x` exactly with the bound ones fixed.
/// Returns `None` if the reduced system is singular or leaves the box.
fn polish(q: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0 && x[i] < 1.0).collect();
    let mut out = x.clone();
    if free.is_empty() {
        return Some(out);
    }
    let bound: Vec<usize> = (0..x.len())
        .filter(|&i| !(x[i] > 0.0 && x[i] < 1.0))
        .collect();
    let f = free.len();
    let qff = DMatrix::from_fn(f, f, |r, c| q[(free[r], free[c])]);
    let rhs = DVector::from_fn(f, |r, _| {
        b[free[r]] - bound.iter().map(|&j| q[(free[r], j)] * x[j]).sum::<f64>()
    });
    let z = qff.cholesky()?.solve(&rhs);
    for (&i, &v) in free.iter().zip(z.iter()) {
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        out[i] = v;
    }
    Some(out)
}

pub fn omp_solve(
    pool: &CandidatePool,
    n: usize,
    metric: Metric,
) -> Result<OmpResult, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let sim = similarity_kernel(pool.distance_matrix(metric)?);
    omp_with_matrix(&sim, pool.scores(), n)
}

pub fn select_omp(
    pool: &CandidatePool,
    n: usize,
    metric: Metric,
) -> Result<SelectionBatch, SelectionError> {
    let mut batch = SelectionBatch::new("omp");
    batch.metric = Some(metric);
    if n == 0 {
        return Ok(batch);
    }
    let result = omp_solve(pool, n, metric)?;
    for i in result.active {
        batch.push(&pool.ids()[i], pool.scores()[i]);
    }
    Ok(batch)
}
