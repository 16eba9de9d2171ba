//! Dense two-phase primal simplex on a bounded-variable problem.

use nalgebra::{DMatrix, DVector};

use super::{LpStatus, Relation, OPTIMALITY_TOL};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
/// Primal slack the two-pass ratio test may spend to pick a larger pivot.
const HARRIS_TOL: f64 = 1e-9;
/// Relative row residual of the tableau's basic values that triggers a rebuild.
const DRIFT_TOL: f64 = 1e-9;
/// Minimum pivots between drift checks of the tableau from the original rows.
const REINVERT_INTERVAL: usize = 100;
const PHASE_ONE_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

pub(crate) struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective·x  s.t.  rows, lower <= x <= upper`, dense objective.
pub(crate) struct Problem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    pub objective: Vec<f64>,
}

pub(crate) struct Outcome {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy)]
enum ColumnMap {
    /// x = lower + col
    Shifted { col: usize, lower: f64 },
    /// x = upper - col
    Mirrored { col: usize, upper: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    m: usize,
    /// Number of columns excluding the right-hand side.
    ncols: usize,
    a: Vec<f64>,
    /// The tableau before any pivot, for reinversion.
    original: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    active: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
}

enum RunResult {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn width(&self) -> usize {
        self.ncols + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width() + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.ncols)
    }

    fn pivot(&mut self, r: usize, e: usize, d: &mut [f64]) {
        let w = self.width();
        let inv = 1.0 / self.a[r * w + e];
        let row: Vec<(usize, f64)> = {
            let pr = &mut self.a[r * w..(r + 1) * w];
            for v in pr.iter_mut() {
                *v *= inv;
            }
            pr[e] = 1.0;
            pr.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (j, v)).collect()
        };
        for i in 0..self.m {
            if i == r || !self.active[i] {
                continue;
            }
            let f = self.a[i * w + e];
            if f == 0.0 {
                continue;
            }
            let ri = &mut self.a[i * w..(i + 1) * w];
            for &(j, v) in &row {
                ri[j] -= f * v;
            }
            ri[e] = 0.0;
        }
        let f = d[e];
        if f != 0.0 {
            for &(j, v) in &row {
                d[j] -= f * v;
            }
            d[e] = 0.0;
        }
        self.in_basis[self.basis[r]] = false;
        self.in_basis[e] = true;
        self.basis[r] = e;
    }

    /// Recomputes every active row as `B^-1` times the original rows, which
    /// discards rounding error accumulated by pivoting. Keeps the current
    /// tableau if the basis matrix is numerically singular.
    fn reinvert(&mut self) {
        let w = self.width();
        let rows: Vec<usize> = (0..self.m).filter(|&i| self.active[i]).collect();
        let k = rows.len();
        if k == 0 {
            return;
        }
        let b = DMatrix::from_fn(k, k, |p, q| self.original[rows[p] * w + self.basis[rows[q]]]);
        let full = DMatrix::from_fn(k, w, |p, j| self.original[rows[p] * w + j]);
        let Some(x) = b.lu().solve(&full) else { return };
        if x.iter().any(|v| !v.is_finite()) {
            return;
        }
        for (q, &i) in rows.iter().enumerate() {
            let ri = &mut self.a[i * w..(i + 1) * w];
            for (j, v) in ri.iter_mut().enumerate() {
                let x = x[(q, j)];
                *v = if x.abs() < 1e-14 { 0.0 } else { x };
            }
        }
        for &i in &rows {
            let b = self.basis[i];
            for &r in &rows {
                self.a[r * w + b] = if r == i { 1.0 } else { 0.0 };
            }
        }
    }

    /// Whether the tableau's basic values no longer satisfy the original rows.
    fn drifted(&self) -> bool {
        let w = self.width();
        let basics: Vec<(usize, f64)> = self.active_rows().map(|i| (self.basis[i], self.rhs(i))).collect();
        self.active_rows().any(|i| {
            let row = &self.original[i * w..(i + 1) * w];
            let b = row[self.ncols];
            let lhs: f64 = basics.iter().map(|&(j, v)| row[j] * v).sum();
            (lhs - b).abs() > DRIFT_TOL * (1.0 + b.abs())
        })
    }

    fn active_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(|&i| self.active[i])
    }

    /// Primal simplex iterations maximizing `cost` over columns `< allowed`.
    fn run(&mut self, cost: &[f64], allowed: usize) -> Result<RunResult> {
        let mut d = self.reduced_costs(cost);
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut since_reinvert = 0usize;
        let interval = REINVERT_INTERVAL.max(self.m / 4);
        let mut rebuilt = false;
        loop {
            if since_reinvert >= interval {
                if self.drifted() {
                    self.reinvert();
                    d = self.reduced_costs(cost);
                }
                since_reinvert = 0;
            }
            let entering = if bland {
                (0..allowed).find(|&j| !self.in_basis[j] && d[j] > OPTIMALITY_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..allowed {
                    if !self.in_basis[j] && d[j] > OPTIMALITY_TOL && best.is_none_or(|(_, b)| d[j] > b) {
                        best = Some((j, d[j]));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(e) = entering else {
                // accept only if the tableau still agrees with the original rows
                if rebuilt || !self.drifted() {
                    return Ok(RunResult::Optimal);
                }
                self.reinvert();
                d = self.reduced_costs(cost);
                rebuilt = true;
                continue;
            };
            let leave = if bland {
                self.exact_ratio_test(e)
            } else {
                self.harris_ratio_test(e)
            };
            let Some((r, ratio)) = leave else {
                return Ok(RunResult::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_LIMIT {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            rebuilt = false;
            self.pivot(r, e, &mut d);
            self.iterations += 1;
            since_reinvert += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::SolverFailure(format!(
                    "simplex iteration cap of {} reached",
                    self.max_iterations
                )));
            }
        }
    }

    /// Minimum ratio, ties to the smallest basic index (Bland's rule).
    fn exact_ratio_test(&self, e: usize) -> Option<(usize, f64)> {
        let mut leave: Option<(usize, f64)> = None;
        for i in (0..self.m).filter(|&i| self.active[i]) {
            let a = self.at(i, e);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            let better = match leave {
                None => true,
                Some((bi, br)) => {
                    ratio < br - 1e-12 * (1.0 + br)
                        || (ratio <= br + 1e-12 * (1.0 + br) && self.basis[i] < self.basis[bi])
                }
            };
            if better {
                leave = Some((i, ratio));
            }
        }
        leave
    }

    /// Two-pass ratio test: among rows whose ratio is within the relaxed
    /// minimum, pivot on the largest entry.
    fn harris_ratio_test(&self, e: usize) -> Option<(usize, f64)> {
        let rows = || (0..self.m).filter(|&i| self.active[i] && self.at(i, e) > PIVOT_TOL);
        let bound = rows()
            .map(|i| (self.rhs(i).max(0.0) + HARRIS_TOL) / self.at(i, e))
            .fold(f64::INFINITY, f64::min);
        if bound == f64::INFINITY {
            return None;
        }
        let mut leave: Option<(usize, f64, f64)> = None;
        for i in rows() {
            let a = self.at(i, e);
            let ratio = self.rhs(i).max(0.0) / a;
            if ratio <= bound && leave.is_none_or(|(_, _, ba)| a > ba) {
                leave = Some((i, ratio, a));
            }
        }
        leave.map(|(i, r, _)| (i, r))
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut d = vec![0.0; w];
        d[..self.ncols].copy_from_slice(cost);
        for i in 0..self.m {
            if !self.active[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                d[j] -= cb * self.at(i, j);
            }
        }
        for (j, v) in d.iter_mut().enumerate().take(self.ncols) {
            if self.in_basis[j] {
                *v = 0.0;
            }
        }
        d
    }
}

pub(crate) fn solve(p: &Problem) -> Result<Outcome> {
    let n = p.lower.len();

    let mut maps = Vec::with_capacity(n);
    let mut ns = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        let map = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((ns, hi - lo));
            }
            ColumnMap::Shifted { col: ns, lower: lo }
        } else if hi.is_finite() {
            ColumnMap::Mirrored { col: ns, upper: hi }
        } else {
            ns += 1;
            ColumnMap::Split { pos: ns - 1, neg: ns }
        };
        ns += 1;
        maps.push(map);
    }

    // Rows over standard columns, with b >= 0.
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    for row in &p.rows {
        let mut coeffs = Vec::with_capacity(row.coeffs.len() + 1);
        let mut rhs = row.rhs;
        for &(j, a) in &row.coeffs {
            match maps[j] {
                ColumnMap::Shifted { col, lower } => {
                    rhs -= a * lower;
                    coeffs.push((col, a));
                }
                ColumnMap::Mirrored { col, upper } => {
                    rhs -= a * upper;
                    coeffs.push((col, -a));
                }
                ColumnMap::Split { pos, neg } => {
                    coeffs.push((pos, a));
                    coeffs.push((neg, -a));
                }
            }
        }
        rows.push((coeffs, row.relation, rhs));
    }
    for &(col, width) in &bound_rows {
        rows.push((vec![(col, 1.0)], Relation::Le, width));
    }
    for (coeffs, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            *rhs = -*rhs;
            for c in coeffs.iter_mut() {
                c.1 = -c.1;
            }
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let nslack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let nart = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let real_cols = ns + nslack;
    let ncols = real_cols + nart;
    let w = ncols + 1;
    let mut a = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let (mut next_slack, mut next_art) = (ns, real_cols);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        let ri = &mut a[i * w..(i + 1) * w];
        for &(c, v) in coeffs {
            ri[c] += v;
        }
        ri[ncols] = *rhs;
        match rel {
            Relation::Le => {
                ri[next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                ri[next_slack] = -1.0;
                next_slack += 1;
                ri[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                ri[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
    }
    let mut in_basis = vec![false; ncols];
    for &b in &basis {
        in_basis[b] = true;
    }
    let mut t = Tableau {
        m,
        ncols,
        original: a.clone(),
        a,
        basis,
        in_basis,
        active: vec![true; m],
        iterations: 0,
        max_iterations: 50_000 + 50 * (m + ncols),
    };

    if nart > 0 {
        let mut cost1 = vec![0.0; ncols];
        for c in cost1.iter_mut().skip(real_cols) {
            *c = -1.0;
        }
        t.run(&cost1, ncols)?;
        let mut d = vec![0.0; ncols + 1];
        let scale = rows.iter().fold(1.0f64, |s, r| s.max(r.2));
        let residual: f64 = (0..m)
            .filter(|&i| t.basis[i] >= real_cols)
            .map(|i| t.rhs(i).max(0.0))
            .sum();
        if residual > PHASE_ONE_TOL * scale {
            return Ok(Outcome {
                status: LpStatus::Infeasible,
                values: Vec::new(),
                iterations: t.iterations,
            });
        }
        for i in 0..m {
            if t.basis[i] < real_cols {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..real_cols {
                let v = t.at(i, j).abs();
                if !t.in_basis[j] && v > PIVOT_TOL && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => t.pivot(i, j, &mut d),
                None => t.active[i] = false,
            }
        }
    }

    let mut cost = vec![0.0; ncols];
    for (j, map) in maps.iter().enumerate() {
        let c = p.objective[j];
        match *map {
            ColumnMap::Shifted { col, .. } => cost[col] = c,
            ColumnMap::Mirrored { col, .. } => cost[col] = -c,
            ColumnMap::Split { pos, neg } => {
                cost[pos] = c;
                cost[neg] = -c;
            }
        }
    }
    if let RunResult::Unbounded = t.run(&cost, real_cols)? {
        return Ok(Outcome {
            status: LpStatus::Unbounded,
            values: Vec::new(),
            iterations: t.iterations,
        });
    }

    let basic_values = refine(&t);
    let mut col_values = vec![0.0; ncols];
    for (k, i) in (0..m).filter(|&i| t.active[i]).enumerate() {
        col_values[t.basis[i]] = basic_values[k];
    }
    let values = maps
        .iter()
        .map(|map| match *map {
            ColumnMap::Shifted { col, lower } => lower + col_values[col],
            ColumnMap::Mirrored { col, upper } => upper - col_values[col],
            ColumnMap::Split { pos, neg } => col_values[pos] - col_values[neg],
        })
        .collect();
    Ok(Outcome {
        status: LpStatus::Optimal,
        values,
        iterations: t.iterations,
    })
}

/// Solves `B x_B = b` against the untouched constraint rows, in active-row
/// order. `None` if the basis matrix is numerically singular.
fn basic_solution(t: &Tableau) -> Option<DVector<f64>> {
    let w = t.width();
    let rows: Vec<usize> = t.active_rows().collect();
    let k = rows.len();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    let b_mat = DMatrix::from_fn(k, k, |p, q| t.original[rows[p] * w + t.basis[rows[q]]]);
    let rhs = DVector::from_fn(k, |p, _| t.original[rows[p] * w + t.ncols]);
    b_mat.lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Basic values recomputed from the original rows so the reported point
/// carries no accumulated pivoting error. Falls back to the tableau values if
/// the factorization is unusable.
fn refine(t: &Tableau) -> Vec<f64> {
    match basic_solution(t) {
        Some(x) if x.iter().all(|v| *v >= -PHASE_ONE_TOL) => x.iter().map(|v| v.max(0.0)).collect(),
        _ => t.active_rows().map(|i| t.rhs(i).max(0.0)).collect(),
    }
}
