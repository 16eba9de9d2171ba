//! Removes fixed variables and substitutes away free variables that an
//! equality row defines, then maps reduced solutions back.

use std::collections::{BTreeMap, BTreeSet};

use super::simplex::{Problem, Row};
use super::{LinearProgram, Relation};

/// Tolerance for deciding that a row emptied by substitution is violated.
const EMPTY_ROW_TOL: f64 = 1e-9;
/// A candidate pivot must be at least this fraction of its row's largest entry.
const PIVOT_RATIO: f64 = 0.01;

#[derive(Debug)]
pub(super) struct Infeasible;

#[derive(Debug, Clone, Copy)]
enum VarState {
    Active(usize),
    Fixed(f64),
    Eliminated,
}

struct WorkRow {
    coeffs: BTreeMap<usize, f64>,
    relation: Relation,
    rhs: f64,
    active: bool,
}

struct Elimination {
    var: usize,
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

pub(super) struct Presolved {
    pub problem: Problem,
    state: Vec<VarState>,
    eliminations: Vec<Elimination>,
}

fn empty_row_ok(relation: Relation, rhs: f64) -> bool {
    match relation {
        Relation::Eq => rhs.abs() <= EMPTY_ROW_TOL,
        Relation::Le => rhs >= -EMPTY_ROW_TOL,
        Relation::Ge => rhs <= EMPTY_ROW_TOL,
    }
}

/// `target -= f * source`, dropping entries that cancel to rounding noise.
fn axpy_row(
    target: &mut BTreeMap<usize, f64>,
    f: f64,
    source: &[(usize, f64)],
    mut on_change: impl FnMut(usize, bool),
) {
    for &(i, a) in source {
        let delta = f * a;
        let old = target.get(&i).copied().unwrap_or(0.0);
        let new = old - delta;
        if new == 0.0 || new.abs() <= 1e-12 * old.abs().max(delta.abs()) {
            if target.remove(&i).is_some() {
                on_change(i, false);
            }
        } else {
            if target.insert(i, new).is_none() {
                on_change(i, true);
            }
        }
    }
}

impl Presolved {
    pub fn new(lp: &LinearProgram) -> Result<Self, Infeasible> {
        let n = lp.num_variables();
        let mut rows: Vec<WorkRow> = lp
            .constraints
            .iter()
            .map(|c| WorkRow {
                coeffs: c.coeffs.iter().copied().collect(),
                relation: c.relation,
                rhs: c.rhs,
                active: true,
            })
            .collect();
        let mut cols: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &j in row.coeffs.keys() {
                cols[j].insert(r);
            }
        }
        let mut objective: BTreeMap<usize, f64> = lp.objective.iter().copied().collect();
        let mut state = vec![VarState::Active(0); n];

        for (j, v) in lp.variables.iter().enumerate() {
            if v.lower == v.upper {
                state[j] = VarState::Fixed(v.lower);
                for &r in &cols[j] {
                    let a = rows[r].coeffs.remove(&j).unwrap_or(0.0);
                    rows[r].rhs -= a * v.lower;
                }
                cols[j].clear();
                objective.remove(&j);
            }
        }

        let mut eliminations = Vec::new();
        for j in 0..n {
            let v = &lp.variables[j];
            if v.lower != f64::NEG_INFINITY || v.upper != f64::INFINITY {
                continue;
            }
            let pivot_row = cols[j]
                .iter()
                .copied()
                .filter(|&r| rows[r].relation == Relation::Eq)
                .filter(|&r| {
                    let row_max = rows[r].coeffs.values().fold(0.0f64, |m, a| m.max(a.abs()));
                    rows[r].coeffs[&j].abs() >= PIVOT_RATIO * row_max
                })
                .min_by_key(|&r| (rows[r].coeffs.len(), r));
            let Some(r) = pivot_row else { continue };

            let source: Vec<(usize, f64)> = rows[r].coeffs.iter().map(|(&i, &a)| (i, a)).collect();
            let rhs = rows[r].rhs;
            let pivot = rows[r].coeffs[&j];
            rows[r].active = false;
            for &(i, _) in &source {
                cols[i].remove(&r);
            }
            for k in cols[j].clone() {
                let f = rows[k].coeffs[&j] / pivot;
                let row = &mut rows[k];
                axpy_row(&mut row.coeffs, f, &source, |i, added| {
                    if added {
                        cols[i].insert(k);
                    } else {
                        cols[i].remove(&k);
                    }
                });
                row.coeffs.remove(&j);
                cols[j].remove(&k);
                row.rhs -= f * rhs;
            }
            if let Some(&c) = objective.get(&j) {
                axpy_row(&mut objective, c / pivot, &source, |_, _| {});
                objective.remove(&j);
            }
            state[j] = VarState::Eliminated;
            eliminations.push(Elimination {
                var: j,
                coeffs: source,
                rhs,
            });
        }

        for row in rows.iter_mut().filter(|r| r.active && r.coeffs.is_empty()) {
            if !empty_row_ok(row.relation, row.rhs) {
                return Err(Infeasible);
            }
            row.active = false;
        }

        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (j, v) in lp.variables.iter().enumerate() {
            if let VarState::Active(_) = state[j] {
                state[j] = VarState::Active(lower.len());
                lower.push(v.lower);
                upper.push(v.upper);
            }
        }
        let reduced = |j: usize| match state[j] {
            VarState::Active(k) => k,
            _ => unreachable!("substituted variable left in a row"),
        };
        let problem_rows = rows
            .iter()
            .filter(|r| r.active)
            .map(|r| Row {
                coeffs: r.coeffs.iter().map(|(&j, &a)| (reduced(j), a)).collect(),
                relation: r.relation,
                rhs: r.rhs,
            })
            .collect();
        let mut obj = vec![0.0; lower.len()];
        for (&j, &c) in &objective {
            obj[reduced(j)] = c;
        }

        Ok(Presolved {
            problem: Problem {
                lower,
                upper,
                rows: problem_rows,
                objective: obj,
            },
            state,
            eliminations,
        })
    }

    pub fn postsolve(&self, reduced: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .state
            .iter()
            .map(|s| match *s {
                VarState::Active(k) => reduced[k],
                VarState::Fixed(v) => v,
                VarState::Eliminated => 0.0,
            })
            .collect();
        for e in self.eliminations.iter().rev() {
            let mut rest = e.rhs;
            let mut pivot = 0.0;
            for &(i, a) in &e.coeffs {
                if i == e.var {
                    pivot = a;
                } else {
                    rest -= a * x[i];
                }
            }
            x[e.var] = rest / pivot;
        }
        x
    }
}
