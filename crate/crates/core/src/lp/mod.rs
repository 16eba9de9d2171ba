//! A small linear-programming toolkit: a model container, an exact
//! solution checker, and a deterministic primal simplex solver.
//!
//! Every program is a maximization. Solving goes through a presolve that
//! substitutes away free variables defined by equality rows, then a dense
//! two-phase simplex (largest reduced cost, Bland's rule while degenerate),
//! then a final re-solve of the optimal basis to remove accumulated pivot
//! error.

mod presolve;
mod simplex;

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Primal feasibility tolerance for reported solutions.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const OPTIMALITY_TOL: f64 = 1e-8;
/// Largest violation `solve_lp` tolerates in a point it reports as optimal.
pub const ACCEPT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// Sparse row, sorted by variable index, without duplicates.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// Amount by which `values` violates this constraint (0 when satisfied).
    pub fn residual(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `maximize c·x  subject to  rows, lower <= x <= upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Sparse objective row, sorted by variable index.
    pub objective: Vec<(usize, f64)>,
}

fn merge_terms(mut terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    terms.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, a) in terms {
        match out.last_mut() {
            Some((k, b)) if *k == j => *b += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|&(_, a)| a != 0.0);
    out
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        self.variables.len() - 1
    }

    /// Adds a row; repeated variable indices are summed and zeros dropped.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs: merge_terms(coeffs),
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>) {
        self.objective = merge_terms(terms);
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * values[j]).sum()
    }

    /// Structural checks: finite coefficients, declared variables, sane bounds.
    pub fn check(&self) -> Result<()> {
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::arg(format!(
                    "variable {j} ({}) has invalid bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(Error::arg(format!("variable {j} ({}) has an empty domain", v.name)));
            }
        }
        let n = self.variables.len();
        let bad = |terms: &[(usize, f64)]| terms.iter().any(|&(j, a)| j >= n || !a.is_finite());
        if bad(&self.objective) {
            return Err(Error::arg("objective references an undeclared variable or is not finite"));
        }
        for c in &self.constraints {
            if bad(&c.coeffs) || !c.rhs.is_finite() {
                return Err(Error::arg(format!(
                    "constraint {} references an undeclared variable or is not finite",
                    c.name
                )));
            }
        }
        Ok(())
    }

    /// Plain-text listing, one line per constraint: `name: Σ coeff*var REL rhs`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term_list = |terms: &[(usize, f64)]| {
            terms
                .iter()
                .map(|&(j, a)| format!("{a}*{}", self.variables[j].name))
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let _ = writeln!(out, "maximize: {}", term_list(&self.objective));
        for c in &self.constraints {
            let _ = writeln!(out, "{}: {} {} {}", c.name, term_list(&c.coeffs), c.relation, c.rhs);
        }
        for v in &self.variables {
            if v.lower != f64::NEG_INFINITY || v.upper != f64::INFINITY {
                let _ = writeln!(out, "bound: {} <= {} <= {}", v.lower, v.name, v.upper);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value; meaningful only when optimal.
    pub objective: f64,
    /// One value per variable; empty unless optimal.
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, iterations: usize) -> Self {
        LpSolution {
            status,
            objective: match status {
                LpStatus::Unbounded => f64::INFINITY,
                _ => f64::NAN,
            },
            values: Vec::new(),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `lp`. Infeasibility and unboundedness are reported through the
/// status; running out of pivots is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check()?;
    let reduced = match presolve::Presolved::new(lp) {
        Ok(p) => p,
        Err(presolve::Infeasible) => return Ok(LpSolution::without_point(LpStatus::Infeasible, 0)),
    };
    let outcome = simplex::solve(&reduced.problem)?;
    let solution = match outcome.status {
        LpStatus::Optimal => {
            let values = reduced.postsolve(&outcome.values);
            let sol = LpSolution {
                status: LpStatus::Optimal,
                objective: lp.objective_value(&values),
                values,
                iterations: outcome.iterations,
            };
            // never hand out a point the original problem rejects
            let issues = verify_solution(lp, &sol, ACCEPT_TOL);
            if let Some(issue) = issues.first() {
                return Err(Error::SolverFailure(format!(
                    "optimal point fails verification ({} issues, first {issue:?})",
                    issues.len()
                )));
            }
            sol
        }
        status => LpSolution::without_point(status, outcome.iterations),
    };
    Ok(solution)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionIssue {
    Constraint { index: usize, name: String, residual: f64 },
    Bound { index: usize, name: String, residual: f64 },
    Objective { reported: f64, recomputed: f64 },
    WrongLength { expected: usize, found: usize },
}

/// Re-checks every row, bound and the objective of `sol` directly against
/// `lp`, listing everything off by more than `tol`.
pub fn verify_solution(lp: &LinearProgram, sol: &LpSolution, tol: f64) -> Vec<SolutionIssue> {
    let mut issues = Vec::new();
    if sol.values.len() != lp.num_variables() {
        issues.push(SolutionIssue::WrongLength {
            expected: lp.num_variables(),
            found: sol.values.len(),
        });
        return issues;
    }
    for (index, c) in lp.constraints.iter().enumerate() {
        let residual = c.residual(&sol.values);
        if residual > tol {
            issues.push(SolutionIssue::Constraint {
                index,
                name: c.name.clone(),
                residual,
            });
        }
    }
    for (index, (v, &x)) in lp.variables.iter().zip(&sol.values).enumerate() {
        let residual = (v.lower - x).max(x - v.upper).max(0.0);
        if residual > tol || x.is_nan() {
            issues.push(SolutionIssue::Bound {
                index,
                name: v.name.clone(),
                residual,
            });
        }
    }
    let recomputed = lp.objective_value(&sol.values);
    if (recomputed - sol.objective).abs() > tol * (1.0 + recomputed.abs()) {
        issues.push(SolutionIssue::Objective {
            reported: sol.objective,
            recomputed,
        });
    }
    issues
}
