//! Instance generators (random environments, MAX-SAT reduction, memoryless
//! gap constructions) and brute-force oracles for small instances.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{naive_plan, AgentKind};
use crate::env::{DynamicEnvironment, EnvironmentSpec, History};
use crate::error::{Error, Result};
use crate::mechanism::{check_ic, evaluate, Mechanism, Representation, SlotKey, DEFAULT_TOL};

/// Largest exhaustive search the oracles accept, as a power of two.
pub const ORACLE_BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Correlation between principal and agent values, in `[-1, 1]`.
    pub eta: f64,
    pub seed: u64,
}

// Independent ChaCha streams for each kind of draw, so changing how many
// numbers one site consumes never shifts another.
const STREAM_INITIAL: u64 = 0;
const STREAM_TRANSITION: u64 = 1;
const STREAM_PRINCIPAL: u64 = 2;
const STREAM_AGENT: u64 = 3;

fn stream(seed: u64, site: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site);
    rng
}

fn normalized_draw(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
    for _ in 0..2 {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = v.iter().sum();
        if sum > 0.0 {
            return Ok(v.into_iter().map(|x| x / sum).collect());
        }
    }
    Err(Error::SolverFailure(
        "random distribution draw was all zeros twice".into(),
    ))
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Random environment: normalized uniform transition rows, uniform principal
/// values, and `vA = η·vP + (1 − |η|)·rand`.
pub fn gen_random(params: &GeneratorParams) -> Result<DynamicEnvironment> {
    let GeneratorParams {
        horizon,
        num_states: ns,
        num_actions: na,
        eta,
        seed,
    } = *params;
    if horizon == 0 || ns == 0 || na == 0 {
        return Err(Error::arg("T, |S| and |A| must be positive"));
    }
    if !(-1.0..=1.0).contains(&eta) {
        return Err(Error::arg(format!("eta {eta} outside [-1, 1]")));
    }
    let initial = normalized_draw(&mut stream(seed, STREAM_INITIAL), ns)?;
    let mut rng = stream(seed, STREAM_TRANSITION);
    let mut transition = vec![vec![vec![Vec::new(); na]; ns]; horizon];
    for row in transition.iter_mut().flatten().flatten() {
        *row = normalized_draw(&mut rng, ns)?;
    }
    let mut rng = stream(seed, STREAM_PRINCIPAL);
    let principal: Vec<Vec<Vec<f64>>> = (0..horizon)
        .map(|_| (0..ns).map(|_| (0..na).map(|_| rng.random()).collect()).collect())
        .collect();
    let mut rng = stream(seed, STREAM_AGENT);
    let agent = principal
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&vp| eta * vp + (1.0 - eta.abs()) * rng.random::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    DynamicEnvironment::from_spec(&EnvironmentSpec {
        horizon,
        states: names("s", ns),
        actions: names("a", na),
        initial,
        transition,
        principal_value: principal,
        agent_value: agent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    /// Zero-based variable index.
    pub var: usize,
    pub positive: bool,
}

/// A CNF formula; no clause is empty or contains both polarities of a variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Vec<Literal>>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<Vec<Literal>>) -> Result<Self> {
        if num_vars == 0 {
            return Err(Error::arg("formula needs at least one variable"));
        }
        if clauses.is_empty() {
            return Err(Error::arg("formula needs at least one clause"));
        }
        for (i, clause) in clauses.iter().enumerate() {
            if clause.is_empty() {
                return Err(Error::arg(format!("clause {} is empty", i + 1)));
            }
            for lit in clause {
                if lit.var >= num_vars {
                    return Err(Error::arg(format!(
                        "clause {} mentions variable {} of {num_vars}",
                        i + 1,
                        lit.var + 1
                    )));
                }
                if clause.iter().any(|l| l.var == lit.var && l.positive != lit.positive) {
                    return Err(Error::arg(format!(
                        "clause {} contains both polarities of variable {}",
                        i + 1,
                        lit.var + 1
                    )));
                }
            }
        }
        Ok(CnfFormula { num_vars, clauses })
    }

    /// Builds from DIMACS-style signed, one-based literals.
    pub fn from_signed(num_vars: usize, clauses: &[&[i64]]) -> Result<Self> {
        let clauses = clauses
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&l| {
                        if l == 0 {
                            Err(Error::arg("literal 0 is not a variable"))
                        } else {
                            Ok(Literal {
                                var: l.unsigned_abs() as usize - 1,
                                positive: l > 0,
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(num_vars, clauses)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Vec<Literal>] {
        &self.clauses
    }

    pub fn satisfied_by(&self, assignment: &[bool]) -> usize {
        self.clauses
            .iter()
            .filter(|c| c.iter().any(|l| assignment[l.var] == l.positive))
            .count()
    }

    /// Parses the DIMACS CNF subset: comments, a `p cnf <vars> <clauses>`
    /// header, and zero-terminated clauses.
    pub fn parse_dimacs(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: format!("<dimacs>:{line}"),
            message,
        };
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current: Vec<i64> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let no = no + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
                continue;
            }
            if line.starts_with('p') {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" || header.is_some() {
                    return Err(parse_err(no, format!("bad header `{line}`")));
                }
                let n = parts[2].parse().map_err(|_| parse_err(no, "bad variable count".into()))?;
                let m = parts[3].parse().map_err(|_| parse_err(no, "bad clause count".into()))?;
                header = Some((n, m));
                continue;
            }
            let Some((n, _)) = header else {
                return Err(parse_err(no, "clause before `p cnf` header".into()));
            };
            for tok in line.split_whitespace() {
                let lit: i64 = tok
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad literal `{tok}`")))?;
                if lit == 0 {
                    clauses.push(std::mem::take(&mut current));
                } else if lit.unsigned_abs() as usize > n {
                    return Err(parse_err(no, format!("literal {lit} exceeds {n} variables")));
                } else {
                    current.push(lit);
                }
            }
        }
        let Some((n, m)) = header else {
            return Err(parse_err(0, "missing `p cnf` header".into()));
        };
        if !current.is_empty() {
            return Err(parse_err(0, "last clause is not terminated by 0".into()));
        }
        if clauses.len() != m {
            return Err(parse_err(0, format!("header declares {m} clauses, found {}", clauses.len())));
        }
        let refs: Vec<&[i64]> = clauses.iter().map(|c| c.as_slice()).collect();
        Self::from_signed(n, &refs)
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                let v = (l.var + 1) as i64;
                let _ = write!(out, "{} ", if l.positive { v } else { -v });
            }
            out.push_str("0\n");
        }
        out
    }
}

/// A random formula: each clause picks a nonempty subset of variables and
/// a random polarity for each.
pub fn gen_random_cnf(num_vars: usize, num_clauses: usize, seed: u64) -> Result<CnfFormula> {
    if num_vars == 0 || num_vars > 63 {
        return Err(Error::arg("random formulas support 1..=63 variables"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clauses = (0..num_clauses)
        .map(|_| {
            let mask = rng.random_range(1..(1u64 << num_vars));
            (0..num_vars)
                .filter(|v| mask >> v & 1 == 1)
                .map(|var| Literal {
                    var,
                    positive: rng.random(),
                })
                .collect()
        })
        .collect();
    CnfFormula::new(num_vars, clauses)
}

/// Default agent value of the positive action in the myopic variant of the reduction.
pub const MYOPIC_VARIANT_VALUE: f64 = 1e-3;

/// The zero-sum environment whose optimal value is the largest fraction of
/// simultaneously satisfiable clauses.
///
/// One state per clause plus an absorbing sink (last index); at time `t`
/// the actions `a_pos` / `a_neg` set variable `t`, and a clause moves to the
/// sink (paying the principal 1) the first time it is satisfied. With
/// `myopic_variant = Some(c)` the agent values `a_pos` at `c` and `a_neg` at
/// 0 everywhere instead.
pub fn gen_maxsat(f: &CnfFormula, myopic_variant: Option<f64>) -> Result<DynamicEnvironment> {
    let m = f.clauses.len();
    let n = f.num_vars;
    let ns = m + 1;
    let sink = m;
    let (pos, neg) = (0, 1);
    let mut transition = vec![vec![vec![vec![0.0; ns]; 2]; ns]; n];
    let mut principal = vec![vec![vec![0.0; 2]; ns]; n];
    for t in 0..n {
        transition[t][sink][pos][sink] = 1.0;
        transition[t][sink][neg][sink] = 1.0;
        for (i, clause) in f.clauses.iter().enumerate() {
            let lit = clause.iter().find(|l| l.var == t);
            let (moving, staying) = match lit {
                Some(l) if l.positive => (Some(pos), neg),
                Some(_) => (Some(neg), pos),
                None => (None, pos),
            };
            match moving {
                Some(a) => {
                    transition[t][i][a][sink] = 1.0;
                    transition[t][i][staying][i] = 1.0;
                    principal[t][i][a] = 1.0;
                }
                None => {
                    transition[t][i][pos][i] = 1.0;
                    transition[t][i][neg][i] = 1.0;
                }
            }
        }
    }
    let agent = match myopic_variant {
        None => principal
            .iter()
            .map(|l| l.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect())
            .collect(),
        Some(c) => vec![vec![vec![c, 0.0]; ns]; n],
    };
    let mut initial = vec![1.0 / m as f64; ns];
    initial[sink] = 0.0;
    let mut states: Vec<String> = (1..=m).map(|i| format!("s{i}")).collect();
    states.push("s0".into());
    DynamicEnvironment::from_spec(&EnvironmentSpec {
        horizon: n,
        states,
        actions: vec!["a_pos".into(), "a_neg".into()],
        initial,
        transition,
        principal_value: principal,
        agent_value: agent,
    })
}

/// Best fraction of clauses satisfiable at once, by enumeration.
pub fn maxsat_oracle(f: &CnfFormula) -> Result<f64> {
    if f.num_vars > ORACLE_BITS as usize {
        return Err(Error::CapExceeded(format!(
            "{} variables exceeds the 2^{ORACLE_BITS} assignment cap",
            f.num_vars
        )));
    }
    let mut best = 0;
    let mut assignment = vec![false; f.num_vars];
    for mask in 0u64..(1 << f.num_vars) {
        for (v, slot) in assignment.iter_mut().enumerate() {
            *slot = mask >> v & 1 == 1;
        }
        best = best.max(f.satisfied_by(&assignment));
    }
    Ok(best as f64 / f.clauses.len() as f64)
}

/// Best principal value over mechanisms that ignore reports and play a
/// fixed action sequence.
pub fn report_independent_oracle(env: &DynamicEnvironment) -> Result<f64> {
    let na = env.num_actions();
    let tt = env.horizon();
    let bits = tt as f64 * (na as f64).log2();
    if bits > ORACLE_BITS as f64 {
        return Err(Error::CapExceeded(format!(
            "|A|^T = {na}^{tt} exceeds the 2^{ORACLE_BITS} sequence cap"
        )));
    }
    let total = na.pow(tt as u32);
    let ns = env.num_states();
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut rest = code;
        let mut dist = env.initial().to_vec();
        let mut value = 0.0;
        for t in 1..=tt {
            let a = rest % na;
            rest /= na;
            let mut next = vec![0.0; ns];
            for (s, &d) in dist.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                value += d * env.principal_value(t, s, a);
                for (s2, &p) in env.transition_row(t, s, a).iter().enumerate() {
                    next[s2] += d * p;
                }
            }
            dist = next;
        }
        best = best.max(value);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapKind {
    Patient,
    Myopic,
}

/// The two-step environments separating history-dependent from memoryless
/// mechanisms, each with its history-dependent reference mechanism.
///
/// Patient: uniform start, every transition goes to the first state,
/// `vP_1(i,j) = [i = j]`, `vP_2 = 0`, `vA_t(i,j) = [i ≠ j]`; the reference
/// plays `i` in state `i` at time 1 and `(i mod n) + 1` at time 2 after
/// state `i`. Myopic: states never change, `vP_1 = vA_1 = 0`,
/// `vP_2(i,j) = [i = j]`, `vA_2(i,j) = [i ≠ j]`; the reference plays the
/// first action at time 1 and at time 2 plays `i` after state `i`.
pub fn gen_memoryless_gap(n: usize, kind: GapKind) -> Result<(DynamicEnvironment, Mechanism)> {
    if n < 2 {
        return Err(Error::arg("the gap construction needs n >= 2"));
    }
    let eq = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let ne = |i: usize, j: usize| 1.0 - eq(i, j);
    let grid = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect()
    };
    let spec = match kind {
        GapKind::Patient => {
            let to_first: Vec<f64> = (0..n).map(|s| eq(s, 0)).collect();
            EnvironmentSpec {
                horizon: 2,
                states: (1..=n).map(|i| format!("s{i}")).collect(),
                actions: (1..=n).map(|i| format!("a{i}")).collect(),
                initial: vec![1.0 / n as f64; n],
                transition: vec![vec![vec![to_first; n]; n]; 2],
                principal_value: vec![grid(&eq), grid(&|_, _| 0.0)],
                agent_value: vec![grid(&ne), grid(&ne)],
            }
        }
        GapKind::Myopic => {
            let identity: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|i| vec![(0..n).map(|s| eq(s, i)).collect(); n])
                .collect();
            EnvironmentSpec {
                horizon: 2,
                states: (1..=n).map(|i| format!("s{i}")).collect(),
                actions: (1..=n).map(|i| format!("a{i}")).collect(),
                initial: vec![1.0 / n as f64; n],
                transition: vec![identity; 2],
                principal_value: vec![grid(&|_, _| 0.0), grid(&eq)],
                agent_value: vec![grid(&|_, _| 0.0), grid(&ne)],
            }
        }
    };
    let env = DynamicEnvironment::from_spec(&spec)?;
    let mech = match kind {
        GapKind::Patient => {
            let mut mech = Mechanism::uniform_for(Representation::Table, &env)?;
            for i in 0..n {
                mech.set_deterministic(
                    &SlotKey::Table {
                        history: History::empty(),
                        state: i,
                    },
                    i,
                    0.0,
                )?;
                for a in 0..n {
                    for s in 0..n {
                        mech.set_deterministic(
                            &SlotKey::Table {
                                history: History::from_steps(vec![(i, a)]),
                                state: s,
                            },
                            (i + 1) % n,
                            0.0,
                        )?;
                    }
                }
            }
            mech
        }
        GapKind::Myopic => {
            let mut mech = Mechanism::uniform_for(Representation::Succinct, &env)?;
            for sp in 0..n {
                for ap in 0..n {
                    for s in 0..n {
                        let key = |t| SlotKey::Succinct {
                            t,
                            prev_state: sp,
                            prev_action: ap,
                            state: s,
                        };
                        mech.set_deterministic(&key(1), 0, 0.0)?;
                        mech.set_deterministic(&key(2), sp, 0.0)?;
                    }
                }
            }
            mech
        }
    };
    Ok((env, mech))
}

/// Best truthful principal value among IC memoryless mechanisms found by
/// sampling: the naive plan plus `samples` mechanisms whose action rows are
/// uniform on the simplex. Returns 0 when no candidate is IC.
pub fn memoryless_ic_screen(
    env: &DynamicEnvironment,
    kind: AgentKind,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let discount = match kind {
        AgentKind::Patient { discount } => discount,
        AgentKind::Myopic => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = env.num_actions();
    let mut best: f64 = 0.0;
    let mut consider = |mech: &Mechanism| -> Result<()> {
        if check_ic(env, mech, kind, DEFAULT_TOL)?.is_ic() {
            best = best.max(evaluate(env, mech, None, discount, 0.0)?.principal_total);
        }
        Ok(())
    };
    consider(&naive_plan(env)?.0)?;
    for _ in 0..samples {
        let mut mech = Mechanism::uniform_for(Representation::Memoryless, env)?;
        for slot in 0..mech.num_slots() {
            // exponential spacings give a uniform point on the simplex
            let w: Vec<f64> = (0..na).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let sum: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|x| x / sum).collect();
            mech.set_slot(slot, &probs, 0.0)?;
        }
        consider(&mech)?;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eta: f64, seed: u64) -> GeneratorParams {
        GeneratorParams {
            horizon: 2,
            num_states: 3,
            num_actions: 2,
            eta,
            seed,
        }
    }

    #[test]
    fn random_env_is_deterministic_in_seed() {
        let a = gen_random(&params(0.3, 7)).unwrap();
        let b = gen_random(&params(0.3, 7)).unwrap();
        let c = gen_random(&params(0.3, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn extreme_eta_copies_or_negates_values() {
        for (eta, sign) in [(1.0, 1.0), (-1.0, -1.0)] {
            let env = gen_random(&params(eta, 3)).unwrap();
            for t in 1..=2 {
                for s in 0..3 {
                    for a in 0..2 {
                        assert_eq!(env.agent_value(t, s, a), sign * env.principal_value(t, s, a));
                    }
                }
            }
        }
    }

    #[test]
    fn maxsat_env_is_zero_sum() {
        let f = CnfFormula::from_signed(2, &[&[1], &[-2], &[-1, 2]]).unwrap();
        let env = gen_maxsat(&f, None).unwrap();
        assert_eq!(env.horizon(), 2);
        assert_eq!(env.num_states(), 4);
        for t in 1..=2 {
            for s in 0..4 {
                for a in 0..2 {
                    assert_eq!(env.agent_value(t, s, a) + env.principal_value(t, s, a), 1.0);
                }
            }
        }
    }

    #[test]
    fn oracles_on_small_formulas() {
        let f1 = CnfFormula::from_signed(1, &[&[1], &[-1]]).unwrap();
        let f2 = CnfFormula::from_signed(2, &[&[1], &[-2], &[-1, 2]]).unwrap();
        let one = CnfFormula::from_signed(1, &[&[1]]).unwrap();
        assert_eq!(maxsat_oracle(&f1).unwrap(), 0.5);
        assert!((maxsat_oracle(&f2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(maxsat_oracle(&one).unwrap(), 1.0);
        assert_eq!(report_independent_oracle(&gen_maxsat(&f1, None).unwrap()).unwrap(), 0.5);
        let v2 = report_independent_oracle(&gen_maxsat(&f2, None).unwrap()).unwrap();
        assert!((v2 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn both_polarities_are_rejected() {
        assert!(CnfFormula::from_signed(2, &[&[1, -1]]).is_err());
    }

    #[test]
    fn dimacs_round_trip() {
        let f = CnfFormula::from_signed(3, &[&[1, -3], &[2], &[-1, -2, 3]]).unwrap();
        let text = format!("c example\n{}", f.to_dimacs());
        assert_eq!(CnfFormula::parse_dimacs(&text).unwrap(), f);
        assert!(CnfFormula::parse_dimacs("p cnf 1 1\n1 -1 0\n").is_err());
        assert!(CnfFormula::parse_dimacs("1 0\n").is_err());
    }

    #[test]
    fn random_formulas_are_valid_and_seeded() {
        let a = gen_random_cnf(3, 4, 11).unwrap();
        assert_eq!(a, gen_random_cnf(3, 4, 11).unwrap());
        assert_eq!(a.clauses().len(), 4);
    }

    #[test]
    fn myopic_gap_reference_achieves_one() {
        let (env, mech) = gen_memoryless_gap(2, GapKind::Myopic).unwrap();
        let r = evaluate(&env, &mech, None, 0.0, 0.0).unwrap();
        assert!((r.principal_total - 1.0).abs() < 1e-15);
        assert!(check_ic(&env, &mech, AgentKind::Myopic, DEFAULT_TOL).unwrap().is_ic());
    }

    #[test]
    fn screen_on_single_state_returns_naive_value() {
        let f = CnfFormula::from_signed(1, &[&[1]]).unwrap();
        // one clause state plus a sink: the sink is never reached at t=1
        let env = gen_maxsat(&f, None).unwrap();
        let (_, naive) = naive_plan(&env).unwrap();
        let v = memoryless_ic_screen(&env, AgentKind::PATIENT, 20, 1).unwrap();
        assert_eq!(v, naive);
    }
}
