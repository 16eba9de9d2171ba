//! The history-tree linear program for an optimal IC dynamic mechanism
//! against a patient agent, and extraction of the mechanism from its solution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{DynamicEnvironment, HistoryIndex};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpSolution, LpStatus, Relation};
use crate::mechanism::{IrMode, Mechanism, Representation};

/// Mass below which a history-state pair counts as never reached by the mechanism.
pub const ZERO_MASS: f64 = 1e-12;
const NEG_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaymentMode {
    /// No money changes hands.
    None,
    /// The agent pays a nonnegative amount.
    Nonnegative,
    /// The per-step payment lies in `[lower, upper]`.
    Interval { lower: f64, upper: f64 },
}

impl fmt::Display for PaymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaymentMode::None => f.write_str("none"),
            PaymentMode::Nonnegative => f.write_str("nonneg"),
            PaymentMode::Interval { lower, upper } => write!(f, "interval:{lower}:{upper}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub ir_mode: IrMode,
    pub payment_mode: PaymentMode,
    /// Principal's value per unit of payment received.
    pub payment_valuation: f64,
    pub agent_discount: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            ir_mode: IrMode::Dynamic,
            payment_mode: PaymentMode::Nonnegative,
            payment_valuation: 1.0,
            agent_discount: 1.0,
        }
    }
}

impl SolveConfig {
    /// No payments and no participation constraint.
    pub fn no_money() -> Self {
        SolveConfig {
            ir_mode: IrMode::None,
            payment_mode: PaymentMode::None,
            ..SolveConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PaymentMode::Interval { lower, upper } = self.payment_mode {
            if !lower.is_finite() || !upper.is_finite() || lower > upper {
                return Err(Error::arg(format!(
                    "payment interval [{lower}, {upper}] is empty or not finite"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.agent_discount) {
            return Err(Error::arg(format!(
                "agent discount {} outside [0, 1]",
                self.agent_discount
            )));
        }
        if !self.payment_valuation.is_finite() {
            return Err(Error::arg("payment valuation is not finite"));
        }
        Ok(())
    }
}

impl FromStr for PaymentMode {
    type Err = Error;

    /// `none`, `nonneg`, or `interval:<lower>:<upper>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PaymentMode::None),
            "nonneg" => Ok(PaymentMode::Nonnegative),
            _ => {
                let bad = || Error::arg(format!("payment mode `{s}` is not none, nonneg or interval:<a>:<b>"));
                let rest = s.strip_prefix("interval:").ok_or_else(bad)?;
                let (a, b) = rest.split_once(':').ok_or_else(bad)?;
                let lower: f64 = a.parse().map_err(|_| bad())?;
                let upper: f64 = b.parse().map_err(|_| bad())?;
                if !lower.is_finite() || !upper.is_finite() || lower > upper {
                    return Err(Error::arg(format!("payment interval [{lower}, {upper}] is empty or unbounded")));
                }
                Ok(PaymentMode::Interval { lower, upper })
            }
        }
    }
}

impl fmt::Display for SolveConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ir={:?}, payments={}, c={}, discount={}",
            self.ir_mode, self.payment_mode, self.payment_valuation, self.agent_discount
        )
    }
}

/// Column layout of the LP: families `x(h,s,a)`, `y(h,s)`, `z(h,s)`,
/// `u(h,s)`, `u(h,s,s')`, each contiguous and in history-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpIndexMap {
    histories: usize,
    num_states: usize,
    num_actions: usize,
}

impl LpIndexMap {
    pub fn new(index: &HistoryIndex) -> Self {
        LpIndexMap {
            histories: index.len(),
            num_states: index.num_states(),
            num_actions: index.num_actions(),
        }
    }

    fn pairs(&self) -> usize {
        self.histories * self.num_states
    }

    #[inline]
    pub fn x(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    #[inline]
    pub fn y(&self, h: usize, s: usize) -> usize {
        self.pairs() * self.num_actions + h * self.num_states + s
    }

    #[inline]
    pub fn z(&self, h: usize, s: usize) -> usize {
        self.pairs() * (self.num_actions + 1) + h * self.num_states + s
    }

    #[inline]
    pub fn u(&self, h: usize, s: usize) -> usize {
        self.pairs() * (self.num_actions + 2) + h * self.num_states + s
    }

    #[inline]
    pub fn u_dev(&self, h: usize, s: usize, reported: usize) -> usize {
        self.pairs() * (self.num_actions + 3) + (h * self.num_states + s) * self.num_states + reported
    }

    pub fn num_columns(&self) -> usize {
        self.pairs() * (self.num_actions + 3 + self.num_states)
    }
}

/// Whether each `(h, s)` is reached with positive probability under the
/// dynamics (ignoring the mechanism), stored as `h * |S| + s`.
pub(crate) fn feasible_pairs(env: &DynamicEnvironment, index: &HistoryIndex) -> Vec<bool> {
    let ns = env.num_states();
    let mut feasible = vec![false; index.len() * ns];
    for s in 0..ns {
        feasible[s] = env.initial()[s] > 0.0;
    }
    for len in 0..env.horizon() - 1 {
        for h in index.layer(len) {
            for s in 0..ns {
                if !feasible[h * ns + s] {
                    continue;
                }
                for a in 0..env.num_actions() {
                    let child = index.child_at(h, len, s, a).unwrap();
                    for (s2, &p) in env.transition_row(len + 1, s, a).iter().enumerate() {
                        if p > 0.0 {
                            feasible[child * ns + s2] = true;
                        }
                    }
                }
            }
        }
    }
    feasible
}

/// Builds the LP whose optimum is the principal's best value over IC
/// (and, per `config`, IR) mechanisms.
pub fn build_lp(env: &DynamicEnvironment, config: &SolveConfig) -> Result<(LinearProgram, LpIndexMap)> {
    config.validate()?;
    let index = HistoryIndex::for_env(env)?;
    let map = LpIndexMap::new(&index);
    let ns = env.num_states();
    let na = env.num_actions();
    let tt = env.horizon();
    let delta = config.agent_discount;
    let c = config.payment_valuation;
    let mut lp = LinearProgram::new();

    let hname = |h: usize| {
        let steps: Vec<String> = index
            .decode(h)
            .steps()
            .iter()
            .map(|&(s, a)| format!("{s}.{a}"))
            .collect();
        format!("[{}]", steps.join(" "))
    };
    let inf = f64::INFINITY;
    for h in 0..index.len() {
        for s in 0..ns {
            for a in 0..na {
                lp.add_variable(format!("x{}{s}:{a}", hname(h)), 0.0, inf);
            }
        }
    }
    let (ylo, yhi) = match config.payment_mode {
        PaymentMode::None => (0.0, 0.0),
        PaymentMode::Nonnegative => (0.0, inf),
        PaymentMode::Interval { .. } => (-inf, inf),
    };
    for h in 0..index.len() {
        for s in 0..ns {
            lp.add_variable(format!("y{}{s}", hname(h)), ylo, yhi);
        }
    }
    for prefix in ["z", "u"] {
        for h in 0..index.len() {
            for s in 0..ns {
                lp.add_variable(format!("{prefix}{}{s}", hname(h)), -inf, inf);
            }
        }
    }
    for h in 0..index.len() {
        for s in 0..ns {
            for r in 0..ns {
                lp.add_variable(format!("u{}{s}>{r}", hname(h)), -inf, inf);
            }
        }
    }
    debug_assert_eq!(lp.num_variables(), map.num_columns());

    let feasible = feasible_pairs(env, &index);
    let mut objective = Vec::new();
    for h in 0..index.len() {
        let t = index.length_of(h) + 1;
        for s in 0..ns {
            if !feasible[h * ns + s] {
                continue;
            }
            for a in 0..na {
                objective.push((map.x(h, s, a), env.principal_value(t, s, a)));
            }
            objective.push((map.y(h, s), c));
        }
    }
    lp.set_objective(objective);

    // flow
    for h in 0..index.len() {
        for s in 0..ns {
            let mut row = vec![(map.z(h, s), 1.0)];
            row.extend((0..na).map(|a| (map.x(h, s, a), -1.0)));
            lp.add_constraint(format!("flow_sum{}{s}", hname(h)), row, Relation::Eq, 0.0);
        }
    }
    for s in 0..ns {
        lp.add_constraint(
            format!("flow_init{s}"),
            vec![(map.z(0, s), 1.0)],
            Relation::Eq,
            env.extended_transition(0, 0, 0, s),
        );
    }
    for len in 0..tt - 1 {
        for h in index.layer(len) {
            for s in 0..ns {
                for a in 0..na {
                    let child = index.child_at(h, len, s, a).unwrap();
                    for s2 in 0..ns {
                        let pe = env.extended_transition(len + 1, s, a, s2);
                        lp.add_constraint(
                            format!("flow_step{}{s}:{a}>{s2}", hname(h)),
                            vec![(map.z(child, s2), 1.0), (map.x(h, s, a), -pe)],
                            Relation::Eq,
                            0.0,
                        );
                    }
                }
            }
        }
    }

    // utility: u(h,s) collects every feasible extension of (h,s)
    for len in 0..tt {
        for h in index.layer(len) {
            for s in 0..ns {
                let mut row = vec![(map.u(h, s), 1.0)];
                let mut stack = vec![(h, len, s, 1.0f64)];
                while let Some((h2, len2, s2, weight)) = stack.pop() {
                    let t2 = len2 + 1;
                    for a in 0..na {
                        row.push((map.x(h2, s2, a), -weight * env.agent_value(t2, s2, a)));
                    }
                    row.push((map.y(h2, s2), weight));
                    if len2 + 1 < tt {
                        for a in 0..na {
                            let child = index.child_at(h2, len2, s2, a).unwrap();
                            for (s3, &p) in env.transition_row(t2, s2, a).iter().enumerate() {
                                if p > 0.0 {
                                    stack.push((child, len2 + 1, s3, weight * delta));
                                }
                            }
                        }
                    }
                }
                lp.add_constraint(format!("util{}{s}", hname(h)), row, Relation::Eq, 0.0);
            }
        }
    }

    // IC
    for len in 0..tt {
        let t = len + 1;
        for h in index.layer(len) {
            let (sp, ap) = index.last(h);
            for s in 0..ns {
                for r in 0..ns {
                    let mut row = vec![(map.u_dev(h, s, r), 1.0), (map.y(h, r), 1.0)];
                    for a in 0..na {
                        row.push((map.x(h, r, a), -env.agent_value(t, s, a)));
                        if let Some(child) = index.child_at(h, len, r, a) {
                            for s2 in 0..ns {
                                let p = env.transition(t, s, a, s2);
                                if p == 0.0 {
                                    continue;
                                }
                                let ratio = p / env.extended_transition(t, r, a, s2);
                                row.push((map.u(child, s2), -delta * ratio));
                            }
                        }
                    }
                    lp.add_constraint(format!("ic_dev{}{s}>{r}", hname(h)), row, Relation::Eq, 0.0);

                    let ratio = env.extended_transition(len, sp, ap, s)
                        / env.extended_transition(len, sp, ap, r);
                    lp.add_constraint(
                        format!("ic{}{s}>{r}", hname(h)),
                        vec![(map.u(h, s), 1.0), (map.u_dev(h, s, r), -ratio)],
                        Relation::Ge,
                        0.0,
                    );
                }
            }
        }
    }

    match config.ir_mode {
        IrMode::None => {}
        IrMode::Overall => {
            let row = (0..ns)
                .filter(|&s| env.initial()[s] > 0.0)
                .map(|s| (map.u(0, s), 1.0))
                .collect();
            lp.add_constraint("ir_overall", row, Relation::Ge, 0.0);
        }
        IrMode::Dynamic => {
            for h in 0..index.len() {
                for s in 0..ns {
                    lp.add_constraint(
                        format!("ir{}{s}", hname(h)),
                        vec![(map.u(h, s), 1.0)],
                        Relation::Ge,
                        0.0,
                    );
                }
            }
        }
    }

    if let PaymentMode::Interval { lower, upper } = config.payment_mode {
        for h in 0..index.len() {
            for s in 0..ns {
                lp.add_constraint(
                    format!("pay_lo{}{s}", hname(h)),
                    vec![(map.y(h, s), 1.0), (map.z(h, s), -lower)],
                    Relation::Ge,
                    0.0,
                );
                lp.add_constraint(
                    format!("pay_hi{}{s}", hname(h)),
                    vec![(map.y(h, s), 1.0), (map.z(h, s), -upper)],
                    Relation::Le,
                    0.0,
                );
            }
        }
    }

    Ok((lp, map))
}

/// Reads a table mechanism off an optimal solution: `π = x / z` and
/// `p = y / z` where `z > 1e-12`, uniform play and no payment elsewhere.
pub fn extract_mechanism(
    env: &DynamicEnvironment,
    sol: &LpSolution,
    map: &LpIndexMap,
) -> Result<Mechanism> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::SolverFailure(format!(
            "cannot extract a mechanism from a {:?} solution",
            sol.status
        )));
    }
    if sol.values.len() != map.num_columns() {
        return Err(Error::arg("solution does not match the index map"));
    }
    let index = HistoryIndex::for_env(env)?;
    let ns = env.num_states();
    let na = env.num_actions();
    let mut mech = Mechanism::uniform_for(Representation::Table, env)?;
    let v = &sol.values;
    let mut probs = vec![0.0; na];
    for h in 0..index.len() {
        for s in 0..ns {
            let z = v[map.z(h, s)];
            if z <= ZERO_MASS {
                continue;
            }
            for (a, p) in probs.iter_mut().enumerate() {
                let x = v[map.x(h, s, a)];
                if x < -NEG_CLAMP {
                    return Err(Error::SolverFailure(format!(
                        "x({h},{s},{a}) = {x} is negative"
                    )));
                }
                *p = x.max(0.0);
            }
            let sum: f64 = probs.iter().sum();
            if sum <= 0.0 {
                continue;
            }
            for p in probs.iter_mut() {
                *p /= sum;
            }
            let slot = mech.slot(&index, h, s);
            mech.set_slot(slot, &probs, v[map.y(h, s)] / z)?;
        }
    }
    Ok(mech)
}

/// Everything produced by one optimal solve.
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub mechanism: Mechanism,
    /// The LP objective value.
    pub value: f64,
    pub lp: LinearProgram,
    pub map: LpIndexMap,
    pub solution: LpSolution,
}

pub fn solve_optimal_detailed(env: &DynamicEnvironment, config: &SolveConfig) -> Result<OptimalSolution> {
    let (lp, map) = build_lp(env, config)?;
    let solution = solve_lp(&lp)?;
    match solution.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible(config.to_string())),
        LpStatus::Unbounded => return Err(Error::Unbounded(config.to_string())),
    }
    let mechanism = extract_mechanism(env, &solution, &map)?;
    Ok(OptimalSolution {
        mechanism,
        value: solution.objective,
        lp,
        map,
        solution,
    })
}

/// An optimal IC mechanism for a patient agent and its value.
pub fn solve_optimal(env: &DynamicEnvironment, config: &SolveConfig) -> Result<(Mechanism, f64)> {
    let s = solve_optimal_detailed(env, config)?;
    Ok((s.mechanism, s.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tests::small_spec;
    use crate::env::EnvironmentSpec;

    fn single(vp: f64, va: f64) -> DynamicEnvironment {
        DynamicEnvironment::from_spec(&EnvironmentSpec {
            horizon: 1,
            states: vec!["s0".into()],
            actions: vec!["a0".into()],
            initial: vec![1.0],
            transition: vec![vec![vec![vec![1.0]]]],
            principal_value: vec![vec![vec![vp]]],
            agent_value: vec![vec![vec![va]]],
        })
        .unwrap()
    }


    #[test]
    fn payment_modes_parse_and_print() {
        for text in ["none", "nonneg", "interval:-1:2.5"] {
            assert_eq!(text.parse::<PaymentMode>().unwrap().to_string(), text);
        }
        for bad in ["", "interval:2:1", "interval:0", "interval:a:b", "free"] {
            assert!(bad.parse::<PaymentMode>().is_err(), "{bad}");
        }
    }

    #[test]
    fn column_counts() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let (lp, map) = build_lp(&env, &SolveConfig::default()).unwrap();
        assert_eq!(lp.num_variables(), 70);
        assert_eq!(map.num_columns(), 70);
        // families are disjoint and cover 0..70
        let index = HistoryIndex::for_env(&env).unwrap();
        let mut seen = vec![0u8; 70];
        for h in 0..index.len() {
            for s in 0..2 {
                for a in 0..2 {
                    seen[map.x(h, s, a)] += 1;
                }
                seen[map.y(h, s)] += 1;
                seen[map.z(h, s)] += 1;
                seen[map.u(h, s)] += 1;
                for r in 0..2 {
                    seen[map.u_dev(h, s, r)] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn degenerate_tree() {
        let env = single(0.7, 0.3);
        let cfg = SolveConfig {
            payment_valuation: 2.0,
            ..SolveConfig::default()
        };
        let (lp, map) = build_lp(&env, &cfg).unwrap();
        assert_eq!(lp.num_variables(), 5);
        assert_eq!(lp.objective, vec![(map.x(0, 0, 0), 0.7), (map.y(0, 0), 2.0)]);
    }

    #[test]
    fn no_payments_fix_y() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let (lp, map) = build_lp(&env, &SolveConfig::no_money()).unwrap();
        for h in 0..5 {
            for s in 0..2 {
                let v = &lp.variables[map.y(h, s)];
                assert_eq!((v.lower, v.upper), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn empty_interval_is_rejected() {
        let env = single(0.7, 0.3);
        let cfg = SolveConfig {
            payment_mode: PaymentMode::Interval { lower: 1.0, upper: 0.0 },
            ..SolveConfig::default()
        };
        assert!(matches!(build_lp(&env, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trivial_value() {
        let (mech, value) = solve_optimal(&single(0.7, 0.3), &SolveConfig::no_money()).unwrap();
        assert!((value - 0.7).abs() < 1e-9);
        assert_eq!(mech.probs(0), &[1.0]);
    }

    #[test]
    fn surplus_extraction_with_payments() {
        // the agent values the only action at 0.3; dynamic IR lets the
        // principal charge exactly that
        let (mech, value) = solve_optimal(&single(0.7, 0.3), &SolveConfig::default()).unwrap();
        assert!((value - 1.0).abs() < 1e-9);
        assert!((mech.payment(0) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn unbounded_without_ir() {
        let cfg = SolveConfig {
            ir_mode: IrMode::None,
            ..SolveConfig::default()
        };
        assert!(matches!(solve_optimal(&single(0.7, 0.3), &cfg), Err(Error::Unbounded(_))));
    }

    #[test]
    fn extraction_divides_by_mass() {
        let env = DynamicEnvironment::from_spec(&EnvironmentSpec {
            horizon: 1,
            states: vec!["s0".into(), "s1".into()],
            actions: vec!["a0".into(), "a1".into()],
            initial: vec![0.5, 0.5],
            transition: vec![vec![vec![vec![0.5, 0.5]; 2]; 2]],
            principal_value: vec![vec![vec![0.0; 2]; 2]],
            agent_value: vec![vec![vec![0.0; 2]; 2]],
        })
        .unwrap();
        let map = LpIndexMap::new(&HistoryIndex::for_env(&env).unwrap());
        let mut values = vec![0.0; map.num_columns()];
        values[map.z(0, 0)] = 0.5;
        values[map.x(0, 0, 0)] = 0.25;
        values[map.x(0, 0, 1)] = 0.25;
        values[map.z(0, 1)] = 1.0;
        values[map.x(0, 1, 0)] = 1.0;
        values[map.y(0, 1)] = 0.4;
        let sol = LpSolution {
            status: LpStatus::Optimal,
            objective: 0.0,
            values: values.clone(),
            iterations: 0,
        };
        let mech = extract_mechanism(&env, &sol, &map).unwrap();
        assert_eq!(mech.probs(0), &[0.5, 0.5]);
        assert_eq!(mech.probs(1), &[1.0, 0.0]);
        assert!((mech.payment(1) - 0.4).abs() < 1e-15);

        values[map.z(0, 1)] = 0.0;
        let sol = LpSolution { values, ..sol };
        let mech = extract_mechanism(&env, &sol, &map).unwrap();
        assert_eq!(mech.probs(1), &[0.5, 0.5]);
        assert_eq!(mech.payment(1), 0.0);
    }
}
