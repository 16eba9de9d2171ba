//! Agent-side computations: the naive planner that ignores incentives, and
//! exact best responses of patient and myopic agents to a fixed mechanism.

use serde::{Deserialize, Serialize};

use crate::env::{DynamicEnvironment, HistoryIndex};
use crate::error::{Error, Result};
use crate::mechanism::{evaluate, Mechanism, ReportingStrategy, Representation, SlotKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Maximizes total utility with continuation discounted by `discount`.
    Patient { discount: f64 },
    /// Maximizes the current step's utility only.
    Myopic,
}

impl AgentKind {
    pub const PATIENT: AgentKind = AgentKind::Patient { discount: 1.0 };
}

/// How an agent picks among reports whose values tie within 1e-9 (relative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// The true state if it is among the best, else the lowest index.
    #[default]
    TruthfulFirst,
    LowestIndex,
    /// The report worst for the principal among the agent's best.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub strategy: ReportingStrategy,
    /// Patient: discounted total. Myopic: undiscounted total collected.
    pub agent_value: f64,
    pub principal_value: f64,
    pub tie_rule: TieRule,
}

fn within_tie(v: f64, best: f64) -> bool {
    v >= best - 1e-9 * (1.0 + best.abs())
}

/// Backward induction on the principal's values, ignoring the agent.
///
/// Returns a deterministic memoryless mechanism (lowest action on ties, no
/// payments) and its value.
pub fn naive_plan(env: &DynamicEnvironment) -> Result<(Mechanism, f64)> {
    let ns = env.num_states();
    let na = env.num_actions();
    let mut mech = Mechanism::uniform_for(Representation::Memoryless, env)?;
    let mut next = vec![0.0; ns];
    for t in (1..=env.horizon()).rev() {
        let mut cur = vec![0.0; ns];
        for (s, v) in cur.iter_mut().enumerate() {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..na {
                let cont: f64 = if t < env.horizon() {
                    env.transition_row(t, s, a).iter().zip(&next).map(|(p, v)| p * v).sum()
                } else {
                    0.0
                };
                let q = env.principal_value(t, s, a) + cont;
                if q > best.1 {
                    best = (a, q);
                }
            }
            *v = best.1;
            mech.set_deterministic(&SlotKey::Memoryless { t, state: s }, best.0, 0.0)?;
        }
        next = cur;
    }
    let value = env.initial().iter().zip(&next).map(|(p, v)| p * v).sum();
    Ok((mech, value))
}

/// An optimal reporting strategy for the agent against `mech`.
///
/// The dynamic program runs over (reported history, true state): the
/// mechanism reads only reports, while values and transitions read only the
/// true state, so the true history beyond its last state is irrelevant.
pub fn best_response(
    env: &DynamicEnvironment,
    mech: &Mechanism,
    kind: AgentKind,
    tie_rule: TieRule,
    payment_valuation: f64,
) -> Result<BestResponse> {
    mech.check_matches(env)?;
    let discount = match kind {
        AgentKind::Patient { discount } => {
            if !(0.0..=1.0).contains(&discount) {
                return Err(Error::arg(format!("agent discount {discount} outside [0, 1]")));
            }
            discount
        }
        AgentKind::Myopic => 0.0,
    };
    let index = HistoryIndex::for_env(env)?;
    let ns = env.num_states();
    let tt = env.horizon();

    let mut agent = vec![0.0; index.len() * ns];
    let mut principal = vec![0.0; index.len() * ns];
    let mut choice = vec![0usize; index.len() * ns];
    let mut agent_vals = vec![0.0; ns];
    let mut principal_vals = vec![0.0; ns];
    for len in (0..tt).rev() {
        let t = len + 1;
        for h in index.layer(len) {
            for s in 0..ns {
                for r in 0..ns {
                    let slot = mech.slot(&index, h, r);
                    let pay = mech.payment(slot);
                    let mut ua = -pay;
                    let mut up = payment_valuation * pay;
                    for (a, &pa) in mech.probs(slot).iter().enumerate() {
                        if pa == 0.0 {
                            continue;
                        }
                        let (mut ca, mut cp) = (0.0, 0.0);
                        if let Some(child) = index.child_at(h, len, r, a) {
                            for (s2, &pt) in env.transition_row(t, s, a).iter().enumerate() {
                                if pt != 0.0 {
                                    ca += pt * agent[child * ns + s2];
                                    cp += pt * principal[child * ns + s2];
                                }
                            }
                        }
                        ua += pa * (env.agent_value(t, s, a) + discount * ca);
                        up += pa * (env.principal_value(t, s, a) + cp);
                    }
                    agent_vals[r] = ua;
                    principal_vals[r] = up;
                }
                let best = agent_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tied = |r: usize| within_tie(agent_vals[r], best);
                let pick = match tie_rule {
                    TieRule::TruthfulFirst if tied(s) => s,
                    TieRule::TruthfulFirst | TieRule::LowestIndex => {
                        (0..ns).find(|&r| tied(r)).unwrap()
                    }
                    TieRule::Adversarial => (0..ns)
                        .filter(|&r| tied(r))
                        .min_by(|&a, &b| principal_vals[a].total_cmp(&principal_vals[b]))
                        .unwrap(),
                };
                let k = h * ns + s;
                choice[k] = pick;
                agent[k] = agent_vals[pick];
                principal[k] = principal_vals[pick];
            }
        }
    }

    // Follow the choices along the true tree to get r(h, s).
    let mut reports = vec![0usize; index.len() * ns];
    let mut rep = vec![0usize; index.len()];
    for len in 0..tt {
        for h in index.layer(len) {
            for s in 0..ns {
                let r = choice[rep[h] * ns + s];
                reports[h * ns + s] = r;
                for a in 0..env.num_actions() {
                    if let Some(child) = index.child_at(h, len, s, a) {
                        rep[child] = index.child_at(rep[h], len, r, a).unwrap();
                    }
                }
            }
        }
    }
    let strategy = ReportingStrategy::from_reports(&index, reports)?;
    let eval_discount = match kind {
        AgentKind::Patient { discount } => discount,
        AgentKind::Myopic => 1.0,
    };
    let eval = evaluate(env, mech, Some(&strategy), eval_discount, payment_valuation)?;
    Ok(BestResponse {
        strategy,
        agent_value: eval.agent_total,
        principal_value: eval.principal_total,
        tie_rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tests::small_spec;
    use crate::env::EnvironmentSpec;
    use crate::mechanism::enumerate_reporting_strategies;

    /// T=1, two equally likely states; principal wants the matching action,
    /// agent wants the other one.
    fn opposed() -> DynamicEnvironment {
        DynamicEnvironment::from_spec(&EnvironmentSpec {
            horizon: 1,
            states: vec!["s0".into(), "s1".into()],
            actions: vec!["a0".into(), "a1".into()],
            initial: vec![0.5, 0.5],
            transition: vec![vec![vec![vec![0.5, 0.5]; 2]; 2]],
            principal_value: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            agent_value: vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
        })
        .unwrap()
    }

    #[test]
    fn naive_plan_per_state_argmax() {
        let env = opposed();
        let (mech, value) = naive_plan(&env).unwrap();
        assert_eq!(value, 1.0);
        assert_eq!(mech.probs(0), &[1.0, 0.0]);
        assert_eq!(mech.probs(1), &[0.0, 1.0]);
    }

    #[test]
    fn naive_plan_ignores_agent_values() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let (m1, v1) = naive_plan(&env).unwrap();
        let (m2, v2) = naive_plan(&env.with_agent_values(|t, s, a| (t + 3 * s + 7 * a) as f64)).unwrap();
        assert_eq!((m1, v1), (m2, v2));
    }

    #[test]
    fn agent_flips_both_reports_against_naive() {
        let env = opposed();
        let (mech, _) = naive_plan(&env).unwrap();
        let br = best_response(&env, &mech, AgentKind::PATIENT, TieRule::TruthfulFirst, 0.0).unwrap();
        assert_eq!(br.strategy.reports(), &[1, 0]);
        assert_eq!(br.agent_value, 1.0);
        assert_eq!(br.principal_value, 0.0);
    }

    #[test]
    fn ties_follow_the_rule() {
        // every report yields the same agent utility; principal prefers action 0
        let env = opposed().with_agent_values(|_, _, _| 0.5);
        let (mech, _) = naive_plan(&env).unwrap();
        let truthful = best_response(&env, &mech, AgentKind::PATIENT, TieRule::TruthfulFirst, 0.0).unwrap();
        assert!(truthful.strategy.is_truthful());
        let lowest = best_response(&env, &mech, AgentKind::PATIENT, TieRule::LowestIndex, 0.0).unwrap();
        assert_eq!(lowest.strategy.reports(), &[0, 0]);
        assert_eq!(lowest.principal_value, 0.5);
        let adv = best_response(&env, &mech, AgentKind::PATIENT, TieRule::Adversarial, 0.0).unwrap();
        assert_eq!(adv.strategy.reports(), &[1, 0]);
        assert_eq!(adv.principal_value, 0.0);
    }

    #[test]
    fn dp_matches_enumeration_on_small_env() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let (mech, _) = naive_plan(&env).unwrap();
        let br = best_response(&env, &mech, AgentKind::PATIENT, TieRule::TruthfulFirst, 0.0).unwrap();
        let brute = enumerate_reporting_strategies(&env)
            .unwrap()
            .map(|r| evaluate(&env, &mech, Some(&r), 1.0, 0.0).unwrap().agent_total)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((br.agent_value - brute).abs() < 1e-12);
    }

    #[test]
    fn myopic_agent_uses_only_the_current_step() {
        let env = opposed();
        let (mech, _) = naive_plan(&env).unwrap();
        let br = best_response(&env, &mech, AgentKind::Myopic, TieRule::TruthfulFirst, 0.0).unwrap();
        assert_eq!(br.strategy.reports(), &[1, 0]);
    }
}
