//! Optimal mechanisms against a myopic agent, built backward in time from
//! one static mechanism-design LP per `(t, previous state, previous action)`.

use rayon::prelude::*;

use crate::env::DynamicEnvironment;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::mechanism::{normalize_distribution, IrMode, Mechanism, Representation, SlotKey};
use crate::optimal::{PaymentMode, SolveConfig};

/// A one-shot design problem: a population of types, each choosing a report
/// once, with no future.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticInstance {
    /// Population weight of each type; entries are nonnegative.
    pub population: Vec<f64>,
    /// `[type][action]`.
    pub principal_util: Vec<Vec<f64>>,
    /// `[type][action]`.
    pub agent_util: Vec<Vec<f64>>,
    pub ir_mode: IrMode,
    pub payment_mode: PaymentMode,
    pub payment_valuation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticMechanism {
    /// `[type][action]`.
    pub policy: Vec<Vec<f64>>,
    pub payment: Vec<f64>,
    pub value: f64,
}

/// Best one-shot IC mechanism for `inst`. Every type keeps its IC (and,
/// under dynamic IR, IR) constraints even with zero population weight.
pub fn opt_stat_mech(inst: &StaticInstance) -> Result<StaticMechanism> {
    let ns = inst.population.len();
    if ns == 0 || inst.principal_util.len() != ns || inst.agent_util.len() != ns {
        return Err(Error::arg("static instance needs matching, nonempty type lists"));
    }
    let na = inst.principal_util[0].len();
    if na == 0
        || inst.principal_util.iter().chain(&inst.agent_util).any(|r| r.len() != na)
    {
        return Err(Error::arg("static instance utilities must be [type][action] with |A| >= 1"));
    }
    if inst.population.iter().any(|&q| !(q >= 0.0)) {
        return Err(Error::arg("population weights must be nonnegative"));
    }

    let mut lp = LinearProgram::new();
    let x = |s: usize, a: usize| s * na + a;
    let pay = |s: usize| ns * na + s;
    for s in 0..ns {
        for a in 0..na {
            lp.add_variable(format!("pi{s}:{a}"), 0.0, f64::INFINITY);
        }
    }
    let (lo, hi) = match inst.payment_mode {
        PaymentMode::None => (0.0, 0.0),
        PaymentMode::Nonnegative => (0.0, f64::INFINITY),
        PaymentMode::Interval { lower, upper } => {
            if lower > upper {
                return Err(Error::arg(format!("payment interval [{lower}, {upper}] is empty")));
            }
            (lower, upper)
        }
    };
    for s in 0..ns {
        lp.add_variable(format!("p{s}"), lo, hi);
    }

    let mut objective = Vec::new();
    for s in 0..ns {
        let q = inst.population[s];
        for a in 0..na {
            objective.push((x(s, a), q * inst.principal_util[s][a]));
        }
        objective.push((pay(s), q * inst.payment_valuation));
    }
    lp.set_objective(objective);

    for s in 0..ns {
        lp.add_constraint(
            format!("dist{s}"),
            (0..na).map(|a| (x(s, a), 1.0)).collect(),
            Relation::Eq,
            1.0,
        );
    }
    let util = |s: usize, r: usize, scale: f64| {
        let mut row: Vec<(usize, f64)> = (0..na)
            .map(|a| (x(r, a), scale * inst.agent_util[s][a]))
            .collect();
        row.push((pay(r), -scale));
        row
    };
    for s in 0..ns {
        for r in 0..ns {
            if r == s {
                continue;
            }
            let mut row = util(s, s, 1.0);
            row.extend(util(s, r, -1.0));
            lp.add_constraint(format!("ic{s}>{r}"), row, Relation::Ge, 0.0);
        }
    }
    match inst.ir_mode {
        IrMode::None => {}
        IrMode::Dynamic => {
            for s in 0..ns {
                lp.add_constraint(format!("ir{s}"), util(s, s, 1.0), Relation::Ge, 0.0);
            }
        }
        IrMode::Overall => {
            let row = (0..ns)
                .flat_map(|s| util(s, s, inst.population[s]))
                .collect();
            lp.add_constraint("ir_overall", row, Relation::Ge, 0.0);
        }
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "static mechanism with ir={:?}, payments={}",
                inst.ir_mode, inst.payment_mode
            )))
        }
        LpStatus::Unbounded => {
            return Err(Error::Unbounded(format!(
                "static mechanism with ir={:?}, payments={}",
                inst.ir_mode, inst.payment_mode
            )))
        }
    }
    let policy = (0..ns)
        .map(|s| {
            let row: Vec<f64> = (0..na).map(|a| sol.values[x(s, a)]).collect();
            normalize_distribution(&row).map_err(|e| Error::SolverFailure(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StaticMechanism {
        policy,
        payment: (0..ns).map(|s| sol.values[pay(s)]).collect(),
        value: sol.objective,
    })
}

#[derive(Debug, Clone)]
pub struct MyopicSolution {
    pub mechanism: Mechanism,
    pub value: f64,
    /// Number of static LPs solved; always `T·|S|·|A|`.
    pub static_calls: usize,
}

/// An optimal succinct IC mechanism for a myopic agent.
///
/// `config.agent_discount` is ignored: a myopic agent discounts the future
/// entirely.
pub fn solve_myopic_detailed(env: &DynamicEnvironment, config: &SolveConfig) -> Result<MyopicSolution> {
    config.validate()?;
    let ns = env.num_states();
    let na = env.num_actions();
    let tt = env.horizon();
    let c = config.payment_valuation;
    let mut mech = Mechanism::uniform_for(Representation::Succinct, env)?;
    // continuation[(s_p * |A| + a_p) * |S| + s]: principal's onward value at
    // time t+1 after (s_p, a_p), when the new state is s
    let mut continuation: Vec<f64> = vec![0.0; ns * na * ns];
    let mut static_calls = 0usize;
    let mut value = 0.0;

    for t in (1..=tt).rev() {
        let util: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let cont: f64 = if t < tt {
                            env.transition_row(t, s, a)
                                .iter()
                                .enumerate()
                                .map(|(s2, &p)| p * continuation[(s * na + a) * ns + s2])
                                .sum()
                        } else {
                            0.0
                        };
                        env.principal_value(t, s, a) + cont
                    })
                    .collect()
            })
            .collect();
        let agent: Vec<Vec<f64>> = (0..ns)
            .map(|s| (0..na).map(|a| env.agent_value(t, s, a)).collect())
            .collect();
        // overall IR only concerns the agent's total, which a myopic agent
        // collects at t = 1
        let ir_mode = match config.ir_mode {
            IrMode::Overall if t > 1 => IrMode::None,
            m => m,
        };

        let results: Vec<StaticMechanism> = (0..ns * na)
            .into_par_iter()
            .map(|k| {
                let (sp, ap) = (k / na, k % na);
                let population = if t == 1 {
                    env.initial().to_vec()
                } else {
                    env.transition_row(t - 1, sp, ap).to_vec()
                };
                opt_stat_mech(&StaticInstance {
                    population,
                    principal_util: util.clone(),
                    agent_util: agent.clone(),
                    ir_mode,
                    payment_mode: config.payment_mode,
                    payment_valuation: c,
                })
            })
            .collect::<Result<_>>()?;
        static_calls += results.len();

        let mut next = vec![0.0; ns * na * ns];
        for (k, res) in results.iter().enumerate() {
            let (sp, ap) = (k / na, k % na);
            for s in 0..ns {
                let key = SlotKey::Succinct {
                    t,
                    prev_state: sp,
                    prev_action: ap,
                    state: s,
                };
                mech.set(&key, &res.policy[s], res.payment[s])?;
                next[k * ns + s] = res.policy[s]
                    .iter()
                    .zip(&util[s])
                    .map(|(p, u)| p * u)
                    .sum::<f64>()
                    + c * res.payment[s];
            }
        }
        if t == 1 {
            value = results[0].value;
        }
        continuation = next;
    }

    Ok(MyopicSolution {
        mechanism: mech,
        value,
        static_calls,
    })
}

pub fn solve_myopic(env: &DynamicEnvironment, config: &SolveConfig) -> Result<(Mechanism, f64)> {
    let s = solve_myopic_detailed(env, config)?;
    Ok((s.mechanism, s.value))
}
