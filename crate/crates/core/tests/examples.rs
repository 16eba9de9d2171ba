//! Small hand-checkable instances exercised end to end through the public API.

use dynmech_core::agents::{best_response, naive_plan, AgentKind, TieRule};
use dynmech_core::env::{DynamicEnvironment, EnvironmentSpec, History};
use dynmech_core::instances::{
    gen_maxsat, gen_memoryless_gap, maxsat_oracle, memoryless_ic_screen, report_independent_oracle, CnfFormula,
    GapKind,
};
use dynmech_core::lp::{solve_lp, LinearProgram, Relation};
use dynmech_core::mechanism::{check_ic, check_ir, evaluate, IrMode, Mechanism, Representation, SlotKey};
use dynmech_core::myopic::{opt_stat_mech, solve_myopic, StaticInstance};
use dynmech_core::optimal::{build_lp, solve_optimal, PaymentMode, SolveConfig};

const TOL: f64 = 1e-6;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// T=1, one state, one action.
fn trivial() -> DynamicEnvironment {
    DynamicEnvironment::from_spec(&EnvironmentSpec {
        horizon: 1,
        states: vec!["s".into()],
        actions: vec!["a".into()],
        initial: vec![1.0],
        transition: vec![vec![vec![vec![1.0]]]],
        principal_value: vec![vec![vec![0.7]]],
        agent_value: vec![vec![vec![0.3]]],
    })
    .unwrap()
}

/// T=1, two equally likely types; the principal wants the matching action and
/// the agent the other one.
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

fn one_clause_each_way() -> CnfFormula {
    CnfFormula::from_signed(1, &[&[1], &[-1]]).unwrap()
}

fn three_clauses() -> CnfFormula {
    CnfFormula::from_signed(2, &[&[1], &[-2], &[-1, 2]]).unwrap()
}

#[test]
fn trivial_environment_everywhere() {
    let env = trivial();
    let (_, value) = solve_optimal(&env, &SolveConfig::no_money()).unwrap();
    assert!(close(value, 0.7));
    let (_, value) = solve_myopic(&env, &SolveConfig::no_money()).unwrap();
    assert!(close(value, 0.7));
    // with payments the agent's 0.3 is extracted as well
    let (_, value) = solve_myopic(&env, &SolveConfig::default()).unwrap();
    assert!(close(value, 1.0));
    let (mech, value) = naive_plan(&env).unwrap();
    assert!(close(value, 0.7));
    let eval = evaluate(&env, &mech, None, 1.0, 1.0).unwrap();
    assert!(close(eval.principal_total, 0.7) && close(eval.agent_total, 0.3));

    let (lp, _) = build_lp(&env, &SolveConfig::default()).unwrap();
    assert_eq!(lp.num_variables(), 5);
}

#[test]
fn opposed_types() {
    let env = opposed();
    let (mech, value) = solve_optimal(&env, &SolveConfig::no_money()).unwrap();
    assert!(close(value, 0.5));
    assert!(check_ic(&env, &mech, AgentKind::PATIENT, TOL).unwrap().is_ic());

    let (naive, value) = naive_plan(&env).unwrap();
    assert!(close(value, 1.0));
    for s in 0..2 {
        let slot = naive.slot_of(&SlotKey::Memoryless { t: 1, state: s }).unwrap();
        assert_eq!(naive.probs(slot)[s], 1.0);
    }
    // both types flip their report and each gains 1
    let verdict = check_ic(&env, &naive, AgentKind::PATIENT, TOL).unwrap();
    assert!(!verdict.is_ic());
    assert!(close(verdict.gap(), 1.0));

    let static_inst = StaticInstance {
        population: vec![0.5, 0.5],
        principal_util: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        agent_util: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ir_mode: IrMode::None,
        payment_mode: PaymentMode::None,
        payment_valuation: 1.0,
    };
    assert!(close(opt_stat_mech(&static_inst).unwrap().value, 0.5));
}

#[test]
fn static_surplus_extraction() {
    let inst = StaticInstance {
        population: vec![1.0],
        principal_util: vec![vec![0.0, 0.0]],
        agent_util: vec![vec![0.0, 1.0]],
        ir_mode: IrMode::Dynamic,
        payment_mode: PaymentMode::Nonnegative,
        payment_valuation: 1.0,
    };
    let m = opt_stat_mech(&inst).unwrap();
    assert!(close(m.value, 1.0));
    assert!(close(m.policy[0][1], 1.0));
    assert!(close(m.payment[0], 1.0));
}

#[test]
fn maxsat_values_match_the_best_assignment() {
    for (f, want) in [(one_clause_each_way(), 0.5), (three_clauses(), 2.0 / 3.0)] {
        let env = gen_maxsat(&f, None).unwrap();
        assert!(close(maxsat_oracle(&f).unwrap(), want));
        assert!(close(report_independent_oracle(&env).unwrap(), want));
        let (mech, value) = solve_optimal(&env, &SolveConfig::no_money()).unwrap();
        assert!(close(value, want), "{value} vs {want}");
        assert!(check_ic(&env, &mech, AgentKind::PATIENT, TOL).unwrap().is_ic());
        for t in 1..=env.horizon() {
            for s in 0..env.num_states() {
                for a in 0..env.num_actions() {
                    assert_eq!(env.principal_value(t, s, a) + env.agent_value(t, s, a), 1.0);
                }
            }
        }
    }
    let single = CnfFormula::from_signed(1, &[&[1]]).unwrap();
    assert!(close(maxsat_oracle(&single).unwrap(), 1.0));
}

#[test]
fn maxsat_single_clause_pair() {
    let env = gen_maxsat(&one_clause_each_way(), None).unwrap();
    assert_eq!((env.horizon(), env.num_states()), (1, 3));

    // the same action whatever is reported
    let mut fixed = Mechanism::uniform_for(Representation::Memoryless, &env).unwrap();
    for s in 0..env.num_states() {
        fixed.set_deterministic(&SlotKey::Memoryless { t: 1, state: s }, 0, 0.0).unwrap();
    }
    let eval = evaluate(&env, &fixed, None, 1.0, 1.0).unwrap();
    assert!(close(eval.principal_total, 0.5));

    // the naive planner satisfies each clause, and the agent undoes it by
    // swapping the two clause reports
    let (naive, value) = naive_plan(&env).unwrap();
    assert!(close(value, 1.0));
    let br = best_response(&env, &naive, AgentKind::PATIENT, TieRule::TruthfulFirst, 1.0).unwrap();
    assert!(close(br.principal_value, 0.0));
    assert!(!br.strategy.is_truthful());
}

#[test]
fn memoryless_gap_instances() {
    // patient n=2: the reference matches the type at t=1 (principal gets 1)
    // and at t=2 the state is always the first, so only the first type
    // collects agent value there
    let (env, reference) = gen_memoryless_gap(2, GapKind::Patient).unwrap();
    let eval = evaluate(&env, &reference, None, 1.0, 1.0).unwrap();
    assert!(close(eval.principal_total, 1.0));
    assert!(close(eval.agent_total, 0.5));
    for n in [2, 3] {
        let (env, _) = gen_memoryless_gap(n, GapKind::Patient).unwrap();
        let screen = memoryless_ic_screen(&env, AgentKind::PATIENT, 1000, 3).unwrap();
        assert!(screen <= 1.0 / n as f64 + TOL, "n={n}: {screen}");
    }

    let (env, reference) = gen_memoryless_gap(2, GapKind::Myopic).unwrap();
    assert!(check_ic(&env, &reference, AgentKind::Myopic, TOL).unwrap().is_ic());
    let eval = evaluate(&env, &reference, None, 0.0, 1.0).unwrap();
    assert!(close(eval.principal_total, 1.0));
    let (mech, value) = solve_myopic(&env, &SolveConfig::no_money()).unwrap();
    assert!(close(value, 1.0));
    assert_eq!(mech.representation(), Representation::Succinct);
}

#[test]
fn single_state_has_nothing_to_misreport() {
    let env = DynamicEnvironment::from_spec(&EnvironmentSpec {
        horizon: 2,
        states: vec!["s".into()],
        actions: vec!["a0".into(), "a1".into()],
        initial: vec![1.0],
        transition: vec![vec![vec![vec![1.0]; 2]; 1]; 2],
        principal_value: vec![vec![vec![1.0, 0.0]]; 2],
        agent_value: vec![vec![vec![0.0, 1.0]]; 2],
    })
    .unwrap();
    let mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
    assert!(check_ic(&env, &mech, AgentKind::PATIENT, TOL).unwrap().is_ic());
    let br = best_response(&env, &mech, AgentKind::PATIENT, TieRule::TruthfulFirst, 1.0).unwrap();
    assert!(br.strategy.is_truthful());
    assert!(close(br.agent_value, 1.0));

    let (_, naive) = naive_plan(&env).unwrap();
    let screen = memoryless_ic_screen(&env, AgentKind::PATIENT, 50, 0).unwrap();
    assert!(close(screen, naive));
    let (_, optimal) = solve_optimal(&env, &SolveConfig::no_money()).unwrap();
    assert!(close(optimal, naive));
}

#[test]
fn payment_at_a_low_value_pair_breaks_dynamic_ir() {
    let env = opposed();
    let mut mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
    let key = SlotKey::Table { history: History::empty(), state: 0 };
    // agent onward value at (∅, s0) is 0.5 before payment
    mech.set(&key, &[0.5, 0.5], 1.0).unwrap();
    match check_ir(&env, &mech, IrMode::Dynamic, 1.0, TOL).unwrap() {
        dynmech_core::mechanism::IrVerdict::Violated { state, utility, .. } => {
            assert_eq!(state, 0);
            assert!(close(utility, -0.5));
        }
        other => panic!("expected a violation, got {other:?}"),
    }
    assert!(check_ir(&env, &mech, IrMode::None, 1.0, TOL).unwrap().is_ok());
}

#[test]
fn tiny_linear_programs() {
    let mut lp = LinearProgram::new();
    let x = lp.add_variable("x", 0.0, f64::INFINITY);
    let y = lp.add_variable("y", 0.0, f64::INFINITY);
    lp.add_constraint("sum", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
    lp.set_objective(vec![(x, 1.0), (y, 1.0)]);
    let sol = solve_lp(&lp).unwrap();
    assert!(sol.is_optimal() && close(sol.objective, 1.0));

    let mut lp = LinearProgram::new();
    let x = lp.add_variable("x", 0.0, f64::INFINITY);
    lp.add_constraint("lo", vec![(x, 1.0)], Relation::Ge, 2.0);
    lp.add_constraint("hi", vec![(x, 1.0)], Relation::Le, 1.0);
    lp.set_objective(vec![(x, 1.0)]);
    assert!(!solve_lp(&lp).unwrap().is_optimal());
}
