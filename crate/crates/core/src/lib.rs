pub mod agents;
pub mod env;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod lp;
pub mod mechanism;
pub mod myopic;
pub mod optimal;
pub mod plot;

pub use agents::{best_response, naive_plan, AgentKind, BestResponse, TieRule};
pub use env::{DynamicEnvironment, EnvironmentSpec, History, HistoryIndex, ValidationReport};
pub use error::{Error, Result};
pub use mechanism::{
    check_ic, check_ir, evaluate, EvaluationResult, IcVerdict, IrMode, IrVerdict, Mechanism,
    ReportingStrategy, Representation, SlotKey,
};
pub use optimal::{build_lp, extract_mechanism, solve_optimal, PaymentMode, SolveConfig};
pub use myopic::{opt_stat_mech, solve_myopic, StaticInstance, StaticMechanism};
pub use instances::{
    gen_maxsat, gen_memoryless_gap, gen_random, maxsat_oracle, memoryless_ic_screen,
    report_independent_oracle, CnfFormula, GapKind, GeneratorParams,
};
pub use experiment::{
    read_csv, run_experiment, write_csv, Combo, ExperimentOutput, ExperimentSpec, ResultRow, SweepAxis,
};
pub use plot::emit_plot;
