//! `dynmech`: solve, analyze and generate dynamic mechanism design instances.

mod number;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynmech_core::agents::{best_response, AgentKind, TieRule};
use dynmech_core::env::{validate_environment, DynamicEnvironment, EnvironmentSpec};
use dynmech_core::error::{Error, Result};
use dynmech_core::experiment::{
    run_experiment, summarize, write_csv, Combo, ExperimentSpec, SweepAxis,
};
use dynmech_core::instances::{
    gen_maxsat, gen_memoryless_gap, gen_random, CnfFormula, GapKind, GeneratorParams,
};
use dynmech_core::mechanism::{check_ic, evaluate, IcVerdict, IrMode, Mechanism};
use dynmech_core::myopic::solve_myopic;
use dynmech_core::optimal::{solve_optimal_detailed, PaymentMode, SolveConfig};
use dynmech_core::{experiment, plot};

use number::sig9;

#[derive(Parser)]
#[command(name = "dynmech", version, about = "Optimal incentive-compatible dynamic mechanisms")]
struct Cli {
    /// Seed for random generation and experiment sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal mechanism against a patient agent (full linear program).
    Solve {
        #[arg(long)]
        env: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the mechanism (table representation) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the linear program in a readable text form here.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Optimal mechanism against a myopic agent (succinct representation).
    SolveMyopic {
        #[arg(long)]
        env: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The agent's optimal reporting strategy against a mechanism.
    BestResponse {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        mech: PathBuf,
        #[arg(long, value_enum, default_value_t = AgentArg::Patient)]
        agent: AgentArg,
        /// Patient agent's discount factor.
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long, value_enum, default_value_t = TiesArg::Truthful)]
        ties: TiesArg,
        /// Among the agent's optimal reports, pick the one worst for the principal.
        #[arg(long)]
        adversarial_ties: bool,
        #[arg(long, default_value_t = 1.0)]
        payment_valuation: f64,
        /// Write the strategy as JSON, keyed like table mechanisms.
        #[arg(long)]
        strategy_out: Option<PathBuf>,
    },
    /// Utilities under truthful reporting.
    Evaluate {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        mech: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long, default_value_t = 1.0)]
        payment_valuation: f64,
    },
    /// Whether truthful reporting is optimal for the agent.
    CheckIc {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        mech: PathBuf,
        #[arg(long, value_enum, default_value_t = AgentArg::Patient)]
        agent: AgentArg,
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Generate an environment.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Sweep one parameter over random environments and record every
    /// mechanism/agent combination.
    Experiment(ExperimentArgs),
    /// Chart a results CSV as SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        normalize_after_mean: bool,
    },
    /// Check an environment file for structural and probabilistic errors.
    Validate {
        #[arg(long)]
        env: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Random environment with principal/agent correlation eta.
    Random {
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long = "S")]
        num_states: usize,
        #[arg(long = "A")]
        num_actions: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        eta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Environment whose optimal value is the MAX-SAT fraction of a DIMACS formula.
    Maxsat {
        #[arg(long)]
        cnf: PathBuf,
        /// Agent value of the positive action; makes the myopic variant.
        #[arg(long)]
        myopic_variant: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-step environment where memoryless mechanisms lose a factor n.
    MemorylessGap {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        kind: GapArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the history-dependent reference mechanism.
        #[arg(long)]
        mech_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = IrArg::Dynamic)]
    ir: IrArg,
    /// none | nonneg | interval:<a>:<b>
    #[arg(long, default_value = "nonneg", allow_hyphen_values = true)]
    payments: String,
    #[arg(long, default_value_t = 1.0)]
    payment_valuation: f64,
    #[arg(long, default_value_t = 1.0)]
    discount: f64,
}

impl ConfigArgs {
    fn config(&self) -> Result<SolveConfig> {
        let config = SolveConfig {
            ir_mode: self.ir.into(),
            payment_mode: self.payments.parse::<PaymentMode>()?,
            payment_valuation: self.payment_valuation,
            agent_discount: self.discount,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    values: Vec<f64>,
    #[arg(long = "T", default_value_t = 2)]
    horizon: usize,
    /// |S| = |A| when not swept.
    #[arg(long, default_value_t = 2)]
    size: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    eta: f64,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Comma-separated subset of naive/naive, naive/patient, naive/myopic,
    /// patient/patient, myopic/myopic. Defaults to all.
    #[arg(long, value_delimiter = ',')]
    combos: Vec<String>,
    #[arg(long, value_enum, default_value_t = TiesArg::Truthful)]
    ties: TiesArg,
    #[arg(long)]
    adversarial_ties: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also chart the results.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    normalize_after_mean: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum IrArg {
    None,
    Overall,
    Dynamic,
}

impl From<IrArg> for IrMode {
    fn from(a: IrArg) -> Self {
        match a {
            IrArg::None => IrMode::None,
            IrArg::Overall => IrMode::Overall,
            IrArg::Dynamic => IrMode::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Patient,
    Myopic,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Truthful,
    Lowest,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Eta,
    Horizon,
    Size,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Eta => SweepAxis::Eta,
            AxisArg::Horizon => SweepAxis::Horizon,
            AxisArg::Size => SweepAxis::StateActionSize,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    Patient,
    Myopic,
}

fn tie_rule(ties: TiesArg, adversarial: bool) -> TieRule {
    match (adversarial, ties) {
        (true, _) => TieRule::Adversarial,
        (false, TiesArg::Truthful) => TieRule::TruthfulFirst,
        (false, TiesArg::Lowest) => TieRule::LowestIndex,
    }
}

fn agent_kind(agent: AgentArg, discount: f64) -> AgentKind {
    match agent {
        AgentArg::Patient => AgentKind::Patient { discount },
        AgentArg::Myopic => AgentKind::Myopic,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit_env(env: &DynamicEnvironment, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => env.save(path),
        None => {
            println!("{}", env.to_json_string());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve {
            env,
            config,
            out,
            dump_lp,
        } => {
            let env = DynamicEnvironment::load(&env)?;
            let sol = solve_optimal_detailed(&env, &config.config()?)?;
            if let Some(path) = dump_lp {
                write_text(&path, &sol.lp.dump())?;
            }
            if let Some(path) = out {
                sol.mechanism.save(&env, &path)?;
            }
            println!("value: {}", sig9(sol.value));
            println!("lp: {} variables, {} constraints", sol.lp.num_variables(), sol.lp.num_constraints());
        }
        Command::SolveMyopic { env, config, out } => {
            let env = DynamicEnvironment::load(&env)?;
            let (mech, value) = solve_myopic(&env, &config.config()?)?;
            if let Some(path) = out {
                mech.save(&env, &path)?;
            }
            println!("value: {}", sig9(value));
        }
        Command::BestResponse {
            env,
            mech,
            agent,
            discount,
            ties,
            adversarial_ties,
            payment_valuation,
            strategy_out,
        } => {
            let env = DynamicEnvironment::load(&env)?;
            let mech = Mechanism::load(&env, &mech)?;
            let br = best_response(
                &env,
                &mech,
                agent_kind(agent, discount),
                tie_rule(ties, adversarial_ties),
                payment_valuation,
            )?;
            if let Some(path) = strategy_out {
                write_text(&path, &br.strategy.to_json_string(&env)?)?;
            }
            println!("agent_value: {}", sig9(br.agent_value));
            println!("principal_value: {}", sig9(br.principal_value));
            println!("truthful: {}", br.strategy.is_truthful());
        }
        Command::Evaluate {
            env,
            mech,
            discount,
            payment_valuation,
        } => {
            let env = DynamicEnvironment::load(&env)?;
            let mech = Mechanism::load(&env, &mech)?;
            let eval = evaluate(&env, &mech, None, discount, payment_valuation)?;
            println!("principal_value: {}", sig9(eval.principal_total));
            println!("agent_value: {}", sig9(eval.agent_total));
        }
        Command::CheckIc {
            env,
            mech,
            agent,
            discount,
            tol,
        } => {
            let env = DynamicEnvironment::load(&env)?;
            let mech = Mechanism::load(&env, &mech)?;
            match check_ic(&env, &mech, agent_kind(agent, discount), tol)? {
                IcVerdict::Ic => println!("IC"),
                IcVerdict::Violated {
                    history,
                    state,
                    report,
                    gap,
                } => {
                    let steps: Vec<String> = history
                        .steps()
                        .iter()
                        .map(|&(s, a)| format!("{},{}", env.states()[s], env.actions()[a]))
                        .collect();
                    println!("not IC: gain {}", sig9(gap));
                    println!(
                        "first misreport: true state {} after [{}] reported as {}",
                        env.states()[state],
                        steps.join("|"),
                        env.states()[report]
                    );
                }
            }
        }
        Command::Gen(cmd) => match cmd {
            GenCommand::Random {
                horizon,
                num_states,
                num_actions,
                eta,
                out,
            } => {
                let env = gen_random(&GeneratorParams {
                    horizon,
                    num_states,
                    num_actions,
                    eta,
                    seed: cli.seed,
                })?;
                emit_env(&env, out.as_deref())?;
            }
            GenCommand::Maxsat {
                cnf,
                myopic_variant,
                out,
            } => {
                let text = std::fs::read_to_string(&cnf).map_err(|source| Error::Io {
                    path: cnf.clone(),
                    source,
                })?;
                let formula = CnfFormula::parse_dimacs(&text).map_err(|e| match e {
                    Error::Parse { message, .. } => Error::Parse {
                        path: cnf.display().to_string(),
                        message,
                    },
                    other => other,
                })?;
                emit_env(&gen_maxsat(&formula, myopic_variant)?, out.as_deref())?;
            }
            GenCommand::MemorylessGap {
                n,
                kind,
                out,
                mech_out,
            } => {
                let kind = match kind {
                    GapArg::Patient => GapKind::Patient,
                    GapArg::Myopic => GapKind::Myopic,
                };
                let (env, mech) = gen_memoryless_gap(n, kind)?;
                if let Some(path) = mech_out {
                    mech.save(&env, &path)?;
                }
                emit_env(&env, out.as_deref())?;
            }
        },
        Command::Experiment(args) => return experiment_cmd(args, cli.seed),
        Command::Plot {
            csv,
            axis,
            out,
            normalize_after_mean,
        } => {
            let rows = experiment::read_csv(&csv)?;
            plot::emit_plot(&rows, axis.into(), normalize_after_mean, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Validate { env } => {
            let text = std::fs::read_to_string(&env).map_err(|source| Error::Io {
                path: env.clone(),
                source,
            })?;
            let spec: EnvironmentSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: env.display().to_string(),
                message: e.to_string(),
            })?;
            let report = validate_environment(&spec);
            if !report.is_ok() {
                return Err(Error::InvalidEnvironment(report));
            }
            println!(
                "valid: T={}, |S|={}, |A|={}",
                spec.horizon,
                spec.states.len(),
                spec.actions.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn experiment_cmd(args: ExperimentArgs, seed: u64) -> Result<ExitCode> {
    let combos = if args.combos.is_empty() {
        Combo::ALL.to_vec()
    } else {
        args.combos.iter().map(|c| c.parse()).collect::<Result<Vec<Combo>>>()?
    };
    let spec = ExperimentSpec {
        axis: args.axis.into(),
        values: args.values,
        horizon: args.horizon,
        size: args.size,
        eta: args.eta,
        num_seeds: args.seeds,
        base_seed: seed,
        combos,
        tie_rule: tie_rule(args.ties, args.adversarial_ties),
    };
    let output = run_experiment(&spec)?;
    write_csv(&output.rows, &args.out)?;
    if let Some(path) = &args.plot {
        plot::emit_plot(&output.rows, spec.axis, args.normalize_after_mean, path)?;
    }
    println!("axis\tcombo\tmean\tmin\tmax");
    for p in summarize(&output.rows, spec.axis, args.normalize_after_mean) {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            sig9(p.axis_value),
            p.combo,
            sig9(p.mean),
            sig9(p.min),
            sig9(p.max)
        );
    }
    for f in &output.failures {
        eprintln!("failed cell: {f}");
    }
    Ok(if output.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
