//! Synthetic experiment sweeps comparing mechanisms against agent models,
//! with CSV persistence.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{best_response, naive_plan, AgentKind, TieRule};
use crate::error::{Error, Result};
use crate::instances::{gen_random, GeneratorParams};
use crate::myopic::solve_myopic;
use crate::optimal::{solve_optimal, SolveConfig};

/// A mechanism paired with the agent model it faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Combo {
    /// The MDP plan facing a truthful agent: the normalizing benchmark.
    NaiveNaive,
    NaivePatient,
    NaiveMyopic,
    PatientPatient,
    MyopicMyopic,
}

impl Combo {
    pub const ALL: [Combo; 5] = [
        Combo::NaiveNaive,
        Combo::NaivePatient,
        Combo::NaiveMyopic,
        Combo::PatientPatient,
        Combo::MyopicMyopic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Combo::NaiveNaive => "naive/naive",
            Combo::NaivePatient => "naive/patient",
            Combo::NaiveMyopic => "naive/myopic",
            Combo::PatientPatient => "patient/patient",
            Combo::MyopicMyopic => "myopic/myopic",
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Combo::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown combination `{s}`")))
    }
}

impl Serialize for Combo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Combo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Eta,
    Horizon,
    /// `|S| = |A|`.
    StateActionSize,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(SweepAxis::Eta),
            "horizon" | "T" => Ok(SweepAxis::Horizon),
            "size" | "state_action_size" => Ok(SweepAxis::StateActionSize),
            _ => Err(Error::arg(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Used unless the axis is `Horizon`.
    pub horizon: usize,
    /// `|S| = |A|`, used unless the axis is `StateActionSize`.
    pub size: usize,
    /// Used unless the axis is `Eta`.
    pub eta: f64,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub combos: Vec<Combo>,
    pub tie_rule: TieRule,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            axis: SweepAxis::Eta,
            values: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            horizon: 2,
            size: 2,
            eta: 0.0,
            num_seeds: 10,
            base_seed: 0,
            combos: Combo::ALL.to_vec(),
            tie_rule: TieRule::TruthfulFirst,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_seeds == 0 {
            return Err(Error::arg("num_seeds must be at least 1"));
        }
        if self.values.is_empty() {
            return Err(Error::arg("sweep has no axis values"));
        }
        for i in 0..self.values.len() {
            self.params(i, 0)?;
        }
        Ok(())
    }

    /// Generator parameters of cell `(axis index, seed index)`.
    pub fn params(&self, axis_index: usize, seed_index: usize) -> Result<GeneratorParams> {
        let v = self.values[axis_index];
        let as_count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::arg(format!("axis value {v} is not a positive integer")))
            }
        };
        let (mut horizon, mut size, mut eta) = (self.horizon, self.size, self.eta);
        match self.axis {
            SweepAxis::Eta => eta = v,
            SweepAxis::Horizon => horizon = as_count(v)?,
            SweepAxis::StateActionSize => size = as_count(v)?,
        }
        if !(-1.0..=1.0).contains(&eta) {
            return Err(Error::arg(format!("eta {eta} outside [-1, 1]")));
        }
        if horizon == 0 || size == 0 {
            return Err(Error::arg("T and |S| = |A| must be positive"));
        }
        Ok(GeneratorParams {
            horizon,
            num_states: size,
            num_actions: size,
            eta,
            seed: cell_seed(self.base_seed, axis_index, seed_index),
        })
    }
}

/// Environment seed of one cell, independent of evaluation order.
pub fn cell_seed(base_seed: u64, axis_index: usize, seed_index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(axis_index as u64);
    rng.set_word_pos(2 * seed_index as u128);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub eta: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub combo: Combo,
    /// Seed index within the cell, `0..num_seeds`.
    pub seed: usize,
    pub raw: f64,
    /// `raw` divided by the same seed's naive/naive value.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Sorted by axis value, combination, seed. Failed cells carry NaN.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<String>,
}

impl ExperimentOutput {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn combo_value(
    combo: Combo,
    env: &crate::env::DynamicEnvironment,
    naive: &(crate::mechanism::Mechanism, f64),
    tie_rule: TieRule,
) -> Result<f64> {
    let config = SolveConfig::no_money();
    Ok(match combo {
        Combo::NaiveNaive => naive.1,
        Combo::NaivePatient => {
            best_response(env, &naive.0, AgentKind::PATIENT, tie_rule, 0.0)?.principal_value
        }
        Combo::NaiveMyopic => best_response(env, &naive.0, AgentKind::Myopic, tie_rule, 0.0)?.principal_value,
        Combo::PatientPatient => solve_optimal(env, &config)?.1,
        Combo::MyopicMyopic => solve_myopic(env, &config)?.1,
    })
}

/// Runs every cell (axis value × seed) in parallel. Payments are disabled
/// throughout. A failing combination yields NaN rows and a failure message;
/// the rest of the sweep still runs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut combos = spec.combos.clone();
    combos.sort();
    combos.dedup();
    let cells: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.num_seeds).map(move |k| (i, k)))
        .collect();
    let results: Vec<(Vec<ResultRow>, Vec<String>)> = cells
        .par_iter()
        .map(|&(i, k)| {
            let params = spec.params(i, k).expect("validated above");
            let mut failures = Vec::new();
            let mut rows = Vec::new();
            let label = format!(
                "eta={}, T={}, |S|=|A|={}, seed {k}",
                params.eta, params.horizon, params.num_states
            );
            let setup = gen_random(&params).and_then(|env| naive_plan(&env).map(|n| (env, n)));
            let (env, naive) = match setup {
                Ok(x) => (Some(x.0), Some(x.1)),
                Err(e) => {
                    failures.push(format!("{label}: {e}"));
                    (None, None)
                }
            };
            for &combo in &combos {
                let raw = match (&env, &naive) {
                    (Some(env), Some(naive)) => match combo_value(combo, env, naive, spec.tie_rule) {
                        Ok(v) => v,
                        Err(e) => {
                            failures.push(format!("{label}, {combo}: {e}"));
                            f64::NAN
                        }
                    },
                    _ => f64::NAN,
                };
                let benchmark = naive.as_ref().map_or(f64::NAN, |n| n.1);
                rows.push(ResultRow {
                    eta: params.eta,
                    horizon: params.horizon,
                    num_states: params.num_states,
                    num_actions: params.num_actions,
                    combo,
                    seed: k,
                    raw,
                    normalized: if combo == Combo::NaiveNaive && raw == benchmark {
                        1.0
                    } else {
                        raw / benchmark
                    },
                });
            }
            (rows, failures)
        })
        .collect();

    let mut indexed: Vec<(usize, ResultRow)> = Vec::new();
    let mut failures = Vec::new();
    for (&(i, _), (rows, fails)) in cells.iter().zip(results) {
        indexed.extend(rows.into_iter().map(|r| (i, r)));
        failures.extend(fails);
    }
    indexed.sort_by(|(ia, a), (ib, b)| (ia, a.combo, a.seed).cmp(&(ib, b.combo, b.seed)));
    Ok(ExperimentOutput {
        rows: indexed.into_iter().map(|(_, r)| r).collect(),
        failures,
    })
}

/// The swept parameter of a row.
pub fn axis_value(row: &ResultRow, axis: SweepAxis) -> f64 {
    match axis {
        SweepAxis::Eta => row.eta,
        SweepAxis::Horizon => row.horizon as f64,
        SweepAxis::StateActionSize => row.num_states as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPoint {
    pub axis_value: f64,
    pub combo: Combo,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Per-(axis value, combination) mean and spread of normalized values.
///
/// With `normalize_after_mean`, the mean is instead the mean raw value
/// divided by the mean naive/naive raw value at that axis point. Min and max
/// are always over per-seed normalized values. NaN rows are skipped.
pub fn summarize(rows: &[ResultRow], axis: SweepAxis, normalize_after_mean: bool) -> Vec<SummaryPoint> {
    let mut keys: Vec<(f64, Combo)> = rows.iter().map(|r| (axis_value(r, axis), r.combo)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.dedup();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    keys.into_iter()
        .filter_map(|(x, combo)| {
            let sel: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| axis_value(r, axis) == x && r.combo == combo && r.normalized.is_finite())
                .collect();
            if sel.is_empty() {
                return None;
            }
            let normalized: Vec<f64> = sel.iter().map(|r| r.normalized).collect();
            let m = if normalize_after_mean {
                let raw: Vec<f64> = sel.iter().map(|r| r.raw).collect();
                let bench: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        axis_value(r, axis) == x && r.combo == Combo::NaiveNaive && r.raw.is_finite()
                    })
                    .map(|r| r.raw)
                    .collect();
                if bench.is_empty() {
                    f64::NAN
                } else {
                    mean(&raw) / mean(&bench)
                }
            } else {
                mean(&normalized)
            };
            Some(SummaryPoint {
                axis_value: x,
                combo,
                mean: m,
                min: normalized.iter().copied().fold(f64::INFINITY, f64::min),
                max: normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                count: sel.len(),
            })
        })
        .collect()
}

pub fn write_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(rows, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_csv_to(rows: &[ResultRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::arg(format!("{other:?}")),
    };
    w.write_record(["eta", "T", "S", "A", "combo", "seed", "raw", "normalized"])
        .map_err(to_err)?;
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_csv_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn read_csv_str(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let expected = ["eta", "T", "S", "A", "combo", "seed", "raw", "normalized"];
    let headers = r.headers().map_err(|e| Error::Parse {
        path: "<csv>".into(),
        message: format!("line 1: {e}"),
    })?;
    if headers.iter().ne(expected) {
        return Err(Error::Parse {
            path: "<csv>".into(),
            message: format!("line 1: expected header `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: ResultRow = rec.map_err(|e: csv::Error| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: "<csv>".into(),
                message: format!("line {line}: {e}"),
            }
        })?;
        rows.push(row);
    }
    Ok(rows)
}
