//! Finite-horizon dynamic environments and the history tree they induce.
//!
//! Time is 1-based throughout: the first action is taken at `t = 1` and the
//! last one at `t = T`. `P_0` is the initial state distribution, and by
//! convention `P_0(s, a, s') = P_0(s')` for every `(s, a)`.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that probability vectors are normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Largest history tree (number of histories of length `< T`) we will index.
pub const MAX_HISTORIES: usize = 1 << 22;

/// On-disk JSON form of an environment. Tensors are nested arrays in
/// `[t][s][a]` / `[t][s][a][s']` order, with `t = 1..=T` stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    #[serde(rename = "P0")]
    pub initial: Vec<f64>,
    #[serde(rename = "P")]
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "vP")]
    pub principal_value: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "vA")]
    pub agent_value: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    DimensionMismatch,
    NotNormalized,
    ProbabilityOutOfRange,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, location: impl Into<String>, message: String) {
        self.violations.push(Violation {
            kind,
            location: location.into(),
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "OK");
        }
        for v in &self.violations {
            writeln!(f, "  [{:?}] {}: {}", v.kind, v.location, v.message)?;
        }
        Ok(())
    }
}

fn check_distribution(report: &mut ValidationReport, location: &str, dist: &[f64]) {
    let mut sum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        if !p.is_finite() {
            report.push(
                ViolationKind::NonFinite,
                format!("{location}[{i}]"),
                format!("{location}[{i}] is not finite"),
            );
            return;
        }
        if !(0.0..=1.0).contains(&p) {
            report.push(
                ViolationKind::ProbabilityOutOfRange,
                format!("{location}[{i}]"),
                format!("{location}[{i}] = {p} is outside [0, 1]"),
            );
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        report.push(
            ViolationKind::NotNormalized,
            location,
            format!("{location} sums to {sum}"),
        );
    }
}

fn check_values(
    report: &mut ValidationReport,
    name: &str,
    tensor: &[Vec<Vec<f64>>],
    (horizon, ns, na): (usize, usize, usize),
) {
    if tensor.len() != horizon {
        report.push(
            ViolationKind::DimensionMismatch,
            name,
            format!("{name} has {} time steps, expected {horizon}", tensor.len()),
        );
    }
    for (t, layer) in tensor.iter().enumerate() {
        if layer.len() != ns {
            report.push(
                ViolationKind::DimensionMismatch,
                format!("{name}[{t}]"),
                format!("{name}[{t}] has {} states, expected {ns}", layer.len()),
            );
        }
        for (s, row) in layer.iter().enumerate() {
            if row.len() != na {
                report.push(
                    ViolationKind::DimensionMismatch,
                    format!("{name}[{t}][{s}]"),
                    format!("{name}[{t}][{s}] has {} actions, expected {na}", row.len()),
                );
            }
            for (a, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    report.push(
                        ViolationKind::NonFinite,
                        format!("{name}[{t}][{s}][{a}]"),
                        format!("{name}[{t}][{s}][{a}] is not finite"),
                    );
                }
            }
        }
    }
}

/// Checks shapes, normalization and finiteness, naming every offending index.
pub fn validate_environment(spec: &EnvironmentSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (horizon, ns, na) = (spec.horizon, spec.states.len(), spec.actions.len());
    if horizon == 0 {
        report.push(ViolationKind::Empty, "T", "horizon must be at least 1".into());
    }
    if ns == 0 {
        report.push(ViolationKind::Empty, "states", "state space is empty".into());
    }
    if na == 0 {
        report.push(ViolationKind::Empty, "actions", "action space is empty".into());
    }

    if spec.initial.len() != ns {
        report.push(
            ViolationKind::DimensionMismatch,
            "initial_dist",
            format!("initial_dist has {} entries, expected {ns}", spec.initial.len()),
        );
    }
    check_distribution(&mut report, "initial_dist", &spec.initial);

    if spec.transition.len() != horizon {
        report.push(
            ViolationKind::DimensionMismatch,
            "P",
            format!("P has {} time steps, expected {horizon}", spec.transition.len()),
        );
    }
    for (t, layer) in spec.transition.iter().enumerate() {
        if layer.len() != ns {
            report.push(
                ViolationKind::DimensionMismatch,
                format!("P[{t}]"),
                format!("P[{t}] has {} states, expected {ns}", layer.len()),
            );
        }
        for (s, per_action) in layer.iter().enumerate() {
            if per_action.len() != na {
                report.push(
                    ViolationKind::DimensionMismatch,
                    format!("P[{t}][{s}]"),
                    format!("P[{t}][{s}] has {} actions, expected {na}", per_action.len()),
                );
            }
            for (a, dist) in per_action.iter().enumerate() {
                let loc = format!("P[{t}][{s}][{a}]");
                if dist.len() != ns {
                    report.push(
                        ViolationKind::DimensionMismatch,
                        loc.clone(),
                        format!("{loc} has {} next-state entries, expected {ns}", dist.len()),
                    );
                }
                check_distribution(&mut report, &loc, dist);
            }
        }
    }
    check_values(&mut report, "vP", &spec.principal_value, (horizon, ns, na));
    check_values(&mut report, "vA", &spec.agent_value, (horizon, ns, na));
    report
}

/// A validated single-agent dynamic environment `(T, S, A, P_0, P_t, v^P_t, v^A_t)`.
///
/// Immutable after construction; all probability vectors are exactly
/// renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicEnvironment {
    horizon: usize,
    states: Vec<String>,
    actions: Vec<String>,
    initial: Vec<f64>,
    /// `[t - 1][s][a][s']`, flattened.
    transition: Vec<f64>,
    /// `[t - 1][s][a]`, flattened.
    principal_value: Vec<f64>,
    agent_value: Vec<f64>,
}

fn renormalized(dist: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let sum: f64 = dist.iter().sum();
    dist.iter().map(move |p| p / sum)
}

impl DynamicEnvironment {
    pub fn from_spec(spec: &EnvironmentSpec) -> Result<Self> {
        let report = validate_environment(spec);
        if !report.is_ok() {
            return Err(Error::InvalidEnvironment(report));
        }
        let transition = spec
            .transition
            .iter()
            .flatten()
            .flatten()
            .flat_map(|d| renormalized(d))
            .collect();
        let flat = |v: &[Vec<Vec<f64>>]| v.iter().flatten().flatten().copied().collect();
        Ok(DynamicEnvironment {
            horizon: spec.horizon,
            states: spec.states.clone(),
            actions: spec.actions.clone(),
            initial: renormalized(&spec.initial).collect(),
            transition,
            principal_value: flat(&spec.principal_value),
            agent_value: flat(&spec.agent_value),
        })
    }

    pub fn to_spec(&self) -> EnvironmentSpec {
        let (ns, na) = (self.num_states(), self.num_actions());
        let tensor3 = |flat: &[f64]| {
            (1..=self.horizon)
                .map(|t| {
                    (0..ns)
                        .map(|s| (0..na).map(|a| flat[self.sa_index(t, s, a)]).collect())
                        .collect()
                })
                .collect()
        };
        EnvironmentSpec {
            horizon: self.horizon,
            states: self.states.clone(),
            actions: self.actions.clone(),
            initial: self.initial.clone(),
            transition: (1..=self.horizon)
                .map(|t| {
                    (0..ns)
                        .map(|s| (0..na).map(|a| self.transition_row(t, s, a).to_vec()).collect())
                        .collect()
                })
                .collect(),
            principal_value: tensor3(&self.principal_value),
            agent_value: tensor3(&self.agent_value),
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let spec: EnvironmentSpec = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: "<environment>".into(),
            message: e.to_string(),
        })?;
        Self::from_spec(&spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("environment serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: EnvironmentSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_spec(&spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    fn sa_index(&self, t: usize, s: usize, a: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&t));
        ((t - 1) * self.num_states() + s) * self.num_actions() + a
    }

    /// `P_t(s, a, ·)` for `t` in `1..=T`.
    #[inline]
    pub fn transition_row(&self, t: usize, s: usize, a: usize) -> &[f64] {
        let ns = self.num_states();
        let start = self.sa_index(t, s, a) * ns;
        &self.transition[start..start + ns]
    }

    /// `P_t(s, a, s')`; for `t = 0` this is `P_0(s')`.
    #[inline]
    pub fn transition(&self, t: usize, s: usize, a: usize, next: usize) -> f64 {
        if t == 0 {
            self.initial[next]
        } else {
            self.transition_row(t, s, a)[next]
        }
    }

    /// `P^E_t(s, a, s')`: the transition probability, or a phantom 1 where it is zero.
    #[inline]
    pub fn extended_transition(&self, t: usize, s: usize, a: usize, next: usize) -> f64 {
        let p = self.transition(t, s, a, next);
        if p > 0.0 {
            p
        } else {
            1.0
        }
    }

    #[inline]
    pub fn principal_value(&self, t: usize, s: usize, a: usize) -> f64 {
        self.principal_value[self.sa_index(t, s, a)]
    }

    #[inline]
    pub fn agent_value(&self, t: usize, s: usize, a: usize) -> f64 {
        self.agent_value[self.sa_index(t, s, a)]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    /// A copy of this environment with the agent's valuations replaced.
    pub fn with_agent_values(&self, agent_value: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut env = self.clone();
        for t in 1..=self.horizon {
            for s in 0..self.num_states() {
                for a in 0..self.num_actions() {
                    let i = self.sa_index(t, s, a);
                    env.agent_value[i] = agent_value(t, s, a);
                }
            }
        }
        env
    }

    /// A copy of this environment with the principal's valuations replaced.
    pub fn with_principal_values(&self, value: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut env = self.clone();
        for t in 1..=self.horizon {
            for s in 0..self.num_states() {
                for a in 0..self.num_actions() {
                    let i = self.sa_index(t, s, a);
                    env.principal_value[i] = value(t, s, a);
                }
            }
        }
        env
    }
}

/// A sequence of `(state, action)` steps `(s_1, a_1, ..., s_t, a_t)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct History {
    steps: Vec<(usize, usize)>,
}

impl History {
    pub fn empty() -> Self {
        History::default()
    }

    pub fn from_steps(steps: Vec<(usize, usize)>) -> Self {
        History { steps }
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The final `(state, action)` pair; `(0, 0)` for the empty history.
    pub fn last(&self) -> (usize, usize) {
        self.steps.last().copied().unwrap_or((0, 0))
    }

    /// `h + (s, a)`.
    pub fn extended(&self, s: usize, a: usize) -> History {
        let mut steps = self.steps.clone();
        steps.push((s, a));
        History { steps }
    }

    pub fn starts_with(&self, prefix: &History) -> bool {
        self.steps.starts_with(&prefix.steps)
    }
}

/// Dense mixed-radix indexing of all histories of length `0..T`.
///
/// Histories are grouped by length; within a length, a history is the base
/// `|S||A|` number whose digits are `s_i * |A| + a_i`, most significant first.
/// The empty history has index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryIndex {
    num_states: usize,
    num_actions: usize,
    /// `offsets[l]` is the index of the first history of length `l`;
    /// `offsets[T]` is the total count.
    offsets: Vec<usize>,
}

impl HistoryIndex {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::arg("history index needs T, |S|, |A| >= 1"));
        }
        let radix = num_states * num_actions;
        let mut offsets = Vec::with_capacity(horizon + 1);
        let mut total = 0usize;
        let mut layer = 1usize;
        for _ in 0..horizon {
            offsets.push(total);
            total = total
                .checked_add(layer)
                .filter(|&n| n <= MAX_HISTORIES)
                .ok_or_else(|| {
                    Error::CapExceeded(format!(
                        "history tree for T={horizon}, |S|={num_states}, |A|={num_actions} exceeds {MAX_HISTORIES} histories"
                    ))
                })?;
            layer = layer.saturating_mul(radix);
        }
        offsets.push(total);
        Ok(HistoryIndex {
            num_states,
            num_actions,
            offsets,
        })
    }

    pub fn for_env(env: &DynamicEnvironment) -> Result<Self> {
        Self::new(env.horizon(), env.num_states(), env.num_actions())
    }

    /// Number of histories `|H|`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Indices of all histories of length `len`.
    pub fn layer(&self, len: usize) -> Range<usize> {
        self.offsets[len]..self.offsets[len + 1]
    }

    pub fn length_of(&self, idx: usize) -> usize {
        debug_assert!(idx < self.len());
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    /// `last(h)` for the history at `idx`, with `(0, 0)` for the empty history.
    pub fn last(&self, idx: usize) -> (usize, usize) {
        if idx == 0 {
            return (0, 0);
        }
        let local = idx - self.offsets[self.length_of(idx)];
        let digit = local % (self.num_states * self.num_actions);
        (digit / self.num_actions, digit % self.num_actions)
    }

    /// Index of `h + (s, a)`, or `None` when that history has length `T`.
    #[inline]
    pub fn child(&self, idx: usize, s: usize, a: usize) -> Option<usize> {
        let len = self.length_of(idx);
        self.child_at(idx, len, s, a)
    }

    /// Like [`child`](Self::child) when the caller already knows `|h|`.
    #[inline]
    pub fn child_at(&self, idx: usize, len: usize, s: usize, a: usize) -> Option<usize> {
        if len + 1 >= self.offsets.len() - 1 {
            return None;
        }
        let local = idx - self.offsets[len];
        let radix = self.num_states * self.num_actions;
        Some(self.offsets[len + 1] + local * radix + s * self.num_actions + a)
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        if idx == 0 {
            return None;
        }
        let len = self.length_of(idx);
        let local = idx - self.offsets[len];
        let radix = self.num_states * self.num_actions;
        Some(self.offsets[len - 1] + local / radix)
    }

    pub fn encode(&self, h: &History) -> Result<usize> {
        let len = h.len();
        if len >= self.offsets.len() - 1 {
            return Err(Error::arg(format!(
                "history of length {len} is not in H (T = {})",
                self.horizon()
            )));
        }
        let radix = self.num_states * self.num_actions;
        let mut local = 0usize;
        for &(s, a) in h.steps() {
            if s >= self.num_states || a >= self.num_actions {
                return Err(Error::arg(format!("step ({s}, {a}) out of range")));
            }
            local = local * radix + s * self.num_actions + a;
        }
        Ok(self.offsets[len] + local)
    }

    pub fn decode(&self, idx: usize) -> History {
        let len = self.length_of(idx);
        let radix = self.num_states * self.num_actions;
        let mut local = idx - self.offsets[len];
        let mut steps = vec![(0, 0); len];
        for step in steps.iter_mut().rev() {
            let digit = local % radix;
            local /= radix;
            *step = (digit / self.num_actions, digit % self.num_actions);
        }
        History { steps }
    }
}

/// All `t`-step histories, in index order.
pub fn enumerate_histories(env: &DynamicEnvironment, t: usize) -> Result<Vec<History>> {
    if t >= env.horizon() {
        return Err(Error::arg(format!(
            "history length {t} out of range 0..{}",
            env.horizon()
        )));
    }
    let index = HistoryIndex::for_env(env)?;
    Ok(index.layer(t).map(|i| index.decode(i)).collect())
}

/// Whether `(h, s)` is `i`-feasible: every transition from step `i` onward,
/// including the final one into `s`, has positive probability.
///
/// For `i = 1` the initial draw of the first state is part of the check
/// (`P_0(s_1) > 0`, or `P_0(s) > 0` when `h` is empty), so "feasible" means
/// reachable with positive probability under the environment's dynamics.
pub fn is_feasible(env: &DynamicEnvironment, h: &History, s: usize, i: usize) -> Result<bool> {
    let len = h.len();
    if i == 0 || i > len + 1 {
        return Err(Error::arg(format!(
            "feasibility index {i} out of range 1..={}",
            len + 1
        )));
    }
    if s >= env.num_states() {
        return Err(Error::arg(format!("state {s} out of range")));
    }
    let entry = if i == 1 {
        let first = h.steps().first().map_or(s, |&(s1, _)| s1);
        env.initial()[first] > 0.0
    } else {
        true
    };
    Ok(entry && transitions_positive_from(env, h, s, i))
}

/// Positivity of `P_j(s_j, a_j, s_{j+1})` for `j = i..|h|` (with `s_{|h|+1} = s`).
pub(crate) fn transitions_positive_from(
    env: &DynamicEnvironment,
    h: &History,
    s: usize,
    i: usize,
) -> bool {
    let steps = h.steps();
    (i..=steps.len()).all(|j| {
        let (sj, aj) = steps[j - 1];
        let next = steps.get(j).map_or(s, |&(sn, _)| sn);
        env.transition(j, sj, aj, next) > 0.0
    })
}

/// Whether `(h', s')` feasibly extends `(h, s)`.
///
/// Only the transitions after step `|h| + 1` are required to be positive; the
/// probability of reaching `(h, s)` itself is irrelevant, so this holds for
/// `(∅, s)` even when `P_0(s) = 0`.
pub fn feasibly_extends(
    env: &DynamicEnvironment,
    (h, s): (&History, usize),
    (h2, s2): (&History, usize),
) -> bool {
    if h == h2 && s == s2 {
        return true;
    }
    if h.len() >= h2.len() || !h2.starts_with(h) {
        return false;
    }
    if h2.steps()[h.len()].0 != s {
        return false;
    }
    transitions_positive_from(env, h2, s2, h.len() + 1)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two states, two actions, `T = 2`, with a zero-probability transition
    /// `P_1(s0, a0, s1) = 0`.
    pub(crate) fn small_spec() -> EnvironmentSpec {
        EnvironmentSpec {
            horizon: 2,
            states: vec!["s0".into(), "s1".into()],
            actions: vec!["a0".into(), "a1".into()],
            initial: vec![0.5, 0.5],
            transition: vec![
                vec![
                    vec![vec![1.0, 0.0], vec![0.3, 0.7]],
                    vec![vec![0.5, 0.5], vec![0.0, 1.0]],
                ];
                2
            ],
            principal_value: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
            agent_value: vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]; 2],
        }
    }

    #[test]
    fn valid_environment_passes() {
        let report = validate_environment(&small_spec());
        assert!(report.is_ok(), "{report}");
        assert_eq!(report.to_string(), "OK");
    }

    #[test]
    fn initial_distribution_normalization_is_reported() {
        let mut spec = small_spec();
        spec.initial = vec![0.5, 0.6];
        let report = validate_environment(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::NotNormalized);
        assert_eq!(report.violations[0].message, "initial_dist sums to 1.1");
    }

    #[test]
    fn missing_state_column_is_a_dimension_mismatch() {
        let mut spec = small_spec();
        spec.transition[0][0][0] = vec![1.0];
        let report = validate_environment(&spec);
        let v = report
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::DimensionMismatch)
            .expect("dimension violation");
        assert_eq!(v.location, "P[0][0][0]");
    }

    #[test]
    fn negative_probability_and_nan_are_reported() {
        let mut spec = small_spec();
        spec.transition[1][1][0] = vec![-0.5, 1.5];
        spec.agent_value[0][1][1] = f64::NAN;
        let report = validate_environment(&spec);
        let kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::ProbabilityOutOfRange));
        assert!(kinds.contains(&ViolationKind::NonFinite));
        assert!(DynamicEnvironment::from_spec(&spec).is_err());
    }

    #[test]
    fn inputs_within_tolerance_are_renormalized() {
        let mut spec = small_spec();
        spec.initial = vec![0.5 + 4e-10, 0.5];
        let env = DynamicEnvironment::from_spec(&spec).unwrap();
        let sum: f64 = env.initial().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let back = DynamicEnvironment::from_json_str(&env.to_json_string()).unwrap();
        assert_eq!(env, back);
    }

    #[test]
    fn history_counts() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        assert_eq!(enumerate_histories(&env, 1).unwrap().len(), 4);
        assert_eq!(enumerate_histories(&env, 0).unwrap(), vec![History::empty()]);
        assert!(enumerate_histories(&env, 2).is_err());

        let index = HistoryIndex::new(3, 2, 3).unwrap();
        assert_eq!(index.layer(2).len(), 36);
        assert_eq!(index.len(), 1 + 6 + 36);
    }

    #[test]
    fn index_navigation() {
        let index = HistoryIndex::new(3, 2, 3).unwrap();
        let h = History::from_steps(vec![(1, 2), (0, 1)]);
        let i = index.encode(&h).unwrap();
        assert_eq!(index.length_of(i), 2);
        assert_eq!(index.last(i), (0, 1));
        let p = index.parent(i).unwrap();
        assert_eq!(index.decode(p), History::from_steps(vec![(1, 2)]));
        assert_eq!(index.child(p, 0, 1), Some(i));
        assert_eq!(index.child(i, 0, 0), None);
        assert_eq!(index.last(0), (0, 0));
        assert!(index.encode(&h.extended(0, 0)).is_err());
    }

    #[test]
    fn history_index_refuses_huge_trees() {
        assert!(matches!(
            HistoryIndex::new(50, 5, 5),
            Err(Error::CapExceeded(_))
        ));
    }

    #[test]
    fn feasibility() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let empty = History::empty();
        assert!(is_feasible(&env, &empty, 0, 1).unwrap());
        let h = History::from_steps(vec![(0, 0)]);
        assert!(!is_feasible(&env, &h, 1, 1).unwrap());
        assert!(is_feasible(&env, &h, 0, 1).unwrap());
        assert!(is_feasible(&env, &h, 0, 2).unwrap());
        assert!(is_feasible(&env, &h, 0, 3).is_err());
        assert!(is_feasible(&env, &h, 0, 0).is_err());
    }

    #[test]
    fn initial_draw_counts_only_for_one_feasibility() {
        let mut spec = small_spec();
        spec.initial = vec![1.0, 0.0];
        let env = DynamicEnvironment::from_spec(&spec).unwrap();
        let h = History::from_steps(vec![(1, 1)]);
        assert!(!is_feasible(&env, &h, 1, 1).unwrap());
        assert!(is_feasible(&env, &h, 1, 2).unwrap());
        assert!(!is_feasible(&env, &History::empty(), 1, 1).unwrap());
        // the extension relation ignores how (∅, s1) itself is reached
        assert!(feasibly_extends(&env, (&History::empty(), 1), (&h, 1)));
    }

    #[test]
    fn feasible_extensions() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let empty = History::empty();
        assert!(feasibly_extends(&env, (&empty, 0), (&empty, 0)));
        let h = History::from_steps(vec![(0, 1)]);
        assert!(feasibly_extends(&env, (&empty, 0), (&h, 1)));
        let wrong = History::from_steps(vec![(1, 0)]);
        assert!(!feasibly_extends(&env, (&empty, 0), (&wrong, 1)));
        let zero = History::from_steps(vec![(0, 0)]);
        assert!(!feasibly_extends(&env, (&empty, 0), (&zero, 1)));
        assert!(!feasibly_extends(&env, (&h, 1), (&empty, 0)));
    }

    #[test]
    fn extended_transition_is_positive() {
        let mut spec = small_spec();
        spec.initial = vec![1.0, 0.0];
        let env = DynamicEnvironment::from_spec(&spec).unwrap();
        assert_eq!(env.extended_transition(1, 0, 1, 1), 0.7);
        assert_eq!(env.extended_transition(1, 0, 0, 1), 1.0);
        assert_eq!(env.extended_transition(0, 1, 1, 1), 1.0);
        for t in 0..=2 {
            for s in 0..2 {
                for a in 0..2 {
                    for n in 0..2 {
                        assert!(env.extended_transition(t, s, a, n) > 0.0);
                    }
                }
            }
        }
    }
}
