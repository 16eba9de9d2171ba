//! Mechanism representations, exact evaluation under reporting strategies,
//! and incentive-compatibility / individual-rationality checks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{best_response, AgentKind, TieRule};
use crate::env::{DynamicEnvironment, History, HistoryIndex};
use crate::error::{Error, Result};

/// Default absolute tolerance for IC and IR verdicts.
pub const DEFAULT_TOL: f64 = 1e-6;
/// A pair counts as reachable when its probability exceeds this.
pub const REACH_TOL: f64 = 1e-12;
const SUM_TOL: f64 = 1e-7;
const NEG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Indexed by the full reported history and current report.
    Table,
    /// Indexed by `(t, s_p, a_p, s)`: time, previous report and action, current report.
    Succinct,
    /// Indexed by `(t, s)`.
    Memoryless,
}

/// A randomized mechanism `(π, p)`.
///
/// Storage is a flat list of slots, one per index of the representation;
/// each slot has an action distribution and a payment from the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    repr: Representation,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    policy: Vec<f64>,
    payment: Vec<f64>,
}

/// Where a slot lives, in representation-specific coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotKey {
    Table { history: History, state: usize },
    Succinct { t: usize, prev_state: usize, prev_action: usize, state: usize },
    Memoryless { t: usize, state: usize },
}

/// Normalizes a probability vector, clamping tiny negatives.
pub(crate) fn normalize_distribution(probs: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        if !p.is_finite() || p < -NEG_TOL {
            return Err(Error::arg(format!("action probability {p} is negative or not finite")));
        }
        out.push(p.max(0.0));
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::arg(format!("action distribution sums to {sum}")));
    }
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

impl Mechanism {
    /// A mechanism of the given shape that plays uniformly at random and charges nothing.
    pub fn uniform(
        repr: Representation,
        horizon: usize,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::arg("mechanism needs T, |S|, |A| >= 1"));
        }
        let slots = match repr {
            // only the table form grows with the history tree
            Representation::Table => HistoryIndex::new(horizon, num_states, num_actions)?.len() * num_states,
            Representation::Succinct => horizon * num_states * num_actions * num_states,
            Representation::Memoryless => horizon * num_states,
        };
        Ok(Mechanism {
            repr,
            horizon,
            num_states,
            num_actions,
            policy: vec![1.0 / num_actions as f64; slots * num_actions],
            payment: vec![0.0; slots],
        })
    }

    pub fn uniform_for(repr: Representation, env: &DynamicEnvironment) -> Result<Self> {
        Self::uniform(repr, env.horizon(), env.num_states(), env.num_actions())
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_slots(&self) -> usize {
        self.payment.len()
    }

    pub fn matches(&self, env: &DynamicEnvironment) -> bool {
        self.horizon == env.horizon()
            && self.num_states == env.num_states()
            && self.num_actions == env.num_actions()
    }

    pub(crate) fn check_matches(&self, env: &DynamicEnvironment) -> Result<()> {
        if self.matches(env) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "mechanism shape (T={}, |S|={}, |A|={}) does not match environment (T={}, |S|={}, |A|={})",
                self.horizon,
                self.num_states,
                self.num_actions,
                env.horizon(),
                env.num_states(),
                env.num_actions()
            )))
        }
    }

    /// Slot consulted when `s` is reported after reported history `h` (by index).
    #[inline]
    pub fn slot(&self, index: &HistoryIndex, h: usize, s: usize) -> usize {
        let ns = self.num_states;
        match self.repr {
            Representation::Table => h * ns + s,
            Representation::Succinct => {
                let t = index.length_of(h) + 1;
                let (sp, ap) = index.last(h);
                (((t - 1) * ns + sp) * self.num_actions + ap) * ns + s
            }
            Representation::Memoryless => index.length_of(h) * ns + s,
        }
    }

    pub fn slot_of(&self, key: &SlotKey) -> Result<usize> {
        let (ns, na, tt) = (self.num_states, self.num_actions, self.horizon);
        let bad = || Error::arg(format!("slot {key:?} is out of range for this mechanism"));
        match (self.repr, key) {
            (Representation::Table, SlotKey::Table { history, state }) => {
                let index = HistoryIndex::new(tt, ns, na)?;
                if *state >= ns {
                    return Err(bad());
                }
                Ok(index.encode(history)? * ns + state)
            }
            (
                Representation::Succinct,
                SlotKey::Succinct {
                    t,
                    prev_state,
                    prev_action,
                    state,
                },
            ) => {
                if !(1..=tt).contains(t) || *prev_state >= ns || *prev_action >= na || *state >= ns {
                    return Err(bad());
                }
                Ok((((t - 1) * ns + prev_state) * na + prev_action) * ns + state)
            }
            (Representation::Memoryless, SlotKey::Memoryless { t, state }) => {
                if !(1..=tt).contains(t) || *state >= ns {
                    return Err(bad());
                }
                Ok((t - 1) * ns + state)
            }
            _ => Err(Error::arg(format!(
                "slot {key:?} does not belong to a {:?} mechanism",
                self.repr
            ))),
        }
    }

    pub fn slot_key(&self, slot: usize) -> SlotKey {
        let ns = self.num_states;
        let na = self.num_actions;
        match self.repr {
            Representation::Table => {
                let index = HistoryIndex::new(self.horizon, ns, na).expect("shape already validated");
                SlotKey::Table {
                    history: index.decode(slot / ns),
                    state: slot % ns,
                }
            }
            Representation::Succinct => {
                let state = slot % ns;
                let rest = slot / ns;
                let prev_action = rest % na;
                let rest = rest / na;
                SlotKey::Succinct {
                    t: rest / ns + 1,
                    prev_state: rest % ns,
                    prev_action,
                    state,
                }
            }
            Representation::Memoryless => SlotKey::Memoryless {
                t: slot / ns + 1,
                state: slot % ns,
            },
        }
    }

    #[inline]
    pub fn probs(&self, slot: usize) -> &[f64] {
        &self.policy[slot * self.num_actions..(slot + 1) * self.num_actions]
    }

    #[inline]
    pub fn payment(&self, slot: usize) -> f64 {
        self.payment[slot]
    }

    /// Sets a slot; `probs` must be a distribution within 1e-7 and is renormalized.
    pub fn set_slot(&mut self, slot: usize, probs: &[f64], payment: f64) -> Result<()> {
        if slot >= self.num_slots() {
            return Err(Error::arg(format!("slot {slot} out of range")));
        }
        if probs.len() != self.num_actions {
            return Err(Error::arg(format!(
                "expected {} action probabilities, got {}",
                self.num_actions,
                probs.len()
            )));
        }
        if !payment.is_finite() {
            return Err(Error::arg("payment is not finite"));
        }
        let probs = normalize_distribution(probs)?;
        let na = self.num_actions;
        self.policy[slot * na..(slot + 1) * na].copy_from_slice(&probs);
        self.payment[slot] = payment;
        Ok(())
    }

    pub fn set(&mut self, key: &SlotKey, probs: &[f64], payment: f64) -> Result<()> {
        let slot = self.slot_of(key)?;
        self.set_slot(slot, probs, payment)
    }

    /// Sets a slot to play `action` with certainty.
    pub fn set_deterministic(&mut self, key: &SlotKey, action: usize, payment: f64) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::arg(format!("action {action} out of range")));
        }
        let mut probs = vec![0.0; self.num_actions];
        probs[action] = 1.0;
        self.set(key, &probs, payment)
    }

    /// The same mechanism in the full table representation.
    pub fn to_table(&self) -> Result<Mechanism> {
        let mut out = Mechanism::uniform(
            Representation::Table,
            self.horizon,
            self.num_states,
            self.num_actions,
        )?;
        let index = HistoryIndex::new(self.horizon, self.num_states, self.num_actions)?;
        for h in 0..index.len() {
            for s in 0..self.num_states {
                let from = self.slot(&index, h, s);
                let to = out.slot(&index, h, s);
                let na = self.num_actions;
                out.policy[to * na..(to + 1) * na].copy_from_slice(self.probs(from));
                out.payment[to] = self.payment[from];
            }
        }
        Ok(out)
    }

    fn key_string(&self, env: &DynamicEnvironment, slot: usize) -> String {
        let st = env.states();
        let ac = env.actions();
        match self.slot_key(slot) {
            SlotKey::Table { history, state } => table_key(env, &history, state),
            SlotKey::Succinct {
                t,
                prev_state,
                prev_action,
                state,
            } => format!(
                "t={t},sp={},ap={},s={}",
                st[prev_state], ac[prev_action], st[state]
            ),
            SlotKey::Memoryless { t, state } => format!("t={t},s={}", st[state]),
        }
    }

    fn parse_key(&self, env: &DynamicEnvironment, key: &str) -> Result<usize> {
        let state = |name: &str| {
            env.state_index(name)
                .ok_or_else(|| Error::arg(format!("unknown state `{name}` in key `{key}`")))
        };
        let action = |name: &str| {
            env.action_index(name)
                .ok_or_else(|| Error::arg(format!("unknown action `{name}` in key `{key}`")))
        };
        let malformed = || Error::arg(format!("malformed {:?} key `{key}`", self.repr));
        let slot_key = match self.repr {
            Representation::Table => {
                let (hist, cur) = key.split_once('#').ok_or_else(malformed)?;
                let mut steps = Vec::new();
                if !hist.is_empty() {
                    for step in hist.split('|') {
                        let (s, a) = step.split_once(',').ok_or_else(malformed)?;
                        steps.push((state(s)?, action(a)?));
                    }
                }
                SlotKey::Table {
                    history: History::from_steps(steps),
                    state: state(cur)?,
                }
            }
            Representation::Succinct | Representation::Memoryless => {
                let mut fields = BTreeMap::new();
                for part in key.split(',') {
                    let (k, v) = part.split_once('=').ok_or_else(malformed)?;
                    fields.insert(k, v);
                }
                let t: usize = fields
                    .get("t")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(malformed)?;
                let s = state(fields.get("s").ok_or_else(malformed)?)?;
                if self.repr == Representation::Memoryless {
                    if fields.len() != 2 {
                        return Err(malformed());
                    }
                    SlotKey::Memoryless { t, state: s }
                } else {
                    if fields.len() != 4 {
                        return Err(malformed());
                    }
                    SlotKey::Succinct {
                        t,
                        prev_state: state(fields.get("sp").ok_or_else(malformed)?)?,
                        prev_action: action(fields.get("ap").ok_or_else(malformed)?)?,
                        state: s,
                    }
                }
            }
        };
        self.slot_of(&slot_key)
    }

    pub fn to_json_string(&self, env: &DynamicEnvironment) -> Result<String> {
        self.check_matches(env)?;
        let mut file = MechanismFile {
            repr: self.repr,
            policy: BTreeMap::new(),
            payment: BTreeMap::new(),
        };
        for slot in 0..self.num_slots() {
            let key = self.key_string(env, slot);
            file.policy.insert(key.clone(), self.probs(slot).to_vec());
            file.payment.insert(key, self.payment(slot));
        }
        Ok(serde_json::to_string_pretty(&file).expect("mechanism serialization cannot fail"))
    }

    /// Parses the JSON form. Every policy entry must be present; missing payments default to 0.
    pub fn from_json_str(env: &DynamicEnvironment, json: &str) -> Result<Self> {
        let file: MechanismFile = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: "<mechanism>".into(),
            message: e.to_string(),
        })?;
        let mut mech = Mechanism::uniform_for(file.repr, env)?;
        let mut seen = vec![false; mech.num_slots()];
        for (key, probs) in &file.policy {
            let slot = mech.parse_key(env, key)?;
            let pay = file.payment.get(key).copied().unwrap_or(0.0);
            mech.set_slot(slot, probs, pay)?;
            seen[slot] = true;
        }
        for key in file.payment.keys() {
            if !file.policy.contains_key(key) {
                return Err(Error::arg(format!("payment key `{key}` has no policy entry")));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::arg(format!(
                "policy entry `{}` is missing",
                mech.key_string(env, missing)
            )));
        }
        Ok(mech)
    }

    pub fn load(env: &DynamicEnvironment, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(env, &text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, env: &DynamicEnvironment, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string(env)?).map_err(|e| Error::io(path, e))
    }
}

/// `"s0,a1|s1,a0#s2"`: the history's (state, action) steps, then the current state.
fn table_key(env: &DynamicEnvironment, history: &History, state: usize) -> String {
    let (st, ac) = (env.states(), env.actions());
    let steps: Vec<String> = history
        .steps()
        .iter()
        .map(|&(s, a)| format!("{},{}", st[s], ac[a]))
        .collect();
    format!("{}#{}", steps.join("|"), st[state])
}

#[derive(Serialize, Deserialize)]
struct MechanismFile {
    repr: Representation,
    policy: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    payment: BTreeMap<String, f64>,
}

/// Deterministic reporting strategy over true `(h, s)` pairs, stored as `h * |S| + s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReportingStrategy {
    num_states: usize,
    reports: Vec<usize>,
}

impl ReportingStrategy {
    pub fn truthful(index: &HistoryIndex) -> Self {
        let ns = index.num_states();
        ReportingStrategy {
            num_states: ns,
            reports: (0..index.len() * ns).map(|k| k % ns).collect(),
        }
    }

    pub fn from_reports(index: &HistoryIndex, reports: Vec<usize>) -> Result<Self> {
        let ns = index.num_states();
        if reports.len() != index.len() * ns {
            return Err(Error::arg(format!(
                "strategy has {} entries, expected {}",
                reports.len(),
                index.len() * ns
            )));
        }
        if reports.iter().any(|&r| r >= ns) {
            return Err(Error::arg("strategy reports an unknown state"));
        }
        Ok(ReportingStrategy {
            num_states: ns,
            reports,
        })
    }

    #[inline]
    pub fn report(&self, h: usize, s: usize) -> usize {
        self.reports[h * self.num_states + s]
    }

    pub fn reports(&self) -> &[usize] {
        &self.reports
    }

    /// JSON object from true `(history, state)` keys, written as mechanism
    /// table keys, to the reported state name.
    pub fn to_json_string(&self, env: &DynamicEnvironment) -> Result<String> {
        let index = HistoryIndex::for_env(env)?;
        if self.num_states != env.num_states() || self.reports.len() != index.len() * self.num_states {
            return Err(Error::arg("strategy does not match the environment"));
        }
        let map: BTreeMap<String, &str> = self
            .reports
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let key = table_key(env, &index.decode(k / self.num_states), k % self.num_states);
                (key, env.states()[r].as_str())
            })
            .collect();
        serde_json::to_string_pretty(&map).map_err(|e| Error::arg(e.to_string()))
    }

    pub fn is_truthful(&self) -> bool {
        self.reports
            .iter()
            .enumerate()
            .all(|(k, &r)| r == k % self.num_states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub principal_total: f64,
    pub agent_total: f64,
    /// Indexed by true `h * |S| + s`.
    pub principal_onward: Vec<f64>,
    pub agent_onward: Vec<f64>,
    /// Probability of reaching each true `(h, s)` under the strategy.
    pub reach: Vec<f64>,
}

/// For each true history, the index of the history the mechanism has seen.
pub(crate) fn reported_histories(index: &HistoryIndex, strategy: &ReportingStrategy) -> Vec<usize> {
    let ns = index.num_states();
    let na = index.num_actions();
    let mut rep = vec![0usize; index.len()];
    for len in 0..index.horizon().saturating_sub(1) {
        for h in index.layer(len) {
            for s in 0..ns {
                let r = strategy.report(h, s);
                for a in 0..na {
                    let child = index.child_at(h, len, s, a).expect("non-final layer");
                    rep[child] = index.child_at(rep[h], len, r, a).expect("non-final layer");
                }
            }
        }
    }
    rep
}

/// Exact expected utilities of `mech` when the agent follows `strategy`
/// (`None` for truthful reporting).
///
/// The principal collects `vP + c·payment` undiscounted; the agent collects
/// `vA − payment` with continuation scaled by `agent_discount`.
pub fn evaluate(
    env: &DynamicEnvironment,
    mech: &Mechanism,
    strategy: Option<&ReportingStrategy>,
    agent_discount: f64,
    payment_valuation: f64,
) -> Result<EvaluationResult> {
    mech.check_matches(env)?;
    if !(0.0..=1.0).contains(&agent_discount) {
        return Err(Error::arg(format!("agent discount {agent_discount} outside [0, 1]")));
    }
    let index = HistoryIndex::for_env(env)?;
    let truthful;
    let strategy = match strategy {
        Some(s) => {
            if s.reports.len() != index.len() * env.num_states() {
                return Err(Error::arg("strategy does not match the environment"));
            }
            s
        }
        None => {
            truthful = ReportingStrategy::truthful(&index);
            &truthful
        }
    };
    let ns = env.num_states();
    let tt = env.horizon();
    let rep = reported_histories(&index, strategy);

    let mut reach = vec![0.0; index.len() * ns];
    reach[..ns].copy_from_slice(env.initial());
    for len in 0..tt - 1 {
        for h in index.layer(len) {
            for s in 0..ns {
                let z = reach[h * ns + s];
                if z == 0.0 {
                    continue;
                }
                let slot = mech.slot(&index, rep[h], strategy.report(h, s));
                for (a, &pa) in mech.probs(slot).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let child = index.child_at(h, len, s, a).unwrap();
                    for (s2, &pt) in env.transition_row(len + 1, s, a).iter().enumerate() {
                        reach[child * ns + s2] += z * pa * pt;
                    }
                }
            }
        }
    }

    let mut principal = vec![0.0; index.len() * ns];
    let mut agent = vec![0.0; index.len() * ns];
    for len in (0..tt).rev() {
        let t = len + 1;
        for h in index.layer(len) {
            for s in 0..ns {
                let slot = mech.slot(&index, rep[h], strategy.report(h, s));
                let pay = mech.payment(slot);
                let mut up = payment_valuation * pay;
                let mut ua = -pay;
                for (a, &pa) in mech.probs(slot).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let mut cont_p = 0.0;
                    let mut cont_a = 0.0;
                    if let Some(child) = index.child_at(h, len, s, a) {
                        for (s2, &pt) in env.transition_row(t, s, a).iter().enumerate() {
                            if pt != 0.0 {
                                cont_p += pt * principal[child * ns + s2];
                                cont_a += pt * agent[child * ns + s2];
                            }
                        }
                    }
                    up += pa * (env.principal_value(t, s, a) + cont_p);
                    ua += pa * (env.agent_value(t, s, a) + agent_discount * cont_a);
                }
                principal[h * ns + s] = up;
                agent[h * ns + s] = ua;
            }
        }
    }
    let p0 = env.initial();
    Ok(EvaluationResult {
        principal_total: (0..ns).map(|s| p0[s] * principal[s]).sum(),
        agent_total: (0..ns).map(|s| p0[s] * agent[s]).sum(),
        principal_onward: principal,
        agent_onward: agent,
        reach,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum IcVerdict {
    Ic,
    Violated {
        /// True history at the first profitable misreport.
        history: History,
        state: usize,
        report: usize,
        /// Improvement of the best deviation over truthful reporting.
        gap: f64,
    },
}

impl IcVerdict {
    pub fn is_ic(&self) -> bool {
        matches!(self, IcVerdict::Ic)
    }

    pub fn gap(&self) -> f64 {
        match self {
            IcVerdict::Ic => 0.0,
            IcVerdict::Violated { gap, .. } => *gap,
        }
    }
}

/// IC verdict for a patient agent (best response vs truthful) or a myopic
/// agent (no profitable one-step report at any truthfully reachable pair).
pub fn check_ic(
    env: &DynamicEnvironment,
    mech: &Mechanism,
    kind: AgentKind,
    tol: f64,
) -> Result<IcVerdict> {
    if !(tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    mech.check_matches(env)?;
    let index = HistoryIndex::for_env(env)?;
    let ns = env.num_states();
    match kind {
        AgentKind::Patient { discount } => {
            let truthful = evaluate(env, mech, None, discount, 0.0)?;
            let br = best_response(env, mech, kind, TieRule::TruthfulFirst, 0.0)?;
            let gap = br.agent_value - truthful.agent_total;
            if gap <= tol {
                return Ok(IcVerdict::Ic);
            }
            let reach = evaluate(env, mech, Some(&br.strategy), discount, 0.0)?.reach;
            let k = (0..index.len() * ns)
                .find(|&k| reach[k] > REACH_TOL && br.strategy.report(k / ns, k % ns) != k % ns)
                .expect("a strictly better strategy misreports somewhere reachable");
            Ok(IcVerdict::Violated {
                history: index.decode(k / ns),
                state: k % ns,
                report: br.strategy.report(k / ns, k % ns),
                gap,
            })
        }
        AgentKind::Myopic => {
            let reach = evaluate(env, mech, None, 0.0, 0.0)?.reach;
            let mut worst: Option<(usize, usize, f64)> = None;
            for h in 0..index.len() {
                let t = index.length_of(h) + 1;
                for s in 0..ns {
                    if reach[h * ns + s] <= REACH_TOL {
                        continue;
                    }
                    let immediate = |r: usize| {
                        let slot = mech.slot(&index, h, r);
                        mech.probs(slot)
                            .iter()
                            .enumerate()
                            .map(|(a, &pa)| pa * env.agent_value(t, s, a))
                            .sum::<f64>()
                            - mech.payment(slot)
                    };
                    let truth = immediate(s);
                    for r in 0..ns {
                        let gain = immediate(r) - truth;
                        if gain > tol && worst.is_none_or(|(_, _, g)| gain > g) {
                            worst = Some((h * ns + s, r, gain));
                        }
                    }
                }
            }
            Ok(match worst {
                None => IcVerdict::Ic,
                Some((k, report, gap)) => IcVerdict::Violated {
                    history: index.decode(k / ns),
                    state: k % ns,
                    report,
                    gap,
                },
            })
        }
    }
}

/// Which `(reported history, true state)` pairs a one-step deviation check covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationScope {
    /// Pairs reached with positive probability under truthful reporting.
    Truthful,
    /// Pairs reachable under some reporting strategy.
    AnyStrategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub history: History,
    pub state: usize,
    pub report: usize,
    pub gain: f64,
}

/// The most profitable one-step misreport (report once, truthful afterwards)
/// over the pairs in `scope`, if any gains more than `tol`.
pub fn best_single_step_deviation(
    env: &DynamicEnvironment,
    mech: &Mechanism,
    discount: f64,
    scope: DeviationScope,
    tol: f64,
) -> Result<Option<Deviation>> {
    let truthful = evaluate(env, mech, None, discount, 0.0)?;
    let index = HistoryIndex::for_env(env)?;
    let ns = env.num_states();
    let tt = env.horizon();
    let covered: Vec<bool> = match scope {
        DeviationScope::Truthful => truthful.reach.iter().map(|&z| z > REACH_TOL).collect(),
        DeviationScope::AnyStrategy => possible_pairs(env, mech, &index),
    };
    let onward = &truthful.agent_onward;
    let mut best: Option<Deviation> = None;
    for len in 0..tt {
        let t = len + 1;
        for h in index.layer(len) {
            for s in 0..ns {
                if !covered[h * ns + s] {
                    continue;
                }
                for r in 0..ns {
                    if r == s {
                        continue;
                    }
                    let slot = mech.slot(&index, h, r);
                    let mut value = -mech.payment(slot);
                    for (a, &pa) in mech.probs(slot).iter().enumerate() {
                        if pa == 0.0 {
                            continue;
                        }
                        let mut cont = 0.0;
                        if let Some(child) = index.child_at(h, len, r, a) {
                            for (s2, &pt) in env.transition_row(t, s, a).iter().enumerate() {
                                cont += pt * onward[child * ns + s2];
                            }
                        }
                        value += pa * (env.agent_value(t, s, a) + discount * cont);
                    }
                    let gain = value - onward[h * ns + s];
                    if gain > tol && best.as_ref().is_none_or(|d| gain > d.gain) {
                        best = Some(Deviation {
                            history: index.decode(h),
                            state: s,
                            report: r,
                            gain,
                        });
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Pairs `(reported h, true s)` that some reporting strategy reaches with
/// positive probability.
fn possible_pairs(env: &DynamicEnvironment, mech: &Mechanism, index: &HistoryIndex) -> Vec<bool> {
    let ns = env.num_states();
    let mut possible = vec![false; index.len() * ns];
    for s in 0..ns {
        possible[s] = env.initial()[s] > 0.0;
    }
    for len in 0..env.horizon() - 1 {
        for h in index.layer(len) {
            let here: Vec<usize> = (0..ns).filter(|&s| possible[h * ns + s]).collect();
            if here.is_empty() {
                continue;
            }
            for r in 0..ns {
                let slot = mech.slot(index, h, r);
                for (a, &pa) in mech.probs(slot).iter().enumerate() {
                    if pa <= REACH_TOL {
                        continue;
                    }
                    let child = index.child_at(h, len, r, a).unwrap();
                    for &s in &here {
                        for (s2, &pt) in env.transition_row(len + 1, s, a).iter().enumerate() {
                            if pt > 0.0 {
                                possible[child * ns + s2] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    possible
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrMode {
    None,
    Overall,
    Dynamic,
}

impl std::str::FromStr for IrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(IrMode::None),
            "overall" => Ok(IrMode::Overall),
            "dynamic" => Ok(IrMode::Dynamic),
            _ => Err(Error::arg(format!("IR mode `{s}` is not none, overall or dynamic"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IrVerdict {
    Ok,
    Violated { history: History, state: usize, utility: f64 },
}

impl IrVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, IrVerdict::Ok)
    }
}

/// IR verdict under truthful reporting with the given agent discount.
pub fn check_ir(
    env: &DynamicEnvironment,
    mech: &Mechanism,
    mode: IrMode,
    discount: f64,
    tol: f64,
) -> Result<IrVerdict> {
    if !(tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let eval = evaluate(env, mech, None, discount, 0.0)?;
    let ns = env.num_states();
    match mode {
        IrMode::None => Ok(IrVerdict::Ok),
        IrMode::Overall => Ok(if eval.agent_total >= -tol {
            IrVerdict::Ok
        } else {
            IrVerdict::Violated {
                history: History::empty(),
                state: 0,
                utility: eval.agent_total,
            }
        }),
        IrMode::Dynamic => {
            let index = HistoryIndex::for_env(env)?;
            let worst = (0..eval.reach.len())
                .filter(|&k| eval.reach[k] > REACH_TOL && eval.agent_onward[k] < -tol)
                .min_by(|&i, &j| eval.agent_onward[i].total_cmp(&eval.agent_onward[j]));
            Ok(match worst {
                None => IrVerdict::Ok,
                Some(k) => IrVerdict::Violated {
                    history: index.decode(k / ns),
                    state: k % ns,
                    utility: eval.agent_onward[k],
                },
            })
        }
    }
}

/// Hard cap on `decision points · log2 |S|` for strategy enumeration.
pub const MAX_STRATEGY_BITS: f64 = 24.0;

/// Iterator over every deterministic reporting strategy, in odometer order
/// with the truthful strategy first.
pub struct StrategyEnumerator {
    index: HistoryIndex,
    current: Option<Vec<usize>>,
    /// Offsets from truthful: `report = (s + digit) mod |S|`.
    digits: Vec<usize>,
}

pub fn enumerate_reporting_strategies(env: &DynamicEnvironment) -> Result<StrategyEnumerator> {
    let index = HistoryIndex::for_env(env)?;
    let ns = env.num_states();
    let points = index.len() * ns;
    let bits = points as f64 * (ns as f64).log2();
    if bits > MAX_STRATEGY_BITS {
        return Err(Error::CapExceeded(format!(
            "{points} decision points with {ns} states is 2^{bits:.1} strategies, above the 2^{MAX_STRATEGY_BITS} cap"
        )));
    }
    let truthful = ReportingStrategy::truthful(&index).reports;
    Ok(StrategyEnumerator {
        index,
        current: Some(truthful),
        digits: vec![0; points],
    })
}

impl StrategyEnumerator {
    /// Total number of strategies the iterator yields.
    pub fn count_total(&self) -> u64 {
        (self.index.num_states() as u64).pow(self.digits.len() as u32)
    }
}

impl Iterator for StrategyEnumerator {
    type Item = ReportingStrategy;

    fn next(&mut self) -> Option<ReportingStrategy> {
        let out = self.current.take()?;
        let ns = self.index.num_states();
        let mut advanced = false;
        for k in 0..self.digits.len() {
            self.digits[k] += 1;
            if self.digits[k] < ns {
                advanced = true;
                break;
            }
            self.digits[k] = 0;
        }
        if advanced {
            self.current = Some(
                self.digits
                    .iter()
                    .enumerate()
                    .map(|(k, &d)| (k % ns + d) % ns)
                    .collect(),
            );
        }
        Some(ReportingStrategy {
            num_states: ns,
            reports: out,
        })
    }
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
    fn single_branch_expectation() {
        let env = single(0.7, 0.3);
        let mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
        let r = evaluate(&env, &mech, None, 1.0, 1.0).unwrap();
        assert!((r.principal_total - 0.7).abs() < 1e-15);
        assert!((r.agent_total - 0.3).abs() < 1e-15);
    }

    #[test]
    fn payments_move_between_parties() {
        let env = single(0.7, 0.3);
        let mut mech = Mechanism::uniform_for(Representation::Memoryless, &env).unwrap();
        mech.set(&SlotKey::Memoryless { t: 1, state: 0 }, &[1.0], 0.2).unwrap();
        let r = evaluate(&env, &mech, None, 1.0, 0.5).unwrap();
        assert!((r.principal_total - 0.8).abs() < 1e-15);
        assert!((r.agent_total - 0.1).abs() < 1e-15);
    }

    #[test]
    fn slot_keys_round_trip() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        for repr in [Representation::Table, Representation::Succinct, Representation::Memoryless] {
            let mech = Mechanism::uniform_for(repr, &env).unwrap();
            for slot in 0..mech.num_slots() {
                assert_eq!(mech.slot_of(&mech.slot_key(slot)).unwrap(), slot);
            }
        }
    }

    #[test]
    fn json_keys_match_documented_format() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let table = Mechanism::uniform_for(Representation::Table, &env).unwrap();
        let json = table.to_json_string(&env).unwrap();
        assert!(json.contains("\"#s0\""));
        assert!(json.contains("\"s0,a1#s1\""));
        let succ = Mechanism::uniform_for(Representation::Succinct, &env).unwrap();
        assert!(succ.to_json_string(&env).unwrap().contains("\"t=2,sp=s0,ap=a1,s=s1\""));
        let memo = Mechanism::uniform_for(Representation::Memoryless, &env).unwrap();
        assert!(memo.to_json_string(&env).unwrap().contains("\"t=1,s=s0\""));
    }

    #[test]
    fn json_round_trip() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let mut mech = Mechanism::uniform_for(Representation::Succinct, &env).unwrap();
        let key = SlotKey::Succinct {
            t: 2,
            prev_state: 1,
            prev_action: 0,
            state: 1,
        };
        mech.set(&key, &[0.25, 0.75], -0.5).unwrap();
        let back = Mechanism::from_json_str(&env, &mech.to_json_string(&env).unwrap()).unwrap();
        assert_eq!(back, mech);
    }

    #[test]
    fn json_missing_entry_is_rejected() {
        let env = single(1.0, 1.0);
        let err = Mechanism::from_json_str(&env, r#"{"repr":"table","policy":{}}"#).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn distributions_are_validated() {
        let env = single(1.0, 1.0);
        let mut mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
        assert!(mech.set_slot(0, &[0.9], 0.0).is_err());
        assert!(mech.set_slot(0, &[1.0 + 5e-8], 0.0).is_ok());
        assert_eq!(mech.probs(0), &[1.0]);
    }

    #[test]
    fn strategy_counts() {
        let env = single(1.0, 1.0);
        assert_eq!(enumerate_reporting_strategies(&env).unwrap().count(), 1);
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let it = enumerate_reporting_strategies(&env).unwrap();
        assert_eq!(it.count_total(), 1024);
        let all: Vec<_> = it.collect();
        assert_eq!(all.len(), 1024);
        assert!(all[0].is_truthful());
        let distinct: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), 1024);
    }

    #[test]
    fn dynamic_ir_catches_a_large_payment() {
        let env = single(0.0, 0.3);
        let mut mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
        assert!(check_ir(&env, &mech, IrMode::Dynamic, 1.0, DEFAULT_TOL).unwrap().is_ok());
        mech.set_slot(0, &[1.0], 1.0).unwrap();
        match check_ir(&env, &mech, IrMode::Dynamic, 1.0, DEFAULT_TOL).unwrap() {
            IrVerdict::Violated { utility, .. } => assert!((utility - -0.7).abs() < 1e-12),
            v => panic!("expected violation, got {v:?}"),
        }
        assert!(check_ir(&env, &mech, IrMode::None, 1.0, DEFAULT_TOL).unwrap().is_ok());
    }

    #[test]
    fn single_state_is_always_ic() {
        let env = single(0.0, 0.3);
        let mech = Mechanism::uniform_for(Representation::Table, &env).unwrap();
        let kind = AgentKind::Patient { discount: 1.0 };
        assert!(check_ic(&env, &mech, kind, DEFAULT_TOL).unwrap().is_ic());
        assert!(check_ic(&env, &mech, AgentKind::Myopic, DEFAULT_TOL).unwrap().is_ic());
    }

    #[test]
    fn table_conversion_preserves_values() {
        let env = DynamicEnvironment::from_spec(&small_spec()).unwrap();
        let mut mech = Mechanism::uniform_for(Representation::Memoryless, &env).unwrap();
        mech.set(&SlotKey::Memoryless { t: 2, state: 1 }, &[0.1, 0.9], 0.3).unwrap();
        let a = evaluate(&env, &mech, None, 1.0, 1.0).unwrap();
        let b = evaluate(&env, &mech.to_table().unwrap(), None, 1.0, 1.0).unwrap();
        assert_eq!(a, b);
    }
}
