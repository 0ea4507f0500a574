// SPDX-License-Identifier: Apache-2.0
//! Test point insertion as a deterministic episodic decision process.
//!
//! The state is the current graph, an action inserts one test point, and the
//! only nonzero reward arrives on the last step: the test coverage of the
//! final graph minus that of the initial one, over a fault set frozen at
//! reset.

use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aig::{AigError, AigGraph, NodeId, TpType};
use crate::sim::{enumerate_faults, fault_simulate, CoverageReport, FaultSet, PatternSet, SimError, DEFAULT_PATTERNS};

/// Insert `tp_type` after `node`. Serializes as `{"node": 7, "type": "OP"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub node: NodeId,
    #[serde(rename = "type")]
    pub tp_type: TpType,
}

impl Action {
    pub fn new(node: NodeId, tp_type: TpType) -> Action {
        Action { node, tp_type }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("episode is done")]
    EpisodeDone,
    #[error("illegal action {0:?}")]
    IllegalAction(Action),
    #[error("graph has no candidate positions")]
    NoCandidates,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Aig(#[from] AigError),
}

/// Every (position, type) pair that may be inserted into `g`, ordered by node
/// id then type (AND-CP < OR-CP < OP).
///
/// Control points go on candidates only; observation points go on candidates
/// and original primary inputs that are not already observed. A type may be
/// used at most once per node.
pub fn legal_actions(g: &AigGraph) -> Vec<Action> {
    let mut out = Vec::new();
    for v in (0..g.node_count() as u32).map(NodeId) {
        if !g.is_tp_site(v) {
            continue;
        }
        if g.is_candidate(v) {
            for tp in [TpType::AndCp, TpType::OrCp] {
                if !g.has_tp(v, tp) {
                    out.push(Action::new(v, tp));
                }
            }
        }
        if !g.is_observed(v) && !g.has_tp(v, TpType::Op) {
            out.push(Action::new(v, TpType::Op));
        }
    }
    out
}

pub fn is_legal(g: &AigGraph, a: Action) -> bool {
    if a.node.index() >= g.node_count() || !g.is_tp_site(a.node) || g.has_tp(a.node, a.tp_type) {
        return false;
    }
    match a.tp_type {
        TpType::Op => !g.is_observed(a.node),
        _ => g.is_candidate(a.node),
    }
}

/// Fraction of original gates used as the default test point budget.
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_patterns: usize,
    pub pattern_seed: u64,
    /// Overrides the default `max(1, ceil(0.01 * gates))` horizon.
    pub budget: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { n_patterns: DEFAULT_PATTERNS, pattern_seed: 0, budget: None }
    }
}

/// Default horizon for a circuit with `gates` logic gates.
pub fn default_budget(gates: usize) -> usize {
    let t = libm::ceil(DEFAULT_BUDGET_FRACTION * gates as f64 - 1e-9) as usize;
    t.max(1)
}

#[derive(Debug, Clone)]
pub struct Episode {
    versions: Vec<Arc<AigGraph>>,
    faults: Arc<FaultSet>,
    patterns: PatternSet,
    budget: usize,
    initial: Arc<CoverageReport>,
    last: Option<CoverageReport>,
    actions: Vec<Action>,
}

/// Result of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

impl Episode {
    /// Freezes the fault universe of `g0` and measures its initial coverage.
    /// The horizon is capped at three times the candidate count, which keeps
    /// the legal action set non-empty until the episode ends.
    pub fn reset(g0: AigGraph, config: &EnvConfig) -> Result<Episode, EnvError> {
        let c = g0.candidate_count();
        if c == 0 {
            return Err(EnvError::NoCandidates);
        }
        let budget = config.budget.unwrap_or_else(|| default_budget(g0.original_gate_count())).clamp(1, 3 * c);
        let faults = enumerate_faults(&g0);
        let mut patterns = PatternSet::random(config.pattern_seed, config.n_patterns, &g0);
        patterns.ensure_inputs(&g0);
        let initial = fault_simulate(&g0, &faults, &patterns)?;
        Ok(Episode {
            versions: alloc::vec![Arc::new(g0)],
            faults: Arc::new(faults),
            patterns,
            budget,
            initial: Arc::new(initial),
            last: None,
            actions: Vec::new(),
        })
    }

    pub fn graph(&self) -> &AigGraph {
        self.versions.last().unwrap()
    }

    pub fn graph_arc(&self) -> Arc<AigGraph> {
        self.versions.last().unwrap().clone()
    }

    pub fn initial_graph(&self) -> &AigGraph {
        &self.versions[0]
    }

    /// Graph versions s^0..s^t.
    pub fn versions(&self) -> &[Arc<AigGraph>] {
        &self.versions
    }

    pub fn faults(&self) -> &FaultSet {
        &self.faults
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn t(&self) -> usize {
        self.actions.len()
    }

    pub fn done(&self) -> bool {
        self.actions.len() >= self.budget
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn initial_report(&self) -> &CoverageReport {
        &self.initial
    }

    pub fn initial_tc(&self) -> f64 {
        self.initial.test_coverage
    }

    /// Coverage of the final graph, once the episode is done.
    pub fn final_report(&self) -> Option<&CoverageReport> {
        self.last.as_ref()
    }

    pub fn legal_actions(&self) -> Result<Vec<Action>, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        Ok(legal_actions(self.graph()))
    }

    /// Applies `a` in place.
    pub fn step_mut(&mut self, a: Action) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        if !is_legal(self.graph(), a) {
            return Err(EnvError::IllegalAction(a));
        }
        let mut next = (**self.versions.last().unwrap()).clone();
        next.splice_after(a.node, a.tp_type)?;
        self.patterns.ensure_inputs(&next);
        self.versions.push(Arc::new(next));
        self.actions.push(a);
        if self.done() {
            let report = fault_simulate(self.graph(), &self.faults, &self.patterns)?;
            let reward = report.test_coverage - self.initial.test_coverage;
            self.last = Some(report);
            Ok(StepOutcome { reward, done: true })
        } else {
            Ok(StepOutcome { reward: 0.0, done: false })
        }
    }

    /// Pure transition: returns the successor episode, leaving `self` intact.
    pub fn step(&self, a: Action) -> Result<(Episode, f64, bool), EnvError> {
        let mut next = self.clone();
        let out = next.step_mut(a)?;
        Ok((next, out.reward, out.done))
    }
}

/// Replays `actions` from a fresh reset of `g0` and returns the finished
/// episode together with the summed reward.
pub fn replay(g0: AigGraph, config: &EnvConfig, actions: &[Action]) -> Result<(Episode, f64), EnvError> {
    let mut e = Episode::reset(g0, config)?;
    let mut total = 0.0;
    for &a in actions {
        total += e.step_mut(a)?.reward;
    }
    Ok((e, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{random_circuit, Gate, GateKind, Netlist};
    use alloc::string::ToString;
    use alloc::vec;

    fn and_graph() -> AigGraph {
        let gates = vec![
            Gate { id: 0, label: "a".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 1, label: "b".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 2, label: "y".to_string(), kind: GateKind::And, fanins: vec![0, 1] },
        ];
        AigGraph::from_netlist(&Netlist::new("and", gates, vec![2]).unwrap())
    }

    #[test]
    fn legal_actions_of_and_circuit() {
        let e = Episode::reset(and_graph(), &EnvConfig::default()).unwrap();
        let y = NodeId(2);
        assert_eq!(
            e.legal_actions().unwrap(),
            vec![
                Action::new(NodeId(0), TpType::Op),
                Action::new(NodeId(1), TpType::Op),
                Action::new(y, TpType::AndCp),
                Action::new(y, TpType::OrCp),
            ]
        );
    }

    #[test]
    fn default_budget_rounds_up() {
        assert_eq!(default_budget(100), 1);
        assert_eq!(default_budget(101), 2);
        assert_eq!(default_budget(0), 1);
        assert_eq!(default_budget(250), 3);
    }

    #[test]
    fn repeated_op_is_illegal() {
        let g = AigGraph::from_netlist(&random_circuit(3, 6, 150));
        let mut e = Episode::reset(g, &EnvConfig { budget: Some(3), ..Default::default() }).unwrap();
        let a = e.legal_actions().unwrap().into_iter().find(|a| a.tp_type == TpType::Op).unwrap();
        let out = e.step_mut(a).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        assert!(!e.legal_actions().unwrap().contains(&a));
        assert_eq!(e.step_mut(a), Err(EnvError::IllegalAction(a)));
    }

    #[test]
    fn terminal_reward_is_coverage_delta() {
        let g = AigGraph::from_netlist(&random_circuit(8, 8, 120));
        let cfg = EnvConfig { n_patterns: 512, pattern_seed: 4, budget: Some(2) };
        let mut e = Episode::reset(g, &cfg).unwrap();
        let a0 = e.legal_actions().unwrap()[3];
        assert_eq!(e.step_mut(a0).unwrap().reward, 0.0);
        let a1 = e.legal_actions().unwrap()[7];
        let out = e.step_mut(a1).unwrap();
        assert!(out.done);
        let fin = e.final_report().unwrap();
        assert_eq!(out.reward, fin.test_coverage - e.initial_tc());
        assert_eq!(e.legal_actions(), Err(EnvError::EpisodeDone));
        let (again, total) = replay(e.initial_graph().clone(), &cfg, e.actions()).unwrap();
        assert_eq!(total, out.reward);
        assert_eq!(again.final_report(), e.final_report());
    }

    #[test]
    fn pure_step_is_deterministic() {
        let g = AigGraph::from_netlist(&random_circuit(11, 6, 90));
        let e = Episode::reset(g, &EnvConfig { n_patterns: 256, ..Default::default() }).unwrap();
        let a = e.legal_actions().unwrap()[0];
        let (x, rx, dx) = e.step(a).unwrap();
        let (y, ry, dy) = e.step(a).unwrap();
        assert_eq!((rx, dx), (ry, dy));
        assert_eq!(x.graph(), y.graph());
        assert_eq!(e.t(), 0);
    }
}
