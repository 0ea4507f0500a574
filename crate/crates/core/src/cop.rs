// SPDX-License-Identifier: Apache-2.0
//! COP controllability/observability and greedy baseline planners.
//!
//! Controllability `c1` is the probability of logic 1 assuming independent
//! fanins; observability `obs` is the probability that a value change
//! propagates to an observed node, taking the easiest branch at fanout stems.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aig::{AigGraph, NodeId, NodeKind, TpType};
use crate::env::{legal_actions, Action};
use crate::sim::{
    enumerate_faults, fault_simulate, fault_simulate_with, simulate_good, Fault, FaultSet, PatternSet, Polarity,
    SimError,
};

/// Controllability of every primary input, control inputs included.
pub const PI_C1: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopProfile {
    pub c1: Vec<f64>,
    pub obs: Vec<f64>,
}

impl CopProfile {
    pub fn detect_prob(&self, f: Fault) -> f64 {
        let v = f.site.index();
        detect(self.c1[v], self.obs[v], f.polarity)
    }

    /// Detection probability of every fault in `faults`.
    pub fn detect_probs(&self, faults: &FaultSet) -> Vec<f64> {
        faults.faults().iter().map(|&f| self.detect_prob(f)).collect()
    }
}

#[inline]
fn detect(c1: f64, obs: f64, pol: Polarity) -> f64 {
    match pol {
        Polarity::Sa0 => c1 * obs,
        Polarity::Sa1 => (1.0 - c1) * obs,
    }
}

/// Observability contributed by the branch of `u` entering fanout `o`.
#[inline]
fn branch_obs(g: &AigGraph, u: u32, o: u32, obs_o: f64, c1: impl Fn(u32) -> f64) -> f64 {
    match g.kind(NodeId(o)) {
        NodeKind::Not => obs_o,
        NodeKind::And => {
            let fi = g.fanin_raw(o as usize);
            let mut p = obs_o;
            for &s in fi {
                if s != u {
                    p *= c1(s);
                }
            }
            p
        }
        NodeKind::Pi => 0.0,
    }
}

/// One forward pass for `c1`, one reverse pass for `obs`.
pub fn cop_analyze(g: &AigGraph) -> CopProfile {
    let n = g.node_count();
    let mut c1 = vec![0.0; n];
    for &v in g.topo_order() {
        let v = v as usize;
        let fi = g.fanin_raw(v);
        c1[v] = match g.kind(NodeId(v as u32)) {
            NodeKind::Pi => PI_C1,
            NodeKind::Not => 1.0 - c1[fi[0] as usize],
            NodeKind::And => c1[fi[0] as usize] * c1[fi[1] as usize],
        };
    }
    let mut obs = vec![0.0; n];
    for &v in g.topo_order().iter().rev() {
        let vi = v as usize;
        obs[vi] = if g.observed_mask()[vi] {
            1.0
        } else {
            g.fanout_raw(vi)
                .iter()
                .map(|&o| branch_obs(g, v, o, obs[o as usize], |s| c1[s as usize]))
                .fold(0.0, f64::max)
        };
    }
    CopProfile { c1, obs }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CopError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("no legal actions remain")]
    NoLegalActions,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Ordered test points chosen by a heuristic, with the score of each pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicTpPlan {
    pub actions: Vec<Action>,
    pub predicted_gain: Vec<f64>,
}

/// Scores candidate actions by the change of COP detection-probability mass
/// over a weighted subset of faults, recomputing only the affected cones.
pub struct CopScorer<'a> {
    g: &'a AigGraph,
    base: CopProfile,
    /// Summed weight per node and polarity (index 0 = SA0, 1 = SA1).
    weight: Vec<[f64; 2]>,
    pos: Vec<u32>,
    c1: Vec<f64>,
    c1_mark: Vec<u32>,
    obs: Vec<f64>,
    obs_mark: Vec<u32>,
    in_set: Vec<u32>,
    epoch: u32,
}

impl<'a> CopScorer<'a> {
    /// `weights[i]` applies to `faults[i]`; zero-weight faults are ignored.
    pub fn new(g: &'a AigGraph, faults: &FaultSet, weights: &[f64]) -> CopScorer<'a> {
        let n = g.node_count();
        let mut weight = vec![[0.0; 2]; n];
        for (f, &w) in faults.faults().iter().zip(weights) {
            weight[f.site.index()][f.polarity as usize] += w;
        }
        let mut pos = vec![0u32; n];
        for (i, &v) in g.topo_order().iter().enumerate() {
            pos[v as usize] = i as u32;
        }
        CopScorer {
            g,
            base: cop_analyze(g),
            weight,
            pos,
            c1: vec![0.0; n],
            c1_mark: vec![0; n],
            obs: vec![0.0; n],
            obs_mark: vec![0; n],
            in_set: vec![0; n],
            epoch: 0,
        }
    }

    pub fn profile(&self) -> &CopProfile {
        &self.base
    }

    fn c1_of(&self, v: u32) -> f64 {
        if self.c1_mark[v as usize] == self.epoch {
            self.c1[v as usize]
        } else {
            self.base.c1[v as usize]
        }
    }

    fn obs_of(&self, v: u32) -> f64 {
        if self.obs_mark[v as usize] == self.epoch {
            self.obs[v as usize]
        } else {
            self.base.obs[v as usize]
        }
    }

    /// Nodes with a path into any of `roots` (inclusive), marked in `in_set`.
    fn fanin_closure(&mut self, roots: &[u32]) -> Vec<u32> {
        let e = self.epoch;
        let mut stack: Vec<u32> = Vec::new();
        let mut out = Vec::new();
        for &r in roots {
            if self.in_set[r as usize] != e {
                self.in_set[r as usize] = e;
                stack.push(r);
            }
        }
        while let Some(v) = stack.pop() {
            out.push(v);
            for &f in self.g.fanin_raw(v as usize) {
                if self.in_set[f as usize] != e {
                    self.in_set[f as usize] = e;
                    stack.push(f);
                }
            }
        }
        out.sort_unstable_by_key(|&v| core::cmp::Reverse(self.pos[v as usize]));
        out
    }

    fn mass_delta(&self, nodes: &[u32]) -> f64 {
        let mut d = 0.0;
        for &v in nodes {
            let w = self.weight[v as usize];
            if w[0] == 0.0 && w[1] == 0.0 {
                continue;
            }
            let (c0, o0) = (self.base.c1[v as usize], self.base.obs[v as usize]);
            let (c, o) = (self.c1_of(v), self.obs_of(v));
            d += w[0] * (detect(c, o, Polarity::Sa0) - detect(c0, o0, Polarity::Sa0));
            d += w[1] * (detect(c, o, Polarity::Sa1) - detect(c0, o0, Polarity::Sa1));
        }
        d
    }

    /// Change in weighted detection-probability mass if `a` were inserted.
    pub fn delta(&mut self, a: Action) -> f64 {
        self.epoch += 1;
        let e = self.epoch;
        let g = self.g;
        let v = a.node.0;
        match a.tp_type {
            TpType::Op => {
                let cone = self.fanin_closure(&[v]);
                for &u in &cone {
                    let val = if u == v || g.observed_mask()[u as usize] {
                        1.0
                    } else {
                        let mut best: f64 = 0.0;
                        for &o in g.fanout_raw(u as usize) {
                            best = best.max(branch_obs(g, u, o, self.obs_of(o), |s| self.c1_of(s)));
                        }
                        best
                    };
                    self.obs[u as usize] = val;
                    self.obs_mark[u as usize] = e;
                }
                self.mass_delta(&cone)
            }
            TpType::AndCp | TpType::OrCp => {
                let cv = self.base.c1[v as usize];
                let cw = match a.tp_type {
                    TpType::AndCp => cv * PI_C1,
                    _ => 1.0 - (1.0 - cv) * (1.0 - PI_C1),
                };
                // Forward: every node reachable from v's fanouts, reading w for v.
                let mut fwd: Vec<u32> = Vec::new();
                let mut stack: Vec<u32> = g.fanout_raw(v as usize).to_vec();
                for &o in &stack {
                    self.c1_mark[o as usize] = e;
                }
                while let Some(u) = stack.pop() {
                    fwd.push(u);
                    for &o in g.fanout_raw(u as usize) {
                        if self.c1_mark[o as usize] != e {
                            self.c1_mark[o as usize] = e;
                            stack.push(o);
                        }
                    }
                }
                fwd.sort_unstable_by_key(|&u| self.pos[u as usize]);
                let read = |s: &Self, x: u32| if x == v { cw } else { s.c1_of(x) };
                for &u in &fwd {
                    let fi = g.fanin_raw(u as usize);
                    let val = match g.kind(NodeId(u)) {
                        NodeKind::Not => 1.0 - read(self, fi[0]),
                        NodeKind::And => read(self, fi[0]) * read(self, fi[1]),
                        NodeKind::Pi => PI_C1,
                    };
                    self.c1[u as usize] = val;
                }
                // Backward over everything that can reach a changed node.
                let mut roots = fwd.clone();
                roots.push(v);
                let region = self.fanin_closure(&roots);
                let was_output = g.outputs().iter().any(|&o| o.0 == v);
                let v_op = g.observation_points().iter().any(|&o| o.0 == v);
                for &u in &region {
                    let val = if u == v {
                        if v_op {
                            1.0
                        } else {
                            let mut obs_w: f64 = if was_output { 1.0 } else { 0.0 };
                            for &o in g.fanout_raw(v as usize) {
                                let fi = g.fanin_raw(o as usize);
                                let mut p = self.obs_of(o);
                                if g.kind(NodeId(o)) == NodeKind::And {
                                    for &s in fi {
                                        if s != v {
                                            p *= self.c1_of(s);
                                        }
                                    }
                                }
                                obs_w = obs_w.max(p);
                            }
                            // through the control gate, whose other input has c1 = 1/2
                            obs_w * PI_C1
                        }
                    } else if g.observed_mask()[u as usize] {
                        1.0
                    } else {
                        let mut best: f64 = 0.0;
                        for &o in g.fanout_raw(u as usize) {
                            let fi = g.fanin_raw(o as usize);
                            let mut p = self.obs_of(o);
                            if g.kind(NodeId(o)) == NodeKind::And {
                                for &s in fi {
                                    if s != u {
                                        p *= read(self, s);
                                    }
                                }
                            }
                            best = best.max(p);
                        }
                        best
                    };
                    self.obs[u as usize] = val;
                    self.obs_mark[u as usize] = e;
                }
                self.mass_delta(&region)
            }
        }
    }
}

fn argmax_action(scores: impl Iterator<Item = (Action, f64)>) -> Option<(Action, f64)> {
    let mut best: Option<(Action, f64)> = None;
    for (a, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((a, s));
        }
    }
    best
}

/// Greedy COP planner.
///
/// Every legal action is scored by the change of COP detection-probability
/// mass summed over the fault set frozen on `g`; the best one is applied and
/// the process repeats `budget` times. Ties go to the smallest node id, then
/// AND-CP < OR-CP < OP. `patterns` is accepted so both greedy planners share
/// one signature; COP scoring never simulates.
pub fn cop_greedy_tpi(g: &AigGraph, budget: usize, _patterns: &PatternSet) -> Result<HeuristicTpPlan, CopError> {
    if budget == 0 {
        return Err(CopError::ZeroBudget);
    }
    let faults = enumerate_faults(g);
    let weights = vec![1.0; faults.len()];
    let mut g = g.clone();
    let mut plan = HeuristicTpPlan { actions: Vec::new(), predicted_gain: Vec::new() };
    for _ in 0..budget {
        let actions = legal_actions(&g);
        let mut scorer = CopScorer::new(&g, &faults, &weights);
        let (best, gain) =
            argmax_action(actions.into_iter().map(|a| (a, scorer.delta(a)))).ok_or(CopError::NoLegalActions)?;
        g.splice_after(best.node, best.tp_type).expect("legal action applies");
        plan.actions.push(best);
        plan.predicted_gain.push(gain);
    }
    Ok(plan)
}

/// Greedy planner scored by measured coverage: each legal action is inserted
/// on a copy and fault-simulated. Far more expensive than [`cop_greedy_tpi`].
pub fn sim_greedy_tpi(g: &AigGraph, budget: usize, patterns: &PatternSet) -> Result<HeuristicTpPlan, CopError> {
    if budget == 0 {
        return Err(CopError::ZeroBudget);
    }
    let faults = enumerate_faults(g);
    let mut g = g.clone();
    let mut patterns = patterns.clone();
    let mut plan = HeuristicTpPlan { actions: Vec::new(), predicted_gain: Vec::new() };
    for _ in 0..budget {
        patterns.ensure_inputs(&g);
        let good = simulate_good(&g, &patterns)?;
        let base = fault_simulate_with(&g, &faults, &patterns, &good, None)?;
        let mut scored = Vec::new();
        for a in legal_actions(&g) {
            let mut h = g.clone();
            h.splice_after(a.node, a.tp_type).expect("legal action applies");
            let report = if a.tp_type == TpType::Op {
                // observation only adds detections; the good machine is unchanged
                fault_simulate_with(&h, &faults, &patterns, &good, Some(&base.detected))?
            } else {
                let mut p = patterns.clone();
                p.ensure_inputs(&h);
                fault_simulate(&h, &faults, &p)?
            };
            scored.push((a, report.test_coverage - base.test_coverage));
        }
        let (best, gain) = argmax_action(scored.into_iter()).ok_or(CopError::NoLegalActions)?;
        g.splice_after(best.node, best.tp_type).expect("legal action applies");
        plan.actions.push(best);
        plan.predicted_gain.push(gain);
    }
    Ok(plan)
}
