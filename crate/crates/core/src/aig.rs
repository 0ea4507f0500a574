// SPDX-License-Identifier: Apache-2.0
//! And-inverter graphs with test-point candidate masking.
//!
//! Node ids are dense and stable. [`AigGraph::from_netlist`] creates primary
//! inputs first (in netlist input order), then decomposes each gate in the
//! netlist's stable topological order; the node carrying a gate's output is
//! always the last node created for it. Test-point insertion only appends
//! nodes, so ids of existing nodes never change.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::netlist::{GateKind, Netlist};

/// Dense node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Documented one-hot order: PI, AND, NOT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Pi,
    And,
    Not,
}

impl NodeKind {
    pub fn arity(self) -> usize {
        match self {
            NodeKind::Pi => 0,
            NodeKind::And => 2,
            NodeKind::Not => 1,
        }
    }

    pub fn one_hot_index(self) -> usize {
        match self {
            NodeKind::Pi => 0,
            NodeKind::And => 1,
            NodeKind::Not => 2,
        }
    }
}

/// Test point types, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TpType {
    #[serde(rename = "AND-CP")]
    AndCp,
    #[serde(rename = "OR-CP")]
    OrCp,
    #[serde(rename = "OP")]
    Op,
}

impl TpType {
    pub const ALL: [TpType; 3] = [TpType::AndCp, TpType::OrCp, TpType::Op];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> TpType {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            TpType::AndCp => "AND-CP",
            TpType::OrCp => "OR-CP",
            TpType::Op => "OP",
        }
    }

    pub fn from_name(s: &str) -> Option<TpType> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for TpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a primary input's patterns come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PiSource {
    /// k-th primary input of the original netlist.
    Original(u32),
    /// k-th control-point input inserted by test-point insertion.
    Pseudo { index: u32, tp: TpType },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AigError {
    #[error("node {0} is not a legal test point position")]
    NotACandidate(NodeId),
    #[error("{1} already inserted at node {0}")]
    DuplicateTp(NodeId, TpType),
    #[error("control points cannot be placed on primary input {0}")]
    CpOnInput(NodeId),
    #[error("node {0} is already observed")]
    AlreadyObserved(NodeId),
    #[error("exhaustive check over {got} inputs exceeds the limit of {max}")]
    TooManyInputs { got: usize, max: usize },
    #[error("netlist and graph disagree on the number of inputs or outputs")]
    ShapeMismatch,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AigGraph {
    kinds: Vec<NodeKind>,
    fanins: Vec<[u32; 2]>,
    fanouts: Vec<Vec<u32>>,
    candidate: Vec<bool>,
    origin: Vec<Option<u32>>,
    pi_source: Vec<Option<PiSource>>,
    pis: Vec<NodeId>,
    n_original_pis: usize,
    n_pseudo: usize,
    outputs: Vec<NodeId>,
    ops: Vec<NodeId>,
    observed: Vec<bool>,
    level: Vec<u32>,
    topo: Vec<u32>,
    inserted: Vec<(NodeId, TpType)>,
    gate_nodes: Vec<NodeId>,
    original_node_count: usize,
    original_gate_count: usize,
    edge_count: usize,
}

impl AigGraph {
    fn empty() -> AigGraph {
        AigGraph {
            kinds: Vec::new(),
            fanins: Vec::new(),
            fanouts: Vec::new(),
            candidate: Vec::new(),
            origin: Vec::new(),
            pi_source: Vec::new(),
            pis: Vec::new(),
            n_original_pis: 0,
            n_pseudo: 0,
            outputs: Vec::new(),
            ops: Vec::new(),
            observed: Vec::new(),
            level: Vec::new(),
            topo: Vec::new(),
            inserted: Vec::new(),
            gate_nodes: Vec::new(),
            original_node_count: 0,
            original_gate_count: 0,
            edge_count: 0,
        }
    }

    fn push(&mut self, kind: NodeKind, fanins: [u32; 2]) -> u32 {
        let id = self.kinds.len() as u32;
        self.kinds.push(kind);
        self.fanins.push(fanins);
        self.fanouts.push(Vec::new());
        self.candidate.push(false);
        self.origin.push(None);
        self.pi_source.push(None);
        self.observed.push(false);
        let mut lvl = 0;
        for &f in &fanins[..kind.arity()] {
            if self.fanouts[f as usize].last() != Some(&id) {
                self.fanouts[f as usize].push(id);
            }
            lvl = lvl.max(self.level[f as usize] + 1);
            self.edge_count += 1;
        }
        self.level.push(lvl);
        id
    }

    fn not(&mut self, a: u32) -> u32 {
        self.push(NodeKind::Not, [a, NONE])
    }

    fn and(&mut self, a: u32, b: u32) -> u32 {
        self.push(NodeKind::And, [a, b])
    }

    fn and_tree(&mut self, lits: &[u32]) -> u32 {
        match lits.len() {
            1 => lits[0],
            n => {
                let (l, r) = lits.split_at(n / 2);
                let a = self.and_tree(l);
                let b = self.and_tree(r);
                self.and(a, b)
            }
        }
    }

    fn or_of(&mut self, lits: &[u32]) -> u32 {
        let inv: Vec<u32> = lits.iter().map(|&l| self.not(l)).collect();
        let a = self.and_tree(&inv);
        self.not(a)
    }

    fn xor2(&mut self, a: u32, b: u32) -> u32 {
        let nb = self.not(b);
        let t1 = self.and(a, nb);
        let t1n = self.not(t1);
        let na = self.not(a);
        let t2 = self.and(na, b);
        let t2n = self.not(t2);
        let both = self.and(t1n, t2n);
        self.not(both)
    }

    fn xor_tree(&mut self, lits: &[u32]) -> u32 {
        match lits.len() {
            1 => lits[0],
            n => {
                let (l, r) = lits.split_at(n / 2);
                let a = self.xor_tree(l);
                let b = self.xor_tree(r);
                self.xor2(a, b)
            }
        }
    }

    /// Maps every gate to a fixed And-Inverter decomposition without any
    /// optimization. Wide gates become balanced binary trees. Exactly one
    /// node per logic gate is marked as a candidate.
    pub fn from_netlist(n: &Netlist) -> AigGraph {
        let mut g = AigGraph::empty();
        let mut node_of = vec![NONE; n.gates().len()];
        for (k, &pi) in n.primary_inputs().iter().enumerate() {
            let id = g.push(NodeKind::Pi, [NONE, NONE]);
            g.origin[id as usize] = Some(pi as u32);
            g.pi_source[id as usize] = Some(PiSource::Original(k as u32));
            g.pis.push(NodeId(id));
            node_of[pi] = id;
        }
        g.n_original_pis = n.primary_inputs().len();
        for gid in n.topo_order() {
            let gate = n.gate(gid);
            if gate.kind == GateKind::Input {
                continue;
            }
            let ins: Vec<u32> = gate.fanins.iter().map(|&f| node_of[f]).collect();
            let out = match gate.kind {
                GateKind::Input => unreachable!(),
                GateKind::And => g.and_tree(&ins),
                GateKind::Nand => {
                    let a = g.and_tree(&ins);
                    g.not(a)
                }
                GateKind::Or => g.or_of(&ins),
                GateKind::Nor => {
                    let o = g.or_of(&ins);
                    g.not(o)
                }
                GateKind::Not => g.not(ins[0]),
                GateKind::Buf => {
                    let a = g.not(ins[0]);
                    g.not(a)
                }
                GateKind::Xor => g.xor_tree(&ins),
                GateKind::Xnor => {
                    let x = g.xor_tree(&ins);
                    g.not(x)
                }
            };
            g.candidate[out as usize] = true;
            g.origin[out as usize] = Some(gid as u32);
            node_of[gid] = out;
        }
        g.gate_nodes = node_of.into_iter().map(NodeId).collect();
        for &po in n.primary_outputs() {
            let v = g.gate_nodes[po];
            g.outputs.push(v);
            g.observed[v.index()] = true;
        }
        g.original_node_count = g.kinds.len();
        g.original_gate_count = n.logic_gate_count();
        g.rebuild_topo();
        g
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn kind(&self, v: NodeId) -> NodeKind {
        self.kinds[v.index()]
    }

    pub fn fanins(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let k = self.kinds[v.index()].arity();
        self.fanins[v.index()][..k].iter().map(|&f| NodeId(f))
    }

    #[inline]
    pub(crate) fn fanin_raw(&self, v: usize) -> &[u32] {
        &self.fanins[v][..self.kinds[v].arity()]
    }

    pub fn fanouts(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.fanouts[v.index()].iter().map(|&f| NodeId(f))
    }

    #[inline]
    pub(crate) fn fanout_raw(&self, v: usize) -> &[u32] {
        &self.fanouts[v]
    }

    pub fn is_candidate(&self, v: NodeId) -> bool {
        self.candidate[v.index()]
    }

    pub fn origin(&self, v: NodeId) -> Option<usize> {
        self.origin[v.index()].map(|o| o as usize)
    }

    pub fn pi_source(&self, v: NodeId) -> Option<PiSource> {
        self.pi_source[v.index()]
    }

    /// True for primary inputs of the original netlist.
    pub fn is_original_pi(&self, v: NodeId) -> bool {
        matches!(self.pi_source[v.index()], Some(PiSource::Original(_)))
    }

    /// Positions where a test point may be placed: candidates, plus original
    /// primary inputs (observation points only).
    pub fn is_tp_site(&self, v: NodeId) -> bool {
        self.candidate[v.index()] || self.is_original_pi(v)
    }

    /// All primary inputs, original ones first, then control-point inputs in
    /// insertion order.
    pub fn inputs(&self) -> &[NodeId] {
        &self.pis
    }

    pub fn original_input_count(&self) -> usize {
        self.n_original_pis
    }

    pub fn pseudo_input_count(&self) -> usize {
        self.n_pseudo
    }

    /// Primary outputs, in netlist order (rewired through control points).
    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    /// Inserted observation points, in insertion order.
    pub fn observation_points(&self) -> &[NodeId] {
        &self.ops
    }

    pub fn is_observed(&self, v: NodeId) -> bool {
        self.observed[v.index()]
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    /// Observed nodes: outputs then observation points, deduplicated.
    pub fn observed_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::new();
        for &v in self.outputs.iter().chain(self.ops.iter()) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn level(&self, v: NodeId) -> u32 {
        self.level[v.index()]
    }

    pub fn levels(&self) -> &[u32] {
        &self.level
    }

    /// Cached topological order, sorted by (level, id).
    pub fn topo_order(&self) -> &[u32] {
        &self.topo
    }

    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.kinds.len() as u32).map(NodeId).filter(|&v| self.candidate[v.index()])
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate.iter().filter(|&&c| c).count()
    }

    /// Node carrying the output of netlist gate `gate`.
    pub fn node_of_gate(&self, gate: usize) -> NodeId {
        self.gate_nodes[gate]
    }

    /// Nodes that existed right after conversion (before any test point).
    pub fn original_node_count(&self) -> usize {
        self.original_node_count
    }

    /// Logic gates of the source netlist (inputs excluded).
    pub fn original_gate_count(&self) -> usize {
        self.original_gate_count
    }

    /// Test points inserted so far, in order.
    pub fn inserted(&self) -> &[(NodeId, TpType)] {
        &self.inserted
    }

    pub fn has_tp(&self, v: NodeId, tp: TpType) -> bool {
        self.inserted.contains(&(v, tp))
    }

    fn rebuild_topo(&mut self) {
        let mut order: Vec<u32> = (0..self.kinds.len() as u32).collect();
        order.sort_by_key(|&v| (self.level[v as usize], v));
        self.topo = order;
    }

    /// Recomputes every forward level from scratch and refreshes the cached
    /// topological order.
    pub fn levelize(&mut self) {
        let n = self.kinds.len();
        let mut indeg: Vec<u32> = (0..n).map(|v| distinct(self.fanin_raw(v)) as u32).collect();
        let mut queue: Vec<u32> = (0..n as u32).filter(|&v| indeg[v as usize] == 0).collect();
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head] as usize;
            head += 1;
            self.level[v] = self
                .fanin_raw(v)
                .iter()
                .map(|&f| self.level[f as usize] + 1)
                .max()
                .unwrap_or(0);
            for i in 0..self.fanouts[v].len() {
                let o = self.fanouts[v][i] as usize;
                indeg[o] -= 1;
                if indeg[o] == 0 {
                    queue.push(o as u32);
                }
            }
        }
        debug_assert_eq!(queue.len(), n, "graph must be acyclic");
        self.rebuild_topo();
    }

    /// Transitive fanout cone of `root` (inclusive), in ascending topological
    /// position.
    pub fn fanout_cone(&self, root: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.kinds.len()];
        let mut stack = vec![root.0];
        seen[root.index()] = true;
        let mut cone = Vec::new();
        while let Some(v) = stack.pop() {
            cone.push(v);
            for &o in &self.fanouts[v as usize] {
                if !seen[o as usize] {
                    seen[o as usize] = true;
                    stack.push(o);
                }
            }
        }
        cone.sort_by_key(|&v| (self.level[v as usize], v));
        cone.into_iter().map(NodeId).collect()
    }

    /// Re-derives levels for `root`'s fanout cone only. Valid after an edit
    /// that changed the fanins of nodes inside that cone.
    fn relevel_from(&mut self, root: u32) {
        // Old positions of cone nodes remain a valid topological order among
        // them; the new nodes precede every node they feed.
        let mut seen = vec![false; self.kinds.len()];
        let mut stack = vec![root];
        seen[root as usize] = true;
        let mut cone = Vec::new();
        while let Some(v) = stack.pop() {
            cone.push(v);
            for &o in &self.fanouts[v as usize] {
                if !seen[o as usize] {
                    seen[o as usize] = true;
                    stack.push(o);
                }
            }
        }
        let mut pos = vec![0u32; self.kinds.len()];
        for (i, &v) in self.topo.iter().enumerate() {
            pos[v as usize] = i as u32;
        }
        let old_len = self.topo.len();
        cone.sort_by_key(|&v| if (v as usize) < old_len { (1, pos[v as usize], v) } else { (0, 0, v) });
        for v in cone {
            let v = v as usize;
            self.level[v] =
                self.fanin_raw(v).iter().map(|&f| self.level[f as usize] + 1).max().unwrap_or(0);
        }
        self.rebuild_topo();
    }

    /// Inserts a test point after `v`.
    ///
    /// AND-CP adds a control input `c` and `w = AND(v, c)`; OR-CP adds `c` and
    /// `w = NOT(AND(NOT v, NOT c))`. Every former fanout of `v`, and its output
    /// slot if it drives one, then reads `w`. OP marks `v` observed. Added
    /// nodes are never candidates.
    pub fn splice_after(&mut self, v: NodeId, tp: TpType) -> Result<(), AigError> {
        if v.index() >= self.kinds.len() || !self.is_tp_site(v) {
            return Err(AigError::NotACandidate(v));
        }
        if self.has_tp(v, tp) {
            return Err(AigError::DuplicateTp(v, tp));
        }
        match tp {
            TpType::Op => {
                if self.observed[v.index()] {
                    return Err(AigError::AlreadyObserved(v));
                }
                self.ops.push(v);
                self.observed[v.index()] = true;
            }
            TpType::AndCp | TpType::OrCp => {
                if !self.candidate[v.index()] {
                    return Err(AigError::CpOnInput(v));
                }
                let old_fanouts = core::mem::take(&mut self.fanouts[v.index()]);
                let c = self.push(NodeKind::Pi, [NONE, NONE]);
                self.pi_source[c as usize] =
                    Some(PiSource::Pseudo { index: self.n_pseudo as u32, tp });
                self.n_pseudo += 1;
                self.pis.push(NodeId(c));
                let w = match tp {
                    TpType::AndCp => self.and(v.0, c),
                    _ => {
                        let nv = self.not(v.0);
                        let nc = self.not(c);
                        let a = self.and(nv, nc);
                        self.not(a)
                    }
                };
                // `push` appended the new readers of v; the old fanouts move to w.
                for &o in &old_fanouts {
                    for slot in self.fanins[o as usize].iter_mut() {
                        if *slot == v.0 {
                            *slot = w;
                        }
                    }
                }
                let mut new_w_fanouts = old_fanouts;
                new_w_fanouts.dedup();
                self.fanouts[w as usize] = new_w_fanouts;
                for out in self.outputs.iter_mut() {
                    if *out == v {
                        *out = NodeId(w);
                        self.observed[w as usize] = true;
                    }
                }
                self.observed[v.index()] = self.ops.contains(&v);
                self.relevel_from(w);
            }
        }
        self.inserted.push((v, tp));
        Ok(())
    }

    /// Checks internal invariants; used by tests and the self-check command.
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        let n = self.kinds.len();
        let mut edges = 0;
        for v in 0..n {
            for &f in self.fanin_raw(v) {
                if f as usize >= n {
                    return Err("fanin out of range");
                }
                let count_in = self.fanin_raw(v).iter().filter(|&&x| x == f).count();
                let count_out = self.fanouts[f as usize].iter().filter(|&&x| x as usize == v).count();
                if count_out != 1 || count_in == 0 {
                    return Err("fanouts are not the transpose of fanins");
                }
                edges += 1;
            }
            for &o in &self.fanouts[v] {
                if !self.fanin_raw(o as usize).contains(&(v as u32)) {
                    return Err("fanouts are not the transpose of fanins");
                }
            }
            let expect = self.fanin_raw(v).iter().map(|&f| self.level[f as usize] + 1).max().unwrap_or(0);
            if self.level[v] != expect {
                return Err("stale level");
            }
            if self.candidate[v] && self.origin[v].is_none() {
                return Err("candidate without origin");
            }
            if matches!(self.pi_source[v], Some(PiSource::Pseudo { .. })) && self.candidate[v] {
                return Err("control input marked as candidate");
            }
        }
        if edges != self.edge_count {
            return Err("edge count out of sync");
        }
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in self.topo.iter().enumerate() {
            pos[v as usize] = i;
        }
        for v in 0..n {
            if self.fanin_raw(v).iter().any(|&f| pos[f as usize] >= pos[v]) {
                return Err("topological order violated");
            }
        }
        Ok(())
    }

    /// Evaluates all nodes over packed pattern words. `input_words[k]` drives
    /// `inputs()[k]` and holds `words` words.
    pub fn eval_words(&self, input_words: &[&[u64]], words: usize) -> Vec<u64> {
        let mut val = vec![0u64; self.kinds.len() * words];
        for (k, &pi) in self.pis.iter().enumerate() {
            val[pi.index() * words..(pi.index() + 1) * words].copy_from_slice(&input_words[k][..words]);
        }
        for &v in &self.topo {
            let v = v as usize;
            match self.kinds[v] {
                NodeKind::Pi => {}
                NodeKind::Not => {
                    let a = self.fanins[v][0] as usize;
                    for w in 0..words {
                        val[v * words + w] = !val[a * words + w];
                    }
                }
                NodeKind::And => {
                    let [a, b] = self.fanins[v];
                    let (a, b) = (a as usize, b as usize);
                    for w in 0..words {
                        val[v * words + w] = val[a * words + w] & val[b * words + w];
                    }
                }
            }
        }
        val
    }

    #[cfg(test)]
    pub(crate) fn set_fanin_for_test(&mut self, v: NodeId, slot: usize, f: NodeId) {
        let old = self.fanins[v.index()][slot];
        self.fanins[v.index()][slot] = f.0;
        self.fanouts[old as usize].retain(|&x| x != v.0);
        self.fanouts[f.index()].push(v.0);
        self.levelize();
    }
}

/// Outcome of an exhaustive equivalence check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// Original primary input values (netlist input order) exposing a mismatch.
    pub counterexample: Option<Vec<bool>>,
}

pub const DEFAULT_MAX_EQUIV_INPUTS: usize = 16;

/// Exhaustively compares every primary output of `n` against `g` over all
/// assignments of the original inputs. Control-point inputs are held at their
/// non-controlling value (1 for AND-CP, 0 for OR-CP), i.e. functional mode.
pub fn check_equivalence(n: &Netlist, g: &AigGraph, max_pis: usize) -> Result<EquivalenceReport, AigError> {
    let k = n.primary_inputs().len();
    if k > max_pis {
        return Err(AigError::TooManyInputs { got: k, max: max_pis });
    }
    if g.original_input_count() != k || g.outputs().len() != n.primary_outputs().len() {
        return Err(AigError::ShapeMismatch);
    }
    let total: u64 = 1u64 << k;
    let words = total.div_ceil(64) as usize;
    let mut rows: Vec<Vec<u64>> = vec![vec![0u64; words]; g.inputs().len()];
    for (i, row) in rows.iter_mut().enumerate().take(k) {
        for p in 0..total {
            if (p >> i) & 1 == 1 {
                row[(p / 64) as usize] |= 1 << (p % 64);
            }
        }
    }
    for (slot, &pi) in g.inputs().iter().enumerate().skip(k) {
        if let Some(PiSource::Pseudo { tp: TpType::AndCp, .. }) = g.pi_source(pi) {
            rows[slot].iter_mut().for_each(|w| *w = !0);
        }
    }
    let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
    let aig_vals = g.eval_words(&refs, words);
    for w in 0..words {
        let in_words: Vec<u64> = rows[..k].iter().map(|r| r[w]).collect();
        let net_vals = n.eval_words(&in_words);
        let valid = if (w + 1) * 64 <= total as usize { !0u64 } else { (1u64 << (total % 64)) - 1 };
        for (po_idx, &po) in n.primary_outputs().iter().enumerate() {
            let a = net_vals[po];
            let b = aig_vals[g.outputs()[po_idx].index() * words + w];
            let diff = (a ^ b) & valid;
            if diff != 0 {
                let p = (w as u64) * 64 + diff.trailing_zeros() as u64;
                let cex = (0..k).map(|i| (p >> i) & 1 == 1).collect();
                return Ok(EquivalenceReport { equivalent: false, counterexample: Some(cex) });
            }
        }
    }
    Ok(EquivalenceReport { equivalent: true, counterexample: None })
}

/// Number of distinct entries in a fanin slice (at most two).
fn distinct(fi: &[u32]) -> usize {
    match fi {
        [a, b] if a == b => 1,
        _ => fi.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{random_circuit, Gate};
    use alloc::string::ToString;

    fn net(defs: &[(&str, GateKind, &[usize])], outs: &[usize]) -> Netlist {
        let gates = defs
            .iter()
            .enumerate()
            .map(|(i, (l, k, f))| Gate { id: i, label: l.to_string(), kind: *k, fanins: f.to_vec() })
            .collect();
        Netlist::new("t", gates, outs.to_vec()).unwrap()
    }

    fn two_input(kind: GateKind) -> Netlist {
        net(&[("a", GateKind::Input, &[]), ("b", GateKind::Input, &[]), ("y", kind, &[0, 1])], &[2])
    }

    #[test]
    fn or_decomposes_into_four_nodes() {
        let g = AigGraph::from_netlist(&two_input(GateKind::Or));
        assert_eq!(g.node_count(), 2 + 4);
        assert_eq!(g.candidates().collect::<Vec<_>>(), vec![NodeId(5)]);
        assert_eq!(g.kind(NodeId(5)), NodeKind::Not);
    }

    #[test]
    fn xor_decomposes_into_eight_nodes() {
        let g = AigGraph::from_netlist(&two_input(GateKind::Xor));
        assert_eq!(g.node_count(), 2 + 8);
        assert_eq!(g.candidate_count(), 1);
        assert!(g.is_candidate(NodeId(9)));
    }

    #[test]
    fn five_gate_circuit_has_five_candidates() {
        // Two OR gates and an XOR create masked decomposition nodes; only the
        // gate outputs are candidates.
        let n = net(
            &[
                ("x1", GateKind::Input, &[]),
                ("x2", GateKind::Input, &[]),
                ("x3", GateKind::Input, &[]),
                ("A", GateKind::And, &[0, 1]),
                ("B", GateKind::Or, &[1, 2]),
                ("C", GateKind::Xor, &[3, 4]),
                ("D", GateKind::Not, &[5]),
                ("E", GateKind::Or, &[5, 4]),
            ],
            &[6, 7],
        );
        let g = AigGraph::from_netlist(&n);
        assert_eq!(g.candidate_count(), 5);
        assert!(g.node_count() > 8);
        for v in g.candidates() {
            assert!(g.origin(v).is_some());
        }
    }

    #[test]
    fn conversion_is_equivalent_for_every_kind() {
        for kind in [
            GateKind::And,
            GateKind::Nand,
            GateKind::Or,
            GateKind::Nor,
            GateKind::Xor,
            GateKind::Xnor,
        ] {
            let n = net(
                &[
                    ("a", GateKind::Input, &[]),
                    ("b", GateKind::Input, &[]),
                    ("c", GateKind::Input, &[]),
                    ("y", kind, &[0, 1, 2]),
                    ("z", kind, &[0, 1]),
                ],
                &[3, 4],
            );
            let g = AigGraph::from_netlist(&n);
            assert!(check_equivalence(&n, &g, 16).unwrap().equivalent, "{kind}");
        }
        let n = net(
            &[("a", GateKind::Input, &[]), ("y", GateKind::Not, &[0]), ("z", GateKind::Buf, &[0])],
            &[1, 2],
        );
        let g = AigGraph::from_netlist(&n);
        assert_eq!(g.node_count(), 1 + 1 + 2);
        assert!(check_equivalence(&n, &g, 16).unwrap().equivalent);
    }

    #[test]
    fn dropped_inverter_is_caught() {
        let n = two_input(GateKind::Or);
        let mut g = AigGraph::from_netlist(&n);
        // node 4 = AND(NOT a, NOT b); bypass NOT a
        g.set_fanin_for_test(NodeId(4), 0, NodeId(0));
        let rep = check_equivalence(&n, &g, 16).unwrap();
        assert!(!rep.equivalent);
        let cex = rep.counterexample.unwrap();
        assert_eq!(cex.len(), 2);
        // mutated function is NOT(AND(a, NOT b)) = !a | b
        assert_ne!(cex[0] || cex[1], !cex[0] || cex[1]);
    }

    #[test]
    fn levels_of_simple_shapes() {
        let n = net(&[("a", GateKind::Input, &[])], &[0]);
        let g = AigGraph::from_netlist(&n);
        assert_eq!(g.levels(), &[0]);
        let n = net(
            &[("a", GateKind::Input, &[]), ("x", GateKind::Not, &[0]), ("y", GateKind::Not, &[1])],
            &[2],
        );
        let g = AigGraph::from_netlist(&n);
        assert_eq!(g.levels(), &[0, 1, 2]);
    }

    #[test]
    fn op_splice_keeps_structure() {
        let mut g = AigGraph::from_netlist(&random_circuit(3, 5, 20));
        let (nodes, edges) = (g.node_count(), g.edge_count());
        let v = g.candidates().find(|&v| !g.is_observed(v)).unwrap();
        let before = g.observed_nodes().len();
        g.splice_after(v, TpType::Op).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (nodes, edges));
        assert_eq!(g.observed_nodes().len(), before + 1);
        assert_eq!(g.splice_after(v, TpType::Op), Err(AigError::DuplicateTp(v, TpType::Op)));
    }

    #[test]
    fn and_cp_rewires_fanouts() {
        let mut g = AigGraph::from_netlist(&random_circuit(5, 6, 30));
        let v = g.candidates().find(|&v| g.fanouts(v).count() >= 2).unwrap();
        let old: Vec<NodeId> = g.fanouts(v).collect();
        let nodes = g.node_count();
        g.splice_after(v, TpType::AndCp).unwrap();
        assert_eq!(g.node_count(), nodes + 2);
        let w = NodeId(nodes as u32 + 1);
        assert_eq!(g.kind(w), NodeKind::And);
        assert_eq!(g.fanouts(v).collect::<Vec<_>>(), vec![w]);
        for o in old {
            assert!(g.fanins(o).any(|f| f == w));
            assert!(!g.fanins(o).any(|f| f == v));
        }
        g.check_invariants().unwrap();
        assert!(!g.is_candidate(w) && g.origin(w).is_none());
    }

    #[test]
    fn cp_on_input_is_rejected() {
        let mut g = AigGraph::from_netlist(&two_input(GateKind::And));
        assert_eq!(g.splice_after(NodeId(0), TpType::AndCp), Err(AigError::CpOnInput(NodeId(0))));
        assert!(g.splice_after(NodeId(0), TpType::Op).is_ok());
    }

    #[test]
    fn incremental_relevel_matches_full() {
        for seed in 0..20 {
            let mut g = AigGraph::from_netlist(&random_circuit(seed, 6, 40));
            let cands: Vec<NodeId> = g.candidates().collect();
            let v = cands[(seed as usize * 7) % cands.len()];
            let before = g.levels().to_vec();
            let tp = if seed % 2 == 0 { TpType::AndCp } else { TpType::OrCp };
            g.splice_after(v, tp).unwrap();
            let mut full = g.clone();
            full.levelize();
            assert_eq!(g.levels(), full.levels());
            assert_eq!(g.topo_order(), full.topo_order());
            let w = NodeId(g.node_count() as u32 - 1);
            let cone = g.fanout_cone(w);
            for (i, &l) in before.iter().enumerate() {
                if l != g.levels()[i] {
                    assert!(cone.contains(&NodeId(i as u32)), "level changed outside cone");
                }
            }
            g.check_invariants().unwrap();
        }
    }

    #[test]
    fn cp_in_functional_mode_is_identity() {
        for seed in 0..15 {
            let n = random_circuit(seed, 7, 30);
            let mut g = AigGraph::from_netlist(&n);
            let cands: Vec<NodeId> = g.candidates().collect();
            for (i, tp) in [TpType::OrCp, TpType::AndCp, TpType::OrCp].into_iter().enumerate() {
                let v = cands[(seed as usize * 5 + i * 11) % cands.len()];
                if g.has_tp(v, tp) {
                    continue;
                }
                g.splice_after(v, tp).unwrap();
            }
            g.check_invariants().unwrap();
            assert!(check_equivalence(&n, &g, 16).unwrap().equivalent);
        }
    }
}
