// SPDX-License-Identifier: Apache-2.0
//! Gate-level combinational netlists.
//!
//! A [`Netlist`] is the validated, in-memory form of a `.bench` circuit. Gate
//! ids are positions in [`Netlist::gates`]; primary inputs are ordinary gates
//! of kind [`GateKind::Input`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Cell kinds understood by the `.bench` dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Input,
    And,
    Nand,
    Or,
    Nor,
    Not,
    Buf,
    Xor,
    Xnor,
}

impl GateKind {
    /// Parses a gate keyword (case-insensitive). `BUFF` is the ISCAS spelling of `BUF`.
    pub fn from_keyword(s: &str) -> Option<GateKind> {
        let mut buf = [0u8; 8];
        if s.len() > buf.len() {
            return None;
        }
        for (dst, src) in buf.iter_mut().zip(s.bytes()) {
            *dst = src.to_ascii_uppercase();
        }
        Some(match &buf[..s.len()] {
            b"INPUT" => GateKind::Input,
            b"AND" => GateKind::And,
            b"NAND" => GateKind::Nand,
            b"OR" => GateKind::Or,
            b"NOR" => GateKind::Nor,
            b"NOT" | b"INV" => GateKind::Not,
            b"BUF" | b"BUFF" => GateKind::Buf,
            b"XOR" => GateKind::Xor,
            b"XNOR" => GateKind::Xnor,
            _ => return None,
        })
    }

    /// Canonical keyword used when writing `.bench` text.
    pub fn keyword(self) -> &'static str {
        match self {
            GateKind::Input => "INPUT",
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUFF",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
        }
    }

    pub fn arity_ok(self, n: usize) -> bool {
        match self {
            GateKind::Input => n == 0,
            GateKind::Not | GateKind::Buf => n == 1,
            _ => n >= 2,
        }
    }

    /// Evaluates the gate over packed pattern words.
    pub fn eval_words(self, fanins: &[u64]) -> u64 {
        match self {
            GateKind::Input => 0,
            GateKind::Buf => fanins[0],
            GateKind::Not => !fanins[0],
            GateKind::And => fanins.iter().fold(!0, |a, &b| a & b),
            GateKind::Nand => !fanins.iter().fold(!0, |a, &b| a & b),
            GateKind::Or => fanins.iter().fold(0, |a, &b| a | b),
            GateKind::Nor => !fanins.iter().fold(0, |a, &b| a | b),
            GateKind::Xor => fanins.iter().fold(0, |a, &b| a ^ b),
            GateKind::Xnor => !fanins.iter().fold(0, |a, &b| a ^ b),
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub id: usize,
    pub label: String,
    pub kind: GateKind,
    pub fanins: Vec<usize>,
}

/// Validation failures. `gate` is the index of the offending gate in the
/// candidate gate list so callers can map it back to a source line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetlistError {
    #[error("unknown gate kind `{token}`")]
    UnknownGateKind { gate: usize, token: String },
    #[error("duplicate label `{label}`")]
    DuplicateLabel { gate: usize, label: String },
    #[error("gate `{label}` reads undefined signal `{token}`")]
    UndefinedFanin { gate: usize, label: String, token: String },
    #[error("combinational cycle through `{label}`")]
    CycleDetected { gate: usize, label: String },
    #[error("gate `{label}` of kind {kind} has {got} fanins")]
    ArityViolation { gate: usize, label: String, kind: GateKind, got: usize },
    #[error("output `{token}` does not name a gate")]
    UndefinedOutput { index: usize, token: String },
    #[error("sequential element `{label}`: combinational circuits only")]
    SequentialNotSupported { gate: usize, label: String },
}

/// A validated combinational netlist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    gates: Vec<Gate>,
    primary_inputs: Vec<usize>,
    primary_outputs: Vec<usize>,
}

impl Netlist {
    /// Builds and validates a netlist. Gate ids must equal their positions.
    /// Primary inputs are the `Input` gates in id order.
    pub fn new(
        name: impl Into<String>,
        gates: Vec<Gate>,
        primary_outputs: Vec<usize>,
    ) -> Result<Netlist, NetlistError> {
        let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, g) in gates.iter().enumerate() {
            debug_assert_eq!(g.id, i, "gate ids must be positional");
            if labels.insert(g.label.as_str(), i).is_some() {
                return Err(NetlistError::DuplicateLabel { gate: i, label: g.label.clone() });
            }
        }
        for (i, g) in gates.iter().enumerate() {
            if !g.kind.arity_ok(g.fanins.len()) {
                return Err(NetlistError::ArityViolation {
                    gate: i,
                    label: g.label.clone(),
                    kind: g.kind,
                    got: g.fanins.len(),
                });
            }
            if let Some(&bad) = g.fanins.iter().find(|&&f| f >= gates.len()) {
                return Err(NetlistError::UndefinedFanin {
                    gate: i,
                    label: g.label.clone(),
                    token: bad.to_string(),
                });
            }
        }
        for (k, &po) in primary_outputs.iter().enumerate() {
            if po >= gates.len() {
                return Err(NetlistError::UndefinedOutput { index: k, token: po.to_string() });
            }
        }
        if let Some(gate) = find_cycle(&gates) {
            return Err(NetlistError::CycleDetected { gate, label: gates[gate].label.clone() });
        }
        let primary_inputs = gates
            .iter()
            .filter(|g| g.kind == GateKind::Input)
            .map(|g| g.id)
            .collect();
        Ok(Netlist { name: name.into(), gates, primary_inputs, primary_outputs })
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate(&self, id: usize) -> &Gate {
        &self.gates[id]
    }

    pub fn primary_inputs(&self) -> &[usize] {
        &self.primary_inputs
    }

    pub fn primary_outputs(&self) -> &[usize] {
        &self.primary_outputs
    }

    /// Number of logic gates, excluding primary inputs.
    pub fn logic_gate_count(&self) -> usize {
        self.gates.len() - self.primary_inputs.len()
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.gates.iter().position(|g| g.label == label)
    }

    /// Stable topological order of all gates: among ready gates the smallest
    /// id goes first.
    pub fn topo_order(&self) -> Vec<usize> {
        topo_order(&self.gates).expect("validated netlist is acyclic")
    }

    /// Structural equality by labels: same inputs and outputs in order and the
    /// same kind and fanin labels for every gate. Gate ids may differ.
    pub fn structurally_eq(&self, other: &Netlist) -> bool {
        let labels = |n: &Netlist, ids: &[usize]| -> Vec<String> {
            ids.iter().map(|&i| n.gates[i].label.clone()).collect()
        };
        if self.gates.len() != other.gates.len()
            || labels(self, &self.primary_inputs) != labels(other, &other.primary_inputs)
            || labels(self, &self.primary_outputs) != labels(other, &other.primary_outputs)
        {
            return false;
        }
        self.gates.iter().all(|g| match other.find(&g.label) {
            Some(j) => {
                let h = &other.gates[j];
                h.kind == g.kind && labels(self, &g.fanins) == labels(other, &h.fanins)
            }
            None => false,
        })
    }

    /// Evaluates every gate over packed words; `inputs[k]` drives the k-th
    /// primary input. Returns one word per gate.
    pub fn eval_words(&self, inputs: &[u64]) -> Vec<u64> {
        let mut val = vec![0u64; self.gates.len()];
        for (k, &pi) in self.primary_inputs.iter().enumerate() {
            val[pi] = inputs[k];
        }
        let mut buf = Vec::new();
        for id in self.topo_order() {
            let g = &self.gates[id];
            if g.kind == GateKind::Input {
                continue;
            }
            buf.clear();
            buf.extend(g.fanins.iter().map(|&f| val[f]));
            val[id] = g.kind.eval_words(&buf);
        }
        val
    }
}

fn topo_order(gates: &[Gate]) -> Option<Vec<usize>> {
    let n = gates.len();
    let mut indeg = vec![0usize; n];
    let mut fanouts: Vec<Vec<usize>> = vec![Vec::new(); n];
    for g in gates {
        for &f in &g.fanins {
            indeg[g.id] += 1;
            fanouts[f].push(g.id);
        }
    }
    let mut ready: alloc::collections::BinaryHeap<core::cmp::Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(core::cmp::Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(core::cmp::Reverse(i)) = ready.pop() {
        order.push(i);
        for &o in &fanouts[i] {
            indeg[o] -= 1;
            if indeg[o] == 0 {
                ready.push(core::cmp::Reverse(o));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Returns some gate lying on a cycle, if any.
fn find_cycle(gates: &[Gate]) -> Option<usize> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; gates.len()];
    for root in 0..gates.len() {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&f) = gates[v].fanins.get(*next) {
                *next += 1;
                match state[f] {
                    0 => {
                        state[f] = 1;
                        stack.push((f, 0));
                    }
                    1 => return Some(f),
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Generates a random combinational circuit. Deterministic in `seed`.
///
/// Fanins are drawn from earlier nodes with a bias toward recent ones, which
/// yields deep cones; wide AND/OR-family gates produce random-pattern
/// resistant logic. Nodes without fanout are promoted to primary outputs.
pub fn random_circuit(seed: u64, n_pis: usize, n_gates: usize) -> Netlist {
    assert!(n_pis >= 1 && n_gates >= 1, "random_circuit needs n_pis >= 1 and n_gates >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gates: Vec<Gate> = Vec::with_capacity(n_pis + n_gates);
    for i in 0..n_pis {
        gates.push(Gate { id: i, label: alloc::format!("i{i}"), kind: GateKind::Input, fanins: vec![] });
    }
    let mut unused_pis: Vec<usize> = (0..n_pis).collect();
    for k in 0..n_gates {
        let id = n_pis + k;
        let kind = match rng.gen_range(0..100u32) {
            0..=21 => GateKind::And,
            22..=37 => GateKind::Nand,
            38..=55 => GateKind::Or,
            56..=69 => GateKind::Nor,
            70..=77 => GateKind::Xor,
            78..=81 => GateKind::Xnor,
            82..=95 => GateKind::Not,
            _ => GateKind::Buf,
        };
        let arity = match kind {
            GateKind::Not | GateKind::Buf => 1,
            GateKind::Xor | GateKind::Xnor => 2,
            _ => match rng.gen_range(0..10u32) {
                0..=4 => 2,
                5..=7 => 3,
                8 => 4,
                _ => rng.gen_range(5..=6),
            },
        };
        let mut fanins: Vec<usize> = Vec::with_capacity(arity);
        while fanins.len() < arity.min(id) {
            let f = if !unused_pis.is_empty() && rng.gen_bool(0.35) {
                unused_pis[rng.gen_range(0..unused_pis.len())]
            } else if rng.gen_bool(0.15) {
                rng.gen_range(0..n_pis)
            } else if rng.gen_bool(0.5) {
                let window = 12.min(id);
                id - 1 - rng.gen_range(0..window)
            } else {
                rng.gen_range(0..id)
            };
            if fanins.contains(&f) {
                continue;
            }
            if let Some(p) = unused_pis.iter().position(|&u| u == f) {
                unused_pis.swap_remove(p);
            }
            fanins.push(f);
        }
        let kind = match (kind, fanins.len()) {
            (GateKind::And | GateKind::Or | GateKind::Xor, 1) => GateKind::Buf,
            (GateKind::Nand | GateKind::Nor | GateKind::Xnor, 1) => GateKind::Not,
            (k, _) => k,
        };
        gates.push(Gate { id, label: alloc::format!("g{k}"), kind, fanins });
    }
    let mut has_fanout = vec![false; gates.len()];
    for g in &gates {
        for &f in &g.fanins {
            has_fanout[f] = true;
        }
    }
    let outputs: Vec<usize> = (0..gates.len()).filter(|&i| !has_fanout[i]).collect();
    Netlist::new(alloc::format!("rand_{seed}_{n_pis}_{n_gates}"), gates, outputs)
        .expect("generated netlist is valid by construction")
}

/// Generates a random fanout-free circuit: every input and gate output feeds
/// exactly one gate, and the single root is the only primary output. Only
/// AND/OR-family gates, inverters and buffers are used, so the AIG stays a
/// tree as well. Deterministic in `seed`.
pub fn random_tree(seed: u64, n_pis: usize) -> Netlist {
    assert!(n_pis >= 1, "random_tree needs n_pis >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gates: Vec<Gate> = (0..n_pis)
        .map(|i| Gate { id: i, label: alloc::format!("i{i}"), kind: GateKind::Input, fanins: vec![] })
        .collect();
    let mut open: Vec<usize> = (0..n_pis).collect();
    let push = |gates: &mut Vec<Gate>, kind: GateKind, fanins: Vec<usize>| -> usize {
        let id = gates.len();
        gates.push(Gate { id, label: alloc::format!("g{}", id - n_pis), kind, fanins });
        id
    };
    loop {
        if rng.gen_bool(0.2) || open.len() == 1 && gates.len() == n_pis {
            let k = rng.gen_range(0..open.len());
            let kind = if rng.gen_bool(0.7) { GateKind::Not } else { GateKind::Buf };
            open[k] = push(&mut gates, kind, vec![open[k]]);
        }
        if open.len() == 1 {
            break;
        }
        let arity = rng.gen_range(2..=open.len().min(4));
        let mut fanins = Vec::with_capacity(arity);
        for _ in 0..arity {
            fanins.push(open.swap_remove(rng.gen_range(0..open.len())));
        }
        let kind = [GateKind::And, GateKind::Nand, GateKind::Or, GateKind::Nor][rng.gen_range(0..4)];
        let id = push(&mut gates, kind, fanins);
        open.push(id);
    }
    let root = open[0];
    Netlist::new(alloc::format!("tree_{seed}_{n_pis}"), gates, vec![root]).expect("generated tree is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(id: usize, label: &str, kind: GateKind, fanins: &[usize]) -> Gate {
        Gate { id, label: label.into(), kind, fanins: fanins.to_vec() }
    }

    #[test]
    fn and_netlist_validates() {
        let n = Netlist::new(
            "t",
            vec![
                gate(0, "a", GateKind::Input, &[]),
                gate(1, "b", GateKind::Input, &[]),
                gate(2, "y", GateKind::And, &[0, 1]),
            ],
            vec![2],
        )
        .unwrap();
        assert_eq!(n.primary_inputs(), &[0, 1]);
        assert_eq!(n.logic_gate_count(), 1);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = Netlist::new(
            "t",
            vec![
                gate(0, "a", GateKind::Input, &[]),
                gate(1, "x", GateKind::And, &[0, 2]),
                gate(2, "y", GateKind::And, &[0, 1]),
            ],
            vec![2],
        )
        .unwrap_err();
        assert!(matches!(err, NetlistError::CycleDetected { .. }));
    }

    #[test]
    fn arity_is_checked() {
        let err = Netlist::new(
            "t",
            vec![gate(0, "a", GateKind::Input, &[]), gate(1, "y", GateKind::And, &[0])],
            vec![1],
        )
        .unwrap_err();
        assert!(matches!(err, NetlistError::ArityViolation { got: 1, .. }));
    }

    #[test]
    fn keywords_roundtrip() {
        for k in [
            GateKind::Input,
            GateKind::And,
            GateKind::Nand,
            GateKind::Or,
            GateKind::Nor,
            GateKind::Not,
            GateKind::Buf,
            GateKind::Xor,
            GateKind::Xnor,
        ] {
            assert_eq!(GateKind::from_keyword(k.keyword()), Some(k));
        }
        assert_eq!(GateKind::from_keyword("buf"), Some(GateKind::Buf));
        assert_eq!(GateKind::from_keyword("DFF"), None);
    }

    #[test]
    fn random_circuit_is_deterministic_and_acyclic() {
        let a = random_circuit(1, 4, 10);
        let b = random_circuit(1, 4, 10);
        assert_eq!(a, b);
        assert_eq!(a.topo_order().len(), a.gates().len());
        assert!(find_cycle(a.gates()).is_none());
        let mut reaches = vec![false; a.gates().len()];
        for &po in a.primary_outputs() {
            reaches[po] = true;
        }
        for &id in a.topo_order().iter().rev() {
            if reaches[id] {
                for &f in &a.gate(id).fanins {
                    reaches[f] = true;
                }
            }
        }
        assert!(reaches.iter().all(|&r| r), "every node reaches an output");
    }
}
