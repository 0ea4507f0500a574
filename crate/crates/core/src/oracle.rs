// SPDX-License-Identifier: Apache-2.0
//! Slow reference implementations used to cross-check the fast paths.
//!
//! Everything here evaluates one pattern at a time with plain booleans and
//! derives its own topological order, so it shares no code with the
//! word-parallel simulator it checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::aig::{AigGraph, NodeId, NodeKind, PiSource};
use crate::sim::{FaultSet, PatternSet, Polarity};

fn kahn_order(g: &AigGraph) -> Vec<usize> {
    let n = g.node_count();
    let mut indeg: Vec<usize> = (0..n)
        .map(|v| {
            let mut fi: Vec<NodeId> = g.fanins(NodeId(v as u32)).collect();
            fi.dedup();
            fi.len()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for o in g.fanouts(NodeId(v as u32)) {
            indeg[o.index()] -= 1;
            if indeg[o.index()] == 0 {
                order.push(o.index());
            }
        }
    }
    order
}

/// Evaluates one pattern; `forced` pins a node to a constant.
pub fn scalar_eval(
    g: &AigGraph,
    order: &[usize],
    input: impl Fn(PiSource) -> bool,
    forced: Option<(NodeId, bool)>,
) -> Vec<bool> {
    let mut val = vec![false; g.node_count()];
    for &v in order {
        let id = NodeId(v as u32);
        let mut fi = g.fanins(id);
        val[v] = match g.kind(id) {
            NodeKind::Pi => input(g.pi_source(id).unwrap()),
            NodeKind::Not => !val[fi.next().unwrap().index()],
            NodeKind::And => {
                let a = fi.next().unwrap().index();
                let b = fi.next().unwrap().index();
                val[a] && val[b]
            }
        };
        if let Some((site, c)) = forced {
            if site == id {
                val[v] = c;
            }
        }
    }
    val
}

/// Per-node probability of logic 1, one pattern at a time.
pub fn naive_probabilities(g: &AigGraph, p: &PatternSet) -> Vec<f64> {
    let order = kahn_order(g);
    let mut ones = vec![0usize; g.node_count()];
    for j in 0..p.n_patterns() {
        let val = scalar_eval(g, &order, |s| p.bit(s, j).unwrap(), None);
        for (o, &b) in ones.iter_mut().zip(&val) {
            *o += b as usize;
        }
    }
    ones.into_iter().map(|c| c as f64 / p.n_patterns() as f64).collect()
}

/// Exact signal probabilities by enumerating every input assignment
/// (control inputs included), each input an independent fair coin.
pub fn exact_probabilities(g: &AigGraph) -> Vec<f64> {
    let k = g.inputs().len();
    assert!(k <= 20, "exhaustive enumeration limited to 20 inputs");
    let order = kahn_order(g);
    let slot: Vec<(PiSource, usize)> =
        g.inputs().iter().enumerate().map(|(i, &v)| (g.pi_source(v).unwrap(), i)).collect();
    let mut ones = vec![0u64; g.node_count()];
    for j in 0u64..(1 << k) {
        let val = scalar_eval(
            g,
            &order,
            |s| {
                let i = slot.iter().find(|(x, _)| *x == s).unwrap().1;
                (j >> i) & 1 == 1
            },
            None,
        );
        for (o, &b) in ones.iter_mut().zip(&val) {
            *o += b as u64;
        }
    }
    ones.into_iter().map(|c| c as f64 / (1u64 << k) as f64).collect()
}

/// Detection flags by fully re-simulating the circuit for every fault and
/// every pattern.
pub fn naive_fault_flags(g: &AigGraph, f: &FaultSet, p: &PatternSet) -> Vec<bool> {
    let order = kahn_order(g);
    let observed = g.observed_nodes();
    let goods: Vec<Vec<bool>> =
        (0..p.n_patterns()).map(|j| scalar_eval(g, &order, |s| p.bit(s, j).unwrap(), None)).collect();
    f.faults()
        .iter()
        .map(|fault| {
            let c = fault.polarity == Polarity::Sa1;
            (0..p.n_patterns()).any(|j| {
                let bad = scalar_eval(g, &order, |s| p.bit(s, j).unwrap(), Some((fault.site, c)));
                observed.iter().any(|o| bad[o.index()] != goods[j][o.index()])
            })
        })
        .collect()
}
