// SPDX-License-Identifier: Apache-2.0
//! Re-expresses test points as ordinary `.bench` gates.
//!
//! A control point on gate `x` adds `INPUT(tp_ctrl_k)` and a new gate that
//! takes over the label `x`; the original driver is renamed, so every reader
//! and primary output of `x` now sees the controlled value. An observation
//! point adds `tp_obs_k = BUFF(x)` and `OUTPUT(tp_obs_k)`.

use std::collections::HashSet;

use tpilab_core::aig::{AigError, AigGraph, TpType};
use tpilab_core::env::Action;
use tpilab_core::netlist::{Gate, GateKind, Netlist, NetlistError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InsertError {
    #[error("action {index} is illegal: {source}")]
    IllegalAction { index: usize, source: AigError },
    #[error("action {index} targets node {node}, which has no source gate")]
    NoSourceGate { index: usize, node: u32 },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// Labels assigned to one inserted test point.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InsertedTp {
    pub action: Action,
    /// Label of the gate the test point was placed on, as in the input file.
    pub gate: String,
    /// `tp_ctrl_k` for control points, `tp_obs_k` for observation points.
    pub port: String,
}

/// Post-insertion netlist together with the label mapping of every test point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub netlist: Netlist,
    pub points: Vec<InsertedTp>,
}

struct Labels(HashSet<String>);

impl Labels {
    fn fresh(&mut self, base: &str) -> String {
        let mut s = base.to_string();
        let mut k = 1;
        while self.0.contains(&s) {
            s = format!("{base}_{k}");
            k += 1;
        }
        self.0.insert(s.clone());
        s
    }
}

/// Applies `actions` (node ids of `AigGraph::from_netlist(n)`) to `n`.
pub fn insert_test_points(n: &Netlist, actions: &[Action]) -> Result<Insertion, InsertError> {
    let mut g = AigGraph::from_netlist(n);
    let mut gates: Vec<Gate> = n.gates().to_vec();
    let mut pos: Vec<usize> = n.primary_outputs().to_vec();
    let mut labels = Labels(gates.iter().map(|g| g.label.clone()).collect());
    let mut taps: HashSet<usize> = HashSet::new();
    let (mut n_ctrl, mut n_obs) = (0usize, 0usize);
    let mut points = Vec::with_capacity(actions.len());

    for (index, &a) in actions.iter().enumerate() {
        g.splice_after(a.node, a.tp_type).map_err(|source| InsertError::IllegalAction { index, source })?;
        let x = g.origin(a.node).ok_or(InsertError::NoSourceGate { index, node: a.node.0 })?;
        let site = n.gate(x).label.clone();
        let port = match a.tp_type {
            TpType::Op => {
                let port = labels.fresh(&format!("tp_obs_{n_obs}"));
                n_obs += 1;
                let b = gates.len();
                gates.push(Gate { id: b, label: port.clone(), kind: GateKind::Buf, fanins: vec![x] });
                pos.push(b);
                taps.insert(b);
                port
            }
            TpType::AndCp | TpType::OrCp => {
                let port = labels.fresh(&format!("tp_ctrl_{n_ctrl}"));
                let c = gates.len();
                gates.push(Gate { id: c, label: port.clone(), kind: GateKind::Input, fanins: vec![] });
                let w = gates.len();
                let kind = if a.tp_type == TpType::AndCp { GateKind::And } else { GateKind::Or };
                gates.push(Gate { id: w, label: String::new(), kind, fanins: vec![x, c] });
                for (j, gate) in gates.iter_mut().enumerate() {
                    if j == w || taps.contains(&j) {
                        continue;
                    }
                    for f in gate.fanins.iter_mut().filter(|f| **f == x) {
                        *f = w;
                    }
                }
                for p in pos.iter_mut().filter(|p| **p == x) {
                    *p = w;
                }
                let core = labels.fresh(&format!("{}_tp{n_ctrl}", gates[x].label));
                gates[w].label = std::mem::replace(&mut gates[x].label, core);
                n_ctrl += 1;
                port
            }
        };
        points.push(InsertedTp { action: a, gate: site, port });
    }
    let netlist = Netlist::new(n.name.clone(), gates, pos)?;
    Ok(Insertion { netlist, points })
}
