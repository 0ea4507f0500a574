// SPDX-License-Identifier: Apache-2.0
//! Machine-readable artifacts: JSON envelopes and CSV tables.
//!
//! Every JSON artifact is wrapped in an [`Envelope`] carrying the tool
//! version, the command and its fully resolved configuration. CSV files start
//! with one `#` line holding the same envelope without the result.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tpilab_core::aig::{AigGraph, NodeId, NodeKind};
use tpilab_core::cop::CopProfile;
use tpilab_core::env::Action;
use tpilab_core::netlist::Netlist;
use tpilab_core::sim::{CoverageReport, FaultSet};
use tpilab_core::trainer::{EpisodeLog, EvalTable};

pub const TOOL: &str = "tpilab";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub result: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(command: &str, config: Value, result: T) -> Envelope<T> {
        Envelope { tool: TOOL.into(), version: crate::VERSION.into(), command: command.into(), config, result }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifacts always serialize");
        s.push('\n');
        s
    }

    /// Single `#` line used as the first line of CSV and `.bench` artifacts.
    pub fn header_line(&self) -> String {
        let head = serde_json::json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "config": self.config,
        });
        format!("# {head}\n")
    }
}

pub fn kind_name(k: NodeKind) -> &'static str {
    match k {
        NodeKind::Pi => "PI",
        NodeKind::And => "AND",
        NodeKind::Not => "NOT",
    }
}

/// Label of the netlist gate a node stands for, if any.
pub fn gate_label(n: &Netlist, g: &AigGraph, v: NodeId) -> Option<String> {
    g.origin(v).map(|gid| n.gate(gid).label.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AigNodeEntry {
    pub id: u32,
    pub kind: String,
    pub fanins: Vec<u32>,
    pub level: u32,
    pub candidate: bool,
    /// Source gate label for primary inputs and candidate nodes.
    pub gate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AigDump {
    pub name: String,
    pub node_count: usize,
    pub edge_count: usize,
    pub candidate_count: usize,
    pub inputs: Vec<u32>,
    pub outputs: Vec<u32>,
    pub observation_points: Vec<u32>,
    pub nodes: Vec<AigNodeEntry>,
}

impl AigDump {
    pub fn new(n: &Netlist, g: &AigGraph) -> AigDump {
        let ids = |v: &[NodeId]| v.iter().map(|x| x.0).collect::<Vec<_>>();
        AigDump {
            name: n.name.clone(),
            node_count: g.node_count(),
            edge_count: g.edge_count(),
            candidate_count: g.candidate_count(),
            inputs: ids(g.inputs()),
            outputs: ids(g.outputs()),
            observation_points: ids(g.observation_points()),
            nodes: (0..g.node_count() as u32)
                .map(NodeId)
                .map(|v| AigNodeEntry {
                    id: v.0,
                    kind: kind_name(g.kind(v)).into(),
                    fanins: g.fanins(v).map(|f| f.0).collect(),
                    level: g.level(v),
                    candidate: g.is_candidate(v),
                    gate: gate_label(n, g, v),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRow {
    pub node: u32,
    pub gate: Option<String>,
    pub polarity: String,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub circuit: String,
    pub patterns: usize,
    pub pattern_seed: u64,
    /// Fault-set fingerprint, 16 hex digits.
    pub fault_set: String,
    pub n_faults: usize,
    pub n_detected: usize,
    pub test_coverage: f64,
    pub faults: Vec<FaultRow>,
}

pub fn fingerprint_hex(x: u64) -> String {
    format!("{x:016x}")
}

impl CoverageSummary {
    pub fn new(n: &Netlist, g: &AigGraph, f: &FaultSet, r: &CoverageReport, patterns: usize, seed: u64) -> Self {
        CoverageSummary {
            circuit: n.name.clone(),
            patterns,
            pattern_seed: seed,
            fault_set: fingerprint_hex(r.fault_set),
            n_faults: r.n_total,
            n_detected: r.n_detected,
            test_coverage: r.test_coverage,
            faults: f
                .faults()
                .iter()
                .zip(&r.detected)
                .map(|(fault, &d)| FaultRow {
                    node: fault.site.0,
                    gate: gate_label(n, g, fault.site),
                    polarity: fault.polarity.name().into(),
                    detected: d,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = header.to_string();
        s.push_str("node,gate,polarity,detected\n");
        for r in &self.faults {
            let _ = writeln!(s, "{},{},{},{}", r.node, r.gate.as_deref().unwrap_or(""), r.polarity, r.detected as u8);
        }
        s
    }
}

/// `node,kind,gate,candidate,observed,c1,obs`, one row per node.
pub fn cop_csv(header: &str, n: &Netlist, g: &AigGraph, p: &CopProfile) -> String {
    let mut s = header.to_string();
    s.push_str("node,kind,gate,candidate,observed,c1,obs\n");
    for v in (0..g.node_count() as u32).map(NodeId) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            v.0,
            kind_name(g.kind(v)),
            gate_label(n, g, v).unwrap_or_default(),
            g.is_candidate(v) as u8,
            g.is_observed(v) as u8,
            p.c1[v.index()],
            p.obs[v.index()]
        );
    }
    s
}

/// `episode,circuit,epsilon,reward,loss`; `loss` is empty before the first update.
pub fn train_log_csv(header: &str, log: &[EpisodeLog]) -> String {
    let mut s = header.to_string();
    s.push_str("episode,circuit,epsilon,reward,loss\n");
    for e in log {
        let loss = e.loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", e.episode, e.circuit, e.epsilon, e.reward, loss);
    }
    s
}

/// `circuit,gates,nodes,budget,initial_tc` then `<method>_tc,<method>_imp,<method>_tps`
/// for every method, and a final `mean` row.
pub fn eval_csv(header: &str, t: &EvalTable) -> String {
    let mut s = header.to_string();
    s.push_str("circuit,gates,nodes,budget,initial_tc");
    for m in &t.methods {
        let _ = write!(s, ",{m}_tc,{m}_imp,{m}_tps");
    }
    s.push('\n');
    for r in &t.rows {
        let _ = write!(s, "{},{},{},{},{}", r.circuit, r.gates, r.nodes, r.budget, r.initial_tc);
        for m in &r.results {
            let _ = write!(s, ",{},{},{}", m.test_coverage, m.improvement, m.actions.len());
        }
        s.push('\n');
    }
    let k = t.rows.len().max(1) as f64;
    let _ = write!(s, "mean,,,,{}", t.rows.iter().map(|r| r.initial_tc).sum::<f64>() / k);
    for i in 0..t.methods.len() {
        let tps = t.rows.iter().map(|r| r.results[i].actions.len()).sum::<usize>() as f64 / k;
        let _ = write!(s, ",{},{},{}", t.mean_test_coverage[i], t.mean_improvement[i], tps);
    }
    s.push('\n');
    s
}

/// One entry of an action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedAction {
    pub node: u32,
    #[serde(rename = "type")]
    pub tp_type: String,
    pub gate: Option<String>,
}

impl LoggedAction {
    pub fn new(n: &Netlist, g: &AigGraph, a: Action) -> LoggedAction {
        LoggedAction { node: a.node.0, tp_type: a.tp_type.name().into(), gate: gate_label(n, g, a.node) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLog {
    pub circuit: String,
    pub budget: usize,
    pub initial_tc: Option<f64>,
    pub final_tc: Option<f64>,
    pub actions: Vec<LoggedAction>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpilab_core::aig::TpType;
    use tpilab_core::netlist::random_circuit;
    use tpilab_core::sim::{enumerate_faults, fault_simulate, PatternSet};

    #[test]
    fn coverage_csv_has_one_row_per_fault() {
        let n = random_circuit(2, 5, 15);
        let g = AigGraph::from_netlist(&n);
        let f = enumerate_faults(&g);
        let r = fault_simulate(&g, &f, &PatternSet::random(3, 64, &g)).unwrap();
        let s = CoverageSummary::new(&n, &g, &f, &r, 64, 3);
        let env = Envelope::new("coverage", serde_json::json!({"seed": 3}), ());
        let csv = s.to_csv(&env.header_line());
        assert_eq!(csv.lines().count(), 2 + f.len());
        assert!(csv.starts_with("# {"));
        assert_eq!(s.n_detected, s.faults.iter().filter(|r| r.detected).count());
    }

    #[test]
    fn action_log_json_shape() {
        let n = random_circuit(2, 5, 15);
        let g = AigGraph::from_netlist(&n);
        let v = g.candidates().next().unwrap();
        let la = LoggedAction::new(&n, &g, Action::new(v, TpType::Op));
        let j = serde_json::to_value(&la).unwrap();
        assert_eq!(j["type"], "OP");
        assert_eq!(j["node"], v.0);
    }
}
