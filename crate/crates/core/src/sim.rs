// SPDX-License-Identifier: Apache-2.0
//! Bit-parallel random-pattern logic simulation and single stuck-at fault
//! simulation.
//!
//! One bit per pattern, 64 patterns per word. Each primary input owns an
//! independent ChaCha stream keyed by its [`PiSource`], so rows for control
//! inputs added later never perturb the rows that already exist.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aig::{AigGraph, NodeId, NodeKind, PiSource};

/// Desk-scale default pattern volume.
pub const DEFAULT_PATTERNS: usize = 4096;

const PSEUDO_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("no pattern row for input {0}")]
    MissingPatternRow(NodeId),
    #[error("fault site {0} does not exist in the graph")]
    UnknownFaultSite(NodeId),
    #[error("coverage reports were computed over different fault sets")]
    FaultSetMismatch,
}

/// Packed input stimuli.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSet {
    seed: u64,
    n_patterns: usize,
    exhaustive: bool,
    original: Vec<Vec<u64>>,
    pseudo: Vec<Vec<u64>>,
}

impl PatternSet {
    /// `n_patterns` independent fair-coin patterns for every input of `g`.
    pub fn random(seed: u64, n_patterns: usize, g: &AigGraph) -> PatternSet {
        assert!(n_patterns > 0);
        let mut p = PatternSet { seed, n_patterns, exhaustive: false, original: Vec::new(), pseudo: Vec::new() };
        p.original = (0..g.original_input_count() as u64).map(|k| p.stream_row(k)).collect();
        p.ensure_inputs(g);
        p
    }

    /// All 2^k assignments of the original inputs; pattern `j` drives input
    /// `i` with bit `i` of `j`. Control inputs get random rows from `seed`.
    pub fn exhaustive(seed: u64, g: &AigGraph) -> PatternSet {
        let k = g.original_input_count();
        assert!(k <= 24, "exhaustive patterns limited to 24 inputs");
        let n_patterns = 1usize << k;
        let words = n_patterns.div_ceil(64);
        let original = (0..k)
            .map(|i| {
                let mut row = vec![0u64; words];
                for j in 0..n_patterns {
                    if (j >> i) & 1 == 1 {
                        row[j / 64] |= 1 << (j % 64);
                    }
                }
                row
            })
            .collect();
        let mut p = PatternSet { seed, n_patterns, exhaustive: true, original, pseudo: Vec::new() };
        p.ensure_inputs(g);
        p
    }

    fn stream_row(&self, stream: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut row: Vec<u64> = (0..self.words()).map(|_| rng.next_u64()).collect();
        if let Some(last) = row.last_mut() {
            *last &= self.last_mask();
        }
        row
    }

    /// Adds rows for control inputs of `g` that do not have one yet.
    pub fn ensure_inputs(&mut self, g: &AigGraph) {
        while self.pseudo.len() < g.pseudo_input_count() {
            let k = self.pseudo.len() as u64;
            let row = self.stream_row(PSEUDO_STREAM_BASE + k);
            self.pseudo.push(row);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn words(&self) -> usize {
        self.n_patterns.div_ceil(64)
    }

    /// Mask of valid pattern bits in the last word.
    pub fn last_mask(&self) -> u64 {
        match self.n_patterns % 64 {
            0 => !0,
            r => (1u64 << r) - 1,
        }
    }

    #[inline]
    pub fn word_mask(&self, w: usize) -> u64 {
        if w + 1 == self.words() {
            self.last_mask()
        } else {
            !0
        }
    }

    pub fn row(&self, src: PiSource) -> Option<&[u64]> {
        match src {
            PiSource::Original(k) => self.original.get(k as usize),
            PiSource::Pseudo { index, .. } => self.pseudo.get(index as usize),
        }
        .map(|r| r.as_slice())
    }

    /// Value of input row `src` under pattern `j`.
    pub fn bit(&self, src: PiSource, j: usize) -> Option<bool> {
        self.row(src).map(|r| (r[j / 64] >> (j % 64)) & 1 == 1)
    }
}

/// Good-machine simulation result.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodSim {
    pub words: usize,
    /// Node-major packed values, `words` words per node.
    pub values: Vec<u64>,
    /// Fraction of patterns under which each node is 1.
    pub prob: Vec<f64>,
}

impl GoodSim {
    pub fn node(&self, v: NodeId) -> &[u64] {
        &self.values[v.index() * self.words..(v.index() + 1) * self.words]
    }
}

/// Simulates the fault-free circuit in topological order.
pub fn simulate_good(g: &AigGraph, p: &PatternSet) -> Result<GoodSim, SimError> {
    let words = p.words();
    let mut rows: Vec<&[u64]> = Vec::with_capacity(g.inputs().len());
    for &pi in g.inputs() {
        let src = g.pi_source(pi).expect("inputs carry a source");
        rows.push(p.row(src).ok_or(SimError::MissingPatternRow(pi))?);
    }
    let mut values = g.eval_words(&rows, words);
    // NOT flips the padding bits; clear them so popcounts stay exact.
    let last = p.last_mask();
    for v in 0..g.node_count() {
        values[v * words + words - 1] &= last;
    }
    let n = p.n_patterns() as f64;
    let prob = (0..g.node_count())
        .map(|v| {
            let ones: u32 = values[v * words..(v + 1) * words].iter().map(|w| w.count_ones()).sum();
            ones as f64 / n
        })
        .collect();
    Ok(GoodSim { words, values, prob })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "SA0")]
    Sa0,
    #[serde(rename = "SA1")]
    Sa1,
}

impl Polarity {
    pub fn name(self) -> &'static str {
        match self {
            Polarity::Sa0 => "SA0",
            Polarity::Sa1 => "SA1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fault {
    pub site: NodeId,
    pub polarity: Polarity,
}

/// Stuck-at fault universe, frozen against the graph it was enumerated on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSet {
    faults: Vec<Fault>,
    frozen: bool,
    fingerprint: u64,
}

impl FaultSet {
    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn fingerprint(faults: &[Fault]) -> u64 {
    let mut h = Sha256::new();
    for f in faults {
        h.update(f.site.0.to_le_bytes());
        h.update([f.polarity as u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// SA0 and SA1 on every candidate node and every original primary input.
/// Decomposition-internal nodes and test-point logic carry no faults.
pub fn enumerate_faults(g: &AigGraph) -> FaultSet {
    let mut faults = Vec::new();
    for v in (0..g.node_count() as u32).map(NodeId) {
        if g.is_candidate(v) || g.is_original_pi(v) {
            faults.push(Fault { site: v, polarity: Polarity::Sa0 });
            faults.push(Fault { site: v, polarity: Polarity::Sa1 });
        }
    }
    let fingerprint = fingerprint(&faults);
    FaultSet { faults, frozen: true, fingerprint }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub detected: Vec<bool>,
    pub n_detected: usize,
    pub n_total: usize,
    pub test_coverage: f64,
    pub fault_set: u64,
}

impl CoverageReport {
    fn from_flags(detected: Vec<bool>, fault_set: u64) -> CoverageReport {
        let n_detected = detected.iter().filter(|&&d| d).count();
        let n_total = detected.len();
        let test_coverage = if n_total == 0 { 1.0 } else { n_detected as f64 / n_total as f64 };
        CoverageReport { detected, n_detected, n_total, test_coverage, fault_set }
    }
}

/// Reusable buffers for cone re-simulation.
struct ConeSim {
    faulty: Vec<u64>,
    stamp: Vec<u32>,
    queued: Vec<u32>,
    pos: Vec<u32>,
    heap: BinaryHeap<Reverse<(u32, u32)>>,
    epoch: u32,
    tmp: Vec<u64>,
}

impl ConeSim {
    fn new(g: &AigGraph, words: usize) -> ConeSim {
        let n = g.node_count();
        let mut pos = vec![0u32; n];
        for (i, &v) in g.topo_order().iter().enumerate() {
            pos[v as usize] = i as u32;
        }
        ConeSim {
            faulty: vec![0; n * words],
            stamp: vec![0; n],
            queued: vec![0; n],
            pos,
            heap: BinaryHeap::new(),
            epoch: 0,
            tmp: vec![0; words],
        }
    }

    /// True if forcing `fault` changes some observed node under some pattern.
    fn detects(&mut self, g: &AigGraph, good: &GoodSim, p: &PatternSet, fault: Fault) -> bool {
        let words = good.words;
        self.epoch += 1;
        let e = self.epoch;
        let s = fault.site.index();
        let forced = match fault.polarity {
            Polarity::Sa0 => 0u64,
            Polarity::Sa1 => !0u64,
        };
        let mut any = false;
        for w in 0..words {
            let f = forced & p.word_mask(w);
            self.faulty[s * words + w] = f;
            any |= f != good.values[s * words + w];
        }
        if !any {
            return false;
        }
        if g.observed_mask()[s] {
            return true;
        }
        self.stamp[s] = e;
        self.heap.clear();
        for &o in g.fanout_raw(s) {
            self.queued[o as usize] = e;
            self.heap.push(Reverse((self.pos[o as usize], o)));
        }
        while let Some(Reverse((_, v))) = self.heap.pop() {
            let v = v as usize;
            let fi = g.fanin_raw(v);
            let mut diff = 0u64;
            for w in 0..words {
                let val = |x: u32| -> u64 {
                    let x = x as usize;
                    if self.stamp[x] == e {
                        self.faulty[x * words + w]
                    } else {
                        good.values[x * words + w]
                    }
                };
                let nv = match g.kind(NodeId(v as u32)) {
                    NodeKind::And => val(fi[0]) & val(fi[1]),
                    NodeKind::Not => !val(fi[0]) & p.word_mask(w),
                    NodeKind::Pi => good.values[v * words + w],
                };
                self.tmp[w] = nv;
                diff |= nv ^ good.values[v * words + w];
            }
            if diff == 0 {
                continue;
            }
            if g.observed_mask()[v] {
                return true;
            }
            self.faulty[v * words..(v + 1) * words].copy_from_slice(&self.tmp);
            self.stamp[v] = e;
            for &o in g.fanout_raw(v) {
                if self.queued[o as usize] != e {
                    self.queued[o as usize] = e;
                    self.heap.push(Reverse((self.pos[o as usize], o)));
                }
            }
        }
        false
    }
}

/// Word-parallel single stuck-at fault simulation over `f`.
///
/// A fault is detected iff some pattern yields a different value at an
/// observed node (primary output or observation point). Only the fanout cone
/// of each site is re-evaluated, and propagation stops where the faulty value
/// rejoins the good one.
pub fn fault_simulate(g: &AigGraph, f: &FaultSet, p: &PatternSet) -> Result<CoverageReport, SimError> {
    let good = simulate_good(g, p)?;
    fault_simulate_with(g, f, p, &good, None)
}

/// Same as [`fault_simulate`] with a precomputed good simulation. When `skip`
/// is given, faults flagged there are reported detected without simulation.
pub fn fault_simulate_with(
    g: &AigGraph,
    f: &FaultSet,
    p: &PatternSet,
    good: &GoodSim,
    skip: Option<&[bool]>,
) -> Result<CoverageReport, SimError> {
    if let Some(bad) = f.faults.iter().find(|x| x.site.index() >= g.node_count()) {
        return Err(SimError::UnknownFaultSite(bad.site));
    }
    let mut cs = ConeSim::new(g, good.words);
    let detected = f
        .faults
        .iter()
        .enumerate()
        .map(|(i, &fault)| skip.is_some_and(|s| s[i]) || cs.detects(g, good, p, fault))
        .collect();
    Ok(CoverageReport::from_flags(detected, f.fingerprint))
}

/// `after.test_coverage - before.test_coverage`; negative values are real.
pub fn coverage_improvement(before: &CoverageReport, after: &CoverageReport) -> Result<f64, SimError> {
    if before.fault_set != after.fault_set || before.n_total != after.n_total {
        return Err(SimError::FaultSetMismatch);
    }
    Ok(after.test_coverage - before.test_coverage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::TpType;
    use crate::netlist::{Gate, GateKind, Netlist};
    use crate::oracle;
    use alloc::string::ToString;

    fn and_circuit() -> AigGraph {
        let gates = vec![
            Gate { id: 0, label: "a".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 1, label: "b".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 2, label: "y".to_string(), kind: GateKind::And, fanins: vec![0, 1] },
        ];
        AigGraph::from_netlist(&Netlist::new("and", gates, vec![2]).unwrap())
    }

    #[test]
    fn and_probability_exhaustive() {
        let g = and_circuit();
        let p = PatternSet::exhaustive(0, &g);
        assert_eq!(p.n_patterns(), 4);
        let s = simulate_good(&g, &p).unwrap();
        assert_eq!(s.prob, vec![0.5, 0.5, 0.25]);
    }

    #[test]
    fn not_is_exact_complement() {
        let g = AigGraph::from_netlist(&crate::netlist::random_circuit(2, 6, 40));
        let p = PatternSet::random(9, 1000, &g);
        let s = simulate_good(&g, &p).unwrap();
        for v in 0..g.node_count() as u32 {
            let v = NodeId(v);
            if g.kind(v) == NodeKind::Not {
                let a = g.fanins(v).next().unwrap();
                assert!((s.prob[v.index()] + s.prob[a.index()] - 1.0).abs() < 1e-12);
            }
            assert!((0.0..=1.0).contains(&s.prob[v.index()]));
        }
    }

    #[test]
    fn and_circuit_faults() {
        let g = and_circuit();
        let f = enumerate_faults(&g);
        assert_eq!(f.len(), 6);
        let p = PatternSet::exhaustive(0, &g);
        let r = fault_simulate(&g, &f, &p).unwrap();
        assert_eq!(r.n_detected, 6);
        assert_eq!(r.test_coverage, 1.0);
        // a SA0 is detected only by (a=1, b=1), i.e. pattern 3
        let faults = f.faults();
        let a_sa0 = faults.iter().position(|x| x.site == NodeId(0) && x.polarity == Polarity::Sa0).unwrap();
        let mut only = PatternSet::exhaustive(0, &g);
        for j in 0..4 {
            only.original[0][0] = p.original[0][0] & (1 << j);
            only.original[1][0] = p.original[1][0] & (1 << j);
            let r = fault_simulate(&g, &f, &only).unwrap();
            assert_eq!(r.detected[a_sa0], j == 3, "pattern {j}");
        }
    }

    #[test]
    fn unobservable_node_is_never_detected() {
        let gates = vec![
            Gate { id: 0, label: "a".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 1, label: "b".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 2, label: "y".to_string(), kind: GateKind::And, fanins: vec![0, 1] },
            Gate { id: 3, label: "z".to_string(), kind: GateKind::Or, fanins: vec![0, 1] },
        ];
        let g = AigGraph::from_netlist(&Netlist::new("d", gates, vec![2]).unwrap());
        let f = enumerate_faults(&g);
        let p = PatternSet::random(1, 4096, &g);
        let r = fault_simulate(&g, &f, &p).unwrap();
        let z = g.node_of_gate(3);
        for (i, fault) in f.faults().iter().enumerate() {
            if fault.site == z {
                assert!(!r.detected[i]);
            }
        }
        let mut g2 = g.clone();
        g2.splice_after(z, TpType::Op).unwrap();
        let r2 = fault_simulate(&g2, &f, &p).unwrap();
        assert!(coverage_improvement(&r, &r2).unwrap() > 0.0);
    }

    #[test]
    fn frozen_set_survives_insertion() {
        let mut g = AigGraph::from_netlist(&crate::netlist::random_circuit(4, 6, 30));
        let f = enumerate_faults(&g);
        assert_eq!(f.len(), 2 * (g.candidate_count() + g.original_input_count()));
        let v = g.candidates().next().unwrap();
        g.splice_after(v, TpType::OrCp).unwrap();
        let mut p = PatternSet::random(3, 256, &g);
        p.ensure_inputs(&g);
        let r = fault_simulate(&g, &f, &p).unwrap();
        assert_eq!(r.n_total, f.len());
    }

    #[test]
    fn missing_row_is_reported() {
        let mut g = and_circuit();
        let p = PatternSet::random(0, 64, &g);
        g.splice_after(NodeId(2), TpType::AndCp).unwrap();
        assert_eq!(simulate_good(&g, &p).unwrap_err(), SimError::MissingPatternRow(NodeId(3)));
    }

    #[test]
    fn improvement_requires_same_fault_set() {
        let g = and_circuit();
        let other = AigGraph::from_netlist(&crate::netlist::random_circuit(1, 3, 5));
        let p = PatternSet::random(0, 64, &g);
        let a = fault_simulate(&g, &enumerate_faults(&g), &p).unwrap();
        let p2 = PatternSet::random(0, 64, &other);
        let b = fault_simulate(&other, &enumerate_faults(&other), &p2).unwrap();
        assert_eq!(coverage_improvement(&a, &a).unwrap(), 0.0);
        assert_eq!(coverage_improvement(&a, &b), Err(SimError::FaultSetMismatch));
    }

    #[test]
    fn matches_naive_oracle_on_small_circuits() {
        for seed in 0..6 {
            let g = AigGraph::from_netlist(&crate::netlist::random_circuit(seed, 5, 25));
            let f = enumerate_faults(&g);
            let p = PatternSet::random(seed, 100, &g);
            let fast = fault_simulate(&g, &f, &p).unwrap();
            let slow = oracle::naive_fault_flags(&g, &f, &p);
            assert_eq!(fast.detected, slow);
        }
    }
}
