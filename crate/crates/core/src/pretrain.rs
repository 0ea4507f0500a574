// SPDX-License-Identifier: Apache-2.0
//! Signal-probability pre-training.
//!
//! A message-passing model learns to predict, for every node, the fraction of
//! random patterns that set it to 1. Its final hidden states are reused as
//! node embeddings by the Q-network.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aig::AigGraph;
use crate::gnn::{Aggregation, GnnConfig, GnnEncoder, GraphBatch};
use crate::nn::{Adam, Matrix, Mlp, NnError, ParamStore, Tape, Var};
use crate::sim::{simulate_good, PatternSet, SimError, DEFAULT_PATTERNS};

/// Graphs with at most this many inputs are labelled by exhaustive simulation.
pub const EXHAUSTIVE_LABEL_INPUTS: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PretrainError {
    #[error("pre-training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Graphs per minibatch.
    pub batch_graphs: usize,
    pub lr: f64,
    pub seed: u64,
    pub n_patterns: usize,
    pub pattern_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 30, batch_graphs: 8, lr: 1e-3, seed: 0, n_patterns: DEFAULT_PATTERNS, pattern_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMeta {
    /// SHA-256 over the structure of every corpus graph, hex encoded.
    pub corpus_hash: String,
    pub n_graphs: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Last entry of `epoch_loss`; `None` before training.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub store: ParamStore,
    pub encoder: GnnEncoder,
    pub head: Mlp,
    pub meta: PretrainMeta,
}

/// One-hot of node kind in the order PI, AND, NOT.
pub fn one_hot_features(g: &AigGraph) -> Matrix {
    let mut x = Matrix::zeros(g.node_count(), 3);
    for v in 0..g.node_count() {
        x.set(v, g.kind(crate::aig::NodeId(v as u32)).one_hot_index(), 1.0);
    }
    x
}

fn stack_rows(parts: &[Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |m| m.cols());
    let rows = parts.iter().map(|m| m.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for m in parts {
        data.extend_from_slice(m.data());
    }
    Matrix::from_vec(rows, cols, data).expect("parts share a column count")
}

fn hash_hex(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// SHA-256 over node kinds, fanins and outputs of every graph, in order.
pub fn corpus_hash(corpus: &[AigGraph]) -> String {
    let mut h = Sha256::new();
    for g in corpus {
        h.update((g.node_count() as u64).to_le_bytes());
        for v in 0..g.node_count() {
            let id = crate::aig::NodeId(v as u32);
            h.update([g.kind(id).one_hot_index() as u8]);
            for f in g.fanins(id) {
                h.update(f.0.to_le_bytes());
            }
        }
        for o in g.observed_nodes() {
            h.update(o.0.to_le_bytes());
        }
    }
    hash_hex(&h.finalize())
}

/// Per-node probability of logic 1 used as the training label.
pub fn probability_labels(g: &AigGraph, n_patterns: usize, pattern_seed: u64) -> Result<Vec<f64>, SimError> {
    let p = if g.inputs().len() <= EXHAUSTIVE_LABEL_INPUTS {
        PatternSet::exhaustive(pattern_seed, g)
    } else {
        PatternSet::random(pattern_seed, n_patterns, g)
    };
    Ok(simulate_good(g, &p)?.prob)
}

impl PretrainModel {
    /// Untrained model with the standard architecture.
    pub fn new(seed: u64) -> PretrainModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder =
            GnnEncoder::new(&mut store, "enc", GnnConfig::new(3, Aggregation::TestabilityAware), &mut rng);
        let head = Mlp::new(&mut store, "prob", &[encoder.config.hidden_dim, 32, 1], &mut rng);
        let meta = PretrainMeta {
            corpus_hash: String::new(),
            n_graphs: 0,
            epochs: 0,
            seed,
            epoch_loss: Vec::new(),
            final_loss: None,
        };
        PretrainModel { store, encoder, head, meta }
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.config.hidden_dim
    }

    fn hidden(&self, tape: &mut Tape, batch: &GraphBatch, x: Matrix) -> Result<Var, NnError> {
        let xv = tape.constant(x);
        self.encoder.forward(tape, &self.store, batch, xv, None)
    }

    fn probs(&self, tape: &mut Tape, h: Var) -> Result<Var, NnError> {
        let logits = self.head.forward(tape, &self.store, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Final hidden state of every node (n x 64).
    pub fn embed(&self, g: &AigGraph) -> Matrix {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &GraphBatch::single(g), one_hot_features(g)).expect("shapes are fixed");
        tape.value(h).clone()
    }

    /// Predicted probability of logic 1 for every node.
    pub fn predict(&self, g: &AigGraph) -> Vec<f64> {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &GraphBatch::single(g), one_hot_features(g)).expect("shapes are fixed");
        let p = self.probs(&mut tape, h).expect("shapes are fixed");
        tape.value(p).data().to_vec()
    }
}

/// Mean absolute error of `model` against simulated labels over `graphs`.
pub fn evaluate_mae(model: &PretrainModel, graphs: &[AigGraph], n_patterns: usize, pattern_seed: u64) -> Result<f64, SimError> {
    let (mut s, mut n) = (0.0, 0usize);
    for g in graphs {
        let y = probability_labels(g, n_patterns, pattern_seed)?;
        for (p, t) in model.predict(g).iter().zip(&y) {
            s += libm::fabs(p - t);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Trains a probability model on `corpus` by minimizing mean absolute error
/// over minibatches of whole graphs.
pub fn pretrain(corpus: &[AigGraph], config: &PretrainConfig) -> Result<PretrainModel, PretrainError> {
    if corpus.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let mut model = PretrainModel::new(config.seed);
    let labels: Vec<Vec<f64>> = corpus
        .iter()
        .map(|g| probability_labels(g, config.n_patterns, config.pattern_seed))
        .collect::<Result<_, _>>()?;
    let feats: Vec<Matrix> = corpus.iter().map(one_hot_features).collect();
    let mut opt = Adam::new(&model.store, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5_EED0_F9E7);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_graphs.max(1)) {
            let graphs: Vec<&AigGraph> = chunk.iter().map(|&i| &corpus[i]).collect();
            let batch = GraphBatch::union(&graphs);
            let x = stack_rows(&chunk.iter().map(|&i| feats[i].clone()).collect::<Vec<_>>());
            let y: Vec<f64> = chunk.iter().flat_map(|&i| labels[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let h = model.hidden(&mut tape, &batch, x)?;
            let p = model.probs(&mut tape, h)?;
            let loss = tape.mae(p, y)?;
            total += tape.value(loss).data()[0];
            batches += 1;
            tape.backward(loss, &mut model.store)?;
            opt.step(&mut model.store);
        }
        epoch_loss.push(total / batches.max(1) as f64);
    }
    model.meta = PretrainMeta {
        corpus_hash: corpus_hash(corpus),
        n_graphs: corpus.len(),
        epochs: config.epochs,
        seed: config.seed,
        final_loss: epoch_loss.last().copied(),
        epoch_loss,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::TpType;
    use crate::netlist::{random_circuit, Gate, GateKind, Netlist};
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn empty_corpus_is_rejected() {
        assert_eq!(pretrain(&[], &PretrainConfig::default()).unwrap_err(), PretrainError::EmptyCorpus);
    }

    #[test]
    fn single_input_circuit_converges_to_half() {
        let gates = vec![
            Gate { id: 0, label: "a".to_string(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 1, label: "y".to_string(), kind: GateKind::Buf, fanins: vec![0] },
        ];
        let g = AigGraph::from_netlist(&Netlist::new("buf", gates, vec![1]).unwrap());
        let cfg = PretrainConfig { epochs: 150, lr: 1e-2, ..Default::default() };
        let m = pretrain(std::slice::from_ref(&g), &cfg).unwrap();
        for p in m.predict(&g) {
            assert!((p - 0.5).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn embeddings_have_hidden_width_and_ignore_observation_points() {
        let m = PretrainModel::new(3);
        let mut g = AigGraph::from_netlist(&random_circuit(1, 5, 20));
        let e0 = m.embed(&g);
        assert_eq!(e0.shape(), (g.node_count(), 64));
        assert!(e0.data().iter().all(|x| x.is_finite()));
        let v = g.candidates().find(|&v| !g.is_observed(v)).unwrap();
        g.splice_after(v, TpType::Op).unwrap();
        assert_eq!(m.embed(&g), e0);
        g.splice_after(v, TpType::AndCp).unwrap();
        assert_eq!(m.embed(&g).rows(), g.node_count());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let corpus: Vec<AigGraph> = (0..6).map(|s| AigGraph::from_netlist(&random_circuit(s, 6, 25))).collect();
        let cfg = PretrainConfig { epochs: 8, batch_graphs: 3, lr: 3e-3, n_patterns: 512, ..Default::default() };
        let a = pretrain(&corpus, &cfg).unwrap();
        let b = pretrain(&corpus, &cfg).unwrap();
        assert_eq!(a.meta, b.meta);
        for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x, y);
        }
        assert!(a.meta.final_loss.unwrap() < a.meta.epoch_loss[0]);
        assert_eq!(a.meta.corpus_hash.len(), 64);
    }
}
