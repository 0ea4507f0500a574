// SPDX-License-Identifier: Apache-2.0
//! Graph Q-network: per-node action values for AND-CP, OR-CP and OP.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{AigGraph, NodeId};
use crate::env::{legal_actions, Action};
use crate::gnn::{Aggregation, GnnConfig, GnnEncoder, GraphBatch, HIDDEN_DIM};
use crate::nn::{Matrix, Mlp, NnError, ParamStore, Tape, Var};
use crate::pretrain::PretrainModel;

pub const ONE_HOT_DIM: usize = 3;
/// Embedding followed by the kind one-hot.
pub const FEATURE_DIM: usize = HIDDEN_DIM + ONE_HOT_DIM;
pub const READOUT_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DqnError {
    #[error("feature dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("no legal actions")]
    NoLegalActions,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub aggregation: Aggregation,
    /// Use pre-trained embeddings in the node features.
    pub pretrained: bool,
    pub score_leak: Option<f64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig { aggregation: Aggregation::TestabilityAware, pretrained: true, score_leak: None }
    }
}

impl DqnConfig {
    pub fn input_dim(&self) -> usize {
        if self.pretrained {
            FEATURE_DIM
        } else {
            ONE_HOT_DIM
        }
    }
}

/// Node features: `[embedding || one-hot(PI, AND, NOT)]`, or the one-hot
/// alone when `emb` is `None`.
pub fn build_features(g: &AigGraph, emb: Option<&Matrix>) -> Result<Matrix, DqnError> {
    let n = g.node_count();
    let off = match emb {
        Some(e) if e.shape() != (n, HIDDEN_DIM) => {
            return Err(DqnError::DimensionMismatch { expected: (n, HIDDEN_DIM), got: e.shape() })
        }
        Some(_) => HIDDEN_DIM,
        None => 0,
    };
    let mut x = Matrix::zeros(n, off + ONE_HOT_DIM);
    for v in 0..n {
        let row = x.row_mut(v);
        if let Some(e) = emb {
            row[..off].copy_from_slice(e.row(v));
        }
        row[off + g.kind(NodeId(v as u32)).one_hot_index()] = 1.0;
    }
    Ok(x)
}

/// Features as configured: embeddings from `pretrain` when the network uses
/// them.
pub fn state_features(config: &DqnConfig, pretrain: Option<&PretrainModel>, g: &AigGraph) -> Result<Matrix, DqnError> {
    if config.pretrained {
        let m = pretrain.ok_or(DqnError::DimensionMismatch { expected: (g.node_count(), HIDDEN_DIM), got: (0, 0) })?;
        build_features(g, Some(&m.embed(g)))
    } else {
        build_features(g, None)
    }
}

#[derive(Debug, Clone)]
pub struct GraphDqnParams {
    pub config: DqnConfig,
    pub store: ParamStore,
    pub encoder: GnnEncoder,
    pub readout: Mlp,
}

/// Action values of every node with the legal set of the state they were
/// computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues {
    pub q: Matrix,
    pub legal: Vec<Action>,
}

impl QValues {
    pub fn value(&self, a: Action) -> f64 {
        self.q.get(a.node.index(), a.tp_type.index())
    }

    /// Best legal action; the first maximum in (node id, type) order wins.
    pub fn greedy(&self) -> Option<(Action, f64)> {
        let mut best: Option<(Action, f64)> = None;
        for &a in &self.legal {
            let v = self.value(a);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        best
    }
}

impl GraphDqnParams {
    pub fn new(config: DqnConfig, seed: u64) -> GraphDqnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut gc = GnnConfig::new(config.input_dim(), config.aggregation);
        gc.score_leak = config.score_leak;
        let encoder = GnnEncoder::new(&mut store, "dqn", gc, &mut rng);
        let readout = Mlp::new(&mut store, "dqn.q", &[gc.hidden_dim, READOUT_HIDDEN, 3], &mut rng);
        GraphDqnParams { config, store, encoder, readout }
    }

    /// Records the forward pass; returns the (nodes x 3) value matrix.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch, x: Var) -> Result<Var, DqnError> {
        let (rows, cols) = tape.value(x).shape();
        if cols != self.config.input_dim() || rows != batch.node_count() {
            return Err(DqnError::DimensionMismatch {
                expected: (batch.node_count(), self.config.input_dim()),
                got: (rows, cols),
            });
        }
        let h = self.encoder.forward(tape, &self.store, batch, x, None)?;
        Ok(self.readout.forward(tape, &self.store, h)?)
    }

    /// Raw value matrix of a batch without recording gradients for later use.
    pub fn q_matrix(&self, batch: &GraphBatch, features: Matrix) -> Result<Matrix, DqnError> {
        let mut tape = Tape::new();
        let x = tape.constant(features);
        let q = self.forward(&mut tape, batch, x)?;
        Ok(tape.value(q).clone())
    }

    pub fn q_values(&self, g: &AigGraph, features: Matrix) -> Result<QValues, DqnError> {
        let q = self.q_matrix(&GraphBatch::single(g), features)?;
        Ok(QValues { q, legal: legal_actions(g) })
    }
}

/// ε-greedy selection over the legal actions in `q`.
pub fn select_action<R: Rng>(q: &QValues, epsilon: f64, rng: &mut R) -> Result<Action, DqnError> {
    if q.legal.is_empty() {
        return Err(DqnError::NoLegalActions);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(q.legal[rng.gen_range(0..q.legal.len())]);
    }
    Ok(q.greedy().unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::TpType;
    use crate::netlist::random_circuit;
    use alloc::vec;

    fn graph() -> AigGraph {
        AigGraph::from_netlist(&random_circuit(5, 5, 12))
    }

    #[test]
    fn features_layout() {
        let g = graph();
        let x = build_features(&g, None).unwrap();
        assert_eq!(x.cols(), 3);
        let pi = g.inputs()[0];
        assert_eq!(x.row(pi.index()), &[1.0, 0.0, 0.0]);
        let emb = Matrix::zeros(g.node_count(), 64);
        let x = build_features(&g, Some(&emb)).unwrap();
        assert_eq!(x.cols(), 67);
        assert_eq!(&x.row(pi.index())[64..], &[1.0, 0.0, 0.0]);
        let bad = Matrix::zeros(g.node_count(), 63);
        assert!(matches!(build_features(&g, Some(&bad)), Err(DqnError::DimensionMismatch { .. })));
    }

    #[test]
    fn parameter_count_near_reference() {
        let p = GraphDqnParams::new(DqnConfig::default(), 0);
        let n = p.store.scalar_count();
        assert!(n > 59_010 / 2 && n < 59_010 * 2, "{n}");
    }

    #[test]
    fn zero_parameters_tie_to_first_legal_action() {
        let g = graph();
        let mut p = GraphDqnParams::new(DqnConfig { pretrained: false, ..Default::default() }, 0);
        for i in 0..p.store.len() {
            let id = crate::nn::ParamId(i);
            let (r, c) = p.store.value(id).shape();
            p.store.set_value(id, Matrix::zeros(r, c)).unwrap();
        }
        let q = p.q_values(&g, build_features(&g, None).unwrap()).unwrap();
        assert!(q.q.data().iter().all(|&x| x == q.q.data()[0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, 0.0, &mut rng).unwrap(), q.legal[0]);
    }

    #[test]
    fn selection_rules() {
        let q = QValues {
            q: Matrix::from_vec(2, 3, vec![0.1, 0.9, 0.3, 0.9, 0.2, 5.0]).unwrap(),
            legal: vec![Action::new(NodeId(0), TpType::AndCp), Action::new(NodeId(0), TpType::OrCp), Action::new(NodeId(1), TpType::AndCp)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // (1, OP) is the global max but illegal; (0, OR-CP) ties (1, AND-CP) and wins on node id
        assert_eq!(select_action(&q, 0.0, &mut rng).unwrap(), Action::new(NodeId(0), TpType::OrCp));
        let mut scaled = q.clone();
        scaled.q.data_mut().iter_mut().for_each(|x| *x *= 7.5);
        assert_eq!(select_action(&scaled, 0.0, &mut rng).unwrap(), Action::new(NodeId(0), TpType::OrCp));
        let empty = QValues { q: q.q.clone(), legal: vec![] };
        assert_eq!(select_action(&empty, 0.0, &mut rng), Err(DqnError::NoLegalActions));
    }

    #[test]
    fn uniform_exploration_passes_chi_square() {
        let legal: Vec<Action> = (0..5).flat_map(|v| TpType::ALL.map(|t| Action::new(NodeId(v), t))).collect();
        let q = QValues { q: Matrix::zeros(5, 3), legal };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 15];
        let n = 10_000;
        for _ in 0..n {
            let a = select_action(&q, 1.0, &mut rng).unwrap();
            counts[a.node.index() * 3 + a.tp_type.index()] += 1;
        }
        let e = n as f64 / 15.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 14 degrees of freedom, 0.999 quantile
        assert!(chi2 < 36.12, "chi2 = {chi2}");
    }
}
