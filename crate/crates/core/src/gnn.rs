// SPDX-License-Identifier: Apache-2.0
//! Bidirectional attention message passing with a GRU node update.
//!
//! Shared by the signal-probability model and the Q-network. All nodes are
//! updated synchronously: iteration `d` reads only states from `d - 1`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{AigGraph, NodeId};
use crate::nn::{Csr, GruCell, Linear, Matrix, NnError, ParamId, ParamStore, Tape, Var};

pub const HIDDEN_DIM: usize = 64;
pub const ITERATIONS: usize = 10;

/// How neighbor states are weighted before summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Separate attention vectors for predecessors and successors.
    TestabilityAware,
    /// One attention vector used for both directions.
    Tied,
    /// Plain mean over neighbors.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub iterations: usize,
    pub aggregation: Aggregation,
    /// Negative slope of an optional leaky rectifier on attention scores.
    pub score_leak: Option<f64>,
}

impl GnnConfig {
    pub fn new(input_dim: usize, aggregation: Aggregation) -> GnnConfig {
        GnnConfig { input_dim, hidden_dim: HIDDEN_DIM, iterations: ITERATIONS, aggregation, score_leak: None }
    }
}

/// One or more graphs laid out as a single disjoint union.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pred: Arc<Csr>,
    succ: Arc<Csr>,
    offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn single(g: &AigGraph) -> GraphBatch {
        GraphBatch::union(&[g])
    }

    pub fn union(graphs: &[&AigGraph]) -> GraphBatch {
        let mut pred: Vec<Vec<u32>> = Vec::new();
        let mut succ: Vec<Vec<u32>> = Vec::new();
        let mut offsets = alloc::vec![0];
        for g in graphs {
            let base = pred.len() as u32;
            for v in 0..g.node_count() as u32 {
                pred.push(g.fanins(NodeId(v)).map(|u| u.0 + base).collect());
                succ.push(g.fanouts(NodeId(v)).map(|u| u.0 + base).collect());
            }
            offsets.push(pred.len());
        }
        GraphBatch {
            pred: Arc::new(Csr::from_lists(&pred).expect("graph adjacency is in range")),
            succ: Arc::new(Csr::from_lists(&succ).expect("graph adjacency is in range")),
            offsets,
        }
    }

    /// Builds a batch from explicit predecessor lists; successor lists are
    /// derived by reversing every edge.
    pub fn from_predecessors(pred: &[Vec<u32>]) -> Result<GraphBatch, NnError> {
        let mut succ: Vec<Vec<u32>> = alloc::vec![Vec::new(); pred.len()];
        for (v, ps) in pred.iter().enumerate() {
            for &p in ps {
                if p as usize >= pred.len() {
                    return Err(NnError::BadAdjacency("predecessor out of range"));
                }
                succ[p as usize].push(v as u32);
            }
        }
        Ok(GraphBatch {
            pred: Arc::new(Csr::from_lists(pred)?),
            succ: Arc::new(Csr::from_lists(&succ)?),
            offsets: alloc::vec![0, pred.len()],
        })
    }

    pub fn node_count(&self) -> usize {
        self.pred.n_rows()
    }

    /// Row where graph `k` starts; `offsets()[len]` is the total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn predecessors(&self) -> &Csr {
        &self.pred
    }

    pub fn successors(&self) -> &Csr {
        &self.succ
    }
}

fn mean_weights(csr: &Csr) -> Matrix {
    let mut w = Matrix::zeros(csr.n_entries(), 1);
    for i in 0..csr.n_rows() {
        let r = csr.range(i);
        let k = r.len() as f64;
        for e in r {
            w.data_mut()[e] = 1.0 / k;
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnEncoder {
    pub config: GnnConfig,
    pub proj: Linear,
    pub w0: ParamId,
    pub w_pre: ParamId,
    pub w_suc: ParamId,
    pub gru: GruCell,
}

/// Attention weights of one iteration, kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub alpha: Var,
    pub beta: Var,
}

impl GnnEncoder {
    /// Registers parameters under `{name}.*`. With tied aggregation `w_suc`
    /// aliases `w_pre`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: GnnConfig, rng: &mut R) -> GnnEncoder {
        let h = config.hidden_dim;
        let proj = Linear::new(store, &alloc::format!("{name}.proj"), config.input_dim, h, rng);
        let w0 = store.add_uniform(&alloc::format!("{name}.att.w0"), 1, h, h, rng);
        let w_pre = store.add_uniform(&alloc::format!("{name}.att.w_pre"), 1, h, h, rng);
        let w_suc = match config.aggregation {
            Aggregation::Tied => w_pre,
            _ => store.add_uniform(&alloc::format!("{name}.att.w_suc"), 1, h, h, rng),
        };
        let gru = GruCell::new(store, &alloc::format!("{name}.gru"), 2 * h, h, rng);
        GnnEncoder { config, proj, w0, w_pre, w_suc, gru }
    }

    fn weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        q: Option<Var>,
        w: ParamId,
        csr: &Arc<Csr>,
        mean: Option<Var>,
    ) -> Result<Var, NnError> {
        if let Some(m) = mean {
            return Ok(m);
        }
        let wv = tape.param(store, w)?;
        let k = tape.linear(h, wv, None)?;
        let mut s = tape.edge_score(q.unwrap(), k, csr.clone())?;
        if let Some(leak) = self.config.score_leak {
            s = tape.leaky_relu(s, leak);
        }
        tape.segment_softmax(s, csr.clone())
    }

    /// Final hidden states (rows follow the batch layout). `trace` collects
    /// the attention weights of every iteration when given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
        x: Var,
        mut trace: Option<&mut Vec<AttentionVars>>,
    ) -> Result<Var, NnError> {
        let mut h = self.proj.forward(tape, store, x)?;
        let (mean_pre, mean_suc) = match self.config.aggregation {
            Aggregation::Mean => (
                Some(tape.constant(mean_weights(&batch.pred))),
                Some(tape.constant(mean_weights(&batch.succ))),
            ),
            _ => (None, None),
        };
        for _ in 0..self.config.iterations {
            let q = match self.config.aggregation {
                Aggregation::Mean => None,
                _ => {
                    let w0 = tape.param(store, self.w0)?;
                    Some(tape.linear(h, w0, None)?)
                }
            };
            let alpha = self.weights(tape, store, h, q, self.w_pre, &batch.pred, mean_pre)?;
            let beta = self.weights(tape, store, h, q, self.w_suc, &batch.succ, mean_suc)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(AttentionVars { alpha, beta });
            }
            let m_pre = tape.aggregate(alpha, h, batch.pred.clone())?;
            let m_suc = tape.aggregate(beta, h, batch.succ.clone())?;
            let m = tape.concat_cols(m_pre, m_suc)?;
            h = self.gru.forward(tape, store, m, h)?;
        }
        Ok(h)
    }
}
