// SPDX-License-Identifier: Apache-2.0
//! Oracle suites behind the `selfcheck` command.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tpilab_core::aig::{check_equivalence, AigGraph, DEFAULT_MAX_EQUIV_INPUTS};
use tpilab_core::cop::cop_analyze;
use tpilab_core::dqn::{build_features, DqnConfig, GraphDqnParams, FEATURE_DIM};
use tpilab_core::env::legal_actions;
use tpilab_core::gnn::{Aggregation, GnnConfig, GnnEncoder, GraphBatch};
use tpilab_core::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use tpilab_core::netlist::{random_circuit, random_tree, Netlist};
use tpilab_core::nn::{GruCell, Linear, Matrix, Mlp, NnError, ParamStore, Tape, Var};
use tpilab_core::oracle::{exact_probabilities, naive_fault_flags};
use tpilab_core::pretrain::{one_hot_features, PretrainModel};
use tpilab_core::sim::{enumerate_faults, fault_simulate, PatternSet};

/// Relative error bound of the finite-difference checks.
pub const GRAD_TOL: f64 = 1e-4;
pub const COP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// First failure, or a one-line summary on success.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

fn result(name: &str, cases: usize, failure: Option<String>, ok: String) -> SuiteResult {
    SuiteResult { name: name.into(), passed: failure.is_none(), cases, detail: failure.unwrap_or(ok) }
}

/// Exhaustive netlist-vs-AIG comparison on every primary output.
pub fn aig_equivalence(circuits: &[Netlist]) -> SuiteResult {
    let mut failure = None;
    for n in circuits {
        let g = AigGraph::from_netlist(n);
        let bad = match check_equivalence(n, &g, DEFAULT_MAX_EQUIV_INPUTS) {
            Ok(r) if r.equivalent => g.check_invariants().err().map(|e| format!("{}: {e}", n.name)),
            Ok(r) => Some(format!("{}: mismatch at {:?}", n.name, r.counterexample)),
            Err(e) => Some(format!("{}: {e}", n.name)),
        };
        if bad.is_some() {
            failure = bad;
            break;
        }
    }
    result("aig-equivalence", circuits.len(), failure, "all outputs equal under exhaustive simulation".into())
}

/// Bit-parallel fault simulation against the per-fault scalar oracle.
pub fn fault_sim_oracle(graphs: &[AigGraph], patterns: usize, seed: u64) -> SuiteResult {
    let mut failure = None;
    let mut faults = 0;
    for (i, g) in graphs.iter().enumerate() {
        let f = enumerate_faults(g);
        let p = PatternSet::random(seed.wrapping_add(i as u64), patterns, g);
        faults += f.len();
        let fast = match fault_simulate(g, &f, &p) {
            Ok(r) => r.detected,
            Err(e) => {
                failure = Some(format!("circuit {i}: {e}"));
                break;
            }
        };
        let slow = naive_fault_flags(g, &f, &p);
        if let Some(k) = fast.iter().zip(&slow).position(|(a, b)| a != b) {
            failure = Some(format!("circuit {i}: fault {:?} differs (fast {}, naive {})", f.faults()[k], fast[k], slow[k]));
            break;
        }
    }
    result("fault-sim-oracle", graphs.len(), failure, format!("{faults} faults agree"))
}

/// COP controllability against exhaustive signal probabilities on
/// fanout-free circuits with `n_pis` inputs each.
pub fn cop_tree_exactness(count: usize, n_pis: usize, seed: u64) -> SuiteResult {
    let mut failure = None;
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let n = random_tree(seed.wrapping_add(k as u64), n_pis);
        let g = AigGraph::from_netlist(&n);
        let exact = exact_probabilities(&g);
        let cop = cop_analyze(&g);
        for (v, (a, b)) in cop.c1.iter().zip(&exact).enumerate() {
            worst = worst.max((a - b).abs());
            if (a - b).abs() > COP_TOL {
                failure = Some(format!("{}: node {v} COP {a} exact {b}", n.name));
            }
        }
        if failure.is_some() {
            break;
        }
    }
    result("cop-fanout-free", count, failure, format!("max deviation {worst:e}"))
}

fn constant(tape: &mut Tape, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Var {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.constant(Matrix::from_vec(rows, cols, data).expect("sized"))
}

/// Σ(x ∘ c) for a fixed random `c`, so every output element gets its own weight.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var, NnError> {
    let (r, c) = tape.value(x).shape();
    let w = constant(tape, r, c, &mut ChaCha8Rng::seed_from_u64(seed));
    let p = tape.mul(x, w)?;
    Ok(tape.sum_all(p))
}

/// Named gradient checks covering every layer kind and the full Q-network.
pub fn gradient_reports(samples: Option<usize>, seed: u64) -> Result<Vec<(String, GradCheckReport)>, NnError> {
    let cfg = GradCheckConfig { samples_per_param: samples, ..GradCheckConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // elementwise activations behind a linear layer
    {
        let mut s = ParamStore::new();
        let x = s.add_uniform("x", 5, 4, 1, &mut rng);
        let l = Linear::new(&mut s, "lin", 4, 6, &mut rng);
        let r = check_gradients(
            &mut s,
            |t, s| {
                let xv = t.param(s, x)?;
                let y = l.forward(t, s, xv)?;
                let a = t.sigmoid(y);
                let b = t.tanh(y);
                let c = t.relu(y);
                let d = t.leaky_relu(y, 0.2);
                let ab = t.mul(a, b)?;
                let cd = t.sub(c, d)?;
                let e = t.add(ab, cd)?;
                let e = t.scale(e, 0.7);
                weighted_sum(t, e, 1)
            },
            &cfg,
            &mut rng,
        )?;
        out.push(("linear+activations".to_string(), r));
    }
    // column and row plumbing
    {
        let mut s = ParamStore::new();
        let a = s.add_uniform("a", 4, 3, 1, &mut rng);
        let b = s.add_uniform("b", 4, 2, 1, &mut rng);
        let r = check_gradients(
            &mut s,
            |t, s| {
                let av = t.param(s, a)?;
                let bv = t.param(s, b)?;
                let c = t.concat_cols(av, bv)?;
                let d = t.slice_cols(c, 1, 3)?;
                let e = t.gather_rows(d, Arc::new(vec![2, 0, 2, 3, 1]))?;
                let e = t.tanh(e);
                weighted_sum(t, e, 2)
            },
            &cfg,
            &mut rng,
        )?;
        out.push(("concat+slice+gather".to_string(), r));
    }
    {
        let mut s = ParamStore::new();
        let x = s.add_uniform("x", 3, 5, 1, &mut rng);
        let h = s.add_uniform("h", 3, 4, 1, &mut rng);
        let cell = GruCell::new(&mut s, "gru", 5, 4, &mut rng);
        let r = check_gradients(
            &mut s,
            |t, s| {
                let xv = t.param(s, x)?;
                let hv = t.param(s, h)?;
                let y = cell.forward(t, s, xv, hv)?;
                let y = cell.forward(t, s, xv, y)?;
                weighted_sum(t, y, 3)
            },
            &cfg,
            &mut rng,
        )?;
        out.push(("gru".to_string(), r));
    }
    {
        let mut s = ParamStore::new();
        let x = s.add_uniform("x", 6, 5, 1, &mut rng);
        let mlp = Mlp::new(&mut s, "mlp", &[5, 7, 3], &mut rng);
        let r = check_gradients(
            &mut s,
            |t, s| {
                let xv = t.param(s, x)?;
                let y = mlp.forward(t, s, xv)?;
                t.mse_pick(y, vec![(0, 1, 0.3), (4, 2, -0.5), (5, 0, 1.0)])
            },
            &cfg,
            &mut rng,
        )?;
        out.push(("mlp+mse".to_string(), r));
    }

    let n = random_circuit(seed ^ 0xC1, 4, 6);
    let g = AigGraph::from_netlist(&n);
    let batch = GraphBatch::single(&g);

    for (name, agg, leak) in [
        ("encoder:testability-aware", Aggregation::TestabilityAware, None),
        ("encoder:testability-aware+leaky", Aggregation::TestabilityAware, Some(0.2)),
        ("encoder:tied", Aggregation::Tied, None),
        ("encoder:mean", Aggregation::Mean, None),
    ] {
        let mut s = ParamStore::new();
        let gc = GnnConfig { input_dim: 3, hidden_dim: 8, iterations: 3, aggregation: agg, score_leak: leak };
        let enc = GnnEncoder::new(&mut s, "enc", gc, &mut rng);
        let x = one_hot_features(&g);
        let r = check_gradients(
            &mut s,
            |t, s| {
                let xv = t.constant(x.clone());
                let h = enc.forward(t, s, &batch, xv, None)?;
                weighted_sum(t, h, 4)
            },
            &cfg,
            &mut rng,
        )?;
        out.push((name.to_string(), r));
    }
    {
        let mut m = PretrainModel::new(seed);
        let x = one_hot_features(&g);
        let labels: Vec<f64> = (0..g.node_count()).map(|i| (i % 5) as f64 / 4.0).collect();
        let (enc, head) = (m.encoder, m.head.clone());
        let r = check_gradients(
            &mut m.store,
            |t, s| {
                let xv = t.constant(x.clone());
                let h = enc.forward(t, s, &batch, xv, None)?;
                let y = head.forward(t, s, h)?;
                let p = t.sigmoid(y);
                t.mae(p, labels.clone())
            },
            &cfg,
            &mut rng,
        )?;
        out.push(("pretrain-model".to_string(), r));
    }
    {
        // full network at production width on a graph of about twenty nodes
        let n = random_circuit(seed ^ 0xD0, 4, 5);
        let g = AigGraph::from_netlist(&n);
        let batch = GraphBatch::single(&g);
        let mut p = GraphDqnParams::new(DqnConfig::default(), seed);
        let emb = Matrix::from_vec(
            g.node_count(),
            FEATURE_DIM - 3,
            (0..g.node_count() * (FEATURE_DIM - 3)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let x = build_features(&g, Some(&emb)).map_err(|_| NnError::ShapeMismatch {
            op: "features",
            left: (g.node_count(), FEATURE_DIM),
            right: (0, 0),
        })?;
        let picks: Vec<(u32, u32, f64)> = legal_actions(&g)
            .iter()
            .map(|a| (a.node.0, a.tp_type.index() as u32, rng.gen_range(-1.0..1.0)))
            .collect();
        let (enc, readout) = (p.encoder, p.readout.clone());
        let r = check_gradients(
            &mut p.store,
            |t, s| {
                let xv = t.constant(x.clone());
                let h = enc.forward(t, s, &batch, xv, None)?;
                let q = readout.forward(t, s, h)?;
                let l = t.mse_pick(q, picks.clone())?;
                let w = weighted_sum(t, q, 5)?;
                t.add(l, w)
            },
            &cfg,
            &mut rng,
        )?;
        out.push((format!("graph-dqn({} nodes)", g.node_count()), r));
    }
    Ok(out)
}

pub fn gradient_suite(samples: Option<usize>, seed: u64) -> SuiteResult {
    match gradient_reports(samples, seed) {
        Ok(reports) => {
            let cases = reports.iter().map(|(_, r)| r.checked).sum();
            let failure = reports
                .iter()
                .find(|(_, r)| !r.passes(GRAD_TOL))
                .map(|(n, r)| format!("{n}: {:?}", r.worst));
            let worst = reports.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
            result("gradient-check", cases, failure, format!("{} checks, max relative error {worst:e}", reports.len()))
        }
        Err(e) => result("gradient-check", 0, Some(e.to_string()), String::new()),
    }
}

/// Small instances of every suite; `circuits` controls their size.
pub fn run(circuits: usize, grad_samples: usize, seed: u64) -> SelfcheckReport {
    let nets: Vec<Netlist> = (0..circuits as u64).map(|k| random_circuit(seed + k, 4 + (k % 9) as usize, 10 + 3 * k as usize)).collect();
    let graphs: Vec<AigGraph> = nets.iter().map(AigGraph::from_netlist).collect();
    let suites = vec![
        aig_equivalence(&nets),
        fault_sim_oracle(&graphs, 256, seed),
        cop_tree_exactness(circuits, 10, seed),
        gradient_suite(Some(grad_samples), seed),
    ];
    SelfcheckReport { passed: suites.iter().all(|s| s.passed), suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_selfcheck_passes() {
        let r = run(4, 2, 0);
        assert!(r.passed, "{r:#?}");
        assert_eq!(r.suites.len(), 4);
    }
}
