// SPDX-License-Identifier: Apache-2.0
//! Deep Q-learning over test point insertion episodes, greedy inference and
//! method comparison.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{AigGraph, TpType};
use crate::cop::{cop_greedy_tpi, sim_greedy_tpi, CopError};
use crate::dqn::{select_action, state_features, DqnConfig, DqnError, GraphDqnParams, QValues};
use crate::env::{legal_actions, replay, Action, EnvConfig, EnvError, Episode};
use crate::gnn::GraphBatch;
use crate::nn::{Adam, Matrix, NnError, Tape};
use crate::pretrain::PretrainModel;
use crate::sim::{CoverageReport, PatternSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training pool is empty")]
    EmptyPool,
    #[error("budget must be between 1 and the legal action supply")]
    NoLegalActions,
    #[error("configuration needs a pre-trained embedding model")]
    MissingPretrain,
    #[error("invalid trainer configuration: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Cop(#[from] CopError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub episodes: usize,
    /// Discount factor in [0, 1).
    pub gamma0: f64,
    /// Episodes between target-network syncs.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub epsilon_decay: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Multiplier applied to rewards stored in replay.
    pub reward_scale: f64,
    pub updates_per_step: usize,
    /// Global gradient-norm limit, if any.
    pub grad_clip: Option<f64>,
    /// Reuse embeddings across observation points, which leave the graph
    /// structure unchanged.
    pub cache_embeddings: bool,
    pub env: EnvConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episodes: 500,
            gamma0: 0.99,
            target_sync: 10,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.6,
            replay_capacity: 10_000,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
            reward_scale: 1.0,
            updates_per_step: 1,
            grad_clip: None,
            cache_embeddings: false,
            env: EnvConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.gamma0) {
            return Err(TrainError::BadConfig("gamma0 must lie in [0, 1)"));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) {
            return Err(TrainError::BadConfig("epsilon must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync == 0 {
            return Err(TrainError::BadConfig("batch size, replay capacity and sync interval must be positive"));
        }
        Ok(())
    }

    /// Exploration rate at the start of episode `ep`.
    pub fn epsilon(&self, ep: usize) -> f64 {
        let span = self.epsilon_decay * self.episodes as f64;
        let frac = if span <= 0.0 { 1.0 } else { (ep as f64 / span).min(1.0) };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// A state as seen by the agent: graph, node features and legal actions.
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub graph: Arc<AigGraph>,
    pub features: Matrix,
    pub legal: Vec<Action>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<StateSnapshot>,
    pub action: Action,
    pub reward: f64,
    pub next: Arc<StateSnapshot>,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { capacity, items: VecDeque::new() }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Up to `n` distinct transitions drawn uniformly.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// `r` for terminal transitions, otherwise `r + gamma0 * max_{a'} Q(s', a')`
/// over the legal actions of `s'`.
pub fn td_target(reward: f64, done: bool, gamma0: f64, next: Option<&QValues>) -> f64 {
    if done {
        return reward;
    }
    let best = next.and_then(|q| q.greedy()).map_or(0.0, |(_, v)| v);
    reward + gamma0 * best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub circuit: usize,
    pub epsilon: f64,
    /// Terminal reward (test coverage improvement), unscaled.
    pub reward: f64,
    pub actions: Vec<Action>,
    /// Unscaled reward of every step.
    pub step_rewards: Vec<f64>,
    /// Mean minibatch loss over the episode's updates.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GraphDqnParams,
    pub log: Vec<EpisodeLog>,
    pub updates: usize,
}

fn stack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |m| m.cols());
    let rows = parts.iter().map(|m| m.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for m in parts {
        data.extend_from_slice(m.data());
    }
    Matrix::from_vec(rows, cols, data).expect("feature matrices share a width")
}

fn snapshot(
    cfg: &DqnConfig,
    pretrain: Option<&PretrainModel>,
    graph: Arc<AigGraph>,
    done: bool,
) -> Result<StateSnapshot, DqnError> {
    // terminal states are never bootstrapped from
    if done {
        return Ok(StateSnapshot { graph, features: Matrix::zeros(0, cfg.input_dim()), legal: Vec::new() });
    }
    let features = state_features(cfg, pretrain, &graph)?;
    let legal = legal_actions(&graph);
    Ok(StateSnapshot { graph, features, legal })
}

/// One gradient step on a sampled minibatch; returns the loss.
fn update<R: Rng>(
    online: &mut GraphDqnParams,
    target: &GraphDqnParams,
    opt: &mut Adam,
    buffer: &ReplayBuffer,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let batch = buffer.sample(config.batch_size, rng);
    // bootstrap values for non-terminal next states
    let boot: Vec<&Transition> = batch.iter().copied().filter(|t| !t.done).collect();
    let mut next_best = Vec::with_capacity(boot.len());
    if !boot.is_empty() {
        let graphs: Vec<&AigGraph> = boot.iter().map(|t| &*t.next.graph).collect();
        let gb = GraphBatch::union(&graphs);
        let x = stack(&boot.iter().map(|t| &t.next.features).collect::<Vec<_>>());
        let q = target.q_matrix(&gb, x)?;
        for (k, t) in boot.iter().enumerate() {
            let off = gb.offsets()[k];
            let best = t
                .next
                .legal
                .iter()
                .map(|a| q.get(off + a.node.index(), a.tp_type.index()))
                .fold(f64::NEG_INFINITY, f64::max);
            next_best.push(if best.is_finite() { best } else { 0.0 });
        }
    }
    let graphs: Vec<&AigGraph> = batch.iter().map(|t| &*t.state.graph).collect();
    let gb = GraphBatch::union(&graphs);
    let x = stack(&batch.iter().map(|t| &t.state.features).collect::<Vec<_>>());
    let mut picks = Vec::with_capacity(batch.len());
    let mut bi = 0;
    for (k, t) in batch.iter().enumerate() {
        let y = if t.done {
            t.reward
        } else {
            bi += 1;
            t.reward + config.gamma0 * next_best[bi - 1]
        };
        let row = gb.offsets()[k] + t.action.node.index();
        picks.push((row as u32, t.action.tp_type.index() as u32, y));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let q = online.forward(&mut tape, &gb, xv)?;
    let loss = tape.mse_pick(q, picks)?;
    let l = tape.value(loss).data()[0];
    tape.backward(loss, &mut online.store)?;
    if let Some(c) = config.grad_clip {
        online.store.clip_grad_norm(c);
    }
    opt.step(&mut online.store);
    Ok(l)
}

/// Trains a fresh network on episodes drawn uniformly from `pool`.
pub fn train(
    pool: &[AigGraph],
    pretrain: Option<&PretrainModel>,
    dqn: DqnConfig,
    config: &TrainerConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(pool, pretrain, dqn, config, |_| {})
}

/// [`train`] with a callback after every episode.
pub fn train_with(
    pool: &[AigGraph],
    pretrain: Option<&PretrainModel>,
    dqn: DqnConfig,
    config: &TrainerConfig,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    if dqn.pretrained && pretrain.is_none() {
        return Err(TrainError::MissingPretrain);
    }
    config.validate()?;
    let starts: Vec<Episode> =
        pool.iter().map(|g| Episode::reset(g.clone(), &config.env)).collect::<Result<_, _>>()?;
    let first: Vec<Arc<StateSnapshot>> = starts
        .iter()
        .map(|e| snapshot(&dqn, pretrain, e.graph_arc(), false).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut online = GraphDqnParams::new(dqn, config.seed);
    let mut target = online.clone();
    let mut opt = Adam::new(&online.store, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut log = Vec::with_capacity(config.episodes);
    let mut updates = 0;
    for ep in 0..config.episodes {
        let eps = config.epsilon(ep);
        let k = rng.gen_range(0..pool.len());
        let mut e = starts[k].clone();
        let mut s = first[k].clone();
        let (mut loss_sum, mut n_loss) = (0.0, 0usize);
        let mut reward = 0.0;
        let mut step_rewards = Vec::new();
        loop {
            if s.legal.is_empty() {
                return Err(TrainError::NoLegalActions);
            }
            // same draws as select_action
            let a = if eps > 0.0 && rng.gen::<f64>() < eps {
                s.legal[rng.gen_range(0..s.legal.len())]
            } else {
                let q = online.q_matrix(&GraphBatch::single(&s.graph), s.features.clone())?;
                QValues { q, legal: s.legal.clone() }.greedy().expect("legal set is non-empty").0
            };
            let out = e.step_mut(a)?;
            reward += out.reward;
            step_rewards.push(out.reward);
            let next = if config.cache_embeddings && a.tp_type == TpType::Op {
                let legal = if out.done { Vec::new() } else { legal_actions(e.graph()) };
                StateSnapshot { graph: e.graph_arc(), features: s.features.clone(), legal }
            } else {
                snapshot(&dqn, pretrain, e.graph_arc(), out.done)?
            };
            let next = Arc::new(next);
            buffer.push(Transition {
                state: s.clone(),
                action: a,
                reward: out.reward * config.reward_scale,
                next: next.clone(),
                done: out.done,
            });
            if buffer.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    loss_sum += update(&mut online, &target, &mut opt, &buffer, config, &mut rng)?;
                    n_loss += 1;
                    updates += 1;
                }
            }
            s = next;
            if out.done {
                break;
            }
        }
        if (ep + 1) % config.target_sync == 0 {
            target.store.copy_from(&online.store)?;
        }
        let entry = EpisodeLog {
            episode: ep,
            circuit: k,
            epsilon: eps,
            reward,
            actions: e.actions().to_vec(),
            step_rewards,
            loss: if n_loss > 0 { Some(loss_sum / n_loss as f64) } else { None },
        };
        on_episode(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params: online, log, updates })
}

#[derive(Debug, Clone)]
pub struct InferResult {
    pub actions: Vec<Action>,
    pub graph: AigGraph,
    pub initial: CoverageReport,
    pub final_report: CoverageReport,
}

impl InferResult {
    pub fn improvement(&self) -> f64 {
        self.final_report.test_coverage - self.initial.test_coverage
    }
}

/// Greedy rollout of `params` for `budget` steps.
pub fn infer(
    g0: &AigGraph,
    params: &GraphDqnParams,
    pretrain: Option<&PretrainModel>,
    env: &EnvConfig,
    budget: usize,
) -> Result<InferResult, TrainError> {
    if budget == 0 || budget > 3 * g0.candidate_count() {
        return Err(TrainError::NoLegalActions);
    }
    if params.config.pretrained && pretrain.is_none() {
        return Err(TrainError::MissingPretrain);
    }
    let cfg = EnvConfig { budget: Some(budget), ..env.clone() };
    let mut e = Episode::reset(g0.clone(), &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !e.done() {
        let x = state_features(&params.config, pretrain, e.graph())?;
        let q = params.q_values(e.graph(), x)?;
        let a = select_action(&q, 0.0, &mut rng).map_err(|_| TrainError::NoLegalActions)?;
        e.step_mut(a)?;
    }
    Ok(InferResult {
        actions: e.actions().to_vec(),
        graph: e.graph().clone(),
        initial: e.initial_report().clone(),
        final_report: e.final_report().expect("episode finished").clone(),
    })
}

/// A test point insertion method under comparison.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    GraphDqn { params: &'a GraphDqnParams, pretrain: Option<&'a PretrainModel> },
    CopGreedy,
    SimGreedy,
    /// Greedy rollout of an untrained network with one-hot features.
    Random { seed: u64 },
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::GraphDqn { .. } => "graph-dqn",
            Method::CopGreedy => "cop-greedy",
            Method::SimGreedy => "sim-greedy",
            Method::Random { .. } => "random",
        }
    }

    /// Actions chosen on `g0` with the given budget.
    pub fn plan(&self, g0: &AigGraph, env: &EnvConfig, budget: usize) -> Result<Vec<Action>, TrainError> {
        let patterns = || PatternSet::random(env.pattern_seed, env.n_patterns, g0);
        Ok(match self {
            Method::GraphDqn { params, pretrain } => infer(g0, params, *pretrain, env, budget)?.actions,
            Method::CopGreedy => cop_greedy_tpi(g0, budget, &patterns())?.actions,
            Method::SimGreedy => sim_greedy_tpi(g0, budget, &patterns())?.actions,
            Method::Random { seed } => {
                let p = GraphDqnParams::new(DqnConfig { pretrained: false, ..DqnConfig::default() }, *seed);
                infer(g0, &p, None, env, budget)?.actions
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub test_coverage: f64,
    pub improvement: f64,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub circuit: String,
    pub gates: usize,
    pub nodes: usize,
    pub budget: usize,
    pub initial_tc: f64,
    pub results: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub methods: Vec<String>,
    pub rows: Vec<EvalRow>,
    /// Mean improvement of each method, in `methods` order.
    pub mean_improvement: Vec<f64>,
    pub mean_test_coverage: Vec<f64>,
}

impl EvalTable {
    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.methods.iter().position(|m| m == method).map(|i| self.mean_improvement[i])
    }
}

/// Runs every method on every circuit with identical budgets, fault sets and
/// patterns. The budget defaults to 1% of each circuit's gates.
pub fn evaluate(
    circuits: &[(String, AigGraph)],
    methods: &[Method<'_>],
    env: &EnvConfig,
) -> Result<EvalTable, TrainError> {
    let mut rows = Vec::with_capacity(circuits.len());
    for (name, g) in circuits {
        let start = Episode::reset(g.clone(), env)?;
        let budget = start.budget();
        let cfg = EnvConfig { budget: Some(budget), ..env.clone() };
        let mut results = Vec::with_capacity(methods.len());
        for m in methods {
            let actions = m.plan(g, env, budget)?;
            let (e, _) = replay(g.clone(), &cfg, &actions)?;
            let tc = e.final_report().expect("plan fills the budget").test_coverage;
            results.push(MethodResult {
                method: m.name().to_string(),
                test_coverage: tc,
                improvement: tc - start.initial_tc(),
                actions,
            });
        }
        rows.push(EvalRow {
            circuit: name.clone(),
            gates: g.original_gate_count(),
            nodes: g.node_count(),
            budget,
            initial_tc: start.initial_tc(),
            results,
        });
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MethodResult) -> f64| -> Vec<f64> {
        (0..methods.len()).map(|i| rows.iter().map(|r| f(&r.results[i])).sum::<f64>() / n).collect()
    };
    let mean_improvement = mean(&|r| r.improvement);
    let mean_test_coverage = mean(&|r| r.test_coverage);
    Ok(EvalTable {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        rows,
        mean_improvement,
        mean_test_coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::NodeId;
    use crate::netlist::{random_circuit, Gate, GateKind, Netlist};
    use alloc::vec;

    fn small_cfg() -> TrainerConfig {
        TrainerConfig {
            episodes: 6,
            batch_size: 2,
            env: EnvConfig { n_patterns: 128, pattern_seed: 1, budget: Some(2) },
            ..TrainerConfig::default()
        }
    }

    fn one_hot() -> DqnConfig {
        DqnConfig { pretrained: false, ..DqnConfig::default() }
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainerConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(150) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(300) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(499) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let g = Arc::new(AigGraph::from_netlist(&random_circuit(0, 3, 3)));
        let s = Arc::new(StateSnapshot { graph: g, features: Matrix::zeros(0, 0), legal: vec![] });
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(Transition {
                state: s.clone(),
                action: Action::new(NodeId(0), TpType::Op),
                reward: i as f64,
                next: s.clone(),
                done: true,
            });
            assert!(b.len() <= 3);
        }
        let r: Vec<f64> = (0..3).map(|i| b.get(i).reward).collect();
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(10, &mut rng).len(), 3);
    }

    #[test]
    fn td_target_terms() {
        let q = QValues {
            q: Matrix::from_vec(2, 3, vec![0.5, 9.0, -1.0, 0.25, 0.75, 2.0]).unwrap(),
            legal: vec![Action::new(NodeId(0), TpType::AndCp), Action::new(NodeId(1), TpType::OrCp)],
        };
        assert_eq!(td_target(0.3, true, 0.99, Some(&q)), 0.3);
        // max over legal entries only: 0.75, not the illegal 9.0
        assert_eq!(td_target(0.0, false, 0.5, Some(&q)), 0.375);
    }

    #[test]
    fn training_is_reproducible_and_logs_every_episode() {
        let pool: Vec<AigGraph> = (0..3).map(|s| AigGraph::from_netlist(&random_circuit(s, 5, 20))).collect();
        let a = train(&pool, None, one_hot(), &small_cfg()).unwrap();
        let b = train(&pool, None, one_hot(), &small_cfg()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 6);
        assert!(a.updates > 0);
        for ((_, x), (_, y)) in a.params.store.iter().zip(b.params.store.iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(train(&[], None, one_hot(), &small_cfg()).unwrap_err(), TrainError::EmptyPool);
    }

    #[test]
    fn inference_replays_exactly() {
        let g = AigGraph::from_netlist(&random_circuit(4, 6, 60));
        let p = GraphDqnParams::new(one_hot(), 9);
        let env = EnvConfig { n_patterns: 256, pattern_seed: 3, budget: None };
        let r = infer(&g, &p, None, &env, 3).unwrap();
        assert_eq!(r.actions.len(), 3);
        let cfg = EnvConfig { budget: Some(3), ..env.clone() };
        let (e, total) = replay(g.clone(), &cfg, &r.actions).unwrap();
        assert_eq!(e.final_report(), Some(&r.final_report));
        assert_eq!(total, r.improvement());
        assert_eq!(infer(&g, &p, None, &env, 0).unwrap_err(), TrainError::NoLegalActions);
    }

    #[test]
    fn same_method_twice_gives_identical_columns() {
        let g = AigGraph::from_netlist(&random_circuit(2, 6, 50));
        let env = EnvConfig { n_patterns: 256, pattern_seed: 3, budget: None };
        let t = evaluate(&[("c".to_string(), g)], &[Method::CopGreedy, Method::CopGreedy], &env).unwrap();
        assert_eq!(t.rows[0].results[0].test_coverage, t.rows[0].results[1].test_coverage);
        assert_eq!(t.mean_improvement[0], t.mean_improvement[1]);
    }

    /// An unobserved AND whose observation point lifts coverage from 4/10 to
    /// 10/10 while either control point is worth nothing.
    #[test]
    fn bandit_fixture_learns_observation_point() {
        // y = AND(a, b) is never observed: the only output is the input c
        let gates = vec![
            Gate { id: 0, label: "a".into(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 1, label: "b".into(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 2, label: "c".into(), kind: GateKind::Input, fanins: vec![] },
            Gate { id: 3, label: "y".into(), kind: GateKind::And, fanins: vec![0, 1] },
            Gate { id: 4, label: "z".into(), kind: GateKind::Buf, fanins: vec![2] },
        ];
        let n = Netlist::new("bandit", gates, vec![4]).unwrap();
        let g = AigGraph::from_netlist(&n);
        let env = EnvConfig { n_patterns: 256, pattern_seed: 0, budget: Some(1) };
        let y = g.node_of_gate(3);
        let reward = |a: Action| replay(g.clone(), &env, &[a]).unwrap().1;
        let r_op = reward(Action::new(y, TpType::Op));
        assert_eq!(reward(Action::new(y, TpType::AndCp)), 0.0);
        assert_eq!(reward(Action::new(y, TpType::OrCp)), 0.0);
        assert!((r_op - 0.6).abs() < 1e-12, "{r_op}");
        let cfg = TrainerConfig {
            episodes: 150,
            batch_size: 8,
            lr: 3e-3,
            env: env.clone(),
            ..TrainerConfig::default()
        };
        let out = train(std::slice::from_ref(&g), None, one_hot(), &cfg).unwrap();
        let r = infer(&g, &out.params, None, &env, 1).unwrap();
        assert_eq!(r.actions, vec![Action::new(y, TpType::Op)]);
    }
}
