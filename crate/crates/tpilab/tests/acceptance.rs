// SPDX-License-Identifier: Apache-2.0
//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The learning criteria train nine networks and take a while.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpilab::bench::parse_bench;
use tpilab::selfcheck::{aig_equivalence, cop_tree_exactness, fault_sim_oracle, gradient_reports, GRAD_TOL};
use tpilab_core::aig::{AigGraph, TpType};
use tpilab_core::dqn::DqnConfig;
use tpilab_core::env::{Action, EnvConfig, Episode};
use tpilab_core::gnn::Aggregation;
use tpilab_core::netlist::{random_circuit, Gate, GateKind, Netlist};
use tpilab_core::pretrain::{pretrain, PretrainConfig, PretrainModel};
use tpilab_core::sim::fault_simulate;
use tpilab_core::trainer::{evaluate, train, Method, TrainerConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: &str, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let passed = o.passed && in_time;
    let budget = limit.map(|l| format!(", limit {} s", l.as_secs())).unwrap_or_default();
    let late = if in_time { "" } else { ", over time" };
    println!(
        "{id} {} {title}: {} ({:.1} s{budget}{late})",
        if passed { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    passed
}

fn corpus() -> Vec<Netlist> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .iter()
        .map(|p| parse_bench(&std::fs::read_to_string(p).unwrap(), &p.file_stem().unwrap().to_string_lossy()).unwrap())
        .collect()
}

fn a1() -> Outcome {
    let mut nets: Vec<Netlist> = corpus().into_iter().filter(|n| n.primary_inputs().len() <= 16).collect();
    nets.extend((0..60u64).map(|s| random_circuit(100 + s, 2 + (s % 15) as usize, 5 + (s * 13 % 150) as usize)));
    let r = aig_equivalence(&nets);
    Outcome { passed: r.passed && nets.len() >= 50, detail: format!("{} circuits, {}", nets.len(), r.detail) }
}

fn a2() -> Outcome {
    let graphs: Vec<AigGraph> = (0..)
        .map(|s: u64| AigGraph::from_netlist(&random_circuit(200 + s, 4 + (s % 12) as usize, 5 + (s * 11 % 60) as usize)))
        .filter(|g| g.node_count() <= 200)
        .take(36)
        .collect();
    let max_nodes = graphs.iter().map(|g| g.node_count()).max().unwrap();
    let r = fault_sim_oracle(&graphs, 256, 9);
    Outcome {
        passed: r.passed && max_nodes <= 200,
        detail: format!("{} circuits up to {max_nodes} nodes, 256 patterns, {}", graphs.len(), r.detail),
    }
}

fn a3() -> Outcome {
    let mut cases = 0;
    let mut notes = Vec::new();
    let mut passed = true;
    for pis in [3, 8, 12, 16] {
        let r = cop_tree_exactness(8, pis, 300 + pis as u64);
        cases += r.cases;
        passed &= r.passed;
        notes.push(format!("{pis} inputs: {}", r.detail));
    }
    Outcome { passed: passed && cases >= 20, detail: format!("{cases} fanout-free circuits; {}", notes.join("; ")) }
}

fn a4() -> Outcome {
    match gradient_reports(Some(24), 4) {
        Ok(reports) => {
            let worst = reports.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
            let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passes(GRAD_TOL)).map(|(n, _)| n.as_str()).collect();
            let checked: usize = reports.iter().map(|(_, r)| r.checked).sum();
            Outcome {
                passed: failed.is_empty(),
                detail: format!(
                    "{} checks ({}), {checked} coordinates, max relative error {worst:.2e}{}",
                    reports.len(),
                    reports.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", "),
                    if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
                ),
            }
        }
        Err(e) => Outcome { passed: false, detail: e.to_string() },
    }
}

/// `t = AND(a0, ..., a10)`: an AND-CP on `t` halves the chance of the
/// all-ones pattern that its SA0 faults need.
fn wide_and() -> Netlist {
    let mut gates: Vec<Gate> =
        (0..11).map(|i| Gate { id: i, label: format!("a{i}"), kind: GateKind::Input, fanins: vec![] }).collect();
    gates.push(Gate { id: 11, label: "t".into(), kind: GateKind::And, fanins: (0..11).collect() });
    Netlist::new("wide_and", gates, vec![11]).unwrap()
}

fn a5() -> Outcome {
    // (i) every logged training episode
    let pool: Vec<AigGraph> =
        (0..8u64).map(|s| AigGraph::from_netlist(&random_circuit(500 + s, 8, 30 + 5 * s as usize))).collect();
    let env = EnvConfig { budget: Some(3), ..EnvConfig::default() };
    let cfg = TrainerConfig { episodes: 60, batch_size: 8, seed: 5, env, ..TrainerConfig::default() };
    let dqn = DqnConfig { pretrained: false, ..DqnConfig::default() };
    let out = match train(&pool, None, dqn, &cfg) {
        Ok(o) => o,
        Err(e) => return Outcome { passed: false, detail: format!("training failed: {e}") },
    };
    let mut bad = Vec::new();
    let mut steps = 0;
    for log in &out.log {
        let e0 = Episode::reset(pool[log.circuit].clone(), &cfg.env).unwrap();
        let mut g = pool[log.circuit].clone();
        for a in &log.actions {
            g.splice_after(a.node, a.tp_type).unwrap();
        }
        let mut patterns = e0.patterns().clone();
        patterns.ensure_inputs(&g);
        let fin = fault_simulate(&g, e0.faults(), &patterns).unwrap();
        let (last, rest) = log.step_rewards.split_last().unwrap();
        steps += log.step_rewards.len();
        if rest.iter().any(|&r| r != 0.0)
            || *last != fin.test_coverage - e0.initial_tc()
            || log.reward != *last
            || log.actions.len() != e0.budget()
        {
            bad.push(log.episode);
        }
    }
    // (ii) observation points only
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut op_min = f64::INFINITY;
    let n_op = 120;
    for k in 0..n_op {
        let g = AigGraph::from_netlist(&random_circuit(700 + k, 6 + (k % 10) as usize, 30 + (k * 17 % 250) as usize));
        let env = EnvConfig { budget: Some(1 + (k % 4) as usize), ..EnvConfig::default() };
        let mut e = Episode::reset(g, &env).unwrap();
        let mut total = 0.0;
        while !e.done() {
            let ops: Vec<Action> = e.legal_actions().unwrap().into_iter().filter(|a| a.tp_type == TpType::Op).collect();
            total += e.step_mut(*ops.choose(&mut rng).unwrap()).unwrap().reward;
        }
        op_min = op_min.min(total);
    }
    // (iii) constructed coverage loss
    let g = AigGraph::from_netlist(&wide_and());
    let t = g.node_of_gate(11);
    let mut e = Episode::reset(g, &EnvConfig::default()).unwrap();
    let neg = e.step_mut(Action::new(t, TpType::AndCp)).unwrap().reward;
    Outcome {
        passed: bad.is_empty() && op_min >= 0.0 && neg < 0.0,
        detail: format!(
            "(i) {} episodes, {steps} steps, {} contract violations; (ii) {n_op} OP-only episodes, min reward {op_min:.4}; (iii) AND-CP fixture reward {neg:.4}",
            out.log.len(),
            bad.len()
        ),
    }
}

const HELD_OUT: usize = 5;
const POOL: u64 = 60;
const SEEDS: u64 = 3;

struct Protocol {
    pretrain: PretrainModel,
    pool: Vec<AigGraph>,
    held_out: Vec<(String, AigGraph)>,
    env: EnvConfig,
    setup_ok: bool,
    setup: String,
}

fn protocol() -> Protocol {
    let corpus: Vec<AigGraph> = (0..300u64)
        .map(|s| AigGraph::from_netlist(&random_circuit(s, 6 + (s % 10) as usize, 12 + (s % 40) as usize)))
        .collect();
    let pretrain = pretrain(&corpus, &PretrainConfig { epochs: 10, ..PretrainConfig::default() }).unwrap();
    let pool: Vec<AigGraph> = (0..POOL)
        .map(|s| AigGraph::from_netlist(&random_circuit(10_000 + s, 8 + (s % 12) as usize, 25 + (s * 7 % 70) as usize)))
        .collect();
    let env = EnvConfig::default();
    let held_out: Vec<(String, AigGraph)> = (0..HELD_OUT as u64)
        .map(|s| {
            let gates = 150 + 90 * s as usize;
            let n = random_circuit(1000 + s, 16 + gates / 12, gates);
            (n.name.clone(), AigGraph::from_netlist(&n))
        })
        .collect();
    let pool_range = (
        pool.iter().map(|g| g.node_count()).min().unwrap(),
        pool.iter().map(|g| g.node_count()).max().unwrap(),
    );
    let held: Vec<(usize, f64)> = held_out
        .iter()
        .map(|(_, g)| (g.node_count(), Episode::reset(g.clone(), &env).unwrap().initial_tc()))
        .collect();
    let setup_ok = pool.len() >= 50
        && pool_range.0 >= 100
        && pool_range.1 <= 600
        && held.len() >= 5
        && held.iter().all(|&(n, tc)| (500..=2000).contains(&n) && tc < 0.95);
    let setup = format!(
        "pool {} circuits of {}-{} nodes; held-out nodes {:?}, initial TC {:?}",
        pool.len(),
        pool_range.0,
        pool_range.1,
        held.iter().map(|h| h.0).collect::<Vec<_>>(),
        held.iter().map(|h| (h.1 * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    Protocol { pretrain, pool, held_out, env, setup_ok, setup }
}

fn variant(name: &str) -> DqnConfig {
    match name {
        "full" => DqnConfig::default(),
        "no-attention" => DqnConfig { aggregation: Aggregation::Mean, ..DqnConfig::default() },
        "no-pretrain" => DqnConfig { pretrained: false, ..DqnConfig::default() },
        _ => unreachable!(),
    }
}

/// Training settings of the learning criteria; `configs/desk.json` holds the
/// same values for the command line.
fn protocol_trainer(seed: u64, env: &EnvConfig) -> TrainerConfig {
    TrainerConfig {
        batch_size: 8,
        lr: 1e-3,
        reward_scale: 100.0,
        updates_per_step: 2,
        seed,
        env: env.clone(),
        ..TrainerConfig::default()
    }
}

/// Mean held-out improvement of one trained network.
fn train_and_score(p: &Protocol, name: &str, seed: u64) -> f64 {
    let cfg = protocol_trainer(seed, &p.env);
    let dqn = variant(name);
    let pre = dqn.pretrained.then_some(&p.pretrain);
    let out = train(&p.pool, pre, dqn, &cfg).unwrap();
    assert_eq!(out.log.len(), 500);
    let t = evaluate(&p.held_out, &[Method::GraphDqn { params: &out.params, pretrain: pre }], &p.env).unwrap();
    t.mean_improvement[0]
}

fn pct(x: f64) -> String {
    format!("{:+.3}%", 100.0 * x)
}

fn a6(p: &Protocol, full0: &mut Option<f64>) -> Outcome {
    let dqn = train_and_score(p, "full", 0);
    *full0 = Some(dqn);
    let t = evaluate(&p.held_out, &[Method::CopGreedy, Method::Random { seed: 1 }], &p.env).unwrap();
    let (cop, random) = (t.mean_improvement[0], t.mean_improvement[1]);
    Outcome {
        passed: p.setup_ok && dqn > random && dqn >= cop,
        detail: format!(
            "{}; mean TC improvement graph-dqn {} vs cop-greedy {} and random {}",
            p.setup,
            pct(dqn),
            pct(cop),
            pct(random)
        ),
    }
}

fn a7(p: &Protocol, full0: Option<f64>) -> Outcome {
    let mut means = Vec::new();
    for name in ["full", "no-attention", "no-pretrain"] {
        let scores: Vec<f64> = (0..SEEDS)
            .map(|s| match (name, s, full0) {
                ("full", 0, Some(x)) => x,
                _ => train_and_score(p, name, s),
            })
            .collect();
        means.push((name, scores.iter().sum::<f64>() / scores.len() as f64, scores));
    }
    let full = means[0].1;
    Outcome {
        passed: means[1..].iter().all(|m| full >= m.1),
        detail: means
            .iter()
            .map(|(n, m, s)| format!("{n} {} (seeds {})", pct(*m), s.iter().map(|x| pct(*x)).collect::<Vec<_>>().join(" ")))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn a8() -> Outcome {
    let dir = std::env::temp_dir().join(format!("tpilab-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let c17 = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join("c17.bench");
    let c17 = c17.to_str().unwrap();
    let cfg = r#"{"seed": 7, "patterns": 1024, "pretrain": {"epochs": 2}, "train": {"episodes": 16, "batch_size": 4}, "corpus": {"count": 4, "seed": 2}}"#;
    std::fs::write(dir.join("run.json"), cfg).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["convert", c17],
        vec!["coverage", c17, "--csv", "cov.csv"],
        vec!["cop", c17],
        vec!["pretrain", "-o", "pre.ck", "--log", "pre.csv"],
        vec!["train", "--pretrain", "pre.ck", "-o", "q.ck", "--log", "train.csv"],
        vec!["infer", c17, "--model", "q.ck", "--pretrain", "pre.ck", "-o", "act.json", "--bench-out", "tp.bench"],
        vec!["insert", c17, "--actions", "act.json", "-o", "ins.bench"],
        vec!["evaluate", c17, "--model", "q.ck", "--pretrain", "pre.ck", "--methods", "graph-dqn,cop-greedy,sim-greedy,random"],
        vec!["selfcheck", "--circuits", "4"],
    ];
    let files = ["cov.csv", "pre.ck", "pre.csv", "q.ck", "train.csv", "act.json", "tp.bench", "ins.bench"];
    let run = || -> Result<Vec<Vec<u8>>, String> {
        let mut out = Vec::new();
        for c in &commands {
            let o = Command::new(env!("CARGO_BIN_EXE_tpilab"))
                .current_dir(&dir)
                .args(["--config", "run.json"])
                .args(c)
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                return Err(format!("{} failed: {}", c[0], String::from_utf8_lossy(&o.stderr)));
            }
            out.push(o.stdout);
        }
        for f in files {
            out.push(std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?);
        }
        Ok(out)
    };
    let result = run().and_then(|a| run().map(|b| (a, b)));
    let _ = std::fs::remove_dir_all(&dir);
    match result {
        Ok((a, b)) => {
            let names: Vec<&str> = commands.iter().map(|c| c[0]).chain(files).collect();
            let differ: Vec<&str> = names.iter().zip(a.iter().zip(&b)).filter(|(_, (x, y))| x != y).map(|(n, _)| *n).collect();
            Outcome {
                passed: differ.is_empty(),
                detail: if differ.is_empty() {
                    format!("{} commands run twice, {} outputs byte-identical", commands.len(), names.len())
                } else {
                    format!("outputs differ: {}", differ.join(", "))
                },
            }
        }
        Err(e) => Outcome { passed: false, detail: e },
    }
}

fn main() {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut ok = true;
    ok &= report("A1", "AIG fidelity", min(1), a1);
    ok &= report("A2", "fault simulator oracle", min(2), a2);
    ok &= report("A3", "COP exactness on fanout-free circuits", min(1), a3);
    ok &= report("A4", "gradient integrity", min(2), a4);
    ok &= report("A5", "reward and MDP contract", min(2), a5);
    let t = Instant::now();
    let mut p = protocol();
    let setup = t.elapsed();
    p.setup = format!("pretraining and setup {:.1} s; {}", setup.as_secs_f64(), p.setup);
    let mut full0 = None;
    ok &= report("A6", "learning efficacy", Some(Duration::from_secs(7200).saturating_sub(setup)), || a6(&p, &mut full0));
    ok &= report("A7", "ablation direction", None, || a7(&p, full0));
    ok &= report("A8", "determinism", None, a8);
    if !ok {
        std::process::exit(1);
    }
}
