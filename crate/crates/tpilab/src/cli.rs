// SPDX-License-Identifier: Apache-2.0
//! The `tpilab` command line.
//!
//! Exit status: 0 success, 1 usage error, 2 input error, 3 internal
//! invariant violation (including a failed `selfcheck`). Errors are printed
//! to stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tpilab_core::aig::{check_equivalence, AigGraph, TpType, DEFAULT_MAX_EQUIV_INPUTS};
use tpilab_core::cop::cop_analyze;
use tpilab_core::dqn::GraphDqnParams;
use tpilab_core::env::{Action, EnvError, Episode};
use tpilab_core::gnn::Aggregation;
use tpilab_core::netlist::Netlist;
use tpilab_core::pretrain::{pretrain, PretrainModel};
use tpilab_core::sim::{enumerate_faults, fault_simulate, PatternSet};
use tpilab_core::trainer::{evaluate, infer, train, Method, TrainError};
use tpilab_core::NodeId;

use crate::bench::{parse_bench, write_bench, BenchError};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::RunConfig;
use crate::insert::{insert_test_points, InsertError, Insertion};
use crate::report::{
    cop_csv, eval_csv, train_log_csv, ActionLog, AigDump, CoverageSummary, Envelope, LoggedAction,
};
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(name = "tpilab", version, about = "Test point insertion with graph Q-learning")]
pub struct Cli {
    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for patterns, corpora and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Random patterns per simulation.
    #[arg(long, global = true)]
    pub patterns: Option<usize>,
    /// Test points per circuit (default: 1% of gates).
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CircuitArgs {
    /// `.bench` files or directories of them.
    pub benches: Vec<PathBuf>,
    /// Add this many random circuits (see the `corpus` config section).
    #[arg(long)]
    pub random: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Plain mean aggregation instead of attention.
    #[arg(long)]
    pub no_attention: bool,
    /// One attention vector shared by predecessors and successors.
    #[arg(long, conflicts_with = "no_attention")]
    pub tied_attention: bool,
    /// One-hot node features only.
    #[arg(long)]
    pub no_pretrain: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a `.bench` file to an AIG dump and check equivalence.
    Convert {
        bench: PathBuf,
        /// Result JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write the canonical `.bench` text here.
        #[arg(long)]
        canonical: Option<PathBuf>,
    },
    /// Fault-simulate random patterns and report test coverage.
    Coverage {
        bench: PathBuf,
        /// Result JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Per-fault CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-node COP controllability and observability as CSV.
    Cop {
        bench: PathBuf,
        /// Result JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the signal-probability model that provides node embeddings.
    Pretrain {
        #[command(flatten)]
        circuits: CircuitArgs,
        /// Checkpoint path.
        #[arg(short, long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a Q-network on a pool of circuits.
    Train {
        #[command(flatten)]
        circuits: CircuitArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Pre-trained embedding checkpoint.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(short, long)]
        out: PathBuf,
        /// Per-episode CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override the configured episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the configured learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Insert test points with a trained network.
    Infer {
        bench: PathBuf,
        /// Q-network checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Pre-trained embedding checkpoint.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Action log JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Post-insertion `.bench`.
        #[arg(long)]
        bench_out: Option<PathBuf>,
    },
    /// Apply an action log to a `.bench` file.
    Insert {
        bench: PathBuf,
        /// Action log JSON written by `infer`.
        #[arg(long)]
        actions: PathBuf,
        /// Post-insertion `.bench` (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare methods on a set of circuits.
    Evaluate {
        #[command(flatten)]
        circuits: CircuitArgs,
        /// Q-network checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pre-trained embedding checkpoint.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Comma-separated: graph-dqn, cop-greedy, sim-greedy, random.
        #[arg(long)]
        methods: Option<String>,
        /// Result JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Per-circuit CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the oracle suites.
    Selfcheck {
        /// Result JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Number of random circuits per suite.
        #[arg(long)]
        circuits: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Input { message: String, detail: Value },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, detail) = match self {
            CliError::Usage(_) => ("usage", Value::Null),
            CliError::Input { detail, .. } => ("input", detail.clone()),
            CliError::Internal(_) => ("internal", Value::Null),
        };
        json!({"error": {"kind": kind, "exit_code": self.exit_code(), "message": self.to_string(), "detail": detail}})
    }

    fn input(message: impl Into<String>) -> CliError {
        CliError::Input { message: message.into(), detail: Value::Null }
    }
}

fn bench_error(path: &Path, e: &BenchError) -> CliError {
    CliError::Input {
        message: format!("{}: {e}", path.display()),
        detail: json!({"file": path.display().to_string(), "line": e.line(), "column": e.column(), "token": e.token()}),
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::input(format!("checkpoint: {e}"))
    }
}

impl From<InsertError> for CliError {
    fn from(e: InsertError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyPool
            | TrainError::NoLegalActions
            | TrainError::MissingPretrain
            | TrainError::BadConfig(_)
            | TrainError::Env(EnvError::NoCandidates) => CliError::input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, content: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(content).map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

fn load_bench(path: &Path) -> Result<Netlist, CliError> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "circuit".into());
    parse_bench(&read_text(path)?, &name).map_err(|e| bench_error(path, &e))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn bench_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("bench")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_circuits(args: &CircuitArgs, cfg: &RunConfig) -> Result<Vec<Netlist>, CliError> {
    let mut out = bench_files(&args.benches)?.iter().map(|p| load_bench(p)).collect::<Result<Vec<_>, _>>()?;
    out.extend(cfg.corpus.generate());
    if out.is_empty() {
        return Err(CliError::Usage("no circuits: pass .bench files or --random N".into()));
    }
    Ok(out)
}

fn load_pretrain(path: Option<&Path>, needed: bool) -> Result<Option<PretrainModel>, CliError> {
    match (path, needed) {
        (Some(p), true) => Ok(Some(load_checkpoint(p)?.to_pretrain()?)),
        (None, true) => Err(CliError::Usage("this model needs --pretrain <checkpoint>".into())),
        (_, false) => Ok(None),
    }
}

/// Config file, then global flags, then command flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.patterns {
        cfg.patterns = p;
    }
    if cli.budget.is_some() {
        cfg.budget = cli.budget;
    }
    let circuits = match &cli.command {
        Command::Pretrain { circuits, .. } | Command::Train { circuits, .. } | Command::Evaluate { circuits, .. } => {
            Some(circuits)
        }
        _ => None,
    };
    if let Some(n) = circuits.and_then(|c| c.random) {
        cfg.corpus.count = n;
    }
    match &cli.command {
        Command::Pretrain { epochs: Some(e), .. } => cfg.pretrain.epochs = *e,
        Command::Train { model, episodes, lr, .. } => {
            if model.no_attention {
                cfg.model.aggregation = Aggregation::Mean;
            }
            if model.tied_attention {
                cfg.model.aggregation = Aggregation::Tied;
            }
            if model.no_pretrain {
                cfg.model.pretrained = false;
            }
            if let Some(e) = episodes {
                cfg.train.episodes = *e;
            }
            if let Some(l) = lr {
                cfg.train.lr = *l;
            }
        }
        Command::Evaluate { methods: Some(m), .. } => {
            cfg.methods = m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        Command::Selfcheck { circuits: Some(c), .. } => cfg.selfcheck.circuits = *c,
        _ => {}
    }
    if cfg.patterns == 0 {
        return Err(CliError::Usage("--patterns must be positive".into()));
    }
    Ok(cfg)
}

fn parse_action_log(text: &str) -> Result<Vec<LoggedAction>, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::input(format!("action log: {e}")))?;
    let list = v.pointer("/result/actions").or_else(|| v.get("actions")).unwrap_or(&v);
    serde_json::from_value(list.clone()).map_err(|e| CliError::input(format!("action log: {e}")))
}

fn to_actions(log: &[LoggedAction]) -> Result<Vec<Action>, CliError> {
    log.iter()
        .map(|a| {
            TpType::from_name(&a.tp_type)
                .map(|t| Action::new(NodeId(a.node), t))
                .ok_or_else(|| CliError::input(format!("unknown test point type `{}`", a.tp_type)))
        })
        .collect()
}

/// Header, one marker comment per test point, then the netlist.
fn tp_bench(header: &str, ins: &Insertion) -> String {
    let mut s = header.to_string();
    for p in &ins.points {
        s.push_str(&format!("# {} at {} via {}\n", p.action.tp_type.name(), p.gate, p.port));
    }
    s.push_str(&write_bench(&ins.netlist));
    s
}

fn circuit_names(nets: &[Netlist]) -> Value {
    Value::from(nets.iter().map(|n| n.name.clone()).collect::<Vec<_>>())
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let cv = cfg.to_value();
    match &cli.command {
        Command::Convert { bench, out, canonical } => {
            let n = load_bench(bench)?;
            let g = AigGraph::from_netlist(&n);
            let equivalence = if n.primary_inputs().len() <= DEFAULT_MAX_EQUIV_INPUTS {
                Some(check_equivalence(&n, &g, DEFAULT_MAX_EQUIV_INPUTS).map_err(|e| CliError::Internal(e.to_string()))?)
            } else {
                None
            };
            let env = Envelope::new("convert", cv, json!({"aig": AigDump::new(&n, &g), "equivalence": equivalence}));
            if let Some(p) = canonical {
                write_out(Some(p), write_bench(&n).as_bytes())?;
            }
            write_out(out.as_deref(), env.to_json().as_bytes())?;
            if equivalence.is_some_and(|e| !e.equivalent) {
                return Err(CliError::Internal("AIG conversion is not equivalent to the netlist".into()));
            }
        }
        Command::Coverage { bench, out, csv } => {
            let n = load_bench(bench)?;
            let g = AigGraph::from_netlist(&n);
            let f = enumerate_faults(&g);
            let p = PatternSet::random(cfg.seed, cfg.patterns, &g);
            let r = fault_simulate(&g, &f, &p).map_err(|e| CliError::Internal(e.to_string()))?;
            let s = CoverageSummary::new(&n, &g, &f, &r, cfg.patterns, cfg.seed);
            let env = Envelope::new("coverage", cv, s);
            if let Some(c) = csv {
                write_out(Some(c), env.result.to_csv(&env.header_line()).as_bytes())?;
            }
            write_out(out.as_deref(), env.to_json().as_bytes())?;
        }
        Command::Cop { bench, out } => {
            let n = load_bench(bench)?;
            let g = AigGraph::from_netlist(&n);
            let env = Envelope::new("cop", cv, ());
            write_out(out.as_deref(), cop_csv(&env.header_line(), &n, &g, &cop_analyze(&g)).as_bytes())?;
        }
        Command::Pretrain { circuits, out, log, .. } => {
            let nets = load_circuits(circuits, &cfg)?;
            let graphs: Vec<AigGraph> = nets.iter().map(AigGraph::from_netlist).collect();
            let model = pretrain(&graphs, &cfg.pretrain_config()).map_err(|e| CliError::Internal(e.to_string()))?;
            let run = json!({"tool_version": crate::VERSION, "config": cv, "circuits": circuit_names(&nets)});
            write_out(Some(out), &Checkpoint::from_pretrain(&model, run).to_bytes())?;
            let env = Envelope::new("pretrain", cv, &model.meta);
            if let Some(l) = log {
                let mut s = env.header_line();
                s.push_str("epoch,loss\n");
                for (i, x) in model.meta.epoch_loss.iter().enumerate() {
                    s.push_str(&format!("{i},{x}\n"));
                }
                write_out(Some(l), s.as_bytes())?;
            }
            write_out(None, env.to_json().as_bytes())?;
        }
        Command::Train { circuits, pretrain: pre, out, log, .. } => {
            let nets = load_circuits(circuits, &cfg)?;
            let dqn = cfg.dqn();
            let pm = load_pretrain(pre.as_deref(), dqn.pretrained)?;
            let pool: Vec<AigGraph> = nets.iter().map(AigGraph::from_netlist).collect();
            let outcome = train(&pool, pm.as_ref(), dqn, &cfg.trainer())?;
            let run = json!({
                "tool_version": crate::VERSION,
                "config": cv,
                "circuits": circuit_names(&nets),
                "pretrain": pm.as_ref().map(|m| m.meta.corpus_hash.clone()),
                "updates": outcome.updates,
            });
            write_out(Some(out), &Checkpoint::from_dqn(&outcome.params, run).to_bytes())?;
            let env = Envelope::new("train", cv, ());
            if let Some(l) = log {
                write_out(Some(l), train_log_csv(&env.header_line(), &outcome.log).as_bytes())?;
            }
            let k = outcome.log.len().div_ceil(10).max(1);
            let tail: Vec<f64> = outcome.log.iter().rev().take(k).map(|e| e.reward).collect();
            let summary = json!({
                "episodes": outcome.log.len(),
                "updates": outcome.updates,
                "parameters": outcome.params.store.scalar_count(),
                "mean_reward_last_tenth": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            });
            write_out(None, Envelope::new("train", env.config, summary).to_json().as_bytes())?;
        }
        Command::Infer { bench, model, pretrain: pre, out, bench_out } => {
            let n = load_bench(bench)?;
            let g = AigGraph::from_netlist(&n);
            let params: GraphDqnParams = load_checkpoint(model)?.to_dqn()?;
            let pm = load_pretrain(pre.as_deref(), params.config.pretrained)?;
            let env_cfg = cfg.env();
            let budget = Episode::reset(g.clone(), &env_cfg).map_err(TrainError::from)?.budget();
            let r = infer(&g, &params, pm.as_ref(), &env_cfg, budget)?;
            let log = ActionLog {
                circuit: n.name.clone(),
                budget,
                initial_tc: Some(r.initial.test_coverage),
                final_tc: Some(r.final_report.test_coverage),
                actions: r.actions.iter().map(|&a| LoggedAction::new(&n, &g, a)).collect(),
            };
            let env = Envelope::new("infer", cv, log);
            if let Some(b) = bench_out {
                let ins = insert_test_points(&n, &r.actions)?;
                let s = tp_bench(&env.header_line(), &ins);
                write_out(Some(b), s.as_bytes())?;
            }
            write_out(out.as_deref(), env.to_json().as_bytes())?;
        }
        Command::Insert { bench, actions, out } => {
            let n = load_bench(bench)?;
            let acts = to_actions(&parse_action_log(&read_text(actions)?)?)?;
            let ins = insert_test_points(&n, &acts)?;
            let s = tp_bench(&Envelope::new("insert", cv, ()).header_line(), &ins);
            write_out(out.as_deref(), s.as_bytes())?;
        }
        Command::Evaluate { circuits, model, pretrain: pre, out, csv, .. } => {
            let nets = load_circuits(circuits, &cfg)?;
            let dqn = match (cfg.methods.iter().any(|m| m == "graph-dqn"), model) {
                (true, Some(p)) => Some(load_checkpoint(p)?.to_dqn()?),
                (true, None) => return Err(CliError::Usage("method graph-dqn needs --model <checkpoint>".into())),
                (false, _) => None,
            };
            let pm = load_pretrain(pre.as_deref(), dqn.as_ref().is_some_and(|d| d.config.pretrained))?;
            let methods = cfg
                .methods
                .iter()
                .map(|m| match m.as_str() {
                    "graph-dqn" => Ok(Method::GraphDqn { params: dqn.as_ref().expect("loaded above"), pretrain: pm.as_ref() }),
                    "cop-greedy" => Ok(Method::CopGreedy),
                    "sim-greedy" => Ok(Method::SimGreedy),
                    "random" => Ok(Method::Random { seed: cfg.random_seed }),
                    other => Err(CliError::Usage(format!("unknown method `{other}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let circuits: Vec<(String, AigGraph)> =
                nets.iter().map(|n| (n.name.clone(), AigGraph::from_netlist(n))).collect();
            let table = evaluate(&circuits, &methods, &cfg.env())?;
            let env = Envelope::new("evaluate", cv, table);
            if let Some(c) = csv {
                write_out(Some(c), eval_csv(&env.header_line(), &env.result).as_bytes())?;
            }
            write_out(out.as_deref(), env.to_json().as_bytes())?;
        }
        Command::Selfcheck { out, .. } => {
            let r = selfcheck::run(cfg.selfcheck.circuits, cfg.selfcheck.grad_samples, cfg.seed);
            let passed = r.passed;
            write_out(out.as_deref(), Envelope::new("selfcheck", cv, r).to_json().as_bytes())?;
            if !passed {
                return Err(CliError::Internal("selfcheck failed".into()));
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and reports errors; returns the exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 };
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
