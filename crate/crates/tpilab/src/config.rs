// SPDX-License-Identifier: Apache-2.0
//! Run configuration: JSON file plus command-line overrides.
//!
//! Every field has a default, so `{}` is a complete configuration. The
//! resolved value is embedded in every artifact a run produces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tpilab_core::dqn::DqnConfig;
use tpilab_core::env::EnvConfig;
use tpilab_core::gnn::Aggregation;
use tpilab_core::netlist::{random_circuit, Netlist};
use tpilab_core::pretrain::PretrainConfig;
use tpilab_core::sim::DEFAULT_PATTERNS;
use tpilab_core::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds pattern generation, parameter initialization and sampling.
    pub seed: u64,
    pub patterns: usize,
    /// Test point budget; `None` means 1% of the gate count.
    pub budget: Option<usize>,
    pub model: ModelConfig,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub corpus: CorpusConfig,
    /// Methods compared by `evaluate`.
    pub methods: Vec<String>,
    /// Seed of the untrained network behind the `random` method.
    pub random_seed: u64,
    pub selfcheck: SelfcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            patterns: DEFAULT_PATTERNS,
            budget: None,
            model: ModelConfig::default(),
            pretrain: PretrainSection::default(),
            train: TrainSection::default(),
            corpus: CorpusConfig::default(),
            methods: ["graph-dqn", "cop-greedy", "random"].map(String::from).to_vec(),
            random_seed: 1,
            selfcheck: SelfcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub aggregation: Aggregation,
    pub pretrained: bool,
    pub score_leak: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DqnConfig::default();
        ModelConfig { aggregation: d.aggregation, pretrained: d.pretrained, score_leak: d.score_leak }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_graphs: usize,
    pub lr: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection { epochs: d.epochs, batch_graphs: d.batch_graphs, lr: d.lr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub gamma0: f64,
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub reward_scale: f64,
    pub updates_per_step: usize,
    pub grad_clip: Option<f64>,
    pub cache_embeddings: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainerConfig::default();
        TrainSection {
            episodes: d.episodes,
            gamma0: d.gamma0,
            target_sync: d.target_sync,
            epsilon_start: d.epsilon_start,
            epsilon_end: d.epsilon_end,
            epsilon_decay: d.epsilon_decay,
            replay_capacity: d.replay_capacity,
            batch_size: d.batch_size,
            lr: d.lr,
            reward_scale: d.reward_scale,
            updates_per_step: d.updates_per_step,
            grad_clip: d.grad_clip,
            cache_embeddings: d.cache_embeddings,
        }
    }
}

/// Random circuits used when no `.bench` files are given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub min_pis: usize,
    pub max_pis: usize,
    pub min_gates: usize,
    pub max_gates: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { count: 0, seed: 0, min_pis: 6, max_pis: 16, min_gates: 12, max_gates: 60 }
    }
}

impl CorpusConfig {
    /// Draws circuit sizes and generator seeds from `seed`.
    pub fn generate(&self) -> Vec<Netlist> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let pis = rng.gen_range(self.min_pis.max(1)..=self.max_pis.max(self.min_pis.max(1)));
                let gates = rng.gen_range(self.min_gates.max(1)..=self.max_gates.max(self.min_gates.max(1)));
                random_circuit(rng.gen(), pis, gates)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfcheckConfig {
    pub circuits: usize,
    pub grad_samples: usize,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        SelfcheckConfig { circuits: 20, grad_samples: 8 }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig { n_patterns: self.patterns, pattern_seed: self.seed, budget: self.budget }
    }

    pub fn dqn(&self) -> DqnConfig {
        DqnConfig {
            aggregation: self.model.aggregation,
            pretrained: self.model.pretrained,
            score_leak: self.model.score_leak,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_graphs: self.pretrain.batch_graphs,
            lr: self.pretrain.lr,
            seed: self.seed,
            n_patterns: self.patterns,
            pattern_seed: self.seed,
        }
    }

    /// Trainer settings. Training episodes always use the default 1% horizon
    /// unless a budget is configured.
    pub fn trainer(&self) -> TrainerConfig {
        let t = &self.train;
        TrainerConfig {
            episodes: t.episodes,
            gamma0: t.gamma0,
            target_sync: t.target_sync,
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_decay: t.epsilon_decay,
            replay_capacity: t.replay_capacity,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: self.seed,
            reward_scale: t.reward_scale,
            updates_per_step: t.updates_per_step,
            grad_clip: t.grad_clip,
            cache_embeddings: t.cache_embeddings,
            env: self.env(),
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        let c = RunConfig::from_json(r#"{"seed": 5, "train": {"lr": 0.001}, "model": {"aggregation": "mean"}}"#).unwrap();
        assert_eq!(c.trainer().seed, 5);
        assert_eq!(c.trainer().lr, 1e-3);
        assert_eq!(c.trainer().episodes, 500);
        assert_eq!(c.dqn().aggregation, Aggregation::Mean);
        assert!(RunConfig::from_json(r#"{"sed": 5}"#).is_err());
    }

    #[test]
    fn round_trip_and_corpus_determinism() {
        let c = RunConfig { corpus: CorpusConfig { count: 4, ..Default::default() }, ..Default::default() };
        let back: RunConfig = serde_json::from_value(c.to_value()).unwrap();
        assert_eq!(back, c);
        let a = c.corpus.generate();
        let b = c.corpus.generate();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|n| (6..=16).contains(&n.primary_inputs().len())));
    }
}
