//! Declarative agent configuration.
//!
//! The JSON form mirrors the act/observe library style: the caller
//! describes state and action layouts, the network stack, and optimizer
//! options, and the agent is built entirely from that description plus a
//! seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, NetworkSpec, Pooling};

/// Linear epsilon decay from `start` to `end` over `decay_steps`
/// environment steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl ExplorationSchedule {
    /// Schedule for agents starting from a pretrained model.
    pub fn pretrained() -> Self {
        ExplorationSchedule {
            start: 0.2,
            end: 0.01,
            decay_steps: 2_000,
        }
    }

    /// Schedule for agents learning from scratch.
    pub fn scratch() -> Self {
        ExplorationSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.decay_steps as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Q-target flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Max over the target network.
    Dqn,
    /// Argmax with the training network, evaluated by the target network.
    Double,
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentConfigError {
    #[error("invalid agent config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> AgentConfigError {
    AgentConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Full agent configuration; every knob has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub state_len: usize,
    pub vocab_size: usize,
    pub max_keys: usize,
    pub embed_dim: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub pooling: Pooling,
    pub gamma: f64,
    pub margin: f64,
    pub margin_weight: f64,
    pub batch_size: usize,
    pub demo_fraction: f64,
    pub target_sync: u64,
    pub update_interval: u64,
    pub warmup: u64,
    pub memory_capacity: usize,
    pub exploration: ExplorationSchedule,
    pub learning_rate: f64,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            state_len: 32,
            vocab_size: 0, // must be set from the vocabulary before building
            max_keys: 3,
            embed_dim: 32,
            hidden: vec![(128, Activation::Relu)],
            pooling: Pooling::MaskedMean,
            gamma: 0.95,
            margin: 0.1,
            margin_weight: 1.0,
            batch_size: 32,
            demo_fraction: 0.25,
            target_sync: 100,
            update_interval: 1,
            warmup: 32,
            memory_capacity: 50_000,
            exploration: ExplorationSchedule::pretrained(),
            learning_rate: 5e-4,
            target_mode: TargetMode::Double,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentConfigError> {
        if self.state_len == 0 {
            return Err(invalid("state_len", "must be >= 1"));
        }
        if self.vocab_size == 0 {
            return Err(invalid(
                "vocab_size",
                "must be >= 1 (set from the vocabulary)",
            ));
        }
        if self.max_keys == 0 {
            return Err(invalid("max_keys", "must be >= 1"));
        }
        if self.embed_dim == 0 {
            return Err(invalid("embed_dim", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(
                "gamma",
                format!("must be in [0, 1), got {}", self.gamma),
            ));
        }
        if self.margin <= 0.0 {
            return Err(invalid(
                "margin",
                format!("must be > 0, got {}", self.margin),
            ));
        }
        if self.margin_weight < 0.0 {
            return Err(invalid("margin_weight", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.demo_fraction) {
            return Err(invalid(
                "demo_fraction",
                format!("must be in [0, 1], got {}", self.demo_fraction),
            ));
        }
        if self.target_sync == 0 {
            return Err(invalid("target_sync", "must be >= 1"));
        }
        if self.update_interval == 0 {
            return Err(invalid("update_interval", "must be >= 1"));
        }
        if self.memory_capacity == 0 {
            return Err(invalid("memory_capacity", "must be >= 1"));
        }
        for eps in [self.exploration.start, self.exploration.end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(invalid(
                    "exploration",
                    format!("epsilon {eps} outside [0, 1]"),
                ));
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden: self.hidden.clone(),
            heads: self.max_keys,
            head_width: 2 * self.max_keys + 1,
            input_len: self.state_len,
            pooling: self.pooling,
        }
    }

    /// Number of options per action head: `2k + 1`.
    pub fn head_options(&self) -> usize {
        2 * self.max_keys + 1
    }
}

// ---------------------------------------------------------------------------
// Declarative JSON form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StatesWire {
    length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ActionsWire {
    heads: usize,
    options: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerWire {
    Embedding {
        size: usize,
    },
    Dense {
        size: usize,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Serialize, Deserialize)]
struct OptimizerWire {
    #[serde(rename = "type")]
    kind: String,
    lr: f64,
}

/// Listing-style declarative agent description, serializable to/from JSON.
#[derive(Serialize, Deserialize)]
pub struct AgentConfigJson {
    states: StatesWire,
    actions: ActionsWire,
    network: Vec<LayerWire>,
    optimizer: OptimizerWire,
    gamma: f64,
    margin: f64,
    margin_weight: f64,
    batch_size: usize,
    demo_fraction: f64,
    target_sync: u64,
    update_interval: u64,
    warmup: u64,
    memory_capacity: usize,
    exploration: ExplorationSchedule,
    target_mode: TargetMode,
    #[serde(default)]
    pooling: Option<Pooling>,
    seed: u64,
}

impl From<&AgentConfig> for AgentConfigJson {
    fn from(cfg: &AgentConfig) -> Self {
        let mut network = vec![LayerWire::Embedding {
            size: cfg.embed_dim,
        }];
        network.extend(
            cfg.hidden
                .iter()
                .map(|&(size, activation)| LayerWire::Dense { size, activation }),
        );
        AgentConfigJson {
            states: StatesWire {
                length: cfg.state_len,
                vocab: Some(cfg.vocab_size),
            },
            actions: ActionsWire {
                heads: cfg.max_keys,
                options: cfg.head_options(),
            },
            network,
            optimizer: OptimizerWire {
                kind: "adam".into(),
                lr: cfg.learning_rate,
            },
            gamma: cfg.gamma,
            margin: cfg.margin,
            margin_weight: cfg.margin_weight,
            batch_size: cfg.batch_size,
            demo_fraction: cfg.demo_fraction,
            target_sync: cfg.target_sync,
            update_interval: cfg.update_interval,
            warmup: cfg.warmup,
            memory_capacity: cfg.memory_capacity,
            exploration: cfg.exploration,
            target_mode: cfg.target_mode,
            pooling: Some(cfg.pooling),
            seed: cfg.seed,
        }
    }
}

impl AgentConfigJson {
    pub fn into_config(self) -> Result<AgentConfig, AgentConfigError> {
        if self.optimizer.kind != "adam" {
            return Err(invalid(
                "optimizer",
                format!("only `adam` is supported, got `{}`", self.optimizer.kind),
            ));
        }
        let mut embed_dim = None;
        let mut hidden = Vec::new();
        for layer in self.network {
            match layer {
                LayerWire::Embedding { size } => {
                    if embed_dim.replace(size).is_some() {
                        return Err(invalid("network", "multiple embedding layers"));
                    }
                    if !hidden.is_empty() {
                        return Err(invalid("network", "embedding must come first"));
                    }
                }
                LayerWire::Dense { size, activation } => hidden.push((size, activation)),
            }
        }
        let cfg = AgentConfig {
            state_len: self.states.length,
            vocab_size: self.states.vocab.unwrap_or(0),
            max_keys: self.actions.heads,
            embed_dim: embed_dim.unwrap_or(32),
            hidden,
            pooling: self.pooling.unwrap_or(Pooling::MaskedMean),
            gamma: self.gamma,
            margin: self.margin,
            margin_weight: self.margin_weight,
            batch_size: self.batch_size,
            demo_fraction: self.demo_fraction,
            target_sync: self.target_sync,
            update_interval: self.update_interval,
            warmup: self.warmup,
            memory_capacity: self.memory_capacity,
            exploration: self.exploration,
            learning_rate: self.optimizer.lr,
            target_mode: self.target_mode,
            seed: self.seed,
        };
        if self.actions.options != cfg.head_options() {
            return Err(invalid(
                "actions",
                format!(
                    "options must be 2*heads+1 = {}, got {}",
                    cfg.head_options(),
                    self.actions.options
                ),
            ));
        }
        Ok(cfg)
    }
}

impl AgentConfig {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(AgentConfigJson::from(self)).expect("config serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, AgentConfigError> {
        let wire: AgentConfigJson =
            serde_json::from_value(value).map_err(|e| invalid("json", e.to_string()))?;
        wire.into_config()
    }
}
