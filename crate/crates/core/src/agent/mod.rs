//! Q-learning-from-demonstrations agent.
//!
//! The agent keeps a training network and a delayed target copy, a
//! never-evicted demonstration memory next to a FIFO online memory, and
//! trains on mixed batches with a squared TD loss plus a large-margin term
//! that biases Q-values toward demonstrated actions. Everything is driven
//! through two methods: `act` to request an action for a state, `observe`
//! to feed back a transition (updates trigger implicitly).

mod config;
mod replay;

pub use config::{AgentConfig, AgentConfigError, AgentConfigJson, ExplorationSchedule, TargetMode};
pub use replay::{ReplayMemories, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{adam_step, argmax, AdamState, Network, QValues};
use crate::query::{ActionVec, StateTokens};

/// The two-method control interface. The environment loop only needs this,
/// so test stubs and alternative policies plug in freely.
pub trait ActObserve {
    fn act(&mut self, state: &StateTokens, explore: bool) -> ActionVec;
    fn observe(&mut self, transition: Transition);

    /// Diagnostics for the step that just completed.
    fn step_info(&self) -> StepInfo {
        StepInfo::default()
    }
}

/// Per-step diagnostics for reward curves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub epsilon: f64,
    pub loss_td: f64,
    pub loss_margin: f64,
}

/// Loss components of one training update, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub td: f64,
    pub margin: f64,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.td + self.margin
    }
}

/// One accuracy sample of the pretraining curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyPoint {
    pub update: u64,
    pub accuracy: f64,
}

/// Large-margin supervised loss for one head:
/// `max_a [q(a) + l(a)] - q(a_expert)` where `l` is 0 at the expert action
/// and `margin` elsewhere. Zero exactly when the expert action leads every
/// other action by at least the margin.
pub fn margin_loss(q: &[f64], expert_action: usize, margin: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (a, &qa) in q.iter().enumerate() {
        let l = if a == expert_action { 0.0 } else { margin };
        if qa + l > best {
            best = qa + l;
        }
    }
    best - q[expert_action]
}

/// Index of `max_a q(a) + l(a)`; ties toward the lowest action id.
fn margin_argmax(q: &[f64], expert_action: usize, margin: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (a, &qa) in q.iter().enumerate() {
        let l = if a == expert_action { 0.0 } else { margin };
        if qa + l > best_v {
            best_v = qa + l;
            best = a;
        }
    }
    best
}

/// Per-transition, per-head Q-targets.
///
/// Terminal transitions bootstrap nothing (`y = r`). Otherwise `dqn` mode
/// takes the max over the target network, while `double` mode picks the
/// argmax action with the training network and evaluates it with the
/// target network.
pub fn compute_targets(
    batch: &[&Transition],
    net: &Network,
    target: &Network,
    gamma: f64,
    mode: TargetMode,
) -> Vec<Vec<f64>> {
    let heads = net.spec.heads;
    batch
        .iter()
        .map(|tr| {
            if tr.terminal {
                return vec![tr.reward; heads];
            }
            let target_q = target
                .q_values(&tr.next_state)
                .expect("next state fits the target network");
            match mode {
                TargetMode::Dqn => target_q
                    .heads
                    .iter()
                    .map(|q| {
                        let max = q.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        tr.reward + gamma * max
                    })
                    .collect(),
                TargetMode::Double => {
                    let online_q = net
                        .q_values(&tr.next_state)
                        .expect("next state fits the training network");
                    online_q
                        .heads
                        .iter()
                        .zip(&target_q.heads)
                        .map(|(qo, qt)| tr.reward + gamma * qt[argmax(qo)])
                        .collect()
                }
            }
        })
        .collect()
}

/// The agent.
pub struct DqfdAgent {
    cfg: AgentConfig,
    net: Network,
    target: Network,
    adam: AdamState,
    memory: ReplayMemories,
    rng: ChaCha8Rng,
    /// Environment steps seen (observe calls); drives the epsilon schedule.
    env_steps: u64,
    /// Training updates performed; drives target-network syncs.
    update_count: u64,
    last_losses: LossReport,
}

/// Construct an agent from its configuration. The result is fully
/// determined by `(config, seed)`.
pub fn build_agent(cfg: AgentConfig) -> Result<DqfdAgent, AgentConfigError> {
    cfg.validate()?;
    let spec = cfg.network_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::init(spec, &mut rng).map_err(|e| AgentConfigError::Invalid {
        field: "network",
        reason: e.to_string(),
    })?;
    let target = net.clone();
    let adam = AdamState::new(&net.spec, cfg.learning_rate);
    let memory = ReplayMemories::new(cfg.memory_capacity);
    Ok(DqfdAgent {
        cfg,
        net,
        target,
        adam,
        memory,
        rng,
        env_steps: 0,
        update_count: 0,
        last_losses: LossReport::default(),
    })
}

impl DqfdAgent {
    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn target_network(&self) -> &Network {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemories {
        &self.memory
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.exploration.value(self.env_steps)
    }

    /// Replace parameters with a pretrained snapshot (target follows).
    pub fn load_params(&mut self, params: crate::nn::Params) {
        self.net.params = params.clone();
        self.target.params = params;
    }

    pub fn q_values(&self, state: &StateTokens) -> QValues {
        self.net.q_values(state).expect("state fits the network")
    }

    /// Import demonstration transitions into the demo memory.
    pub fn import_demonstrations(
        &mut self,
        transitions: impl IntoIterator<Item = Transition>,
    ) -> usize {
        self.memory.import_demos(transitions)
    }

    fn sample_batch(&mut self, demo_fraction: f64) -> Option<Vec<Transition>> {
        let b = self.cfg.batch_size;
        if self.memory.total_len() < b {
            return None;
        }
        let mut n_demo = if self.memory.demo_len() == 0 {
            0
        } else {
            ((demo_fraction * b as f64).ceil() as usize).min(b)
        };
        if self.memory.online_len() == 0 {
            n_demo = b;
        }
        if n_demo > 0 && self.memory.demo_len() == 0 {
            return None;
        }
        let n_online = b - n_demo;
        let batch: Vec<Transition> = self
            .memory
            .sample(n_demo, n_online, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        Some(batch)
    }

    /// Demo-only batch, sampled with replacement; any nonempty demo memory
    /// suffices.
    fn sample_demo_batch(&mut self) -> Vec<Transition> {
        let b = self.cfg.batch_size;
        self.memory
            .sample(b, 0, &mut self.rng)
            .into_iter()
            .cloned()
            .collect()
    }

    /// One gradient update on a sampled batch, mixing demonstration and
    /// online transitions per `demo_fraction`. Returns `None` (skips) when
    /// the memories hold fewer than one batch.
    pub fn training_update(&mut self) -> Option<LossReport> {
        let batch = self.sample_batch(self.cfg.demo_fraction)?;
        Some(self.update_on_batch(&batch, true))
    }

    /// With `with_td`, the loss is the squared double-DQN TD error plus the
    /// margin term; without, the margin term alone (pretraining). Chasing
    /// bootstrapped value targets during pretraining stalls rule adoption
    /// far below usable accuracy, because a demo state's return depends on
    /// its position within the episode, which the state does not encode.
    fn update_on_batch(&mut self, batch: &[Transition], with_td: bool) -> LossReport {
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets = if with_td {
            compute_targets(
                &refs,
                &self.net,
                &self.target,
                self.cfg.gamma,
                self.cfg.target_mode,
            )
        } else {
            Vec::new()
        };

        let spec = self.net.spec.clone();
        let mut grads = crate::nn::Params::zeros(&spec);
        let inv_b = 1.0 / batch.len() as f64;
        let mut td_sum = 0.0;
        let mut margin_sum = 0.0;

        for (i, tr) in batch.iter().enumerate() {
            let (q, cache) = self.net.forward(&tr.state).expect("state fits the network");
            let mut head_grads = vec![vec![0.0; spec.head_width]; spec.heads];
            for h in 0..spec.heads {
                let a = tr.action.heads()[h] as usize;
                if with_td {
                    let delta = q.heads[h][a] - targets[i][h];
                    td_sum += delta * delta;
                    head_grads[h][a] += 2.0 * delta * inv_b;
                }

                if tr.is_demo && self.cfg.margin_weight > 0.0 {
                    let j = margin_loss(&q.heads[h], a, self.cfg.margin);
                    margin_sum += self.cfg.margin_weight * j;
                    let a_plus = margin_argmax(&q.heads[h], a, self.cfg.margin);
                    if a_plus != a {
                        head_grads[h][a_plus] += self.cfg.margin_weight * inv_b;
                        head_grads[h][a] -= self.cfg.margin_weight * inv_b;
                    }
                }
            }
            let sample_grads = self
                .net
                .backward(&cache, &head_grads)
                .expect("gradient shapes match");
            accumulate(&mut grads, &sample_grads);
        }

        adam_step(&mut self.net.params, &grads, &mut self.adam).expect("finite gradients");
        self.update_count += 1;
        if self.update_count.is_multiple_of(self.cfg.target_sync) {
            self.target = self.net.clone();
        }

        let report = LossReport {
            td: td_sum * inv_b,
            margin: margin_sum * inv_b,
        };
        self.last_losses = report;
        report
    }

    /// Fraction of demonstration transitions whose action every head
    /// reproduces greedily.
    pub fn demo_accuracy(&self) -> f64 {
        let demos = self.memory.demos();
        if demos.is_empty() {
            return 0.0;
        }
        let mut correct = 0usize;
        for tr in demos {
            let greedy = self.q_values(&tr.state).greedy();
            let matched = greedy
                .iter()
                .zip(tr.action.heads())
                .all(|(&g, &a)| g == a as usize);
            if matched {
                correct += 1;
            }
        }
        correct as f64 / demos.len() as f64
    }

    /// Train on demonstration-only batches, evaluating adoption accuracy
    /// every `eval_every` updates and stopping early once `early_stop`
    /// accuracy is reached.
    pub fn pretrain(
        &mut self,
        steps: u64,
        eval_every: u64,
        early_stop: Option<f64>,
    ) -> Result<Vec<AccuracyPoint>, AgentConfigError> {
        if self.memory.demo_len() == 0 {
            return Err(AgentConfigError::Invalid {
                field: "demos",
                reason: "demo memory is empty".into(),
            });
        }
        let eval_every = eval_every.max(1);
        let mut history = Vec::new();
        for step in 1..=steps {
            let batch = self.sample_demo_batch();
            self.update_on_batch(&batch, false);
            if step.is_multiple_of(eval_every) || step == steps {
                let accuracy = self.demo_accuracy();
                history.push(AccuracyPoint {
                    update: step,
                    accuracy,
                });
                if early_stop.is_some_and(|target| accuracy >= target) {
                    break;
                }
            }
        }
        Ok(history)
    }
}

fn accumulate(into: &mut crate::nn::Params, from: &crate::nn::Params) {
    let mut dst = into.flatten_mut();
    let src = from.flatten();
    for ((_, d), (_, s)) in dst.iter_mut().zip(&src) {
        for (a, b) in d.iter_mut().zip(s.iter()) {
            *a += b;
        }
    }
}

impl ActObserve for DqfdAgent {
    /// Greedy per-head argmax; with exploration, each head is independently
    /// replaced by a uniform random action with probability epsilon.
    fn act(&mut self, state: &StateTokens, explore: bool) -> ActionVec {
        let q = self.q_values(state);
        let eps = self.epsilon();
        let options = self.cfg.head_options() as u8;
        let heads = q
            .heads
            .iter()
            .map(|head_q| {
                let greedy = argmax(head_q) as u8;
                if explore && self.rng.gen::<f64>() < eps {
                    self.rng.gen_range(0..options)
                } else {
                    greedy
                }
            })
            .collect();
        ActionVec::new(heads)
    }

    /// Store the transition and, once past warmup, run one training update
    /// per update interval; the target network syncs every `target_sync`
    /// updates.
    fn observe(&mut self, transition: Transition) {
        self.memory.push_online(transition);
        self.env_steps += 1;
        if self.env_steps >= self.cfg.warmup
            && (self.env_steps - self.cfg.warmup).is_multiple_of(self.cfg.update_interval)
        {
            self.training_update();
        }
    }

    fn step_info(&self) -> StepInfo {
        StepInfo {
            epsilon: self.epsilon(),
            loss_td: self.last_losses.td,
            loss_margin: self.last_losses.margin,
        }
    }
}
