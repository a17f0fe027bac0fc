//! Execution modes wiring agent and environment together: pretraining,
//! episodic online training, evaluation, rule baselines, and stream
//! serving.
//!
//! One online episode walks the query set (longest queries first by
//! default) starting from an empty index set, creating one agent-chosen
//! index per query; the index set of the highest-reward episode is tracked
//! and reported.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ActObserve, DqfdAgent, Transition};
use crate::demos::DemoRule;
use crate::query::{extract_attributes, IndexDef, QueryAst, StateCodec};
use crate::sim::{index_size, reward, CollectionModel, Environment, IndexSet, RewardConfig};

/// Episode iteration order over the workload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrder {
    /// Longest (most attributes) first, so compound indexes created early
    /// can serve later short queries via prefix intersection.
    #[default]
    Desc,
    Asc,
    /// Workload file order.
    None,
}

/// Stable-sort the workload by attribute count per the episode order.
pub fn order_queries(queries: &[QueryAst], order: QueryOrder) -> Vec<QueryAst> {
    let mut out = queries.to_vec();
    match order {
        QueryOrder::Desc => {
            out.sort_by_key(|q| std::cmp::Reverse(extract_attributes(q).len()));
        }
        QueryOrder::Asc => out.sort_by_key(|q| extract_attributes(q).len()),
        QueryOrder::None => {}
    }
    out
}

/// Derive reward weights from the workload when none are configured:
/// each term normalizes to 0.5 at its workload-scale reference point,
/// `omega1` against the full-rule index footprint and `omega2` against the
/// mean full-scan latency.
pub fn resolve_reward_config(
    queries: &[QueryAst],
    coll: &CollectionModel,
    omega1: Option<f64>,
    omega2: Option<f64>,
) -> RewardConfig {
    let omega1 = omega1.unwrap_or_else(|| {
        let full: IndexSet = queries
            .iter()
            .map(|q| crate::demos::full_index_rule(q, 3))
            .collect();
        let bytes = index_size(&full, coll);
        if bytes == 0 {
            0.0
        } else {
            0.5 / bytes as f64
        }
    });
    let omega2 = omega2.unwrap_or_else(|| {
        // full-scan latency: the plain collection scan, sort stages excluded,
        // so one scan-equivalent of saved latency weighs like half the
        // full-rule index footprint
        let scan_latency = coll.doc_count as f64 * coll.unit_scan_cost * coll.time_per_unit;
        if scan_latency == 0.0 {
            1.0
        } else {
            0.5 / scan_latency
        }
    });
    RewardConfig::new(omega1, omega2).unwrap_or(RewardConfig {
        omega1: 0.0,
        omega2: 1.0,
    })
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Agent(#[from] crate::agent::AgentConfigError),
    #[error("model: {0}")]
    Model(#[from] crate::nn::ModelIoError),
    #[error("empty workload")]
    EmptyWorkload,
    #[error("empty demonstration set")]
    EmptyDemos,
    #[error("{0}")]
    Invalid(String),
}

/// One reward-curve row, written as
/// `episode,step,reward,epsilon,loss_td,loss_margin`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub episode: u64,
    pub step: u64,
    pub reward: f64,
    pub epsilon: f64,
    pub loss_td: f64,
    pub loss_margin: f64,
}

/// The best episode seen during online training.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BestEpisode {
    pub episode: u64,
    pub reward: f64,
    /// Final index set of that episode.
    pub indexes: Vec<IndexDef>,
    /// Per-step created index (or no-op), for exact replay.
    pub steps: Vec<Option<IndexDef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Outcome of an online training run.
#[derive(Debug)]
pub struct OnlineOutcome {
    pub best: BestEpisode,
    pub curve: Vec<CurveRow>,
    pub episode_rewards: Vec<f64>,
}

/// Episodic online training: for each episode drop all indexes, then per
/// query tokenize, act, create the decoded index, execute, and observe the
/// reward. Returns the reward curve and the best-episode index set.
pub fn run_online<A: ActObserve>(
    agent: &mut A,
    env: &mut Environment,
    queries: &[QueryAst],
    episodes: u64,
    codec: &StateCodec,
    reward_cfg: &RewardConfig,
    order: QueryOrder,
) -> Result<OnlineOutcome, ControllerError> {
    if queries.is_empty() {
        return Err(ControllerError::EmptyWorkload);
    }
    let ordered = order_queries(queries, order);
    let mut curve = Vec::with_capacity((episodes as usize) * ordered.len());
    let mut episode_rewards = Vec::with_capacity(episodes as usize);
    let mut best: Option<BestEpisode> = None;

    for episode in 0..episodes {
        env.drop_all();
        let mut total = 0.0;
        let mut steps: Vec<Option<IndexDef>> = Vec::with_capacity(ordered.len());
        for (i, query) in ordered.iter().enumerate() {
            let state = codec.state(query, env.indexes());
            let action = agent.act(&state, true);
            let attrs = codec.attrs(query);
            let decoded = codec.decode(&action, &attrs);
            if let Some(def) = &decoded {
                env.create_index(def.clone());
            }
            steps.push(decoded);
            let latency = env.execute(query);
            let size = env.index_size();
            let r = reward(latency, size, reward_cfg);
            total += r;
            let terminal = i + 1 == ordered.len();
            let next_state = if terminal {
                codec.terminal_state()
            } else {
                codec.state(&ordered[i + 1], env.indexes())
            };
            agent.observe(Transition {
                state,
                action,
                reward: r,
                next_state,
                terminal,
                is_demo: false,
            });
            let info = agent.step_info();
            curve.push(CurveRow {
                episode,
                step: i as u64,
                reward: r,
                epsilon: info.epsilon,
                loss_td: info.loss_td,
                loss_margin: info.loss_margin,
            });
        }
        episode_rewards.push(total);
        let improved = best.as_ref().is_none_or(|b| total > b.reward);
        if improved {
            best = Some(BestEpisode {
                episode,
                reward: total,
                indexes: env.indexes().to_vec(),
                steps,
                config: None,
            });
        }
    }

    Ok(OnlineOutcome {
        best: best.expect("at least one episode"),
        curve,
        episode_rewards,
    })
}

/// Re-run a stored episode step-for-step and return its total reward.
/// Deterministic environments reproduce the recorded value exactly.
pub fn replay_episode(
    env: &mut Environment,
    queries: &[QueryAst],
    steps: &[Option<IndexDef>],
    reward_cfg: &RewardConfig,
    order: QueryOrder,
) -> f64 {
    let ordered = order_queries(queries, order);
    env.drop_all();
    let mut total = 0.0;
    for (query, step) in ordered.iter().zip(steps) {
        if let Some(def) = step {
            env.create_index(def.clone());
        }
        let latency = env.execute(query);
        total += reward(latency, env.index_size(), reward_cfg);
    }
    total
}

/// Evaluation report over a fixed index set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_latency_s: f64,
    pub p90_latency_s: f64,
    pub p99_latency_s: f64,
    /// Index bytes relative to the full-rule set on the same workload.
    pub normalized_index_size: f64,
    pub total_reward: f64,
    pub per_query_latency_s: Vec<f64>,
    pub index_set: Vec<IndexDef>,
    pub config: serde_json::Value,
}

/// Nearest-rank percentile of a sample.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Evaluate an index set: recreate it, run every query `repetitions` times,
/// and aggregate latencies plus size normalized against the full rule.
pub fn run_evaluate(
    env: &mut Environment,
    queries: &[QueryAst],
    indexes: &[IndexDef],
    repetitions: u32,
    reward_cfg: &RewardConfig,
    order: QueryOrder,
    config_echo: serde_json::Value,
) -> Result<EvalReport, ControllerError> {
    if queries.is_empty() {
        return Err(ControllerError::EmptyWorkload);
    }
    let ordered = order_queries(queries, order);
    let full: IndexSet = ordered
        .iter()
        .map(|q| crate::demos::full_index_rule(q, 3))
        .collect();
    let full_bytes = index_size(&full, env.collection());

    env.drop_all();
    for def in indexes {
        env.create_index(def.clone());
    }
    let set_bytes = env.index_size();

    let reps = repetitions.max(1);
    let mut all = Vec::with_capacity(ordered.len() * reps as usize);
    let mut per_query = vec![0.0f64; ordered.len()];
    let mut total_reward = 0.0;
    for _ in 0..reps {
        for (i, query) in ordered.iter().enumerate() {
            let t = env.execute(query);
            all.push(t);
            per_query[i] += t;
            total_reward += reward(t, set_bytes, reward_cfg);
        }
    }
    for t in &mut per_query {
        *t /= reps as f64;
    }
    total_reward /= reps as f64;

    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let mut sorted = all;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));

    Ok(EvalReport {
        mean_latency_s: mean,
        p90_latency_s: percentile(&sorted, 90.0),
        p99_latency_s: percentile(&sorted, 99.0),
        normalized_index_size: if full_bytes == 0 {
            0.0
        } else {
            set_bytes as f64 / full_bytes as f64
        },
        total_reward,
        per_query_latency_s: per_query,
        index_set: indexes.to_vec(),
        config: config_echo,
    })
}

/// Derive an index set from a trained model with one exploration-free pass.
pub fn greedy_index_set(
    agent: &mut DqfdAgent,
    env: &mut Environment,
    queries: &[QueryAst],
    codec: &StateCodec,
    order: QueryOrder,
) -> Vec<IndexDef> {
    let ordered = order_queries(queries, order);
    env.drop_all();
    for query in &ordered {
        let state = codec.state(query, env.indexes());
        let action = agent.act(&state, false);
        let attrs = codec.attrs(query);
        if let Some(def) = codec.decode(&action, &attrs) {
            env.create_index(def);
        }
    }
    env.indexes().to_vec()
}

/// Baseline strategies: no indexing, or one rule pass over the workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineStrategy {
    Default,
    Full,
    Partial,
}

/// Build a baseline index set with one episode of the named rule.
pub fn baseline_index_set(
    strategy: BaselineStrategy,
    env: &mut Environment,
    queries: &[QueryAst],
    codec: &StateCodec,
    order: QueryOrder,
) -> Vec<IndexDef> {
    env.drop_all();
    let rule = match strategy {
        BaselineStrategy::Default => return Vec::new(),
        BaselineStrategy::Full => DemoRule::Full,
        BaselineStrategy::Partial => DemoRule::Partial,
    };
    for query in order_queries(queries, order) {
        if let Some(def) = rule.apply(&query, env.indexes(), codec.max_keys) {
            env.create_index(def);
        }
    }
    env.indexes().to_vec()
}

// ---------------------------------------------------------------------------
// Serving
// ---------------------------------------------------------------------------

/// Input line for serve mode: either a bare query object or an envelope
/// `{"query": {...}, "reward": r, "terminal": b}`. A reward applies to the
/// previous decision; a reward without a query closes the episode.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeEnvelope {
    query: Option<QueryAst>,
    reward: Option<f64>,
    #[serde(default)]
    terminal: bool,
}

/// Stream decisions: one JSON line in, one decision (or error) line out.
///
/// The server keeps the index set implied by its own decisions so states
/// reflect what an applying client would have built. With `learn` enabled,
/// supplied rewards feed incremental observe updates.
pub fn run_serve<R: BufRead, W: Write>(
    agent: &mut DqfdAgent,
    codec: &StateCodec,
    input: R,
    output: &mut W,
    learn: bool,
) -> Result<ServeStats, ControllerError> {
    let mut stats = ServeStats::default();
    let mut context = IndexSet::new();
    let mut pending: Option<(crate::query::StateTokens, crate::query::ActionVec)> = None;

    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let envelope: Result<ServeEnvelope, _> = serde_json::from_str(&line).or_else(|_| {
            serde_json::from_str::<QueryAst>(&line).map(|q| ServeEnvelope {
                query: Some(q),
                reward: None,
                terminal: false,
            })
        });
        let envelope = match envelope {
            Ok(e) => e,
            Err(e) => {
                stats.errors += 1;
                writeln!(
                    output,
                    "{}",
                    serde_json::json!({"error": e.to_string(), "line": lineno + 1})
                )?;
                continue;
            }
        };

        let state = envelope.query.as_ref().map(|q| codec.state(q, &context));

        // a supplied reward closes out the previous decision
        if let (Some(r), Some((prev_state, prev_action))) = (envelope.reward, pending.take()) {
            if learn {
                let (next_state, terminal) = match &state {
                    Some(s) => (s.clone(), envelope.terminal),
                    None => (codec.terminal_state(), true),
                };
                agent.observe(Transition {
                    state: prev_state,
                    action: prev_action,
                    reward: r,
                    next_state,
                    terminal,
                    is_demo: false,
                });
            }
        }

        let Some(query) = envelope.query else {
            continue;
        };
        let state = state.expect("state computed for every query");
        let action = agent.act(&state, false);
        let attrs = extract_attributes(&query);
        let decoded = codec.decode(&action, &attrs);
        if let Some(def) = &decoded {
            context.create(def.clone());
        }
        if learn {
            pending = Some((state, action));
        }
        writeln!(output, "{}", serde_json::json!({ "index": decoded }))?;
        stats.decisions += 1;
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub decisions: u64,
    pub errors: u64,
}

// ---------------------------------------------------------------------------
// Curve CSV writers
// ---------------------------------------------------------------------------

/// Write the reward curve with a leading config-echo comment line.
pub fn write_reward_curve(
    path: &Path,
    rows: &[CurveRow],
    config_echo: &serde_json::Value,
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config {config_echo}\n"));
    out.push_str("episode,step,reward,epsilon,loss_td,loss_margin\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.episode, row.step, row.reward, row.epsilon, row.loss_td, row.loss_margin
        ));
    }
    std::fs::write(path, out)
}

/// Write the pretraining accuracy curve (`update,accuracy`).
pub fn write_accuracy_curve(
    path: &Path,
    points: &[crate::agent::AccuracyPoint],
    config_echo: &serde_json::Value,
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config {config_echo}\n"));
    out.push_str("update,accuracy\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.update, p.accuracy));
    }
    std::fs::write(path, out)
}

/// Standard model-file metadata: the agent config plus the merged run
/// config, both as JSON strings.
pub fn model_meta(
    agent_cfg: &crate::agent::AgentConfig,
    run_config: &serde_json::Value,
) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("agent_config".into(), agent_cfg.to_json().to_string());
    meta.insert("run_config".into(), run_config.to_string());
    meta
}
