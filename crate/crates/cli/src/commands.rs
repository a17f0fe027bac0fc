//! Subcommand definitions, config-file merging, and dispatch.

use std::fmt;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qindex::agent::{build_agent, AgentConfig, ExplorationSchedule};
use qindex::controller::{
    baseline_index_set, greedy_index_set, model_meta, resolve_reward_config, run_evaluate,
    run_online, run_serve, write_accuracy_curve, write_reward_curve, BaselineStrategy, BestEpisode,
    QueryOrder,
};
use qindex::demos::{
    build_demonstrations, load_demos, records_to_transitions, save_demos, DemoRule,
};
use qindex::nn::{load_model, save_model};
use qindex::query::{build_vocabulary, IndexDef, QueryAst, StateCodec};
use qindex::sim::{EnvConfig, Environment, RewardConfig};
use qindex::workload::{
    default_schema, gen_workload, read_queries_jsonl, write_queries_jsonl, QueryGenConfig, Schema,
};

/// Error class that maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "qindex",
    version,
    about = "Learned compound-index advisor for document databases"
)]
pub struct Cli {
    /// Seed override applied to the selected subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a synthetic query workload (JSONL).
    GenWorkload(GenWorkloadArgs),
    /// Generate rule-based demonstrations from a workload (JSONL).
    GenDemos(GenDemosArgs),
    /// Pretrain an agent on demonstrations and serialize the model.
    Pretrain(PretrainArgs),
    /// Online episodic training against the simulated environment.
    Train(TrainArgs),
    /// Evaluate an index set or model over a workload.
    Evaluate(EvaluateArgs),
    /// Evaluate a rule baseline (default/full/partial) over a workload.
    Baseline(BaselineArgs),
    /// Serve index decisions for queries streamed on stdin.
    Serve(ServeArgs),
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file_cfg: Value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            serde_json::from_str(&text).context("parsing config file")?
        }
        None => Value::Object(Default::default()),
    };
    match cli.cmd {
        Cmd::GenWorkload(args) => gen_workload_cmd(args, &file_cfg, cli.seed),
        Cmd::GenDemos(args) => gen_demos_cmd(args, &file_cfg, cli.seed),
        Cmd::Pretrain(args) => pretrain_cmd(args, &file_cfg, cli.seed),
        Cmd::Train(args) => train_cmd(args, &file_cfg, cli.seed),
        Cmd::Evaluate(args) => evaluate_cmd(args, &file_cfg, cli.seed),
        Cmd::Baseline(args) => baseline_cmd(args, &file_cfg, cli.seed),
        Cmd::Serve(args) => serve_cmd(args, &file_cfg, cli.seed),
    }
}

/// Fill an options struct's `None` fields from the config file.
fn overlay<T: Serialize + DeserializeOwned>(flags: T, file_cfg: &Value) -> Result<T> {
    let mut merged = match file_cfg {
        Value::Object(map) => map.clone(),
        _ => bail!(usage("config file must contain a JSON object")),
    };
    let flag_map = match serde_json::to_value(&flags)? {
        Value::Object(map) => map,
        _ => unreachable!("flag structs serialize to objects"),
    };
    // flags win over config-file values
    for (k, v) in flag_map {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("config: {e}")))
}

fn echo_config(command: &str, effective: &Value) {
    eprintln!("config[{command}]: {effective}");
}

fn load_env_config(path: &Option<PathBuf>) -> Result<EnvConfig> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading env config {}", path.display()))?;
            serde_json::from_str(&text).context("parsing env config")
        }
        None => Ok(EnvConfig::default()),
    }
}

fn load_workload(path: &Path, schema: &Schema) -> Result<Vec<QueryAst>> {
    let queries = read_queries_jsonl(path, schema)
        .with_context(|| format!("loading workload {}", path.display()))?;
    if queries.is_empty() {
        bail!("workload {} is empty", path.display());
    }
    Ok(queries)
}

/// Insert `.seed<N>` before the extension for per-seed output isolation.
fn seed_path(path: &Path, seed: u64) -> PathBuf {
    match path.extension() {
        Some(ext) => path.with_extension(format!("seed{seed}.{}", ext.to_string_lossy())),
        None => path.with_extension(format!("seed{seed}")),
    }
}

// ---------------------------------------------------------------------------
// gen-workload
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct GenWorkloadArgs {
    /// Number of queries to generate.
    #[arg(long)]
    count: Option<usize>,
    /// Output JSONL path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn gen_workload_cmd(
    args: GenWorkloadArgs,
    file_cfg: &Value,
    global_seed: Option<u64>,
) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let count = merged.count.ok_or_else(|| usage("--count is required"))?;
    let out = merged.out.ok_or_else(|| usage("--out is required"))?;
    let seed = global_seed.or(merged.seed).unwrap_or(0);
    if count == 0 {
        bail!(usage("--count must be >= 1"));
    }

    let schema = default_schema();
    let cfg = QueryGenConfig {
        seed,
        ..QueryGenConfig::default()
    };
    let effective = json!({
        "count": count,
        "out": out,
        "seed": seed,
        "generator": cfg,
    });
    echo_config("gen-workload", &effective);

    let queries = gen_workload(&schema, &cfg, count)?;
    write_queries_jsonl(&out, &queries)?;
    println!("wrote {} queries to {}", queries.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-demos
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct GenDemosArgs {
    /// Input workload JSONL.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output demonstrations JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Demonstration rule.
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    /// Environment config JSON.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Queries per simulated episode (whole workload when omitted).
    #[arg(long)]
    episode_len: Option<usize>,
    /// Episode query order.
    #[arg(long, value_enum)]
    query_order: Option<OrderArg>,
    /// Environment noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RuleArg {
    Full,
    Partial,
}

impl From<RuleArg> for DemoRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Full => DemoRule::Full,
            RuleArg::Partial => DemoRule::Partial,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OrderArg {
    Desc,
    Asc,
    None,
}

impl From<OrderArg> for QueryOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Desc => QueryOrder::Desc,
            OrderArg::Asc => QueryOrder::Asc,
            OrderArg::None => QueryOrder::None,
        }
    }
}

fn gen_demos_cmd(args: GenDemosArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let queries_path = merged
        .queries
        .ok_or_else(|| usage("--queries is required"))?;
    let out = merged.out.ok_or_else(|| usage("--out is required"))?;
    let rule: DemoRule = merged.rule.unwrap_or(RuleArg::Full).into();
    let order: QueryOrder = merged.query_order.unwrap_or(OrderArg::Desc).into();
    let episode_len = merged.episode_len.unwrap_or(20);
    let seed = global_seed.or(merged.seed).unwrap_or(0);
    let env_cfg = load_env_config(&merged.env)?;

    let schema = default_schema();
    let queries = load_workload(&queries_path, &schema)?;
    let vocab = build_vocabulary(&schema)?;
    let codec = StateCodec::new(vocab, 32, 3);
    let coll = env_cfg.collection(schema);
    let mut env = Environment::new(coll, seed);

    let effective = json!({
        "queries": queries_path,
        "out": out,
        "rule": rule,
        "query_order": order,
        "episode_len": episode_len,
        "seed": seed,
        "env": env_cfg,
        "state_len": codec.state_len,
        "max_keys": codec.max_keys,
    });
    echo_config("gen-demos", &effective);

    let reward_cfg = match (env_cfg.omega1, env_cfg.omega2) {
        (Some(w1), Some(w2)) => {
            Some(RewardConfig::new(w1, w2).map_err(|e| anyhow::anyhow!("{e}"))?)
        }
        // per-episode self-normalization when either weight is unset
        _ => None,
    };
    let build = build_demonstrations(
        &queries,
        rule,
        &mut env,
        &codec,
        order,
        Some(episode_len),
        reward_cfg,
    );
    save_demos(&out, &build.records)?;
    println!(
        "wrote {} demonstrations to {} ({} skipped)",
        build.records.len(),
        out.display(),
        build.skipped
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Demonstrations JSONL.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    out_model: Option<PathBuf>,
    /// Output accuracy-curve CSV path.
    #[arg(long)]
    out_curve: Option<PathBuf>,
    /// Max training updates.
    #[arg(long)]
    steps: Option<u64>,
    /// Accuracy evaluation interval (updates).
    #[arg(long)]
    eval_every: Option<u64>,
    /// Early-stop accuracy target; 0 disables.
    #[arg(long)]
    early_stop: Option<f64>,
    /// Agent config JSON file (declarative form).
    #[arg(long)]
    agent_config: Option<PathBuf>,
    /// Agent seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_agent_config(path: &Option<PathBuf>) -> Result<Option<AgentConfig>> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading agent config {}", path.display()))?;
            let value: Value = serde_json::from_str(&text).context("parsing agent config")?;
            Ok(Some(AgentConfig::from_json(value)?))
        }
        None => Ok(None),
    }
}

fn pretrain_cmd(args: PretrainArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let demos_path = merged.demos.ok_or_else(|| usage("--demos is required"))?;
    let out_model = merged
        .out_model
        .ok_or_else(|| usage("--out-model is required"))?;
    let steps = merged.steps.unwrap_or(2_000);
    let eval_every = merged.eval_every.unwrap_or(50);
    let early_stop = match merged.early_stop {
        Some(t) if t <= 0.0 => None,
        Some(t) => Some(t),
        None => Some(0.75),
    };
    let seed = global_seed.or(merged.seed).unwrap_or(0);

    let schema = default_schema();
    let vocab = build_vocabulary(&schema)?;
    let mut agent_cfg = load_agent_config(&merged.agent_config)?.unwrap_or_default();
    agent_cfg.vocab_size = vocab.len();
    agent_cfg.seed = seed;
    let codec = StateCodec::new(vocab.clone(), agent_cfg.state_len, agent_cfg.max_keys);

    let (records, line_errors) = load_demos(&demos_path, &schema)?;
    for err in &line_errors {
        eprintln!("demos line {}: {}", err.line, err.message);
    }
    if records.is_empty() {
        bail!("no usable demonstrations in {}", demos_path.display());
    }
    let (transitions, skipped) = records_to_transitions(&records, &codec);
    if skipped > 0 {
        eprintln!("skipped {skipped} unencodable demonstration records");
    }

    let effective = json!({
        "demos": demos_path,
        "out_model": out_model,
        "out_curve": merged.out_curve,
        "steps": steps,
        "eval_every": eval_every,
        "early_stop": early_stop,
        "seed": seed,
        "agent": agent_cfg.to_json(),
        "demo_count": transitions.len(),
    });
    echo_config("pretrain", &effective);

    let mut agent = build_agent(agent_cfg.clone())?;
    agent.import_demonstrations(transitions);
    let history = agent.pretrain(steps, eval_every, early_stop)?;
    let final_accuracy = history.last().map(|p| p.accuracy).unwrap_or(0.0);

    let meta = model_meta(&agent_cfg, &effective);
    save_model(
        &out_model,
        &agent.network().spec,
        &vocab,
        &agent.network().params,
        &meta,
    )?;
    if let Some(curve) = &merged.out_curve {
        write_accuracy_curve(curve, &history, &effective)?;
    }
    println!(
        "pretrained {} updates, demo accuracy {:.3}, model written to {}",
        history.last().map(|p| p.update).unwrap_or(0),
        final_accuracy,
        out_model.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct TrainArgs {
    /// Workload JSONL to index.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Pretrained model to refine (fresh agent when omitted).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Demonstrations JSONL replayed alongside online experience.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<u64>,
    /// Output refined-model path.
    #[arg(long)]
    out_model: Option<PathBuf>,
    /// Output reward-curve CSV path.
    #[arg(long)]
    out_curve: Option<PathBuf>,
    /// Output best-index-set JSON path.
    #[arg(long)]
    out_best: Option<PathBuf>,
    /// Environment config JSON.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Episode query order.
    #[arg(long, value_enum)]
    query_order: Option<OrderArg>,
    /// Agent config JSON file (declarative form).
    #[arg(long)]
    agent_config: Option<PathBuf>,
    /// Agent + environment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds for independent runs (outputs get `.seedN`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Parallel workers for --seeds.
    #[arg(long)]
    jobs: Option<usize>,
}

fn train_cmd(args: TrainArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    if let Some(seeds) = merged.seeds.clone().filter(|s| s.len() > 1) {
        let jobs = merged.jobs.unwrap_or(1).max(1);
        return train_multi_seed(merged, seeds, jobs);
    }
    let seed = global_seed
        .or(merged.seed)
        .or_else(|| merged.seeds.as_ref().and_then(|s| s.first().copied()))
        .unwrap_or(0);
    train_one(merged, seed)
}

fn train_multi_seed(args: TrainArgs, seeds: Vec<u64>, jobs: usize) -> Result<()> {
    let chunks: Vec<Vec<u64>> = seeds
        .chunks(seeds.len().div_ceil(jobs))
        .map(<[u64]>::to_vec)
        .collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in &chunks {
            let args = args.clone();
            handles.push(scope.spawn(move || -> Result<()> {
                for &seed in chunk {
                    let mut per_seed = args.clone();
                    per_seed.out_model = per_seed.out_model.map(|p| seed_path(&p, seed));
                    per_seed.out_curve = per_seed.out_curve.map(|p| seed_path(&p, seed));
                    per_seed.out_best = per_seed.out_best.map(|p| seed_path(&p, seed));
                    train_one(per_seed, seed)?;
                }
                Ok(())
            }));
        }
        for handle in handles {
            handle.join().expect("worker thread panicked")?;
        }
        Ok(())
    })
}

fn train_one(merged: TrainArgs, seed: u64) -> Result<()> {
    let queries_path = merged
        .queries
        .ok_or_else(|| usage("--queries is required"))?;
    let episodes = merged.episodes.unwrap_or(100);
    let order: QueryOrder = merged.query_order.unwrap_or(OrderArg::Desc).into();
    let env_cfg = load_env_config(&merged.env)?;

    let schema = default_schema();
    let queries = load_workload(&queries_path, &schema)?;

    // agent: pretrained model, else declarative config, else defaults
    let loaded = match &merged.model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let explicit_cfg = load_agent_config(&merged.agent_config)?;
    let (vocab, mut agent_cfg, params) = match loaded {
        Some(model) => {
            let stored: AgentConfig = model
                .meta
                .get("agent_config")
                .and_then(|raw| serde_json::from_str::<Value>(raw).ok())
                .map(AgentConfig::from_json)
                .transpose()?
                .ok_or_else(|| anyhow::anyhow!("model file lacks agent_config metadata"))?;
            (
                model.vocab,
                explicit_cfg.unwrap_or(stored),
                Some(model.params),
            )
        }
        None => {
            let mut cfg = explicit_cfg.unwrap_or_default();
            if merged.agent_config.is_none() {
                cfg.exploration = ExplorationSchedule::scratch();
            }
            (build_vocabulary(&schema)?, cfg, None)
        }
    };
    agent_cfg.vocab_size = vocab.len();
    agent_cfg.seed = seed;
    let codec = StateCodec::new(vocab.clone(), agent_cfg.state_len, agent_cfg.max_keys);

    let coll = env_cfg.collection(schema.clone());
    let reward_cfg = resolve_reward_config(&queries, &coll, env_cfg.omega1, env_cfg.omega2);
    let mut env = Environment::new(coll, seed.wrapping_add(1));

    let effective = json!({
        "queries": queries_path,
        "model": merged.model,
        "demos": merged.demos,
        "episodes": episodes,
        "query_order": order,
        "seed": seed,
        "env": env_cfg,
        "reward": reward_cfg,
        "agent": agent_cfg.to_json(),
        "pretrained": params.is_some(),
    });
    echo_config("train", &effective);

    let mut agent = build_agent(agent_cfg.clone())?;
    if let Some(params) = params {
        agent.load_params(params);
    }
    if let Some(demos_path) = &merged.demos {
        let (records, line_errors) = load_demos(demos_path, &schema)?;
        for err in &line_errors {
            eprintln!("demos line {}: {}", err.line, err.message);
        }
        let (transitions, skipped) = records_to_transitions(&records, &codec);
        if skipped > 0 {
            eprintln!("skipped {skipped} unencodable demonstration records");
        }
        agent.import_demonstrations(transitions);
    }

    let outcome = run_online(
        &mut agent,
        &mut env,
        &queries,
        episodes,
        &codec,
        &reward_cfg,
        order,
    )?;

    if let Some(path) = &merged.out_curve {
        write_reward_curve(path, &outcome.curve, &effective)?;
    }
    if let Some(path) = &merged.out_best {
        let best = BestEpisode {
            config: Some(effective.clone()),
            ..outcome.best.clone()
        };
        std::fs::write(path, serde_json::to_string_pretty(&best)?)?;
    }
    if let Some(path) = &merged.out_model {
        let meta = model_meta(&agent_cfg, &effective);
        save_model(
            path,
            &agent.network().spec,
            &vocab,
            &agent.network().params,
            &meta,
        )?;
    }
    println!(
        "trained {episodes} episodes (seed {seed}); best episode {} with reward {:.6} and {} indexes",
        outcome.best.episode,
        outcome.best.reward,
        outcome.best.indexes.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Workload JSONL.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Model to derive an index set from (exploration-free pass).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Best-index-set JSON (as written by train) or a bare index array.
    #[arg(long)]
    indexes: Option<PathBuf>,
    /// Output report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Times each query is executed.
    #[arg(long)]
    repetitions: Option<u32>,
    /// Environment config JSON.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Episode query order.
    #[arg(long, value_enum)]
    query_order: Option<OrderArg>,
    /// Environment noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Accepts either a `BestEpisode`-shaped object or a bare array of
/// index-key lists.
fn load_index_set(path: &Path) -> Result<Vec<IndexDef>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading index set {}", path.display()))?;
    if let Ok(best) = serde_json::from_str::<BestEpisode>(&text) {
        return Ok(best.indexes);
    }
    serde_json::from_str::<Vec<IndexDef>>(&text)
        .with_context(|| format!("parsing index set {}", path.display()))
}

fn evaluate_cmd(args: EvaluateArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let queries_path = merged
        .queries
        .ok_or_else(|| usage("--queries is required"))?;
    let out = merged.out.ok_or_else(|| usage("--out is required"))?;
    if merged.model.is_none() == merged.indexes.is_none() {
        bail!(usage("exactly one of --model or --indexes is required"));
    }
    let repetitions = merged.repetitions.unwrap_or(5);
    let order: QueryOrder = merged.query_order.unwrap_or(OrderArg::Desc).into();
    let seed = global_seed.or(merged.seed).unwrap_or(0);
    let env_cfg = load_env_config(&merged.env)?;

    let schema = default_schema();
    let queries = load_workload(&queries_path, &schema)?;
    let coll = env_cfg.collection(schema.clone());
    let reward_cfg = resolve_reward_config(&queries, &coll, env_cfg.omega1, env_cfg.omega2);
    let mut env = Environment::new(coll, seed);

    let (index_set, agent_echo) = match (&merged.model, &merged.indexes) {
        (Some(model_path), None) => {
            let model = load_model(model_path)?;
            let stored: AgentConfig = model
                .meta
                .get("agent_config")
                .and_then(|raw| serde_json::from_str::<Value>(raw).ok())
                .map(AgentConfig::from_json)
                .transpose()?
                .ok_or_else(|| anyhow::anyhow!("model file lacks agent_config metadata"))?;
            let codec = StateCodec::new(model.vocab.clone(), stored.state_len, stored.max_keys);
            let mut cfg = stored;
            cfg.vocab_size = model.vocab.len();
            let echo = cfg.to_json();
            let mut agent = build_agent(cfg)?;
            agent.load_params(model.params);
            let set = greedy_index_set(&mut agent, &mut env, &queries, &codec, order);
            (set, Some(echo))
        }
        (None, Some(indexes_path)) => (load_index_set(indexes_path)?, None),
        _ => unreachable!("validated above"),
    };

    let effective = json!({
        "queries": queries_path,
        "model": merged.model,
        "indexes": merged.indexes,
        "out": out,
        "repetitions": repetitions,
        "query_order": order,
        "seed": seed,
        "env": env_cfg,
        "reward": reward_cfg,
        "agent": agent_echo,
    });
    echo_config("evaluate", &effective);

    let report = run_evaluate(
        &mut env,
        &queries,
        &index_set,
        repetitions,
        &reward_cfg,
        order,
        effective,
    )?;
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "evaluated {} queries x{}: mean {:.6}s p90 {:.6}s p99 {:.6}s, normalized size {:.4}",
        queries.len(),
        repetitions,
        report.mean_latency_s,
        report.p90_latency_s,
        report.p99_latency_s,
        report.normalized_index_size
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct BaselineArgs {
    /// Workload JSONL.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Times each query is executed.
    #[arg(long)]
    repetitions: Option<u32>,
    /// Environment config JSON.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Episode query order.
    #[arg(long, value_enum)]
    query_order: Option<OrderArg>,
    /// Environment noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StrategyArg {
    Default,
    Full,
    Partial,
}

impl From<StrategyArg> for BaselineStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Default => BaselineStrategy::Default,
            StrategyArg::Full => BaselineStrategy::Full,
            StrategyArg::Partial => BaselineStrategy::Partial,
        }
    }
}

fn baseline_cmd(args: BaselineArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let queries_path = merged
        .queries
        .ok_or_else(|| usage("--queries is required"))?;
    let out = merged.out.ok_or_else(|| usage("--out is required"))?;
    let strategy: BaselineStrategy = merged
        .strategy
        .ok_or_else(|| usage("--strategy is required"))?
        .into();
    let repetitions = merged.repetitions.unwrap_or(5);
    let order: QueryOrder = merged.query_order.unwrap_or(OrderArg::Desc).into();
    let seed = global_seed.or(merged.seed).unwrap_or(0);
    let env_cfg = load_env_config(&merged.env)?;

    let schema = default_schema();
    let queries = load_workload(&queries_path, &schema)?;
    let vocab = build_vocabulary(&schema)?;
    let codec = StateCodec::new(vocab, 32, 3);
    let coll = env_cfg.collection(schema.clone());
    let reward_cfg = resolve_reward_config(&queries, &coll, env_cfg.omega1, env_cfg.omega2);
    let mut env = Environment::new(coll, seed);

    let effective = json!({
        "queries": queries_path,
        "out": out,
        "strategy": strategy,
        "repetitions": repetitions,
        "query_order": order,
        "seed": seed,
        "env": env_cfg,
        "reward": reward_cfg,
        "state_len": codec.state_len,
        "max_keys": codec.max_keys,
    });
    echo_config("baseline", &effective);

    let index_set = baseline_index_set(strategy, &mut env, &queries, &codec, order);
    let report = run_evaluate(
        &mut env,
        &queries,
        &index_set,
        repetitions,
        &reward_cfg,
        order,
        effective,
    )?;
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "baseline {:?}: mean {:.6}s, normalized size {:.4}, {} indexes",
        strategy,
        report.mean_latency_s,
        report.normalized_index_size,
        index_set.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Deserialize)]
pub struct ServeArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Apply incremental observe updates when rewards arrive on the stream.
    #[arg(long)]
    learn: Option<bool>,
    /// Agent seed (exploration is off; affects only learning updates).
    #[arg(long)]
    seed: Option<u64>,
}

fn serve_cmd(args: ServeArgs, file_cfg: &Value, global_seed: Option<u64>) -> Result<()> {
    let merged = overlay(args, file_cfg)?;
    let model_path = merged.model.ok_or_else(|| usage("--model is required"))?;
    let learn = merged.learn.unwrap_or(false);
    let seed = global_seed.or(merged.seed).unwrap_or(0);

    let model = load_model(&model_path)?;
    let stored: AgentConfig = model
        .meta
        .get("agent_config")
        .and_then(|raw| serde_json::from_str::<Value>(raw).ok())
        .map(AgentConfig::from_json)
        .transpose()?
        .ok_or_else(|| anyhow::anyhow!("model file lacks agent_config metadata"))?;
    let codec = StateCodec::new(model.vocab.clone(), stored.state_len, stored.max_keys);
    let mut cfg = stored;
    cfg.vocab_size = model.vocab.len();
    cfg.seed = seed;

    let effective = json!({
        "model": model_path,
        "learn": learn,
        "seed": seed,
        "agent": cfg.to_json(),
    });
    echo_config("serve", &effective);

    let mut agent = build_agent(cfg)?;
    agent.load_params(model.params);

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let stats = run_serve(
        &mut agent,
        &codec,
        BufReader::new(stdin.lock()),
        &mut out,
        learn,
    )?;
    out.flush()?;
    eprintln!(
        "served {} decisions ({} errors)",
        stats.decisions, stats.errors
    );
    Ok(())
}
