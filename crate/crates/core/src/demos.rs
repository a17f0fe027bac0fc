//! Rule-based demonstration generation.
//!
//! Two heuristics produce (query, index) pairs: full indexing covers every
//! query attribute (respecting sort order), partial indexing covers only
//! attributes not already leading an existing index. Episodes are simulated
//! against the environment to attach rewards, yielding transitions the
//! agent can pretrain on, plus a JSONL record format for persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Transition;
use crate::controller::{order_queries, QueryOrder};
use crate::query::{extract_attributes, IndexDef, QueryAst, SortDirection, StateCodec};
use crate::sim::{reward, Environment, IndexSet, RewardConfig};
use crate::workload::Schema;

/// Demonstration-generating heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoRule {
    Full,
    Partial,
}

impl DemoRule {
    pub fn apply(self, query: &QueryAst, existing: &IndexSet, max_keys: usize) -> Option<IndexDef> {
        match self {
            DemoRule::Full => Some(full_index_rule(query, max_keys)),
            DemoRule::Partial => partial_index_rule(query, existing, max_keys),
        }
    }
}

fn rule_keys(
    attrs: &[crate::query::FieldName],
    query: &QueryAst,
    max_keys: usize,
) -> Vec<(crate::query::FieldName, SortDirection)> {
    let sort_keys = query.agg.sort_keys();
    attrs
        .iter()
        .take(max_keys)
        .map(|field| {
            let dir = sort_keys
                .iter()
                .find(|(f, _)| f == field)
                .map(|(_, d)| *d)
                .unwrap_or(SortDirection::Asc);
            (field.clone(), dir)
        })
        .collect()
}

/// Compound index over all query attributes in extraction order, truncated
/// to `max_keys`, with each key taking the query's sort direction when
/// sorted and ascending otherwise.
pub fn full_index_rule(query: &QueryAst, max_keys: usize) -> IndexDef {
    let attrs = extract_attributes(query);
    IndexDef::new(rule_keys(&attrs, query, max_keys))
        .expect("queries have at least one distinct attribute")
}

/// Like the full rule but restricted to attributes that are not already the
/// first key of an existing index; `None` when everything is covered.
pub fn partial_index_rule(
    query: &QueryAst,
    existing: &IndexSet,
    max_keys: usize,
) -> Option<IndexDef> {
    let covered: Vec<&crate::query::FieldName> =
        existing.iter().map(|def| &def.first_key().0).collect();
    let attrs: Vec<crate::query::FieldName> = extract_attributes(query)
        .into_iter()
        .filter(|f| !covered.contains(&f))
        .collect();
    if attrs.is_empty() {
        return None;
    }
    Some(IndexDef::new(rule_keys(&attrs, query, max_keys)).expect("attrs nonempty and distinct"))
}

/// One persisted demonstration step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationRecord {
    pub episode: u64,
    pub step: u64,
    pub query: QueryAst,
    pub context_indexes: Vec<IndexDef>,
    pub action_index: Option<IndexDef>,
    pub reward: f64,
    /// Reserved for weighting trusted demonstrations; currently unused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Demonstration build output: records for persistence, transitions for
/// the agent, and a skip counter for unencodable rule outputs.
#[derive(Debug, Default)]
pub struct DemoBuild {
    pub records: Vec<DemonstrationRecord>,
    pub transitions: Vec<Transition>,
    pub skipped: u64,
}

/// Simulate rule-driven episodes over the workload and record transitions.
///
/// Queries are ordered per `order`, split into episodes of `episode_len`
/// (one single episode when `None`), and each episode starts from an empty
/// index set. Reward weights are self-normalized per episode when
/// `reward_cfg` is `None`.
pub fn build_demonstrations(
    queries: &[QueryAst],
    rule: DemoRule,
    env: &mut Environment,
    codec: &StateCodec,
    order: QueryOrder,
    episode_len: Option<usize>,
    reward_cfg: Option<RewardConfig>,
) -> DemoBuild {
    let ordered = order_queries(queries, order);
    let chunk_len = episode_len.unwrap_or(ordered.len().max(1));
    let mut build = DemoBuild::default();

    for (episode, chunk) in ordered.chunks(chunk_len).enumerate() {
        let rc = reward_cfg.unwrap_or_else(|| {
            crate::controller::resolve_reward_config(chunk, env.collection(), None, None)
        });
        env.drop_all();
        let mut pending: Option<(Transition, DemonstrationRecord)> = None;
        for (step, query) in chunk.iter().enumerate() {
            let state = codec.state(query, env.indexes());
            // close out the previous step's transition with this state
            if let Some((mut tr, rec)) = pending.take() {
                tr.next_state = state.clone();
                build.transitions.push(tr);
                build.records.push(rec);
            }
            let context = env.indexes().to_vec();
            let attrs = codec.attrs(query);
            let index = rule.apply(query, env.indexes(), codec.max_keys);
            let action = match codec.encode(index.as_ref(), &attrs) {
                Ok(action) => action,
                Err(_) => {
                    build.skipped += 1;
                    continue;
                }
            };
            if let Some(def) = &index {
                env.create_index(def.clone());
            }
            let latency = env.execute(query);
            let size = env.index_size();
            let r = reward(latency, size, &rc);
            let transition = Transition {
                state,
                action,
                reward: r,
                next_state: codec.terminal_state(),
                terminal: step + 1 == chunk.len(),
                is_demo: true,
            };
            let record = DemonstrationRecord {
                episode: episode as u64,
                step: step as u64,
                query: query.clone(),
                context_indexes: context,
                action_index: index,
                reward: r,
                confidence: None,
            };
            if transition.terminal {
                build.transitions.push(transition);
                build.records.push(record);
            } else {
                pending = Some((transition, record));
            }
        }
        // a trailing pending step (possible when later steps were skipped)
        if let Some((mut tr, rec)) = pending.take() {
            tr.terminal = true;
            build.transitions.push(tr);
            build.records.push(rec);
        }
    }
    build
}

#[derive(Debug, Error)]
pub enum DemoIoError {
    #[error("demo i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A tolerated per-line load failure.
#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Write records one JSON object per line.
pub fn save_demos(path: &Path, records: &[DemonstrationRecord]) -> Result<(), DemoIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load records, validating queries against the schema. Malformed or
/// invalid lines are skipped and reported instead of aborting the load.
pub fn load_demos(
    path: &Path,
    schema: &Schema,
) -> Result<(Vec<DemonstrationRecord>, Vec<LineError>), DemoIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DemonstrationRecord>(&line) {
            Ok(record) => match record.query.validate(schema) {
                Ok(()) => records.push(record),
                Err(e) => errors.push(LineError {
                    line: i + 1,
                    message: e.to_string(),
                }),
            },
            Err(e) => errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((records, errors))
}

/// Rebuild agent transitions from persisted records.
///
/// States are re-tokenized from each record's query and index context; the
/// successor state comes from the next record of the same episode. Records
/// whose action cannot be encoded are skipped and counted.
pub fn records_to_transitions(
    records: &[DemonstrationRecord],
    codec: &StateCodec,
) -> (Vec<Transition>, u64) {
    let mut transitions = Vec::with_capacity(records.len());
    let mut skipped = 0u64;
    let mut i = 0;
    while i < records.len() {
        let record = &records[i];
        let attrs = codec.attrs(&record.query);
        let action = match codec.encode(record.action_index.as_ref(), &attrs) {
            Ok(action) => action,
            Err(_) => {
                skipped += 1;
                i += 1;
                continue;
            }
        };
        let state = codec.state(&record.query, &record.context_indexes);
        let next = records.get(i + 1).filter(|n| n.episode == record.episode);
        let (next_state, terminal) = match next {
            Some(n) => (codec.state(&n.query, &n.context_indexes), false),
            None => (codec.terminal_state(), true),
        };
        transitions.push(Transition {
            state,
            action,
            reward: record.reward,
            next_state,
            terminal,
            is_demo: true,
        });
        i += 1;
    }
    (transitions, skipped)
}
