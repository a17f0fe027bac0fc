//! Deterministic document-store environment: index-set management, a
//! cost-based query planner honoring prefix and sort intersection, latency
//! and index-size models, and the reward function.
//!
//! Costs are abstract units converted to seconds via `time_per_unit`. A
//! candidate index's cost is
//!
//! ```text
//! log2(N) + N*s*fetch + [N*s*scan if predicates remain uncovered]
//!         + [N*s*log2(max(2, N*s))*scan if a sort is requested and unserved]
//! ```
//!
//! where `s` is the selectivity of the predicates covered by the usable key
//! prefix. A full collection scan (`N*scan` plus the sort penalty) is always
//! a candidate, and the cheapest candidate wins with ties broken toward
//! fewer keys, then the lexicographically smaller key sequence.

use std::collections::btree_set::{self, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{ComparisonOp, Expr, FieldName, IndexDef, LogicalOp, QueryAst, SortDirection};
use crate::workload::Schema;

/// Size/latency model of the simulated collection.
#[derive(Clone, Debug)]
pub struct CollectionModel {
    pub doc_count: u64,
    pub schema: Schema,
    /// Cost units per document touched by a filter or sort pass.
    pub unit_scan_cost: f64,
    /// Cost units per document fetched through an index.
    pub unit_fetch_cost: f64,
    /// Seconds per cost unit.
    pub time_per_unit: f64,
    /// Lognormal sigma of multiplicative latency noise; 0 disables noise.
    pub noise_sigma: f64,
}

impl CollectionModel {
    pub fn new(doc_count: u64, schema: Schema) -> Self {
        CollectionModel {
            doc_count,
            schema,
            unit_scan_cost: 1.0,
            unit_fetch_cost: 2.0,
            time_per_unit: 1e-6,
            noise_sigma: 0.0,
        }
    }
}

/// Environment configuration as read from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    pub doc_count: u64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Reward weight per byte of index memory; derived from the workload
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<f64>,
    /// Reward weight per second of latency; derived from the workload when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2: Option<f64>,
    #[serde(default)]
    pub unit_costs: UnitCosts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnitCosts {
    pub scan: f64,
    pub fetch: f64,
    pub time_per_unit: f64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        UnitCosts {
            scan: 1.0,
            fetch: 2.0,
            time_per_unit: 1e-6,
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            doc_count: 1_000_000,
            noise_sigma: 0.0,
            omega1: None,
            omega2: None,
            unit_costs: UnitCosts::default(),
        }
    }
}

impl EnvConfig {
    pub fn collection(&self, schema: Schema) -> CollectionModel {
        CollectionModel {
            doc_count: self.doc_count,
            schema,
            unit_scan_cost: self.unit_costs.scan,
            unit_fetch_cost: self.unit_costs.fetch,
            time_per_unit: self.unit_costs.time_per_unit,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// The current set of indexes plus its per-entry size constants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    defs: BTreeSet<IndexDef>,
    pub bytes_per_entry_base: u64,
    pub bytes_per_key: u64,
}

impl Default for IndexSet {
    fn default() -> Self {
        IndexSet {
            defs: BTreeSet::new(),
            bytes_per_entry_base: 16,
            bytes_per_key: 8,
        }
    }
}

impl IndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an index; duplicates are ignored (set semantics).
    pub fn create(&mut self, def: IndexDef) -> bool {
        self.defs.insert(def)
    }

    pub fn drop_all(&mut self) {
        self.defs.clear();
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn contains(&self, def: &IndexDef) -> bool {
        self.defs.contains(def)
    }

    /// Sorted iteration; all downstream consumers rely on this determinism.
    pub fn iter(&self) -> btree_set::Iter<'_, IndexDef> {
        self.defs.iter()
    }

    pub fn to_vec(&self) -> Vec<IndexDef> {
        self.defs.iter().cloned().collect()
    }

    /// Total key count across all indexes.
    pub fn total_keys(&self) -> usize {
        self.defs.iter().map(|d| d.len()).sum()
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a IndexDef;
    type IntoIter = btree_set::Iter<'a, IndexDef>;

    fn into_iter(self) -> Self::IntoIter {
        self.defs.iter()
    }
}

impl FromIterator<IndexDef> for IndexSet {
    fn from_iter<T: IntoIterator<Item = IndexDef>>(iter: T) -> Self {
        let mut set = IndexSet::new();
        for def in iter {
            set.create(def);
        }
        set
    }
}

/// Outcome of planning one query.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub chosen: Option<IndexDef>,
    pub covered_prefix_len: usize,
    pub sort_served: bool,
    pub est_cost: f64,
}

/// Reward weights; both nonnegative, not both zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub omega1: f64,
    pub omega2: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardConfigError {
    #[error("reward weights must be nonnegative (omega1={0}, omega2={1})")]
    Negative(f64, f64),
    #[error("at least one reward weight must be positive")]
    AllZero,
}

impl RewardConfig {
    pub fn new(omega1: f64, omega2: f64) -> Result<Self, RewardConfigError> {
        if omega1 < 0.0 || omega2 < 0.0 {
            return Err(RewardConfigError::Negative(omega1, omega2));
        }
        if omega1 == 0.0 && omega2 == 0.0 {
            return Err(RewardConfigError::AllZero);
        }
        Ok(RewardConfig { omega1, omega2 })
    }
}

/// Negative weighted combination of index memory and query latency.
pub fn reward(latency_secs: f64, index_bytes: u64, cfg: &RewardConfig) -> f64 {
    -cfg.omega1 * index_bytes as f64 - cfg.omega2 * latency_secs
}

/// Estimated fraction of documents matched by an expression, in `(0, 1]`.
///
/// Equality selects `1/cardinality`, ranges a fixed third, `$nin` the
/// complement of equality. Conjunctions multiply (floored at `1/N`),
/// disjunctions combine via inclusion-exclusion under independence.
pub fn selectivity(expr: &Expr, schema: &Schema, doc_count: u64) -> f64 {
    let floor = 1.0 / doc_count.max(1) as f64;
    selectivity_inner(expr, schema, floor).clamp(floor, 1.0)
}

fn selectivity_inner(expr: &Expr, schema: &Schema, floor: f64) -> f64 {
    match expr {
        Expr::Compare { op, field, .. } => {
            let card = schema.attr(field).map_or(1, |a| a.cardinality).max(1) as f64;
            match op {
                ComparisonOp::Eq => 1.0 / card,
                ComparisonOp::Nin => (card - 1.0) / card,
                _ => 1.0 / 3.0,
            }
        }
        Expr::Logical { op, children } => {
            let child_sels: Vec<f64> = children
                .iter()
                .map(|c| selectivity_inner(c, schema, floor))
                .collect();
            match op {
                LogicalOp::And => child_sels.iter().product::<f64>().max(floor),
                LogicalOp::Or => 1.0 - child_sels.iter().map(|s| 1.0 - s).product::<f64>(),
                LogicalOp::Nor => child_sels.iter().map(|s| 1.0 - s).product::<f64>(),
                LogicalOp::Not => 1.0 - child_sels.first().copied().unwrap_or(0.0),
            }
        }
    }
}

/// Leaves reachable through `$and` nodes only: the top-level conjunctive
/// context whose fields can bound an index prefix.
fn conjunctive_leaves(expr: &Expr) -> Vec<&Expr> {
    fn walk<'a>(expr: &'a Expr, out: &mut Vec<&'a Expr>) {
        match expr {
            Expr::Compare { .. } => out.push(expr),
            Expr::Logical {
                op: LogicalOp::And,
                children,
            } => children.iter().for_each(|c| walk(c, out)),
            Expr::Logical { .. } => {}
        }
    }
    let mut out = Vec::new();
    walk(expr, &mut out);
    out
}

fn leaf_field(leaf: &Expr) -> &FieldName {
    match leaf {
        Expr::Compare { field, .. } => field,
        Expr::Logical { .. } => unreachable!("conjunctive_leaves yields leaves only"),
    }
}

fn leaf_is_eq(leaf: &Expr) -> bool {
    matches!(
        leaf,
        Expr::Compare {
            op: ComparisonOp::Eq,
            ..
        }
    )
}

fn sort_penalty(docs: f64, scan: f64) -> f64 {
    docs * docs.max(2.0).log2() * scan
}

fn full_scan_cost(query: &QueryAst, coll: &CollectionModel) -> f64 {
    let n = coll.doc_count as f64;
    let mut cost = n * coll.unit_scan_cost;
    if query.agg.has_sort() {
        cost += sort_penalty(n, coll.unit_scan_cost);
    }
    cost
}

/// Longest prefix of the index keys whose fields all appear among the
/// conjunctive predicate fields.
fn usable_prefix(def: &IndexDef, pred_fields: &BTreeSet<&FieldName>) -> usize {
    def.keys()
        .iter()
        .take_while(|(f, _)| pred_fields.contains(f))
        .count()
}

/// A sort is served when the sort keys equal a contiguous run of index keys
/// starting right after the equality-covered prefix, with directions all
/// matching or all inverted.
fn sort_served(
    def: &IndexDef,
    eq_fields: &BTreeSet<&FieldName>,
    sort_keys: &[(FieldName, SortDirection)],
) -> bool {
    if sort_keys.is_empty() {
        return false;
    }
    let eq_prefix = def
        .keys()
        .iter()
        .take_while(|(f, _)| eq_fields.contains(f))
        .count();
    if eq_prefix + sort_keys.len() > def.len() {
        return false;
    }
    let run = &def.keys()[eq_prefix..eq_prefix + sort_keys.len()];
    let mut all_same = true;
    let mut all_inverted = true;
    for ((kf, kd), (sf, sd)) in run.iter().zip(sort_keys) {
        if kf != sf {
            return false;
        }
        if kd == sd {
            all_inverted = false;
        } else {
            all_same = false;
        }
    }
    all_same || all_inverted
}

struct Candidate<'a> {
    def: Option<&'a IndexDef>,
    prefix: usize,
    sort_served: bool,
    cost: f64,
}

impl Candidate<'_> {
    fn beats(&self, other: &Self) -> bool {
        if self.cost != other.cost {
            return self.cost < other.cost;
        }
        let (a_len, a_keys) = self.tie_key();
        let (b_len, b_keys) = other.tie_key();
        (a_len, a_keys) < (b_len, b_keys)
    }

    fn tie_key(&self) -> (usize, &[(FieldName, SortDirection)]) {
        match self.def {
            Some(def) => (def.len(), def.keys()),
            None => (0, &[]),
        }
    }
}

fn plan_conjunctive(query: &QueryAst, indexes: &IndexSet, coll: &CollectionModel) -> PlanResult {
    let n = coll.doc_count as f64;
    let floor = 1.0 / coll.doc_count.max(1) as f64;
    let leaves = conjunctive_leaves(&query.expr);
    let total_leaves = query.expr.leaf_count();
    let pred_fields: BTreeSet<&FieldName> = leaves.iter().copied().map(leaf_field).collect();
    let eq_fields: BTreeSet<&FieldName> = leaves
        .iter()
        .copied()
        .filter(|l| leaf_is_eq(l))
        .map(leaf_field)
        .collect();
    let sort_keys = query.agg.sort_keys();
    let wants_sort = !sort_keys.is_empty();

    let mut best = Candidate {
        def: None,
        prefix: 0,
        sort_served: false,
        cost: full_scan_cost(query, coll),
    };

    for def in indexes.iter() {
        let prefix = usable_prefix(def, &pred_fields);
        let prefix_fields: BTreeSet<&FieldName> =
            def.keys()[..prefix].iter().map(|(f, _)| f).collect();
        let covered: Vec<&Expr> = leaves
            .iter()
            .copied()
            .filter(|l| prefix_fields.contains(leaf_field(l)))
            .collect();
        let sel = covered
            .iter()
            .map(|l| selectivity_inner(l, &coll.schema, floor))
            .product::<f64>()
            .clamp(floor, 1.0);
        let serves_sort = wants_sort && sort_served(def, &eq_fields, sort_keys);
        let mut cost = n.max(2.0).log2() + n * sel * coll.unit_fetch_cost;
        if covered.len() < total_leaves {
            cost += n * sel * coll.unit_scan_cost;
        }
        if wants_sort && !serves_sort {
            cost += sort_penalty(n * sel, coll.unit_scan_cost);
        }
        let candidate = Candidate {
            def: Some(def),
            prefix,
            sort_served: serves_sort,
            cost,
        };
        if candidate.beats(&best) {
            best = candidate;
        }
    }

    PlanResult {
        chosen: best.def.cloned(),
        covered_prefix_len: best.prefix,
        sort_served: best.sort_served,
        est_cost: best.cost,
    }
}

/// Plan a query against the current index set.
///
/// A top-level `$or` plans each disjunct independently and sums their costs
/// (each disjunct may use its own index); the whole-query full scan still
/// caps the total. The reported choice is the first disjunct's.
pub fn plan(query: &QueryAst, indexes: &IndexSet, coll: &CollectionModel) -> PlanResult {
    if let Expr::Logical {
        op: LogicalOp::Or,
        children,
    } = &query.expr
    {
        let mut total = 0.0;
        let mut first: Option<PlanResult> = None;
        for child in children {
            let sub = QueryAst {
                expr: child.clone(),
                agg: query.agg.clone(),
            };
            let result = plan_conjunctive(&sub, indexes, coll);
            total += result.est_cost;
            if first.is_none() {
                first = Some(result);
            }
        }
        let scan = full_scan_cost(query, coll);
        let first = first.unwrap_or(PlanResult {
            chosen: None,
            covered_prefix_len: 0,
            sort_served: false,
            est_cost: scan,
        });
        if scan <= total {
            return PlanResult {
                chosen: None,
                covered_prefix_len: 0,
                sort_served: false,
                est_cost: scan,
            };
        }
        return PlanResult {
            chosen: first.chosen,
            covered_prefix_len: first.covered_prefix_len,
            sort_served: first.sort_served,
            est_cost: total,
        };
    }
    plan_conjunctive(query, indexes, coll)
}

/// Total bytes held by the index set: per index, one entry per document at
/// `base + per_key * |keys|` bytes.
pub fn index_size(indexes: &IndexSet, coll: &CollectionModel) -> u64 {
    indexes
        .iter()
        .map(|def| {
            coll.doc_count
                * (indexes.bytes_per_entry_base + indexes.bytes_per_key * def.len() as u64)
        })
        .sum()
}

/// Simulated latency in seconds: planned cost scaled to time, with optional
/// multiplicative lognormal noise.
pub fn execute(
    query: &QueryAst,
    indexes: &IndexSet,
    coll: &CollectionModel,
    rng: &mut impl Rng,
) -> f64 {
    let cost = plan(query, indexes, coll).est_cost;
    let noise = if coll.noise_sigma == 0.0 {
        1.0
    } else {
        // Box-Muller standard normal -> lognormal(0, sigma)
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        (coll.noise_sigma * z).exp()
    };
    cost * coll.time_per_unit * noise
}

/// Stateful environment: one collection, its evolving index set, and the
/// latency-noise RNG. One instance per experiment; not shared across
/// threads.
#[derive(Clone, Debug)]
pub struct Environment {
    coll: CollectionModel,
    indexes: IndexSet,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(coll: CollectionModel, seed: u64) -> Self {
        Environment {
            coll,
            indexes: IndexSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn collection(&self) -> &CollectionModel {
        &self.coll
    }

    pub fn indexes(&self) -> &IndexSet {
        &self.indexes
    }

    pub fn create_index(&mut self, def: IndexDef) -> bool {
        self.indexes.create(def)
    }

    pub fn drop_all(&mut self) {
        self.indexes.drop_all();
    }

    pub fn plan(&self, query: &QueryAst) -> PlanResult {
        plan(query, &self.indexes, &self.coll)
    }

    pub fn execute(&mut self, query: &QueryAst) -> f64 {
        execute(query, &self.indexes, &self.coll, &mut self.rng)
    }

    pub fn index_size(&self) -> u64 {
        index_size(&self.indexes, &self.coll)
    }
}
