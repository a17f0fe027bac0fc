//! Schema definition and synthetic workload generation.
//!
//! Queries sample 1-3 distinct attributes, one type-valid comparison per
//! attribute, a logical connective when there is more than one
//! sub-expression, and an aggregation drawn from a fixed distribution
//! (limit-only 0.10, sort 0.45, count 0.45). Sorted queries request a sort
//! on each query attribute independently with probability 0.5.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{
    Aggregation, ComparisonOp, Expr, FieldName, Literal, LogicalOp, QueryAst, SchemaError,
    SortDirection,
};

/// Attribute value type. Integer attributes carry their value range
/// (`lo..hi`, upper bound exclusive).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AttrType {
    Str,
    Int { lo: i64, hi: i64 },
    Date,
    StrArray,
}

impl AttrType {
    pub fn name(&self) -> &'static str {
        match self {
            AttrType::Str => "string",
            AttrType::Int { .. } => "int",
            AttrType::Date => "date",
            AttrType::StrArray => "string_array",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: FieldName,
    pub ty: AttrType,
    /// Distinct-value count; drives equality selectivity in the cost model.
    pub cardinality: u64,
}

impl Attribute {
    pub fn new(name: impl Into<FieldName>, ty: AttrType, cardinality: u64) -> Self {
        Attribute {
            name: name.into(),
            ty,
            cardinality,
        }
    }
}

/// An ordered collection schema with distinct attribute names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>")]
#[serde(into = "Vec<Attribute>")]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self, SchemaError> {
        if attributes.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for attr in &attributes {
            if !seen.insert(attr.name.clone()) {
                return Err(SchemaError::DuplicateField(attr.name.to_string()));
            }
        }
        Ok(Schema { attributes })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attr(&self, name: &FieldName) -> Option<&Attribute> {
        self.attributes.iter().find(|a| &a.name == name)
    }
}

impl TryFrom<Vec<Attribute>> for Schema {
    type Error = SchemaError;

    fn try_from(attributes: Vec<Attribute>) -> Result<Self, Self::Error> {
        Schema::new(attributes)
    }
}

impl From<Schema> for Vec<Attribute> {
    fn from(s: Schema) -> Self {
        s.attributes
    }
}

/// The built-in 15-attribute schema: 6 strings, 6 integers of different
/// ranges, 2 dates, and 1 string array. String cardinalities are log-spaced
/// over 1e2..1e4 so indexing payoffs differ meaningfully per field.
pub fn default_schema() -> Schema {
    let mut attrs = Vec::with_capacity(15);
    let string_cards = [100u64, 251, 631, 1_585, 3_981, 10_000];
    for (i, card) in string_cards.into_iter().enumerate() {
        attrs.push(Attribute::new(format!("f{i}"), AttrType::Str, card));
    }
    for (i, width) in [10i64, 100, 1_000, 10_000, 100_000, 1_000_000]
        .into_iter()
        .enumerate()
    {
        attrs.push(Attribute::new(
            format!("f{}", 6 + i),
            AttrType::Int { lo: 0, hi: width },
            width as u64,
        ));
    }
    attrs.push(Attribute::new("f12", AttrType::Date, 100_000));
    attrs.push(Attribute::new("f13", AttrType::Date, 100_000));
    attrs.push(Attribute::new("f14", AttrType::StrArray, 1_000));
    Schema::new(attrs).expect("default schema is valid")
}

/// Workload generator configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryGenConfig {
    pub attrs_min: usize,
    pub attrs_max: usize,
    /// P(limit without sort), P(sort), P(count); must sum to 1.
    pub agg_probs: (f64, f64, f64),
    /// Probability each query attribute joins the sort keys.
    pub sort_field_prob: f64,
    pub seed: u64,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        QueryGenConfig {
            attrs_min: 1,
            attrs_max: 3,
            agg_probs: (0.10, 0.45, 0.45),
            sort_field_prob: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("attribute count range {0}..={1} is empty or exceeds the schema")]
    BadAttrRange(usize, usize),
    #[error("aggregation probabilities must sum to 1, got {0}")]
    BadAggProbs(f64),
    #[error("workload i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        source: crate::query::QueryError,
    },
}

impl QueryGenConfig {
    pub fn validate(&self, schema: &Schema) -> Result<(), WorkloadError> {
        if self.attrs_min == 0
            || self.attrs_min > self.attrs_max
            || self.attrs_max > schema.attributes().len()
        {
            return Err(WorkloadError::BadAttrRange(self.attrs_min, self.attrs_max));
        }
        let sum = self.agg_probs.0 + self.agg_probs.1 + self.agg_probs.2;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::BadAggProbs(sum));
        }
        Ok(())
    }
}

fn sample_literal(attr: &Attribute, rng: &mut impl Rng) -> Literal {
    match &attr.ty {
        AttrType::Str => Literal::Str(format!("v{:06}", rng.gen_range(0..attr.cardinality))),
        AttrType::Int { lo, hi } => Literal::Int(rng.gen_range(*lo..*hi)),
        // day-granularity timestamps starting 2013-01-01
        AttrType::Date => Literal::Date(
            1_356_998_400_000 + rng.gen_range(0..attr.cardinality) as i64 * 86_400_000,
        ),
        AttrType::StrArray => Literal::Str(format!("t{:05}", rng.gen_range(0..attr.cardinality))),
    }
}

fn valid_ops(ty: &AttrType) -> &'static [ComparisonOp] {
    match ty {
        AttrType::Str | AttrType::Int { .. } => &ComparisonOp::ALL,
        AttrType::Date | AttrType::StrArray => &[
            ComparisonOp::Eq,
            ComparisonOp::Gt,
            ComparisonOp::Gte,
            ComparisonOp::Lt,
            ComparisonOp::Lte,
        ],
    }
}

const JOIN_OPS: [LogicalOp; 3] = [LogicalOp::And, LogicalOp::Or, LogicalOp::Nor];

/// Sample one query. Callers own the RNG so workloads are reproducible.
pub fn gen_query(schema: &Schema, cfg: &QueryGenConfig, rng: &mut impl Rng) -> QueryAst {
    let n = rng.gen_range(cfg.attrs_min..=cfg.attrs_max);
    let mut pool: Vec<usize> = (0..schema.attributes().len()).collect();
    pool.shuffle(rng);
    let chosen: Vec<&Attribute> = pool[..n].iter().map(|&i| &schema.attributes()[i]).collect();

    let leaves: Vec<Expr> = chosen
        .iter()
        .map(|attr| {
            let op = *valid_ops(&attr.ty).choose(rng).expect("nonempty op list");
            Expr::Compare {
                op,
                field: attr.name.clone(),
                value: sample_literal(attr, rng),
            }
        })
        .collect();
    let expr = if leaves.len() == 1 {
        leaves.into_iter().next().expect("one leaf")
    } else {
        Expr::Logical {
            op: *JOIN_OPS.choose(rng).expect("nonempty"),
            children: leaves,
        }
    };

    let u: f64 = rng.gen();
    let agg = if u < cfg.agg_probs.0 {
        Aggregation::Limit(rng.gen_range(1..=100))
    } else if u < cfg.agg_probs.0 + cfg.agg_probs.1 {
        // Resample until at least one attribute is picked for sorting.
        let keys = loop {
            let mut keys: Vec<(FieldName, SortDirection)> = Vec::new();
            for attr in &chosen {
                if rng.gen_bool(cfg.sort_field_prob) {
                    let dir = if rng.gen_bool(0.5) {
                        SortDirection::Asc
                    } else {
                        SortDirection::Desc
                    };
                    keys.push((attr.name.clone(), dir));
                }
            }
            if !keys.is_empty() {
                break keys;
            }
        };
        Aggregation::SortThenLimit {
            keys,
            limit: rng.gen_range(1..=100),
        }
    } else {
        Aggregation::Count
    };

    QueryAst { expr, agg }
}

/// Generate `count` independent queries from the seed in `cfg`.
pub fn gen_workload(
    schema: &Schema,
    cfg: &QueryGenConfig,
    count: usize,
) -> Result<Vec<QueryAst>, WorkloadError> {
    cfg.validate(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..count)
        .map(|_| gen_query(schema, cfg, &mut rng))
        .collect())
}

/// Write queries one JSON object per line.
pub fn write_queries_jsonl(path: &Path, queries: &[QueryAst]) -> Result<(), WorkloadError> {
    let mut out = BufWriter::new(File::create(path)?);
    for query in queries {
        serde_json::to_writer(&mut out, query).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSONL workload, validating every query against the schema.
pub fn read_queries_jsonl(path: &Path, schema: &Schema) -> Result<Vec<QueryAst>, WorkloadError> {
    let reader = BufReader::new(File::open(path)?);
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let query: QueryAst =
            serde_json::from_str(&line).map_err(|source| WorkloadError::Parse {
                line: i + 1,
                source,
            })?;
        query
            .validate(schema)
            .map_err(|source| WorkloadError::Invalid {
                line: i + 1,
                source,
            })?;
        queries.push(query);
    }
    Ok(queries)
}
