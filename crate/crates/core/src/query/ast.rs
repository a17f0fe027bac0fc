//! Query AST: comparison/logical expression trees plus an aggregation stage.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::workload::{AttrType, Schema};

/// A schema attribute name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldName(String);

impl FieldName {
    pub fn new(name: impl Into<String>) -> Self {
        FieldName(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FieldName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FieldName {
    fn from(s: &str) -> Self {
        FieldName(s.to_owned())
    }
}

impl From<String> for FieldName {
    fn from(s: String) -> Self {
        FieldName(s)
    }
}

/// Per-key sort direction of an index or sort clause.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    Asc,
    Desc,
}

impl SortDirection {
    pub fn inverted(self) -> Self {
        match self {
            SortDirection::Asc => SortDirection::Desc,
            SortDirection::Desc => SortDirection::Asc,
        }
    }
}

/// Comparison operators supported in query leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComparisonOp {
    Eq,
    Gt,
    Gte,
    Lt,
    Lte,
    Nin,
}

impl ComparisonOp {
    pub const ALL: [ComparisonOp; 6] = [
        ComparisonOp::Eq,
        ComparisonOp::Gt,
        ComparisonOp::Gte,
        ComparisonOp::Lt,
        ComparisonOp::Lte,
        ComparisonOp::Nin,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ComparisonOp::Eq => "$eq",
            ComparisonOp::Gt => "$gt",
            ComparisonOp::Gte => "$gte",
            ComparisonOp::Lt => "$lt",
            ComparisonOp::Lte => "$lte",
            ComparisonOp::Nin => "$nin",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.token() == tok)
    }

    /// Range comparisons select an interval rather than a point.
    pub fn is_range(self) -> bool {
        matches!(
            self,
            ComparisonOp::Gt | ComparisonOp::Gte | ComparisonOp::Lt | ComparisonOp::Lte
        )
    }
}

/// Logical operators over sub-expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LogicalOp {
    And,
    Or,
    Nor,
    Not,
}

impl LogicalOp {
    pub const ALL: [LogicalOp; 4] = [
        LogicalOp::And,
        LogicalOp::Or,
        LogicalOp::Nor,
        LogicalOp::Not,
    ];

    pub fn token(self) -> &'static str {
        match self {
            LogicalOp::And => "$and",
            LogicalOp::Or => "$or",
            LogicalOp::Nor => "$nor",
            LogicalOp::Not => "$not",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.token() == tok)
    }
}

/// A literal value in a comparison leaf. Dates are millisecond timestamps.
#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Str(String),
    Int(i64),
    Date(i64),
}

/// Nested query expression: leaves compare a field against a literal,
/// internal nodes combine children with a logical operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Compare {
        op: ComparisonOp,
        field: FieldName,
        value: Literal,
    },
    Logical {
        op: LogicalOp,
        children: Vec<Expr>,
    },
}

impl Expr {
    /// Pre-order visit of every comparison leaf.
    pub fn for_each_leaf<'a>(
        &'a self,
        f: &mut impl FnMut(ComparisonOp, &'a FieldName, &'a Literal),
    ) {
        match self {
            Expr::Compare { op, field, value } => f(*op, field, value),
            Expr::Logical { children, .. } => {
                for child in children {
                    child.for_each_leaf(f);
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.for_each_leaf(&mut |_, _, _| n += 1);
        n
    }
}

/// Aggregation stage applied after the match expression.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregation {
    Count,
    Limit(u32),
    SortThenLimit {
        keys: Vec<(FieldName, SortDirection)>,
        limit: u32,
    },
}

impl Aggregation {
    pub fn sort_keys(&self) -> &[(FieldName, SortDirection)] {
        match self {
            Aggregation::SortThenLimit { keys, .. } => keys,
            _ => &[],
        }
    }

    pub fn has_sort(&self) -> bool {
        !self.sort_keys().is_empty()
    }
}

/// One query: a match expression plus its aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryAst {
    pub expr: Expr,
    pub agg: Aggregation,
}

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("unknown field `{0}` not present in schema")]
    UnknownField(String),
    #[error("literal type mismatch on field `{field}`: expected {expected}")]
    LiteralType {
        field: String,
        expected: &'static str,
    },
    #[error("`$not` requires exactly one child, got {0}")]
    NotArity(usize),
    #[error("`{op}` requires at least two children, got {n}")]
    LogicalArity { op: &'static str, n: usize },
    #[error("limit must be positive")]
    ZeroLimit,
    #[error("sort keys must be distinct (duplicate `{0}`)")]
    DuplicateSortKey(String),
    #[error("sort requires at least one key")]
    EmptySort,
}

fn literal_matches(ty: &AttrType, value: &Literal) -> bool {
    matches!(
        (ty, value),
        (AttrType::Str, Literal::Str(_))
            | (AttrType::StrArray, Literal::Str(_))
            | (AttrType::Int { .. }, Literal::Int(_))
            | (AttrType::Date, Literal::Date(_))
    )
}

impl QueryAst {
    /// Validate field existence, literal types, and arity invariants against
    /// a schema.
    pub fn validate(&self, schema: &Schema) -> Result<(), QueryError> {
        fn walk(expr: &Expr, schema: &Schema) -> Result<(), QueryError> {
            match expr {
                Expr::Compare { field, value, .. } => {
                    let attr = schema
                        .attr(field)
                        .ok_or_else(|| QueryError::UnknownField(field.to_string()))?;
                    if !literal_matches(&attr.ty, value) {
                        return Err(QueryError::LiteralType {
                            field: field.to_string(),
                            expected: attr.ty.name(),
                        });
                    }
                    Ok(())
                }
                Expr::Logical { op, children } => {
                    match op {
                        LogicalOp::Not if children.len() != 1 => {
                            return Err(QueryError::NotArity(children.len()))
                        }
                        LogicalOp::And | LogicalOp::Or | LogicalOp::Nor if children.len() < 2 => {
                            return Err(QueryError::LogicalArity {
                                op: op.token(),
                                n: children.len(),
                            })
                        }
                        _ => {}
                    }
                    children.iter().try_for_each(|c| walk(c, schema))
                }
            }
        }
        walk(&self.expr, schema)?;
        match &self.agg {
            Aggregation::Count => {}
            Aggregation::Limit(n) => {
                if *n == 0 {
                    return Err(QueryError::ZeroLimit);
                }
            }
            Aggregation::SortThenLimit { keys, limit } => {
                if *limit == 0 {
                    return Err(QueryError::ZeroLimit);
                }
                if keys.is_empty() {
                    return Err(QueryError::EmptySort);
                }
                let mut seen = std::collections::BTreeSet::new();
                for (field, _) in keys {
                    if !seen.insert(field) {
                        return Err(QueryError::DuplicateSortKey(field.to_string()));
                    }
                    if schema.attr(field).is_none() {
                        return Err(QueryError::UnknownField(field.to_string()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IndexDefError {
    #[error("index must have at least one key")]
    Empty,
    #[error("index key fields must be distinct (duplicate `{0}`)")]
    DuplicateField(String),
}

/// An ordered compound-index definition: a sequence of (field, direction)
/// keys with distinct fields.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(FieldName, SortDirection)>")]
#[serde(into = "Vec<(FieldName, SortDirection)>")]
pub struct IndexDef {
    keys: Vec<(FieldName, SortDirection)>,
}

impl IndexDef {
    pub fn new(keys: Vec<(FieldName, SortDirection)>) -> Result<Self, IndexDefError> {
        if keys.is_empty() {
            return Err(IndexDefError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (field, _) in &keys {
            if !seen.insert(field.clone()) {
                return Err(IndexDefError::DuplicateField(field.to_string()));
            }
        }
        Ok(IndexDef { keys })
    }

    pub fn keys(&self) -> &[(FieldName, SortDirection)] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn first_key(&self) -> &(FieldName, SortDirection) {
        &self.keys[0]
    }
}

impl TryFrom<Vec<(FieldName, SortDirection)>> for IndexDef {
    type Error = IndexDefError;

    fn try_from(keys: Vec<(FieldName, SortDirection)>) -> Result<Self, Self::Error> {
        IndexDef::new(keys)
    }
}

impl From<IndexDef> for Vec<(FieldName, SortDirection)> {
    fn from(def: IndexDef) -> Self {
        def.keys
    }
}

impl fmt::Display for IndexDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (field, dir)) in self.keys.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let d = match dir {
                SortDirection::Asc => "asc",
                SortDirection::Desc => "desc",
            };
            write!(f, "({field}, {d})")?;
        }
        write!(f, "]")
    }
}
