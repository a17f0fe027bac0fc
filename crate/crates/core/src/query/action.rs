//! Positional action codec.
//!
//! An action is one integer per index key slot (`k` heads). Head value `0`
//! is a no-op; value `a >= 1` selects the query attribute at 1-based
//! position `ceil(a / 2)` with ascending direction when `a` is odd and
//! descending when even. This keeps the action space linear in `k` and
//! independent of the schema size.

use thiserror::Error;

use super::ast::{Expr, FieldName, IndexDef, QueryAst, SortDirection};

/// Raw multi-head action: `heads.len() == k`, each value in `0..=2k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActionVec {
    heads: Vec<u8>,
}

impl ActionVec {
    pub fn new(heads: Vec<u8>) -> Self {
        ActionVec { heads }
    }

    pub fn noop(k: usize) -> Self {
        ActionVec { heads: vec![0; k] }
    }

    pub fn heads(&self) -> &[u8] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn is_noop(&self) -> bool {
        self.heads.iter().all(|&h| h == 0)
    }
}

/// Query attributes in first-occurrence pre-order, deduplicated, with
/// sort-only fields appended after the predicate fields.
pub fn extract_attributes(query: &QueryAst) -> Vec<FieldName> {
    fn walk(expr: &Expr, out: &mut Vec<FieldName>) {
        match expr {
            Expr::Compare { field, .. } => {
                if !out.contains(field) {
                    out.push(field.clone());
                }
            }
            Expr::Logical { children, .. } => children.iter().for_each(|c| walk(c, out)),
        }
    }
    let mut attrs = Vec::new();
    walk(&query.expr, &mut attrs);
    for (field, _) in query.agg.sort_keys() {
        if !attrs.contains(field) {
            attrs.push(field.clone());
        }
    }
    attrs
}

/// Decode an action against the query's attribute list.
///
/// Heads are processed in order; zero heads, positions past the attribute
/// list, and repeated fields are skipped (first occurrence wins). Returns
/// `None` when every head skips.
pub fn decode_action(action: &ActionVec, attrs: &[FieldName]) -> Option<IndexDef> {
    let mut keys: Vec<(FieldName, SortDirection)> = Vec::new();
    for &head in action.heads() {
        if head == 0 {
            continue;
        }
        let pos = (head as usize).div_ceil(2); // 1-based into attrs
        if pos > attrs.len() {
            continue;
        }
        let field = &attrs[pos - 1];
        if keys.iter().any(|(f, _)| f == field) {
            continue;
        }
        let dir = if head % 2 == 1 {
            SortDirection::Asc
        } else {
            SortDirection::Desc
        };
        keys.push((field.clone(), dir));
    }
    if keys.is_empty() {
        None
    } else {
        Some(IndexDef::new(keys).expect("decoded keys are distinct and nonempty"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ActionEncodeError {
    #[error("index field `{0}` does not appear among the query attributes")]
    FieldNotInQuery(String),
    #[error("index has {len} keys but at most {max} fit the action space")]
    TooManyKeys { len: usize, max: usize },
}

/// Encode an index (or no-op) into the action that [`decode_action`] maps
/// back to it.
pub fn encode_action(
    index: Option<&IndexDef>,
    attrs: &[FieldName],
    k: usize,
) -> Result<ActionVec, ActionEncodeError> {
    let mut heads = vec![0u8; k];
    let Some(index) = index else {
        return Ok(ActionVec { heads });
    };
    if index.len() > k {
        return Err(ActionEncodeError::TooManyKeys {
            len: index.len(),
            max: k,
        });
    }
    for (slot, (field, dir)) in index.keys().iter().enumerate() {
        let pos = attrs
            .iter()
            .position(|f| f == field)
            .ok_or_else(|| ActionEncodeError::FieldNotInQuery(field.to_string()))?;
        let p = pos + 1;
        heads[slot] = match dir {
            SortDirection::Asc => (2 * p - 1) as u8,
            SortDirection::Desc => (2 * p) as u8,
        };
    }
    Ok(ActionVec { heads })
}
