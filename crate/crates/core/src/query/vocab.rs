//! Token vocabulary mapping query tokens to dense integer ids.
//!
//! The vocabulary is built once from a schema and never mutated: reserved
//! tokens first, then the fixed operator set, then schema fields in schema
//! order. Equal schemas therefore always produce identical vocabularies.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::FieldName;
use crate::workload::Schema;

/// Fixed operator token list: comparison, logical, then aggregation tokens.
pub const OPERATOR_TOKENS: [&str; 13] = [
    "$eq", "$gt", "$gte", "$lt", "$lte", "$nin", "$and", "$or", "$nor", "$not", "count", "limit",
    "sort",
];

pub const RESERVED_TOKENS: [&str; 5] = ["PAD", "EOS", "UNK", "IDX_ASC", "IDX_DESC"];

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const IDX_ASC: u32 = 3;
pub const IDX_DESC: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema has no attributes")]
    Empty,
    #[error("duplicate field name `{0}` in schema")]
    DuplicateField(String),
}

/// Frozen bijection between token strings and ids `0..V`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Id for a token, falling back to `UNK` when absent.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn field_id(&self, field: &FieldName) -> Option<u32> {
        self.id(field.as_str())
    }

    /// Tokens in id order, for serialization.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuild from a token list in id order (e.g. from a model file).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, SchemaError> {
        let mut ids = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(SchemaError::DuplicateField(tok.clone()));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }
}

/// Build the frozen vocabulary for a schema: reserved tokens, the operator
/// set, then one token per schema field.
pub fn build_vocabulary(schema: &Schema) -> Result<Vocabulary, SchemaError> {
    if schema.attributes().is_empty() {
        return Err(SchemaError::Empty);
    }
    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(OPERATOR_TOKENS.iter().map(|s| s.to_string()));
    for attr in schema.attributes() {
        tokens.push(attr.name.as_str().to_owned());
    }
    let mut ids = BTreeMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        if ids.insert(tok.clone(), i as u32).is_some() {
            return Err(SchemaError::DuplicateField(tok.clone()));
        }
    }
    Ok(Vocabulary { tokens, ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{AttrType, Attribute, Schema};

    fn two_field_schema() -> Schema {
        Schema::new(vec![
            Attribute::new("name", AttrType::Str, 100),
            Attribute::new("age", AttrType::Int { lo: 0, hi: 100 }, 100),
        ])
        .unwrap()
    }

    #[test]
    fn vocab_size_is_reserved_plus_operators_plus_fields() {
        let vocab = build_vocabulary(&two_field_schema()).unwrap();
        assert_eq!(vocab.len(), 5 + 13 + 2);
    }

    #[test]
    fn empty_schema_rejected() {
        let err = Schema::new(vec![]).unwrap_err();
        assert_eq!(err, SchemaError::Empty);
    }

    #[test]
    fn deterministic_for_equal_schemas() {
        let a = build_vocabulary(&two_field_schema()).unwrap();
        let b = build_vocabulary(&two_field_schema()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let vocab = build_vocabulary(&two_field_schema()).unwrap();
        assert_eq!(vocab.id("PAD"), Some(PAD));
        assert_eq!(vocab.id("EOS"), Some(EOS));
        assert_eq!(vocab.id("UNK"), Some(UNK));
        assert_eq!(vocab.id("IDX_ASC"), Some(IDX_ASC));
        assert_eq!(vocab.id("IDX_DESC"), Some(IDX_DESC));
        assert_eq!(vocab.id("$eq"), Some(5));
        assert_eq!(vocab.id("name"), Some(18));
        assert_eq!(vocab.id("age"), Some(19));
    }

    #[test]
    fn bijection() {
        let vocab = build_vocabulary(&two_field_schema()).unwrap();
        for id in 0..vocab.len() as u32 {
            let tok = vocab.token(id).unwrap();
            assert_eq!(vocab.id(tok), Some(id));
        }
    }
}
