//! State tokenizer: turns a query plus the existing index set into a
//! fixed-length integer token sequence.
//!
//! The tree is walked pre-order emitting operator and field tokens with
//! literal values stripped. Whenever a field token's field is the *first*
//! key of an existing index, an `IDX_ASC`/`IDX_DESC` marker follows it so
//! the model can learn about prefix intersection. Aggregation tokens and
//! `EOS` close the sequence, which is then zero-padded to length `L`.

use std::collections::BTreeMap;

use super::ast::{Aggregation, Expr, FieldName, IndexDef, QueryAst, SortDirection};
use super::vocab::{Vocabulary, EOS, IDX_ASC, IDX_DESC, PAD};

/// Fixed-length token-id sequence: the RL state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateTokens {
    ids: Vec<u32>,
}

impl StateTokens {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Placeholder successor state for terminal transitions: `[EOS, PAD...]`.
    pub fn terminal(len: usize) -> Self {
        let mut ids = vec![PAD; len];
        if len > 0 {
            ids[0] = EOS;
        }
        StateTokens { ids }
    }

    /// Wrap raw token ids. [`tokenize`] is the normal constructor; this
    /// exists for tests and tools that build states directly.
    pub fn from_ids(ids: Vec<u32>) -> Self {
        StateTokens { ids }
    }
}

/// Per-call tokenizer diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TokenizeReport {
    /// Input exceeded `L - 1` tokens and was cut, with `EOS` forced at `L-1`.
    pub truncated: bool,
    /// Count of tokens not present in the vocabulary (substituted by `UNK`).
    pub unknown_tokens: u32,
}

struct Emitter<'v> {
    vocab: &'v Vocabulary,
    out: Vec<u32>,
    report: TokenizeReport,
    // field of an index's first key -> that key's direction
    markers: BTreeMap<FieldName, SortDirection>,
}

impl Emitter<'_> {
    fn push_token(&mut self, token: &str) {
        match self.vocab.id(token) {
            Some(id) => self.out.push(id),
            None => {
                self.report.unknown_tokens += 1;
                self.out.push(super::vocab::UNK);
            }
        }
    }

    fn push_field(&mut self, field: &FieldName) {
        self.push_token(field.as_str());
        if let Some(dir) = self.markers.get(field) {
            self.out.push(match dir {
                SortDirection::Asc => IDX_ASC,
                SortDirection::Desc => IDX_DESC,
            });
        }
    }

    fn walk(&mut self, expr: &Expr) {
        match expr {
            Expr::Compare { op, field, .. } => {
                self.push_token(op.token());
                self.push_field(field);
            }
            Expr::Logical { op, children } => {
                self.push_token(op.token());
                for child in children {
                    self.walk(child);
                }
            }
        }
    }
}

/// Tokenize a query against an index-set snapshot, returning diagnostics.
///
/// Marker precedence when several indexes share a first-key field follows
/// the iteration order of `indexes`: the first match wins. Callers pass
/// indexes in their set's sorted order, which prefers ascending keys.
pub fn tokenize_with_report<'a, I>(
    query: &QueryAst,
    indexes: I,
    vocab: &Vocabulary,
    len: usize,
) -> (StateTokens, TokenizeReport)
where
    I: IntoIterator<Item = &'a IndexDef>,
{
    let mut markers = BTreeMap::new();
    for def in indexes {
        let (field, dir) = def.first_key();
        markers.entry(field.clone()).or_insert(*dir);
    }
    let mut em = Emitter {
        vocab,
        out: Vec::with_capacity(len),
        report: TokenizeReport::default(),
        markers,
    };
    em.walk(&query.expr);
    match &query.agg {
        Aggregation::Count => em.push_token("count"),
        Aggregation::Limit(_) => em.push_token("limit"),
        Aggregation::SortThenLimit { keys, .. } => {
            em.push_token("sort");
            // Sort keys re-emit their field tokens; directions stay out of
            // the stream, matching the operators-and-attributes encoding.
            let fields: Vec<FieldName> = keys.iter().map(|(f, _)| f.clone()).collect();
            for field in &fields {
                em.push_field(field);
            }
            em.push_token("limit");
        }
    }

    let mut ids = em.out;
    let mut report = em.report;
    if ids.len() + 1 > len {
        ids.truncate(len - 1);
        report.truncated = true;
    }
    ids.push(EOS);
    ids.resize(len, PAD);
    (StateTokens { ids }, report)
}

/// Tokenize, discarding diagnostics.
pub fn tokenize<'a, I>(query: &QueryAst, indexes: I, vocab: &Vocabulary, len: usize) -> StateTokens
where
    I: IntoIterator<Item = &'a IndexDef>,
{
    tokenize_with_report(query, indexes, vocab, len).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::ast::{ComparisonOp, Literal, LogicalOp};
    use crate::query::vocab::build_vocabulary;
    use crate::workload::{AttrType, Attribute, Schema};

    fn schema() -> Schema {
        Schema::new(vec![
            Attribute::new("name", AttrType::Str, 100),
            Attribute::new("age", AttrType::Int { lo: 0, hi: 100 }, 100),
        ])
        .unwrap()
    }

    fn eq_name_count() -> QueryAst {
        QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Eq,
                field: "name".into(),
                value: Literal::Str("Jane".into()),
            },
            agg: Aggregation::Count,
        }
    }

    fn idx(keys: &[(&str, SortDirection)]) -> IndexDef {
        IndexDef::new(keys.iter().map(|(f, d)| ((*f).into(), *d)).collect()).unwrap()
    }

    #[test]
    fn worked_example_with_ascending_name_index() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let index = idx(&[("name", SortDirection::Asc)]);
        let (state, report) = tokenize_with_report(&eq_name_count(), [&index], &vocab, 8);
        let expect: Vec<u32> = vec![
            vocab.id("$eq").unwrap(),
            vocab.id("name").unwrap(),
            IDX_ASC,
            vocab.id("count").unwrap(),
            EOS,
            PAD,
            PAD,
            PAD,
        ];
        assert_eq!(state.ids(), expect.as_slice());
        assert_eq!(report, TokenizeReport::default());
    }

    #[test]
    fn no_marker_without_index() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let (state, _) = tokenize_with_report(&eq_name_count(), [], &vocab, 8);
        let expect: Vec<u32> = vec![
            vocab.id("$eq").unwrap(),
            vocab.id("name").unwrap(),
            vocab.id("count").unwrap(),
            EOS,
            PAD,
            PAD,
            PAD,
            PAD,
        ];
        assert_eq!(state.ids(), expect.as_slice());
    }

    #[test]
    fn desc_marker_on_second_field_of_conjunction() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let query = QueryAst {
            expr: Expr::Logical {
                op: LogicalOp::And,
                children: vec![
                    Expr::Compare {
                        op: ComparisonOp::Eq,
                        field: "name".into(),
                        value: Literal::Str("Jane".into()),
                    },
                    Expr::Compare {
                        op: ComparisonOp::Gt,
                        field: "age".into(),
                        value: Literal::Int(30),
                    },
                ],
            },
            agg: Aggregation::Count,
        };
        let index = idx(&[("age", SortDirection::Desc)]);
        let (state, _) = tokenize_with_report(&query, [&index], &vocab, 16);
        // hand tree-walk: $and $eq name $gt age IDX_DESC count EOS
        let expect: Vec<u32> = vec![
            vocab.id("$and").unwrap(),
            vocab.id("$eq").unwrap(),
            vocab.id("name").unwrap(),
            vocab.id("$gt").unwrap(),
            vocab.id("age").unwrap(),
            IDX_DESC,
            vocab.id("count").unwrap(),
            EOS,
            PAD,
            PAD,
            PAD,
            PAD,
            PAD,
            PAD,
            PAD,
            PAD,
        ];
        assert_eq!(state.ids(), expect.as_slice());
    }

    #[test]
    fn marker_only_for_first_key() {
        let vocab = build_vocabulary(&schema()).unwrap();
        // index with `name` as a second key must not mark `name`
        let index = idx(&[("age", SortDirection::Asc), ("name", SortDirection::Asc)]);
        let (state, _) = tokenize_with_report(&eq_name_count(), [&index], &vocab, 8);
        assert!(!state.ids().contains(&IDX_ASC));
        assert!(!state.ids().contains(&IDX_DESC));
    }

    #[test]
    fn sort_aggregation_emits_sort_fields_and_limit() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let query = QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Gt,
                field: "age".into(),
                value: Literal::Int(10),
            },
            agg: Aggregation::SortThenLimit {
                keys: vec![("age".into(), SortDirection::Desc)],
                limit: 10,
            },
        };
        let (state, _) = tokenize_with_report(&query, [], &vocab, 16);
        let expect: Vec<u32> = vec![
            vocab.id("$gt").unwrap(),
            vocab.id("age").unwrap(),
            vocab.id("sort").unwrap(),
            vocab.id("age").unwrap(),
            vocab.id("limit").unwrap(),
            EOS,
        ];
        assert_eq!(&state.ids()[..6], expect.as_slice());
        assert!(state.ids()[6..].iter().all(|&id| id == PAD));
    }

    #[test]
    fn unknown_field_becomes_unk() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let query = QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Eq,
                field: "ghost".into(),
                value: Literal::Str("x".into()),
            },
            agg: Aggregation::Count,
        };
        let (state, report) = tokenize_with_report(&query, [], &vocab, 8);
        assert_eq!(report.unknown_tokens, 1);
        assert_eq!(state.ids()[1], super::super::vocab::UNK);
    }

    #[test]
    fn truncation_forces_eos_at_last_position() {
        let vocab = build_vocabulary(&schema()).unwrap();
        let children: Vec<Expr> = (0..6)
            .map(|i| Expr::Compare {
                op: ComparisonOp::Eq,
                field: if i % 2 == 0 { "name" } else { "age" }.into(),
                value: Literal::Str("x".into()),
            })
            .collect();
        let query = QueryAst {
            expr: Expr::Logical {
                op: LogicalOp::And,
                children,
            },
            agg: Aggregation::Count,
        };
        let (state, report) = tokenize_with_report(&query, [], &vocab, 8);
        assert!(report.truncated);
        assert_eq!(state.len(), 8);
        assert_eq!(state.ids()[7], EOS);
    }
}
