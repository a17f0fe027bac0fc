//! Query AST, state tokenizer, and the positional action codec.

mod action;
mod ast;
mod json;
mod tokens;
mod vocab;

pub use action::{decode_action, encode_action, extract_attributes, ActionEncodeError, ActionVec};
pub use ast::{
    Aggregation, ComparisonOp, Expr, FieldName, IndexDef, IndexDefError, Literal, LogicalOp,
    QueryAst, QueryError, SortDirection,
};
pub use tokens::{tokenize, tokenize_with_report, StateTokens, TokenizeReport};
pub use vocab::{
    build_vocabulary, SchemaError, Vocabulary, EOS, IDX_ASC, IDX_DESC, OPERATOR_TOKENS, PAD,
    RESERVED_TOKENS, UNK,
};

use crate::query;

/// Everything needed to translate between queries and the agent's state and
/// action spaces: the vocabulary, state length `L`, and max index keys `k`.
#[derive(Clone, Debug)]
pub struct StateCodec {
    pub vocab: Vocabulary,
    pub state_len: usize,
    pub max_keys: usize,
}

impl StateCodec {
    pub fn new(vocab: Vocabulary, state_len: usize, max_keys: usize) -> Self {
        StateCodec {
            vocab,
            state_len,
            max_keys,
        }
    }

    pub fn state<'a, I>(&self, query: &QueryAst, indexes: I) -> StateTokens
    where
        I: IntoIterator<Item = &'a IndexDef>,
    {
        query::tokenize(query, indexes, &self.vocab, self.state_len)
    }

    pub fn attrs(&self, query: &QueryAst) -> Vec<FieldName> {
        extract_attributes(query)
    }

    pub fn decode(&self, action: &ActionVec, attrs: &[FieldName]) -> Option<IndexDef> {
        decode_action(action, attrs)
    }

    pub fn encode(
        &self,
        index: Option<&IndexDef>,
        attrs: &[FieldName],
    ) -> Result<ActionVec, ActionEncodeError> {
        encode_action(index, attrs, self.max_keys)
    }

    pub fn terminal_state(&self) -> StateTokens {
        StateTokens::terminal(self.state_len)
    }
}
