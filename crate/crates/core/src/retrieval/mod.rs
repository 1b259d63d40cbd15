//! Maps free-form intent (a story, an instruction, a tag typed from memory)
//! to ranked expression tags.
//!
//! The default retriever is a deterministic field-weighted BM25 over each
//! tag's name, aliases, definition and stories. A query that exactly equals a
//! canonical name or alias short-circuits to rank 1. An optional LLM adapter
//! ([`llm`]) asks a text-completion endpoint instead and falls back to the
//! lexical retriever when the model names no known tag.

mod bm25;
pub mod llm;
pub mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression_db::{ExpressionDatabase, StoryLanguage};

pub use bm25::{Bm25Params, RetrievalIndex};
pub use llm::{retrieve_via_llm, LlmError, LlmRetrieval, OpenAiCompatibleClient, TextCompletion};

/// Score assigned to an exact name/alias hit; larger than any BM25 score.
pub const EXACT_MATCH_SCORE: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchedField {
    Name,
    Alias,
    Definition,
    Story,
}

impl MatchedField {
    pub const ALL: [MatchedField; 4] = [Self::Name, Self::Alias, Self::Definition, Self::Story];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Name => "name",
            Self::Alias => "alias",
            Self::Definition => "definition",
            Self::Story => "story",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query text is empty")]
    EmptyText,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    text: String,
    language_hint: Option<StoryLanguage>,
    k: usize,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>, k: usize) -> Result<Self, QueryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(QueryError::EmptyText);
        }
        if k == 0 {
            return Err(QueryError::ZeroK);
        }
        Ok(Self {
            text,
            language_hint: None,
            k,
        })
    }

    /// Informational only; tokenization is script-driven.
    pub fn with_language_hint(mut self, language: StoryLanguage) -> Self {
        self.language_hint = Some(language);
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn language_hint(&self) -> Option<StoryLanguage> {
        self.language_hint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag_name: String,
    pub score: f64,
    pub matched_fields: Vec<MatchedField>,
}

/// Builds the lexical index for a database.
pub fn build_index(db: &ExpressionDatabase) -> RetrievalIndex {
    RetrievalIndex::build(db, Bm25Params::default())
}

/// Ranks tags for `query`; at most `query.k()` results, best first.
pub fn retrieve(index: &RetrievalIndex, query: &RetrievalQuery) -> Vec<ScoredTag> {
    index.search(query.text(), query.k())
}
