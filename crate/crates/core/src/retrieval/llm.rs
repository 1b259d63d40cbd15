//! LLM-backed retrieval: the whole tag database goes into the prompt as a
//! context document and the model answers with tag names.
//!
//! Answers are validated against the database by exact name or alias lookup
//! only, never fuzzily, so the adapter cannot invent tags.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{retrieve, MatchedField, RetrievalIndex, RetrievalQuery, ScoredTag};
use crate::expression_db::ExpressionDatabase;

pub const ENV_LLM_URL: &str = "EXPRFORGE_LLM_URL";
pub const ENV_LLM_MODEL: &str = "EXPRFORGE_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "EXPRFORGE_LLM_API_KEY";
pub const DEFAULT_LLM_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("LLM endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),
}

/// Anything that turns a prompt into a completion.
pub trait TextCompletion: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRetrieval {
    pub results: Vec<ScoredTag>,
    /// True when the model named no valid tag and lexical results were
    /// substituted.
    pub degraded: bool,
}

/// Renders the context document and instructions sent to the model.
pub fn build_retrieval_prompt(db: &ExpressionDatabase, query: &RetrievalQuery) -> String {
    let mut out = String::from(
        "Below is a database of expression tags. Each entry has a tag name, its definition, and alternative tags.\n\n",
    );
    for tag in db.tags() {
        let aliases = tag
            .aliases
            .iter()
            .map(|a| format!("\"{}\"", a.text))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!(
            "Tag: {}\nDefinition: {}\nAlternative Tags: [{}]\n\n",
            tag.name,
            tag.definition.trim().replace("\n\n", " "),
            aliases
        ));
    }
    out.push_str(&format!(
        "User text:\n{}\n\nReply with at most {} tag names from the database that best match the expression in the user text. \
         Separate names with commas. Output tag names only.",
        query.text().trim(),
        query.k()
    ));
    out
}

/// Splits a model reply on commas and newlines and keeps the names the
/// database recognizes, in reply order, without duplicates.
pub fn parse_tag_response(db: &ExpressionDatabase, reply: &str, k: usize) -> Vec<ScoredTag> {
    let mut out: Vec<ScoredTag> = Vec::new();
    for piece in reply.split([',', '\n']) {
        let candidate = piece
            .trim()
            .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '“' | '”'))
            .trim();
        if candidate.is_empty() {
            continue;
        }
        let candidate = if db.resolve_alias(candidate).is_some() {
            candidate
        } else {
            strip_list_marker(candidate)
        };
        let field = if db.get_tag(candidate).is_some() {
            MatchedField::Name
        } else {
            MatchedField::Alias
        };
        let Some(tag) = db.resolve_alias(candidate) else {
            continue;
        };
        if out.iter().any(|s| s.tag_name == tag.name) {
            continue;
        }
        out.push(ScoredTag {
            tag_name: tag.name.clone(),
            score: 1.0,
            matched_fields: vec![field],
        });
        if out.len() == k {
            break;
        }
    }
    out
}

/// Drops a leading `1.`, `2)`, `-` or `*` list marker.
fn strip_list_marker(s: &str) -> &str {
    let digits = s.trim_start_matches(|c: char| c.is_ascii_digit());
    let rest = if digits.len() < s.len() {
        digits.strip_prefix(['.', ')']).unwrap_or(s)
    } else {
        s.strip_prefix(['-', '*']).unwrap_or(s)
    };
    rest.trim()
}

/// Asks `llm` for tags. Endpoint failures are returned to the caller; a reply
/// with no recognizable tag falls back to lexical retrieval and is marked
/// degraded.
pub fn retrieve_via_llm(
    db: &ExpressionDatabase,
    index: &RetrievalIndex,
    query: &RetrievalQuery,
    llm: &dyn TextCompletion,
) -> Result<LlmRetrieval, LlmError> {
    let reply = llm.complete(&build_retrieval_prompt(db, query))?;
    let results = parse_tag_response(db, &reply, query.k());
    if results.is_empty() {
        return Ok(LlmRetrieval {
            results: retrieve(index, query),
            degraded: true,
        });
    }
    Ok(LlmRetrieval {
        results,
        degraded: false,
    })
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct OpenAiCompatibleClient {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl OpenAiCompatibleClient {
    /// Reads `EXPRFORGE_LLM_URL`, `EXPRFORGE_LLM_MODEL` and
    /// `EXPRFORGE_LLM_API_KEY`. Returns `None` when no URL is configured.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_LLM_URL).ok().filter(|u| !u.is_empty())?;
        Some(Self {
            base_url,
            model: std::env::var(ENV_LLM_MODEL).unwrap_or_else(|_| "default".into()),
            api_key: std::env::var(ENV_LLM_API_KEY).ok().filter(|k| !k.is_empty()),
            timeout: DEFAULT_LLM_TIMEOUT,
        })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

impl TextCompletion for OpenAiCompatibleClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut req = agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::EndpointUnavailable(e.to_string()))?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))
    }
}
