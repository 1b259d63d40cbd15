use std::collections::HashMap;

use super::tokenize::tokenize;
use super::{MatchedField, ScoredTag, EXACT_MATCH_SCORE};
use crate::expression_db::{ExpressionDatabase, ExpressionTag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Weights in [`MatchedField::ALL`] order: name, alias, definition, story.
    pub field_weights: [f64; 4],
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            field_weights: [4.0, 4.0, 2.0, 1.0],
        }
    }
}

/// Token statistics for one field across all documents.
#[derive(Debug, Clone, Default)]
struct FieldIndex {
    term_freqs: Vec<HashMap<String, u32>>,
    lengths: Vec<u32>,
    doc_freq: HashMap<String, u32>,
    avg_len: f64,
}

impl FieldIndex {
    fn build(docs: impl Iterator<Item = Vec<String>>) -> Self {
        let mut idx = FieldIndex::default();
        for tokens in docs {
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *idx.doc_freq.entry(term.clone()).or_default() += 1;
            }
            idx.lengths.push(tokens.len() as u32);
            idx.term_freqs.push(tf);
        }
        let total: u64 = idx.lengths.iter().map(|&l| l as u64).sum();
        idx.avg_len = if idx.lengths.is_empty() {
            0.0
        } else {
            total as f64 / idx.lengths.len() as f64
        };
        idx
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.lengths.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score(&self, doc: usize, terms: &[String], params: &Bm25Params) -> f64 {
        let len = self.lengths[doc] as f64;
        if len == 0.0 || self.avg_len == 0.0 {
            return 0.0;
        }
        let norm = params.k1 * (1.0 - params.b + params.b * len / self.avg_len);
        terms
            .iter()
            .map(|term| match self.term_freqs[doc].get(term) {
                Some(&tf) => {
                    let tf = tf as f64;
                    self.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
                }
                None => 0.0,
            })
            .sum()
    }
}

fn field_tokens(tag: &ExpressionTag, field: MatchedField) -> Vec<String> {
    match field {
        MatchedField::Name => tokenize(&tag.name),
        MatchedField::Alias => tag.aliases.iter().flat_map(|a| tokenize(&a.text)).collect(),
        MatchedField::Definition => tokenize(&tag.definition),
        MatchedField::Story => tag.stories.iter().flat_map(|s| tokenize(&s.text)).collect(),
    }
}

/// Immutable per-field BM25 statistics over a database snapshot.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    params: Bm25Params,
    names: Vec<String>,
    fields: [FieldIndex; 4],
    exact: HashMap<String, (usize, MatchedField)>,
}

impl RetrievalIndex {
    pub fn build(db: &ExpressionDatabase, params: Bm25Params) -> Self {
        let tags = db.tags();
        let fields = MatchedField::ALL.map(|f| FieldIndex::build(tags.iter().map(|t| field_tokens(t, f))));
        let mut exact = HashMap::new();
        for (i, tag) in tags.iter().enumerate() {
            exact.insert(tag.name.clone(), (i, MatchedField::Name));
            for alias in &tag.aliases {
                exact.insert(alias.text.clone(), (i, MatchedField::Alias));
            }
        }
        Self {
            params,
            names: tags.iter().map(|t| t.name.clone()).collect(),
            fields,
            exact,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.names.len()
    }

    /// Documents indexed in each field group (always equal to `doc_count`).
    pub fn field_doc_counts(&self) -> [usize; 4] {
        self.fields.each_ref().map(|f| f.lengths.len())
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    /// Per-document BM25 score and matched fields, in database order.
    fn score_all(&self, text: &str) -> Vec<(f64, Vec<MatchedField>)> {
        let mut terms = tokenize(text);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));

        (0..self.names.len())
            .map(|doc| {
                let mut total = 0.0;
                let mut matched = Vec::new();
                for (fi, field) in MatchedField::ALL.into_iter().enumerate() {
                    let s = self.fields[fi].score(doc, &terms, &self.params);
                    if s > 0.0 {
                        total += self.params.field_weights[fi] * s;
                        matched.push(field);
                    }
                }
                (total, matched)
            })
            .collect()
    }

    pub fn search(&self, text: &str, k: usize) -> Vec<ScoredTag> {
        if k == 0 || self.names.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(k);
        let exact = self.exact.get(text.trim()).copied();
        if let Some((doc, field)) = exact {
            out.push(ScoredTag {
                tag_name: self.names[doc].clone(),
                score: EXACT_MATCH_SCORE,
                matched_fields: vec![field],
            });
        }

        let mut ranked: Vec<(usize, f64, Vec<MatchedField>)> = self
            .score_all(text)
            .into_iter()
            .enumerate()
            .filter(|(doc, (score, _))| *score > 0.0 && exact.is_none_or(|(e, _)| e != *doc))
            .map(|(doc, (score, matched))| (doc, score, matched))
            .collect();
        // Stable sort keeps database order among equal scores.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

        out.extend(ranked.into_iter().map(|(doc, score, matched_fields)| ScoredTag {
            tag_name: self.names[doc].clone(),
            score,
            matched_fields,
        }));
        out.truncate(k);
        out
    }
}
