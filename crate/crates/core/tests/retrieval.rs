mod common;

use std::time::Duration;

use common::{dead_url, sample_db, serve, MockReply, ELARA_STORY};
use exprforge_core::expression_db::ExpressionDatabase;
use exprforge_core::retrieval::llm::{retrieve_via_llm, LlmError, OpenAiCompatibleClient, TextCompletion};
use exprforge_core::retrieval::{build_index, retrieve, MatchedField, QueryError, RetrievalQuery, EXACT_MATCH_SCORE};
use proptest::prelude::*;

fn q(text: &str, k: usize) -> RetrievalQuery {
    RetrievalQuery::new(text, k).unwrap()
}

#[test]
fn elara_story_retrieves_plus_underscore_plus_first() {
    let db = sample_db();
    let index = build_index(&db);
    let hits = retrieve(&index, &q(ELARA_STORY, 5));
    assert_eq!(hits[0].tag_name, "+_+");
    assert!(hits[0].matched_fields.contains(&MatchedField::Story));
}

#[test]
fn chinese_alias_query() {
    let db = sample_db();
    let index = build_index(&db);
    let hits = retrieve(&index, &q("星星眼", 3));
    assert_eq!(hits[0].tag_name, "+_+");
    assert_eq!(hits[0].score, EXACT_MATCH_SCORE);
    assert!(hits.len() <= 3);
}

#[test]
fn exact_name_or_alias_always_ranks_first() {
    let db = sample_db();
    let index = build_index(&db);
    for tag in db.tags() {
        let keys = std::iter::once(tag.name.as_str()).chain(tag.aliases.iter().map(|a| a.text.as_str()));
        for key in keys {
            let hits = retrieve(&index, &q(key, 5));
            assert_eq!(hits[0].tag_name, tag.name, "query {key:?}");
            assert_eq!(hits[0].score, EXACT_MATCH_SCORE);
        }
    }
}

#[test]
fn own_stories_rank_their_tag_in_top_three() {
    let db = sample_db();
    let index = build_index(&db);
    for tag in db.tags() {
        for story in &tag.stories {
            let hits = retrieve(&index, &q(&story.text, 3));
            assert!(
                hits.iter().any(|h| h.tag_name == tag.name),
                "{} story {} {:?}: {:?}",
                tag.name,
                story.index,
                story.language,
                hits.iter().map(|h| &h.tag_name).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn identical_queries_give_identical_results() {
    let db = sample_db();
    let a = retrieve(&build_index(&db), &q("she looked away, cheeks red", 10));
    let b = retrieve(&build_index(&db), &q("she looked away, cheeks red", 10));
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn scores_are_nonincreasing_and_positive() {
    let db = sample_db();
    let index = build_index(&db);
    let hits = retrieve(&index, &q("eyes teeth mouth face", 10));
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(hits.iter().all(|h| h.score > 0.0));
}

#[test]
fn query_validation_and_empty_db() {
    assert_eq!(RetrievalQuery::new("  ", 3).unwrap_err(), QueryError::EmptyText);
    assert_eq!(RetrievalQuery::new("x", 0).unwrap_err(), QueryError::ZeroK);
    let empty = ExpressionDatabase::from_tags(vec![], ".").unwrap();
    assert!(retrieve(&build_index(&empty), &q("smile", 3)).is_empty());
}

#[test]
fn unmatched_vocabulary_returns_nothing() {
    let db = sample_db();
    assert!(retrieve(&build_index(&db), &q("zzzqqq xylograph", 5)).is_empty());
}

const VOCAB: &[&str] = &[
    "eyes", "smile", "teeth", "cheeks", "red", "looked", "away", "sparkle", "star", "mouth", "open", "dizzy", "wink",
    "pupils", "fear", "she", "he", "the", "side", "glance", "笑顔", "眼", "赤面",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smaller_k_is_a_prefix(words in prop::collection::vec(prop::sample::select(VOCAB), 1..6), k in 1usize..10) {
        let db = sample_db();
        let index = build_index(&db);
        let text = words.join(" ");
        let big = retrieve(&index, &q(&text, k + 1));
        let small = retrieve(&index, &q(&text, k));
        prop_assert!(small.len() <= k);
        prop_assert_eq!(&big[..small.len()], &small[..]);
    }
}

struct Canned(Result<String, LlmError>);

impl TextCompletion for Canned {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        assert!(prompt.contains("Tag: +_+"));
        self.0.clone()
    }
}

#[test]
fn llm_answer_is_validated_against_db() {
    let db = sample_db();
    let index = build_index(&db);
    let query = q("she could not meet his gaze", 3);
    let out = retrieve_via_llm(&db, &index, &query, &Canned(Ok("averting eyes".into()))).unwrap();
    assert!(!out.degraded);
    assert_eq!(out.results[0].tag_name, "averting eyes");

    // aliases resolve to their tag
    let out = retrieve_via_llm(&db, &index, &query, &Canned(Ok("1. 脸红\n2. wink".into()))).unwrap();
    let names: Vec<_> = out.results.iter().map(|r| r.tag_name.as_str()).collect();
    assert_eq!(names, ["blush", "wink"]);
}

#[test]
fn llm_unknown_tag_falls_back_to_lexical() {
    let db = sample_db();
    let index = build_index(&db);
    let out = retrieve_via_llm(&db, &index, &q(ELARA_STORY, 3), &Canned(Ok("nonexistent_tag".into()))).unwrap();
    assert!(out.degraded);
    assert_eq!(out.results, retrieve(&index, &q(ELARA_STORY, 3)));
}

#[test]
fn llm_endpoint_failure_surfaces() {
    let db = sample_db();
    let index = build_index(&db);
    let err = Canned(Err(LlmError::EndpointUnavailable("down".into())));
    assert!(matches!(
        retrieve_via_llm(&db, &index, &q("x", 3), &err),
        Err(LlmError::EndpointUnavailable(_))
    ));
}

#[test]
fn openai_client_round_trip() {
    let server = serve(|path, body| {
        assert_eq!(path, "/v1/chat/completions");
        let req: serde_json::Value = serde_json::from_slice(body).unwrap();
        assert_eq!(req["model"], "m");
        MockReply::json(r#"{"choices":[{"message":{"role":"assistant","content":"wink"}}]}"#)
    });
    let client = OpenAiCompatibleClient {
        base_url: format!("{}/v1", server.url),
        model: "m".into(),
        api_key: Some("k".into()),
        timeout: Duration::from_secs(5),
    };
    let db = sample_db();
    let out = retrieve_via_llm(&db, &build_index(&db), &q("one eye closed", 3), &client).unwrap();
    assert_eq!(out.results[0].tag_name, "wink");
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn openai_client_errors() {
    let client = OpenAiCompatibleClient {
        base_url: dead_url(),
        model: "m".into(),
        api_key: None,
        timeout: Duration::from_secs(2),
    };
    assert!(matches!(client.complete("hi"), Err(LlmError::EndpointUnavailable(_))));

    let server = serve(|_, _| MockReply::json("not json"));
    let client = OpenAiCompatibleClient {
        base_url: server.url.clone(),
        ..client
    };
    assert!(matches!(client.complete("hi"), Err(LlmError::MalformedResponse(_))));
}
