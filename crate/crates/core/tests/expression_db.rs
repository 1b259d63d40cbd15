mod common;

use std::collections::HashMap;

use common::{sample_db, sample_db_path};
use exprforge_core::expression_db::{
    build_story_generation_prompt, load_database, DbError, ExpressionDatabase, StoryLanguage, FULL_DATASET_COUNTS,
};

#[test]
fn sample_db_counts() {
    let db = sample_db();
    let c = db.counts();
    assert_eq!(c.tags, 10);
    assert_eq!(c.aliases, 29);
    assert_eq!(c.stories, 26);
    assert_eq!(c.example_images, 4);
    assert_eq!(db.list_transformation_free().len(), 7);
    // partial dataset: mismatches are warnings, not errors
    assert_eq!(db.count_warnings().len(), 5);
}

#[test]
fn sample_db_get_tag_and_aliases() {
    let db = sample_db();
    let t = db.get_tag("+_+").unwrap();
    assert!(t.definition.contains("eyes light up in excitement"));
    for alias in ["星星眼", "目がしいたけ", "しいたけ目", "两眼放光", "+_+"] {
        assert_eq!(db.resolve_alias(alias).unwrap().name, "+_+", "{alias}");
    }
    assert!(db.get_tag("SMILE").is_none());
    assert!(db.get_tag("smile").is_some());
}

#[test]
fn stories_file_reference_is_loaded() {
    let db = sample_db();
    let t = db.get_tag("+_+").unwrap();
    assert_eq!(t.stories.len(), 6);
    assert!(t.stories[0].text.starts_with("As the master chef"));
    assert!(t.stories.iter().any(|s| s.language == StoryLanguage::Zh));
}

#[test]
fn alias_round_trip_for_every_alias() {
    let db = sample_db();
    for tag in db.tags() {
        assert_eq!(db.resolve_alias(&tag.name).unwrap(), tag);
        for a in &tag.aliases {
            assert_eq!(db.resolve_alias(&a.text).unwrap(), tag, "{}", a.text);
        }
    }
    let union: usize = db.tags().iter().map(|t| t.aliases.len()).sum();
    assert_eq!(db.alias_index().count(), union);
}

#[test]
fn flag_partition_covers_all_tags() {
    let db = sample_db();
    let free = db.list_transformation_free().len();
    let flagged = db.tags().iter().filter(|t| !t.transformation_free).count();
    assert_eq!(free + flagged, db.len());
    let names: Vec<_> = db
        .tags()
        .iter()
        .filter(|t| !t.transformation_free)
        .map(|t| t.name.as_str())
        .collect();
    assert_eq!(names, ["averting eyes", "constricted pupils", "looking to the side"]);
}

#[test]
fn serialize_round_trip_is_stable() {
    let db = sample_db();
    let dir = tempfile::tempdir().unwrap();
    db.write_to_dir(dir.path()).unwrap();
    let again = load_database(dir.path()).unwrap();
    assert_eq!(again.tags(), db.tags());
    let dir2 = tempfile::tempdir().unwrap();
    again.write_to_dir(dir2.path()).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("tags.jsonl")).unwrap(),
        std::fs::read(dir2.path().join("tags.jsonl")).unwrap()
    );
}

#[test]
fn empty_tags_file_gives_empty_db() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tags.jsonl"), "").unwrap();
    let db = load_database(dir.path()).unwrap();
    assert!(db.is_empty());
    assert_eq!(db.alias_index().count(), 0);
}

#[test]
fn missing_file_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_database(dir.path()), Err(DbError::MissingFile(_))));
}

#[test]
fn shared_alias_fixture_collides() {
    // Ten tags where the last reuses smile's 笑顔.
    let db = sample_db();
    let mut lines: Vec<String> = db.to_jsonl().lines().map(String::from).collect();
    let mut last: serde_json::Value = serde_json::from_str(&lines[9]).unwrap();
    last["aliases"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"text": "笑顔", "language": "ja"}));
    lines[9] = last.to_string();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tags.jsonl"), lines.join("\n")).unwrap();
    match load_database(dir.path()) {
        Err(DbError::AliasCollision { alias, tag_a, tag_b }) => {
            assert_eq!(alias, "笑顔");
            assert_eq!(tag_a, "smile");
            assert_eq!(tag_b, "blush");
        }
        other => panic!("expected collision, got {other:?}"),
    }
}

#[test]
fn schema_violations_name_field_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("tags.jsonl");
    std::fs::write(
        &file,
        "{\"name\":\"smile\",\"definition\":\"d\",\"transformation_free\":true}\n{\"name\":\"wink\",\"transformation_free\":true}\n",
    )
    .unwrap();
    match load_database(&file) {
        Err(DbError::SchemaViolation { field, record, .. }) => {
            assert_eq!(field, "definition");
            assert_eq!(record, 2);
        }
        other => panic!("{other:?}"),
    }

    std::fs::write(
        &file,
        "{\"name\":\"smile\",\"definition\":\"d\",\"transformation_free\":\"yes\"}\n",
    )
    .unwrap();
    assert!(matches!(
        load_database(&file),
        Err(DbError::SchemaViolation { record: 1, .. })
    ));

    std::fs::write(
        &file,
        "{\"name\":\"smile\",\"definition\":\"d\",\"transformation_free\":true,\"stories\":\"stories/nope.json\"}\n",
    )
    .unwrap();
    assert!(matches!(load_database(&file), Err(DbError::MissingFile(_))));

    std::fs::write(&file, "{\"name\":\"a\",\"definition\":\"d\",\"transformation_free\":true}\n{\"name\":\"a\",\"definition\":\"d\",\"transformation_free\":true}\n").unwrap();
    assert!(matches!(load_database(&file), Err(DbError::DuplicateTagName(n)) if n == "a"));
}

#[test]
fn image_paths_checked_when_tree_present() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("images")).unwrap();
    std::fs::write(
        dir.path().join("tags.jsonl"),
        "{\"name\":\"smile\",\"definition\":\"d\",\"transformation_free\":true,\"example_images\":[{\"character_id\":\"c\",\"seed\":1,\"path\":\"images/c_1.png\"}]}\n",
    )
    .unwrap();
    assert!(matches!(load_database(dir.path()), Err(DbError::MissingFile(_))));
    std::fs::write(dir.path().join("images/c_1.png"), b"png").unwrap();
    assert!(load_database(dir.path()).is_ok());
}

#[test]
fn story_prompt_matches_template_exactly() {
    let db = sample_db();
    let tag = db.get_tag("+_+").unwrap();
    let prompt = build_story_generation_prompt(tag, StoryLanguage::En, 5).unwrap();
    let expected = "Expression Tag: +_+\n\nDefinition:\n\n\
When a character's eyes light up in excitement, usually with a yellow four-pointed sparkle in the center. Sparkles may also appear around their head.\n\n\
Do not confuse with star-shaped pupils, which is for literal four/five-pointed star shaped eyes, or for characters who have naturally cross-shaped pupils, such as Nia Teppelin or Chinchou.\n\n\
Alternative Tags: [\"目がしいたけ\", \"しいたけ目\", \"星星眼\", \"两眼放光\"]\n\n\
Provide a short story background (3 to 5 sentences) that make a character do this expression. Generate natural stories, without explicitly referring to the expression. Write the story in English, and repeat 5 times. Only output 5 stories, each starting with a number from 1 to 5, followed by a period.";
    assert_eq!(prompt, expected);
}

#[test]
fn story_prompt_language_and_count_substitution() {
    let db = sample_db();
    let tag = db.get_tag("+_+").unwrap();
    let p = build_story_generation_prompt(tag, "ja".parse().unwrap(), 3).unwrap();
    assert!(p.starts_with("Expression Tag: +_+"));
    assert!(p.contains("Write the story in Japanese"));
    assert!(p.contains("repeat 3 times"));
    assert!(p.contains("from 1 to 3, followed by a period."));
    assert!("xx".parse::<StoryLanguage>().is_err());
}

/// Runs against the complete published dataset when `EXPRFORGE_FULL_DB`
/// points at it.
#[test]
fn full_dataset_counts_when_present() {
    let Ok(path) = std::env::var("EXPRFORGE_FULL_DB") else {
        eprintln!("EXPRFORGE_FULL_DB not set; skipping full-dataset check");
        return;
    };
    let db = load_database(path).unwrap();
    assert_eq!(db.counts(), FULL_DATASET_COUNTS);
    assert!(db.count_warnings().is_empty());
}

#[test]
fn from_tags_matches_loaded_db() {
    let db = sample_db();
    let rebuilt = ExpressionDatabase::from_tags(db.tags().to_vec(), sample_db_path()).unwrap();
    let a: HashMap<_, _> = db.alias_index().collect();
    let b: HashMap<_, _> = rebuilt.alias_index().collect();
    assert_eq!(a, b);
}
