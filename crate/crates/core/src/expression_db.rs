//! Expression-tag database: loading, validation, lookup and the
//! story-generation prompt template.
//!
//! On disk a database is a directory holding `tags.jsonl` (one tag per line)
//! plus optional `stories/` and `images/` subtrees referenced by relative
//! paths. A tag's `stories` field is either an inline array of story records
//! or a relative path to a JSON file containing that array.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counts of the complete published dataset.
pub const FULL_DATASET_COUNTS: DatabaseCounts = DatabaseCounts {
    tags: 135,
    aliases: 332,
    stories: 2700,
    example_images: 3375,
    transformation_free: 100,
};

pub const TAGS_FILE: &str = "tags.jsonl";

#[derive(Debug, Error)]
pub enum DbError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema violation in record {record}, field `{field}`: {detail}")]
    SchemaViolation {
        field: String,
        record: usize,
        detail: String,
    },
    #[error("duplicate tag name `{0}`")]
    DuplicateTagName(String),
    #[error("alias `{alias}` claimed by both `{tag_a}` and `{tag_b}`")]
    AliasCollision {
        alias: String,
        tag_a: String,
        tag_b: String,
    },
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn schema(record: usize, field: &str, detail: impl Into<String>) -> DbError {
    DbError::SchemaViolation {
        field: field.to_string(),
        record,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AliasLanguage {
    Zh,
    Ja,
    Ko,
    En,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoryLanguage {
    Zh,
    En,
    Ja,
    Ko,
}

impl StoryLanguage {
    pub const ALL: [StoryLanguage; 4] = [Self::Zh, Self::En, Self::Ja, Self::Ko];

    pub fn code(self) -> &'static str {
        match self {
            Self::Zh => "zh",
            Self::En => "en",
            Self::Ja => "ja",
            Self::Ko => "ko",
        }
    }

    /// English name used inside generation prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Zh => "Chinese",
            Self::En => "English",
            Self::Ja => "Japanese",
            Self::Ko => "Korean",
        }
    }
}

impl fmt::Display for StoryLanguage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for StoryLanguage {
    type Err = StoryPromptError;

    /// Accepts the two-letter code or the English name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| lower == l.code() || lower == l.display_name().to_ascii_lowercase())
            .ok_or_else(|| StoryPromptError::UnsupportedLanguage(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alias {
    pub text: String,
    pub language: AliasLanguage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryEntry {
    pub language: StoryLanguage,
    pub index: u8,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleImageRef {
    pub character_id: String,
    pub seed: i64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionTag {
    pub name: String,
    pub definition: String,
    pub aliases: Vec<Alias>,
    pub transformation_free: bool,
    pub stories: Vec<StoryEntry>,
    pub example_images: Vec<ExampleImageRef>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StoriesField {
    Inline(Vec<StoryEntry>),
    File(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRecord {
    name: String,
    definition: String,
    #[serde(default)]
    aliases: Vec<Alias>,
    transformation_free: bool,
    #[serde(default)]
    stories: Option<StoriesField>,
    #[serde(default)]
    example_images: Vec<ExampleImageRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatabaseCounts {
    pub tags: usize,
    pub aliases: usize,
    pub stories: usize,
    pub example_images: usize,
    pub transformation_free: usize,
}

/// A validated, immutable expression-tag database.
#[derive(Debug, Clone)]
pub struct ExpressionDatabase {
    tags: Vec<ExpressionTag>,
    by_name: HashMap<String, usize>,
    alias_index: HashMap<String, usize>,
    root: PathBuf,
}

impl ExpressionDatabase {
    /// Builds a database from in-memory tags, enforcing every load-time
    /// invariant except file-path resolution.
    pub fn from_tags(tags: Vec<ExpressionTag>, root: impl Into<PathBuf>) -> Result<Self, DbError> {
        let mut by_name = HashMap::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            validate_tag(tag, i + 1)?;
            if by_name.insert(tag.name.clone(), i).is_some() {
                return Err(DbError::DuplicateTagName(tag.name.clone()));
            }
        }
        let mut alias_index: HashMap<String, usize> = HashMap::new();
        for (i, tag) in tags.iter().enumerate() {
            for alias in &tag.aliases {
                if let Some(&other) = by_name.get(&alias.text) {
                    return Err(DbError::AliasCollision {
                        alias: alias.text.clone(),
                        tag_a: tags[other].name.clone(),
                        tag_b: tag.name.clone(),
                    });
                }
                if let Some(prev) = alias_index.insert(alias.text.clone(), i) {
                    return Err(DbError::AliasCollision {
                        alias: alias.text.clone(),
                        tag_a: tags[prev].name.clone(),
                        tag_b: tag.name.clone(),
                    });
                }
            }
        }
        Ok(Self {
            tags,
            by_name,
            alias_index,
            root: root.into(),
        })
    }

    pub fn tags(&self) -> &[ExpressionTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Database position of a tag, used for deterministic tie-breaking.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Exact, case-sensitive lookup by canonical name.
    pub fn get_tag(&self, name: &str) -> Option<&ExpressionTag> {
        self.by_name.get(name).map(|&i| &self.tags[i])
    }

    /// Looks up an alternative tag; canonical names resolve to themselves.
    pub fn resolve_alias(&self, alias: &str) -> Option<&ExpressionTag> {
        self.alias_index
            .get(alias)
            .or_else(|| self.by_name.get(alias))
            .map(|&i| &self.tags[i])
    }

    /// Alias text → owning tag name, for every alias in the database.
    pub fn alias_index(&self) -> impl Iterator<Item = (&str, &str)> {
        self.alias_index
            .iter()
            .map(|(a, &i)| (a.as_str(), self.tags[i].name.as_str()))
    }

    pub fn list_transformation_free(&self) -> Vec<&ExpressionTag> {
        self.tags.iter().filter(|t| t.transformation_free).collect()
    }

    pub fn counts(&self) -> DatabaseCounts {
        DatabaseCounts {
            tags: self.tags.len(),
            aliases: self.alias_index.len(),
            stories: self.tags.iter().map(|t| t.stories.len()).sum(),
            example_images: self.tags.iter().map(|t| t.example_images.len()).sum(),
            transformation_free: self.tags.iter().filter(|t| t.transformation_free).count(),
        }
    }

    /// Differences from the complete published dataset. Partial databases are
    /// valid; this only reports.
    pub fn count_warnings(&self) -> Vec<String> {
        let have = self.counts();
        let want = FULL_DATASET_COUNTS;
        [
            ("tags", have.tags, want.tags),
            ("aliases", have.aliases, want.aliases),
            ("stories", have.stories, want.stories),
            ("example images", have.example_images, want.example_images),
            (
                "transformation-free tags",
                have.transformation_free,
                want.transformation_free,
            ),
        ]
        .into_iter()
        .filter(|(_, h, w)| h != w)
        .map(|(what, h, w)| format!("{what}: found {h}, full dataset has {w}"))
        .collect()
    }

    /// Serializes every tag as one JSON line with stories inlined.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for tag in &self.tags {
            out.push_str(&serde_json::to_string(tag).expect("tags serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes `tags.jsonl` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), DbError> {
        let dir = dir.as_ref();
        let io = |source| DbError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(TAGS_FILE), self.to_jsonl()).map_err(io)
    }
}

fn validate_tag(tag: &ExpressionTag, record: usize) -> Result<(), DbError> {
    if tag.name.trim().is_empty() {
        return Err(schema(record, "name", "must be non-empty"));
    }
    if tag.definition.trim().is_empty() {
        return Err(schema(record, "definition", "must be non-empty"));
    }
    let mut seen = HashSet::new();
    for alias in &tag.aliases {
        if alias.text.trim().is_empty() {
            return Err(schema(record, "aliases", "alias text must be non-empty"));
        }
        if alias.text == tag.name {
            return Err(schema(
                record,
                "aliases",
                format!("alias `{}` duplicates the canonical name", alias.text),
            ));
        }
        if !seen.insert(alias.text.as_str()) {
            return Err(schema(
                record,
                "aliases",
                format!("alias `{}` listed twice", alias.text),
            ));
        }
    }
    for story in &tag.stories {
        if story.text.trim().is_empty() {
            return Err(schema(record, "stories", "story text must be non-empty"));
        }
        if !(1..=5).contains(&story.index) {
            return Err(schema(
                record,
                "stories",
                format!("story index {} outside 1..=5", story.index),
            ));
        }
    }
    for img in &tag.example_images {
        if !is_contained_relative(&img.path) {
            return Err(schema(
                record,
                "example_images",
                format!("path `{}` must be relative to the database root", img.path),
            ));
        }
    }
    Ok(())
}

fn is_contained_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn field_from_serde_error(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    msg.split('`').nth(1).unwrap_or("record").to_string()
}

/// Loads and validates a database from a directory containing `tags.jsonl`,
/// or from a `.jsonl` file directly (its parent becomes the root).
pub fn load_database(path: impl AsRef<Path>) -> Result<ExpressionDatabase, DbError> {
    let path = path.as_ref();
    let (file, root) = if path.is_dir() {
        (path.join(TAGS_FILE), path.to_path_buf())
    } else {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), root)
    };
    if !file.is_file() {
        return Err(DbError::MissingFile(file));
    }
    let text = std::fs::read_to_string(&file).map_err(|source| DbError::Io {
        path: file.clone(),
        source,
    })?;
    let images_present = root.join("images").is_dir();

    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let record = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: TagRecord =
            serde_json::from_str(line).map_err(|e| schema(record, &field_from_serde_error(&e), e.to_string()))?;
        let stories = match raw.stories {
            None => Vec::new(),
            Some(StoriesField::Inline(s)) => s,
            Some(StoriesField::File(rel)) => load_stories_file(&root, &rel, record)?,
        };
        if images_present {
            for img in &raw.example_images {
                let p = root.join(&img.path);
                if is_contained_relative(&img.path) && !p.is_file() {
                    return Err(DbError::MissingFile(p));
                }
            }
        }
        tags.push(ExpressionTag {
            name: raw.name,
            definition: raw.definition,
            aliases: raw.aliases,
            transformation_free: raw.transformation_free,
            stories,
            example_images: raw.example_images,
        });
    }
    ExpressionDatabase::from_tags(tags, root)
}

fn load_stories_file(root: &Path, rel: &str, record: usize) -> Result<Vec<StoryEntry>, DbError> {
    if !is_contained_relative(rel) {
        return Err(schema(
            record,
            "stories",
            format!("path `{rel}` must be relative to the database root"),
        ));
    }
    let path = root.join(rel);
    if !path.is_file() {
        return Err(DbError::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|source| DbError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| schema(record, "stories", format!("{}: {e}", path.display())))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoryPromptError {
    #[error("unsupported story language `{0}` (expected zh, en, ja or ko)")]
    UnsupportedLanguage(String),
    #[error("story count must be at least 1")]
    InvalidCount,
}

/// Renders the prompt used to ask an LLM for example stories about a tag.
pub fn build_story_generation_prompt(
    tag: &ExpressionTag,
    language: StoryLanguage,
    n_stories: usize,
) -> Result<String, StoryPromptError> {
    if n_stories == 0 {
        return Err(StoryPromptError::InvalidCount);
    }
    let aliases = tag
        .aliases
        .iter()
        .map(|a| format!("\"{}\"", a.text))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        "Expression Tag: {name}\n\
         \n\
         Definition:\n\
         \n\
         {definition}\n\
         \n\
         Alternative Tags: [{aliases}]\n\
         \n\
         Provide a short story background (3 to 5 sentences) that make a character do this expression. \
         Generate natural stories, without explicitly referring to the expression. \
         Write the story in {lang}, and repeat {n} times. \
         Only output {n} stories, each starting with a number from 1 to {n}, followed by a period.",
        name = tag.name,
        definition = tag.definition.trim(),
        lang = language.display_name(),
        n = n_stories,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(name: &str, aliases: &[&str], tf: bool) -> ExpressionTag {
        ExpressionTag {
            name: name.into(),
            definition: format!("definition of {name}"),
            aliases: aliases
                .iter()
                .map(|a| Alias {
                    text: (*a).into(),
                    language: AliasLanguage::Ja,
                })
                .collect(),
            transformation_free: tf,
            stories: vec![],
            example_images: vec![],
        }
    }

    #[test]
    fn lookup_is_case_sensitive() {
        let db = ExpressionDatabase::from_tags(vec![tag("smile", &["笑顔"], true)], ".").unwrap();
        assert!(db.get_tag("smile").is_some());
        assert!(db.get_tag("SMILE").is_none());
        assert_eq!(db.resolve_alias("笑顔").unwrap().name, "smile");
        assert_eq!(db.resolve_alias("smile").unwrap().name, "smile");
        assert!(db.resolve_alias("えがお").is_none());
    }

    #[test]
    fn empty_db_finds_nothing() {
        let db = ExpressionDatabase::from_tags(vec![], ".").unwrap();
        assert!(db.get_tag("smile").is_none());
        assert_eq!(db.counts(), DatabaseCounts::default());
        assert_eq!(db.alias_index().count(), 0);
    }

    #[test]
    fn alias_shared_between_tags_collides() {
        let err = ExpressionDatabase::from_tags(vec![tag("smile", &["笑顔"], true), tag("grin", &["笑顔"], true)], ".")
            .unwrap_err();
        match err {
            DbError::AliasCollision { alias, tag_a, tag_b } => {
                assert_eq!(
                    (alias.as_str(), tag_a.as_str(), tag_b.as_str()),
                    ("笑顔", "smile", "grin")
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alias_equal_to_other_canonical_name_collides() {
        let err = ExpressionDatabase::from_tags(vec![tag("smile", &[], true), tag("grin", &["smile"], true)], ".")
            .unwrap_err();
        assert!(matches!(err, DbError::AliasCollision { .. }));
    }

    #[test]
    fn invariant_violations_rejected() {
        let dup = ExpressionDatabase::from_tags(vec![tag("a", &[], true), tag("a", &[], true)], ".");
        assert!(matches!(dup, Err(DbError::DuplicateTagName(n)) if n == "a"));

        let self_alias = ExpressionDatabase::from_tags(vec![tag("a", &["a"], true)], ".");
        assert!(matches!(self_alias, Err(DbError::SchemaViolation { field, .. }) if field == "aliases"));

        let mut t = tag("a", &[], true);
        t.definition = "  ".into();
        assert!(matches!(
            ExpressionDatabase::from_tags(vec![t], "."),
            Err(DbError::SchemaViolation { field, record: 1, .. }) if field == "definition"
        ));

        let mut t = tag("a", &[], true);
        t.stories.push(StoryEntry {
            language: StoryLanguage::En,
            index: 6,
            text: "x".into(),
        });
        assert!(ExpressionDatabase::from_tags(vec![t], ".").is_err());

        let mut t = tag("a", &[], true);
        t.example_images.push(ExampleImageRef {
            character_id: "c".into(),
            seed: 1,
            path: "../escape.png".into(),
        });
        assert!(ExpressionDatabase::from_tags(vec![t], ".").is_err());
    }

    #[test]
    fn language_parsing() {
        assert_eq!("ja".parse::<StoryLanguage>().unwrap(), StoryLanguage::Ja);
        assert_eq!("Korean".parse::<StoryLanguage>().unwrap(), StoryLanguage::Ko);
        assert_eq!(
            "fr".parse::<StoryLanguage>().unwrap_err(),
            StoryPromptError::UnsupportedLanguage("fr".into())
        );
    }

    #[test]
    fn unknown_alias_language_loads_as_other() {
        let a: Alias = serde_json::from_str(r#"{"text":"sorriso","language":"pt"}"#).unwrap();
        assert_eq!(a.language, AliasLanguage::Other);
    }

    #[test]
    fn story_prompt_with_no_aliases_renders_empty_list() {
        let t = tag("smile", &[], true);
        let p = build_story_generation_prompt(&t, StoryLanguage::En, 5).unwrap();
        assert!(p.contains("Alternative Tags: []\n"), "{p}");
        assert_eq!(
            build_story_generation_prompt(&t, StoryLanguage::En, 0),
            Err(StoryPromptError::InvalidCount)
        );
    }
}
