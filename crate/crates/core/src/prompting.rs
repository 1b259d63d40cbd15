//! Tag-format prompt assembly: `prefix, tag, tag, ..., suffix`, with LoRA
//! trigger words appended at the end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEPARATOR: &str = ", ";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Content description, e.g. the character.
    #[serde(default)]
    pub prefix: String,
    /// Style control.
    #[serde(default)]
    pub suffix: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum LoraError {
    #[error("LoRA `{name}`: {detail}")]
    Invalid { name: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoRAConfig {
    pub name: String,
    pub trigger_words: Vec<String>,
    pub weight: f64,
    /// Replaces the sampling step count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_override: Option<u32>,
    /// Replaces the CFG scale when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg_override: Option<f64>,
}

impl LoRAConfig {
    pub fn validate(&self) -> Result<(), LoraError> {
        let bad = |detail: &str| {
            Err(LoraError::Invalid {
                name: self.name.clone(),
                detail: detail.to_string(),
            })
        };
        if self.name.trim().is_empty() {
            return bad("name must be non-empty");
        }
        if !(self.weight > 0.0 && self.weight <= 2.0) {
            return bad("weight must lie in (0, 2]");
        }
        if self.trigger_words.iter().any(|w| w.trim().is_empty()) {
            return bad("trigger words must be non-empty");
        }
        if self.step_override == Some(0) {
            return bad("step override must be at least 1");
        }
        if let Some(cfg) = self.cfg_override {
            if !(cfg > 0.0 && cfg.is_finite()) {
                return bad("cfg override must be positive");
            }
        }
        Ok(())
    }
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(SEPARATOR)
}

/// Joins prefix, tags and suffix with `", "`, skipping empty parts.
pub fn assemble_prompt<S: AsRef<str>>(template: &PromptTemplate, tags: &[S]) -> String {
    join_nonempty(
        std::iter::once(template.prefix.as_str())
            .chain(tags.iter().map(AsRef::as_ref))
            .chain(std::iter::once(template.suffix.as_str())),
    )
}

/// Appends every LoRA's trigger words to the end of `prompt`.
pub fn inject_lora_triggers(prompt: &str, loras: &[LoRAConfig]) -> String {
    if loras.iter().all(|l| l.trigger_words.is_empty()) {
        return prompt.to_string();
    }
    join_nonempty(std::iter::once(prompt).chain(loras.iter().flat_map(|l| l.trigger_words.iter().map(String::as_str))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lora(triggers: &[&str]) -> LoRAConfig {
        LoRAConfig {
            name: "lightning".into(),
            trigger_words: triggers.iter().map(|s| s.to_string()).collect(),
            weight: 1.0,
            step_override: Some(8),
            cfg_override: Some(2.0),
        }
    }

    #[test]
    fn assemble_examples() {
        let t = PromptTemplate {
            prefix: "P".into(),
            suffix: "S".into(),
        };
        assert_eq!(
            assemble_prompt(&t, &["green eye", "blue eye", "smile"]),
            "P, green eye, blue eye, smile, S"
        );
        assert_eq!(assemble_prompt::<&str>(&PromptTemplate::default(), &[]), "");
        assert_eq!(assemble_prompt::<&str>(&t, &[]), "P, S");
    }

    #[test]
    fn trigger_examples() {
        assert_eq!(
            inject_lora_triggers("P, smile, S", &[lora(&["lightning"])]),
            "P, smile, S, lightning"
        );
        assert_eq!(inject_lora_triggers("P, smile, S", &[]), "P, smile, S");
        assert_eq!(inject_lora_triggers("", &[lora(&["a", "b"])]), "a, b");
    }

    #[test]
    fn lora_validation() {
        assert!(lora(&["x"]).validate().is_ok());
        let mut l = lora(&["x"]);
        l.weight = 2.5;
        assert!(l.validate().is_err());
        l.weight = 0.0;
        assert!(l.validate().is_err());
        assert!(lora(&[" "]).validate().is_err());
    }
}
