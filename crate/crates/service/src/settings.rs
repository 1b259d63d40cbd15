//! Service settings: prompt template, default hyperparameters, backend
//! selection, LoRA registry and diff threshold. Persisted as one JSON file;
//! updates are validated in full before anything is written or swapped in.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use exprforge_core::backends::{
    BackendError, BackendKind, DelayProfile, GenerationBackend, HttpBackend, HttpBackendConfig, StubBackend, StubMode,
    TimingBackend,
};
use exprforge_core::diff::{DEFAULT_THRESHOLD, MAX_L1};
use exprforge_core::pipeline::HyperParams;
use exprforge_core::prompting::{LoRAConfig, PromptTemplate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("invalid settings: {0}")]
    Invalid(String),
    #[error("could not persist settings to {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// `procedural`, `identity`, `global_noise` or `edge_noise(N)`.
    pub stub_mode: String,
    pub http: HttpBackendConfig,
    pub timing: DelayProfile,
    /// Seconds after which an edit result is discarded. Defaults to the
    /// HTTP timeout for the HTTP backend and to none otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_timeout: Option<f64>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            stub_mode: "procedural".into(),
            http: HttpBackendConfig::default(),
            timing: DelayProfile::Constant(100),
            edit_timeout: None,
        }
    }
}

impl BackendSettings {
    pub fn build(&self) -> Result<Arc<dyn GenerationBackend>, BackendError> {
        Ok(match self.kind {
            BackendKind::Stub => {
                let mode: StubMode = self.stub_mode.parse().map_err(BackendError::EndpointUnavailable)?;
                Arc::new(StubBackend::new(mode))
            }
            BackendKind::Timing => Arc::new(TimingBackend::new(self.timing.clone())),
            BackendKind::Http => Arc::new(HttpBackend::new(self.http.clone())?),
        })
    }

    pub fn edit_timeout(&self) -> Option<Duration> {
        self.edit_timeout
            .or((self.kind == BackendKind::Http).then_some(self.http.timeout))
            .map(Duration::from_secs_f64)
    }

    /// True when generations must run one at a time.
    pub fn single_flight(&self) -> bool {
        self.kind == BackendKind::Http && !self.http.concurrent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub prompt: PromptTemplate,
    pub negative_prompt: String,
    pub params: HyperParams,
    pub backend: BackendSettings,
    pub loras: Vec<LoRAConfig>,
    pub diff_threshold: u16,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            prompt: PromptTemplate::default(),
            negative_prompt: String::new(),
            params: HyperParams::default(),
            backend: BackendSettings::default(),
            loras: Vec::new(),
            diff_threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), SettingsError> {
        let invalid = |m: String| Err(SettingsError::Invalid(m));
        if let Err(e) = self.params.validate() {
            return invalid(e.to_string());
        }
        for (i, lora) in self.loras.iter().enumerate() {
            if let Err(e) = lora.validate() {
                return invalid(e.to_string());
            }
            if self.loras[..i].iter().any(|l| l.name == lora.name) {
                return invalid(format!("duplicate LoRA `{}`", lora.name));
            }
        }
        if self.diff_threshold == 0 || self.diff_threshold > MAX_L1 {
            return invalid(format!("diff_threshold must lie in 1..={MAX_L1}"));
        }
        if let Err(e) = self.backend.stub_mode.parse::<StubMode>() {
            return invalid(e);
        }
        if let Some(t) = self.backend.edit_timeout {
            if !(t > 0.0 && t.is_finite()) {
                return invalid("backend.edit_timeout must be positive".into());
            }
        }
        if self.backend.kind == BackendKind::Http {
            if let Err(e) = self.backend.http.validate() {
                return invalid(format!("backend.http: {e}"));
            }
        }
        Ok(())
    }

    pub fn lora(&self, name: &str) -> Option<&LoRAConfig> {
        self.loras.iter().find(|l| l.name == name)
    }
}

/// RFC 7386 merge: objects merge recursively, `null` deletes, anything else
/// replaces.
pub fn merge_patch(target: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    let Value::Object(patch) = patch else {
        *target = patch.clone();
        return;
    };
    if !target.is_object() {
        *target = Value::Object(Default::default());
    }
    let obj = target.as_object_mut().expect("made an object above");
    for (k, v) in patch {
        if v.is_null() {
            obj.remove(k);
        } else {
            merge_patch(obj.entry(k.clone()).or_insert(Value::Null), v);
        }
    }
}

#[derive(Debug)]
pub struct SettingsStore {
    path: Option<PathBuf>,
    current: RwLock<Arc<Settings>>,
    writer: Mutex<()>,
}

impl SettingsStore {
    pub fn in_memory(settings: Settings) -> Result<Self, SettingsError> {
        settings.validate()?;
        Ok(Self {
            path: None,
            current: RwLock::new(Arc::new(settings)),
            writer: Mutex::new(()),
        })
    }

    /// Loads `path` if it exists, otherwise starts from `fallback` and writes
    /// it out.
    pub fn open(path: impl Into<PathBuf>, fallback: Settings) -> Result<Self, SettingsError> {
        let path = path.into();
        let settings = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice::<Settings>(&bytes)
                .map_err(|e| SettingsError::Invalid(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => fallback,
            Err(source) => return Err(SettingsError::Io { path, source }),
        };
        settings.validate()?;
        persist(&path, &settings)?;
        Ok(Self {
            path: Some(path),
            current: RwLock::new(Arc::new(settings)),
            writer: Mutex::new(()),
        })
    }

    pub fn get(&self) -> Arc<Settings> {
        self.current.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Applies a merge patch. Either every field lands or none does.
    pub fn update(&self, patch: &serde_json::Value) -> Result<Arc<Settings>, SettingsError> {
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut doc = serde_json::to_value(&*self.get()).expect("settings serialize");
        merge_patch(&mut doc, patch);
        let next: Settings = serde_json::from_value(doc).map_err(|e| SettingsError::Invalid(e.to_string()))?;
        next.validate()?;
        if let Some(path) = &self.path {
            persist(path, &next)?;
        }
        let next = Arc::new(next);
        *self.current.write().unwrap_or_else(|p| p.into_inner()) = next.clone();
        Ok(next)
    }
}

fn persist(path: &Path, settings: &Settings) -> Result<(), SettingsError> {
    let io = |source| SettingsError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(settings).expect("settings serialize")).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_validate() {
        Settings::default().validate().unwrap();
    }

    #[test]
    fn patch_round_trip() {
        let s = SettingsStore::in_memory(Settings::default()).unwrap();
        s.update(&json!({"params": {"sampling_steps": 8}})).unwrap();
        assert_eq!(s.get().params.sampling_steps, 8);
        assert_eq!(s.get().params.cfg_scale, 7.0);
    }

    #[test]
    fn rejected_patch_changes_nothing() {
        let s = SettingsStore::in_memory(Settings::default()).unwrap();
        let before = s.get();
        let err = s.update(&json!({"params": {"sampling_steps": 8, "denoising_strength": 1.5}}));
        assert!(matches!(err, Err(SettingsError::Invalid(_))));
        assert_eq!(*s.get(), *before);
        assert!(s.update(&json!({"bogus": 1})).is_err());
        assert!(s.update(&json!({"diff_threshold": 0})).is_err());
        assert!(s.update(&json!({"backend": {"stub_mode": "sparkles"}})).is_err());
    }

    #[test]
    fn file_store_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("settings.json");
        let s = SettingsStore::open(&path, Settings::default()).unwrap();
        s.update(&json!({"prompt": {"prefix": "1girl"}})).unwrap();
        let again = SettingsStore::open(&path, Settings::default()).unwrap();
        assert_eq!(again.get().prompt.prefix, "1girl");
        assert!(!path.with_extension("json.tmp").exists());
    }

    #[test]
    fn merge_patch_semantics() {
        let mut v = json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge_patch(&mut v, &json!({"a": {"b": null, "e": 4}, "d": [1]}));
        assert_eq!(v, json!({"a": {"c": 2, "e": 4}, "d": [1]}));
    }
}
