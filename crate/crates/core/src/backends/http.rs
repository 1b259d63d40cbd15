//! JSON-over-HTTP adapter for an img2img + ControlNet inference server.
//!
//! Request (`POST {base_url}/edit`):
//!
//! ```json
//! { "init_image": "<base64 png>", "mask": "<base64 png>", "control_image": "<base64 png>",
//!   "prompt": "...", "negative_prompt": "...", "denoising_strength": 1.0, "steps": 30,
//!   "cfg_scale": 7.0, "seed": 42, "controlnet_fraction": 0.5, "dots": [[x, y], ...],
//!   "model": "...", "controlnet_model": "..." }
//! ```
//!
//! Response: `{ "images": ["<base64 png>", ...] }`; the first image is used.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, BackendKind, GenerationBackend, GenerationInput};
use crate::raster::RasterImage;

pub const ENV_BACKEND_URL: &str = "EXPRFORGE_BACKEND_URL";
pub const ENV_BACKEND_TIMEOUT: &str = "EXPRFORGE_BACKEND_TIMEOUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub controlnet_model: String,
    #[serde(default)]
    pub extra_headers: BTreeMap<String, String>,
    /// Allow overlapping requests. Off by default: GPU servers are usually
    /// single-tenant, so calls are serialized.
    #[serde(default)]
    pub concurrent: bool,
}

fn default_timeout() -> f64 {
    120.0
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            timeout: default_timeout(),
            model_name: "WAI-illustrious-SDXL".into(),
            controlnet_model: "controlnet-canny-sdxl-mid".into(),
            extra_headers: BTreeMap::new(),
            concurrent: false,
        }
    }
}

impl HttpBackendConfig {
    /// Applies `EXPRFORGE_BACKEND_URL` / `EXPRFORGE_BACKEND_TIMEOUT` on top of `self`.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if let Some(t) = std::env::var(ENV_BACKEND_TIMEOUT).ok().and_then(|t| t.parse().ok()) {
            self.timeout = t;
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base_url.trim().is_empty() {
            return Err("base_url must be non-empty".into());
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EditBody<'a> {
    init_image: String,
    mask: String,
    control_image: String,
    prompt: &'a str,
    negative_prompt: &'a str,
    denoising_strength: f64,
    steps: u32,
    cfg_scale: f64,
    seed: u64,
    controlnet_fraction: f64,
    dots: Vec<[u32; 2]>,
    model: &'a str,
    controlnet_model: &'a str,
}

#[derive(Deserialize)]
struct EditResponse {
    images: Vec<String>,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    gate: Mutex<()>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::EndpointUnavailable)?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            gate: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/edit", self.config.base_url.trim_end_matches('/'))
    }

    fn call(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
        let png = |r: Result<Vec<u8>, crate::raster::RasterError>| {
            r.map(|b| STANDARD.encode(b))
                .map_err(|e| BackendError::MalformedResponse(format!("encoding request: {e}")))
        };
        let body = EditBody {
            init_image: png(input.image.encode_png())?,
            mask: png(input.mask.encode_png())?,
            control_image: png(input.edge_map.encode_png())?,
            prompt: input.prompt,
            negative_prompt: input.negative_prompt,
            denoising_strength: input.params.denoising_strength,
            steps: input.params.sampling_steps,
            cfg_scale: input.params.cfg_scale,
            seed: input.seed,
            controlnet_fraction: input.params.controlnet_steps,
            dots: input.context_dots.iter().map(|&(x, y)| [x, y]).collect(),
            model: &self.config.model_name,
            controlnet_model: &self.config.controlnet_model,
        };
        let mut req = self.agent.post(&self.endpoint());
        for (k, v) in &self.config.extra_headers {
            req = req.header(k, v);
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::EndpointUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Remote { status, detail });
        }
        let parsed: EditResponse = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) => BackendError::EndpointUnavailable(e.to_string()),
            other => BackendError::MalformedResponse(other.to_string()),
        })?;
        let first = parsed
            .images
            .first()
            .ok_or_else(|| BackendError::MalformedResponse("response contains no images".into()))?;
        let b64 = first.split_once("base64,").map_or(first.as_str(), |(_, data)| data);
        let bytes = STANDARD
            .decode(b64.trim())
            .map_err(|e| BackendError::MalformedResponse(format!("base64: {e}")))?;
        let out = RasterImage::decode_png(&bytes).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        if out.dims() != input.image.dims() {
            return Err(BackendError::DimensionMismatchFromBackend {
                expected: input.image.dims(),
                actual: out.dims(),
            });
        }
        Ok(out)
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
        if self.config.concurrent {
            return self.call(input);
        }
        let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        self.call(input)
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            id: format!("http:{}", self.config.base_url),
            kind: BackendKind::Http,
        }
    }
}
