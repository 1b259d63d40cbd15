//! The generation-backend contract and its implementations: a deterministic
//! stub, an HTTP adapter for an img2img + ControlNet server, and a timing
//! oracle for the latency harness.

mod http;
mod stub;
mod timing;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::HyperParams;
use crate::raster::{GrayMap, RasterImage, SelectionMask};

pub use http::{HttpBackend, HttpBackendConfig, ENV_BACKEND_TIMEOUT, ENV_BACKEND_URL};
pub use stub::{edge_band, StubBackend, StubMode};
pub use timing::{DelayProfile, TimingBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Http,
    Timing,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" => Ok(Self::Stub),
            "http" => Ok(Self::Http),
            "timing" => Ok(Self::Timing),
            other => Err(format!(
                "unknown backend kind `{other}` (expected stub, http or timing)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend returned {actual:?}, expected {expected:?}")]
    DimensionMismatchFromBackend { expected: (u32, u32), actual: (u32, u32) },
    #[error("backend failed with status {status}: {detail}")]
    Remote { status: u16, detail: String },
}

/// One generation call. Everything is cropped to the selection's padded
/// bounding box; `crop_origin` locates the crop in the full image.
#[derive(Debug, Clone, Copy)]
pub struct GenerationInput<'a> {
    pub image: &'a RasterImage,
    pub mask: &'a SelectionMask,
    pub edge_map: &'a GrayMap,
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    /// Steps and CFG already reflect any LoRA overrides.
    pub params: &'a HyperParams,
    /// Concrete seed; random seeds are resolved before the call.
    pub seed: u64,
    /// Forwarded verbatim, in full-image coordinates.
    pub context_dots: &'a [(u32, u32)],
    pub crop_origin: (u32, u32),
}

/// A diffusion engine. Implementations must return a raster with the same
/// dimensions as `input.image` or fail; they never rescale.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError>;

    fn descriptor(&self) -> BackendDescriptor;
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for std::sync::Arc<T> {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
        (**self).generate(input)
    }

    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }
}
