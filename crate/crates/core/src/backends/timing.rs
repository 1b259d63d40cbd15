use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, BackendKind, GenerationBackend, GenerationInput};
use crate::raster::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayProfile {
    /// Same delay, in milliseconds, on every call.
    Constant(u64),
    /// Delays in milliseconds, repeated cyclically.
    Cycle(Vec<u64>),
}

impl DelayProfile {
    /// Delay scheduled for the `call`-th invocation (0-based).
    pub fn delay_ms(&self, call: usize) -> u64 {
        match self {
            Self::Constant(ms) => *ms,
            Self::Cycle(v) if v.is_empty() => 0,
            Self::Cycle(v) => v[call % v.len()],
        }
    }
}

/// Sleeps the scheduled delay, then echoes the input.
#[derive(Debug)]
pub struct TimingBackend {
    profile: DelayProfile,
    calls: AtomicUsize,
}

impl TimingBackend {
    pub fn new(profile: DelayProfile) -> Self {
        Self {
            profile,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn profile(&self) -> &DelayProfile {
        &self.profile
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GenerationBackend for TimingBackend {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let ms = self.profile.delay_ms(call);
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
        Ok(input.image.clone())
    }

    fn descriptor(&self) -> BackendDescriptor {
        let id = match &self.profile {
            DelayProfile::Constant(ms) => format!("timing:{ms}ms"),
            DelayProfile::Cycle(v) => format!(
                "timing:[{}]ms",
                v.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            ),
        };
        BackendDescriptor {
            id,
            kind: BackendKind::Timing,
        }
    }
}
