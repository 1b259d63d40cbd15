//! One region-locked edit: validate, crop to the selection, derive the Canny
//! hint, call a backend, and composite the result as a layer whose alpha is
//! exactly the selection.
//!
//! Whatever the backend returns, pixels outside the selection are copied
//! from the input bit for bit: the layer carries alpha 0 there and
//! [`composite`] selects rather than blends.

pub mod canny;
pub mod region;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, GenerationBackend, GenerationInput};
use crate::par;
use crate::prompting::{inject_lora_triggers, LoRAConfig};
use crate::raster::{RasterImage, SelectionMask};

pub use canny::extract_canny;
pub use region::{apply_region_transform, crop_to_selection, BoundingBox, Crop, RegionTransform};

pub const DEFAULT_CROP_PADDING: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("mask is {mask:?} but image is {image:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("selection is empty")]
    EmptySelection,
    #[error("parameter `{0}` out of range")]
    ParamOutOfRange(String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("backend answered after {elapsed:?}, limit was {limit:?}")]
    Timeout { elapsed: Duration, limit: Duration },
}

/// Generation seed: a fixed value or `"random"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seed {
    Fixed(u64),
    #[default]
    Random,
}

impl Seed {
    pub fn resolve(self) -> u64 {
        match self {
            Seed::Fixed(s) => s,
            Seed::Random => rand::random(),
        }
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seed::Fixed(s) => write!(f, "{s}"),
            Seed::Random => f.write_str("random"),
        }
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Seed::Fixed(v) => s.serialize_u64(*v),
            Seed::Random => s.serialize_str("random"),
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Seed::Fixed(v)),
            Raw::Str(s) if s == "random" => Ok(Seed::Random),
            Raw::Str(s) => s
                .parse()
                .map(Seed::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("seed must be an integer or \"random\", got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Fraction of the trajectory re-noised, in (0, 1].
    pub denoising_strength: f64,
    /// Fraction of sampling steps under edge control, in [0, 1].
    pub controlnet_steps: f64,
    pub sampling_steps: u32,
    pub cfg_scale: f64,
    pub seed: Seed,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            denoising_strength: 1.0,
            controlnet_steps: 0.5,
            sampling_steps: 30,
            cfg_scale: 7.0,
            seed: Seed::Random,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), EditError> {
        let bad = |name: &str| Err(EditError::ParamOutOfRange(name.to_string()));
        if !(self.denoising_strength > 0.0 && self.denoising_strength <= 1.0) {
            return bad("denoising_strength");
        }
        if !(0.0..=1.0).contains(&self.controlnet_steps) {
            return bad("controlnet_steps");
        }
        if self.sampling_steps < 1 {
            return bad("sampling_steps");
        }
        if !(self.cfg_scale > 0.0 && self.cfg_scale.is_finite()) {
            return bad("cfg_scale");
        }
        Ok(())
    }

    /// Steps and CFG after LoRA overrides; the last LoRA that sets a value wins.
    pub fn with_lora_overrides(&self, loras: &[LoRAConfig]) -> HyperParams {
        let mut p = self.clone();
        for lora in loras {
            if let Some(steps) = lora.step_override {
                p.sampling_steps = steps;
            }
            if let Some(cfg) = lora.cfg_override {
                p.cfg_scale = cfg;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub image: RasterImage,
    pub mask: SelectionMask,
    pub prompt: String,
    pub negative_prompt: String,
    pub params: HyperParams,
    pub loras: Vec<LoRAConfig>,
    pub context_dots: Vec<(u32, u32)>,
}

impl EditRequest {
    pub fn new(image: RasterImage, mask: SelectionMask, prompt: impl Into<String>) -> Self {
        Self {
            image,
            mask,
            prompt: prompt.into(),
            negative_prompt: String::new(),
            params: HyperParams::default(),
            loras: Vec::new(),
            context_dots: Vec::new(),
        }
    }

    /// SHA-256 over every field that influences generation.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.image.width().to_le_bytes());
        h.update(self.image.height().to_le_bytes());
        h.update(self.image.as_bytes());
        h.update(self.mask.bits().iter().map(|b| *b as u8).collect::<Vec<_>>());
        for s in [&self.prompt, &self.negative_prompt] {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        h.update(serde_json::to_vec(&self.params).expect("params serialize"));
        h.update(serde_json::to_vec(&self.loras).expect("loras serialize"));
        for (x, y) in &self.context_dots {
            h.update(x.to_le_bytes());
            h.update(y.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditMetadata {
    pub seed: u64,
    pub backend_id: String,
    pub latency_ms: f64,
    pub request_hash: String,
    /// Prompt actually sent, LoRA triggers included.
    pub prompt: String,
    pub crop: BoundingBox,
}

/// Full-size layer: alpha is 255 exactly on selected pixels, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EditLayer {
    pub pixels: RasterImage,
    pub origin: (u32, u32),
    pub metadata: EditMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub layer: EditLayer,
    pub composited_preview: RasterImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOptions {
    pub crop_padding: u32,
    pub canny_low: f32,
    pub canny_high: f32,
    /// Results arriving later than this are discarded.
    pub timeout: Option<Duration>,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self {
            crop_padding: DEFAULT_CROP_PADDING,
            canny_low: canny::DEFAULT_LOW,
            canny_high: canny::DEFAULT_HIGH,
            timeout: None,
        }
    }
}

pub fn validate_request(req: &EditRequest) -> Result<(), EditError> {
    if req.image.dims() != req.mask.dims() {
        return Err(EditError::DimensionMismatch {
            image: req.image.dims(),
            mask: req.mask.dims(),
        });
    }
    if req.mask.is_empty() {
        return Err(EditError::EmptySelection);
    }
    req.params.validate()?;
    for lora in &req.loras {
        lora.validate()
            .map_err(|_| EditError::ParamOutOfRange(format!("loras.{}", lora.name)))?;
    }
    let (w, h) = req.image.dims();
    if req.context_dots.iter().any(|&(x, y)| x >= w || y >= h) {
        return Err(EditError::ParamOutOfRange("context_dots".into()));
    }
    Ok(())
}

/// Takes the layer pixel wherever its alpha is 255 and the base pixel
/// everywhere else. No blending.
pub fn composite(base: &RasterImage, layer: &EditLayer) -> Result<RasterImage, EditError> {
    let top = &layer.pixels;
    if base.dims() != top.dims() || layer.origin != (0, 0) {
        return Err(EditError::DimensionMismatch {
            image: base.dims(),
            mask: top.dims(),
        });
    }
    let w = base.width() as usize;
    let src = top.as_bytes();
    let mut out = base.clone();
    par::for_each_row(out.as_bytes_mut(), w * 4, |y, row| {
        let off = y * w * 4;
        for x in 0..w {
            let i = x * 4;
            if src[off + i + 3] == 255 {
                row[i..i + 4].copy_from_slice(&src[off + i..off + i + 4]);
            }
        }
    });
    Ok(out)
}

/// Places the generated crop into a full-size layer, keeping only selected
/// pixels and forcing their alpha to 255.
fn build_layer(req: &EditRequest, generated: &RasterImage, crop: &BoundingBox) -> RasterImage {
    let (w, h) = req.image.dims();
    let mut layer = RasterImage::filled(w, h, [0, 0, 0, 0]).expect("request dims validated");
    let gen_w = crop.width as usize;
    let gen = generated.as_bytes();
    let mask = &req.mask;
    par::for_each_row(layer.as_bytes_mut(), w as usize * 4, |y, row| {
        let y = y as u32;
        if y < crop.y || y >= crop.y + crop.height {
            return;
        }
        for x in crop.x..crop.x + crop.width {
            if !mask.get(x, y) {
                continue;
            }
            let g = ((y - crop.y) as usize * gen_w + (x - crop.x) as usize) * 4;
            let o = x as usize * 4;
            row[o..o + 3].copy_from_slice(&gen[g..g + 3]);
            row[o + 3] = 255;
        }
    });
    layer
}

pub fn run_edit(req: &EditRequest, backend: &dyn GenerationBackend) -> Result<EditResult, EditError> {
    run_edit_with(req, backend, &EditOptions::default())
}

pub fn run_edit_with(
    req: &EditRequest,
    backend: &dyn GenerationBackend,
    options: &EditOptions,
) -> Result<EditResult, EditError> {
    let started = Instant::now();
    validate_request(req)?;
    let params = req.params.with_lora_overrides(&req.loras);
    let prompt = inject_lora_triggers(&req.prompt, &req.loras);
    let seed = params.seed.resolve();
    let crop = crop_to_selection(&req.image, &req.mask, options.crop_padding)?;
    let edges = extract_canny(&crop.image, options.canny_low, options.canny_high);

    let generated = backend.generate(&GenerationInput {
        image: &crop.image,
        mask: &crop.mask,
        edge_map: &edges,
        prompt: &prompt,
        negative_prompt: &req.negative_prompt,
        params: &params,
        seed,
        context_dots: &req.context_dots,
        crop_origin: (crop.bounds.x, crop.bounds.y),
    })?;
    if let Some(limit) = options.timeout {
        let elapsed = started.elapsed();
        if elapsed > limit {
            return Err(EditError::Timeout { elapsed, limit });
        }
    }
    if generated.dims() != crop.image.dims() {
        return Err(BackendError::DimensionMismatchFromBackend {
            expected: crop.image.dims(),
            actual: generated.dims(),
        }
        .into());
    }

    let pixels = build_layer(req, &generated, &crop.bounds);
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    let layer = EditLayer {
        pixels,
        origin: (0, 0),
        metadata: EditMetadata {
            seed,
            backend_id: backend.descriptor().id,
            latency_ms,
            request_hash: req.hash(),
            prompt,
            crop: crop.bounds,
        },
    };
    let composited_preview = composite(&req.image, &layer)?;
    Ok(EditResult {
        layer,
        composited_preview,
    })
}

/// One step of an iterative session, applied to whatever the previous step
/// produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EditDelta {
    pub mask: SelectionMask,
    pub prompt: String,
    pub negative_prompt: String,
    pub params: HyperParams,
    pub loras: Vec<LoRAConfig>,
    pub context_dots: Vec<(u32, u32)>,
    /// Optional hint transform applied to the selection before generating.
    pub hint: Option<RegionTransform>,
}

impl EditDelta {
    pub fn new(mask: SelectionMask, prompt: impl Into<String>) -> Self {
        Self {
            mask,
            prompt: prompt.into(),
            negative_prompt: String::new(),
            params: HyperParams::default(),
            loras: Vec::new(),
            context_dots: Vec::new(),
            hint: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step {step}: {source}")]
pub struct IterateError {
    pub step: usize,
    #[source]
    pub source: EditError,
}

/// Runs `deltas` in order. Returns the input followed by the image after
/// each step, so `deltas.len() + 1` snapshots.
pub fn iterate_edits(
    image: &RasterImage,
    deltas: &[EditDelta],
    backend: &dyn GenerationBackend,
    options: &EditOptions,
) -> Result<Vec<RasterImage>, IterateError> {
    let mut snapshots = Vec::with_capacity(deltas.len() + 1);
    snapshots.push(image.clone());
    for (step, delta) in deltas.iter().enumerate() {
        let wrap = |source| IterateError { step, source };
        let current = snapshots.last().expect("seeded with input");
        let input = match &delta.hint {
            Some(t) => apply_region_transform(current, &delta.mask, t).map_err(wrap)?,
            None => current.clone(),
        };
        let req = EditRequest {
            image: input,
            mask: delta.mask.clone(),
            prompt: delta.prompt.clone(),
            negative_prompt: delta.negative_prompt.clone(),
            params: delta.params.clone(),
            loras: delta.loras.clone(),
            context_dots: delta.context_dots.clone(),
        };
        let result = run_edit_with(&req, backend, options).map_err(wrap)?;
        snapshots.push(result.composited_preview);
    }
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{StubBackend, StubMode};

    fn portrait() -> RasterImage {
        RasterImage::from_fn(48, 40, |x, y| [(x * 5) as u8, (y * 6) as u8, ((x + y) * 2) as u8, 255]).unwrap()
    }

    fn blob() -> SelectionMask {
        SelectionMask::from_fn(48, 40, |x, y| {
            let (dx, dy) = (x as i32 - 24, y as i32 - 20);
            dx * dx + dy * dy <= 100
        })
        .unwrap()
    }

    #[test]
    fn validation_examples() {
        let img = RasterImage::filled(64, 64, [0, 0, 0, 255]).unwrap();
        let ok = EditRequest::new(img.clone(), SelectionMask::full(64, 64).unwrap(), "smile");
        assert_eq!(validate_request(&ok), Ok(()));

        let wrong = EditRequest::new(img.clone(), SelectionMask::full(32, 64).unwrap(), "smile");
        assert!(matches!(
            validate_request(&wrong),
            Err(EditError::DimensionMismatch { .. })
        ));

        let empty = EditRequest::new(img.clone(), SelectionMask::empty(64, 64).unwrap(), "smile");
        assert_eq!(validate_request(&empty), Err(EditError::EmptySelection));

        let mut strong = ok.clone();
        strong.params.denoising_strength = 1.5;
        assert_eq!(
            validate_request(&strong),
            Err(EditError::ParamOutOfRange("denoising_strength".into()))
        );

        let mut cn = ok.clone();
        cn.params.controlnet_steps = -0.1;
        assert_eq!(
            validate_request(&cn),
            Err(EditError::ParamOutOfRange("controlnet_steps".into()))
        );

        let mut steps = ok.clone();
        steps.params.sampling_steps = 0;
        assert!(validate_request(&steps).is_err());

        let mut dots = ok;
        dots.context_dots.push((64, 0));
        assert_eq!(
            validate_request(&dots),
            Err(EditError::ParamOutOfRange("context_dots".into()))
        );
    }

    #[test]
    fn seed_serde() {
        assert_eq!(serde_json::to_string(&Seed::Random).unwrap(), "\"random\"");
        assert_eq!(serde_json::from_str::<Seed>("42").unwrap(), Seed::Fixed(42));
        assert_eq!(serde_json::from_str::<Seed>("\"random\"").unwrap(), Seed::Random);
        assert!(serde_json::from_str::<Seed>("\"often\"").is_err());
    }

    #[test]
    fn lora_overrides_apply() {
        let lora = LoRAConfig {
            name: "lightning".into(),
            trigger_words: vec!["lightning".into()],
            weight: 1.0,
            step_override: Some(8),
            cfg_override: Some(2.0),
        };
        let p = HyperParams::default().with_lora_overrides(&[lora]);
        assert_eq!((p.sampling_steps, p.cfg_scale), (8, 2.0));
    }

    #[test]
    fn identity_backend_round_trips() {
        let mut req = EditRequest::new(portrait(), blob(), "");
        req.params.seed = Seed::Fixed(3);
        let res = run_edit(&req, &StubBackend::new(StubMode::Identity)).unwrap();
        assert_eq!(res.composited_preview, req.image);
        for y in 0..40 {
            for x in 0..48 {
                let l = res.layer.pixels.pixel(x, y);
                if req.mask.get(x, y) {
                    assert_eq!(l, req.image.pixel(x, y));
                } else {
                    assert_eq!(l[3], 0);
                }
            }
        }
        assert_eq!(res.layer.metadata.seed, 3);
        assert_eq!(res.layer.metadata.backend_id, "stub:identity");
        assert_eq!(res.layer.metadata.request_hash.len(), 64);
    }

    #[test]
    fn composite_examples() {
        let base = portrait();
        let mk_layer = |alpha: &dyn Fn(u32) -> bool| EditLayer {
            pixels: RasterImage::from_fn(48, 40, |x, _| if alpha(x) { [1, 2, 3, 255] } else { [9, 9, 9, 0] }).unwrap(),
            origin: (0, 0),
            metadata: EditMetadata {
                seed: 0,
                backend_id: String::new(),
                latency_ms: 0.0,
                request_hash: String::new(),
                prompt: String::new(),
                crop: BoundingBox {
                    x: 0,
                    y: 0,
                    width: 1,
                    height: 1,
                },
            },
        };
        assert_eq!(composite(&base, &mk_layer(&|_| false)).unwrap(), base);
        let full = mk_layer(&|_| true);
        assert_eq!(composite(&base, &full).unwrap(), full.pixels);
        let half = composite(&base, &mk_layer(&|x| x < 24)).unwrap();
        for y in 0..40 {
            for x in 0..48 {
                let want = if x < 24 { [1, 2, 3, 255] } else { base.pixel(x, y) };
                assert_eq!(half.pixel(x, y), want);
            }
        }
        let small = RasterImage::filled(4, 4, [0; 4]).unwrap();
        assert!(composite(&small, &full).is_err());
    }

    struct Shrinking;
    impl GenerationBackend for Shrinking {
        fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
            Ok(RasterImage::filled(input.image.width() - 1, input.image.height(), [0; 4]).unwrap())
        }
        fn descriptor(&self) -> crate::backends::BackendDescriptor {
            crate::backends::BackendDescriptor {
                id: "shrinking".into(),
                kind: crate::backends::BackendKind::Stub,
            }
        }
    }

    #[test]
    fn resizing_backend_is_rejected() {
        let req = EditRequest::new(portrait(), blob(), "smile");
        assert!(matches!(
            run_edit(&req, &Shrinking),
            Err(EditError::Backend(BackendError::DimensionMismatchFromBackend { .. }))
        ));
    }

    #[test]
    fn late_results_time_out() {
        let backend = crate::backends::TimingBackend::new(crate::backends::DelayProfile::Constant(30));
        let req = EditRequest::new(portrait(), blob(), "smile");
        let opts = EditOptions {
            timeout: Some(Duration::from_millis(5)),
            ..Default::default()
        };
        assert!(matches!(
            run_edit_with(&req, &backend, &opts),
            Err(EditError::Timeout { .. })
        ));
    }

    #[test]
    fn iterate_empty_returns_input_only() {
        let snaps = iterate_edits(&portrait(), &[], &StubBackend::default(), &EditOptions::default()).unwrap();
        assert_eq!(snaps, vec![portrait()]);
    }

    #[test]
    fn iterate_reports_failing_step() {
        let ok = EditDelta::new(blob(), "smile");
        let bad = EditDelta::new(SelectionMask::empty(48, 40).unwrap(), "smile");
        let err = iterate_edits(
            &portrait(),
            &[ok, bad],
            &StubBackend::default(),
            &EditOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.step, 1);
        assert_eq!(err.source, EditError::EmptySelection);
    }
}
