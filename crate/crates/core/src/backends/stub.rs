use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendDescriptor, BackendError, BackendKind, GenerationBackend, GenerationInput};
use crate::raster::{RasterImage, SelectionMask};

/// Behaviour of [`StubBackend`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// Seeded hue rotation plus 3×3 box smoothing, inside the mask only.
    Procedural,
    Identity,
    /// Perturbs every pixel, selected or not. Exercises the compositor.
    GlobalNoise,
    /// Perturbs only selected pixels within `width` px (Chebyshev) of an
    /// unselected pixel, mimicking seam noise around a selection edge.
    EdgeNoise {
        width: u32,
    },
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    mode: StubMode,
}

impl StubBackend {
    pub fn new(mode: StubMode) -> Self {
        Self { mode }
    }

    pub fn mode(&self) -> StubMode {
        self.mode
    }
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::new(StubMode::Procedural)
    }
}

/// Selected pixels within `width` px (Chebyshev) of an in-bounds unselected
/// pixel. Out-of-bounds neighbours do not count as unselected.
pub fn edge_band(mask: &SelectionMask, width: u32) -> SelectionMask {
    let w = width as i64;
    SelectionMask::from_fn(mask.width(), mask.height(), |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        for dy in -w..=w {
            for dx in -w..=w {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let in_bounds = nx >= 0 && ny >= 0 && nx < mask.width() as i64 && ny < mask.height() as i64;
                if in_bounds && !mask.get(nx as u32, ny as u32) {
                    return true;
                }
            }
        }
        false
    })
    .expect("dims taken from mask")
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    let third = (1.0 - c) / 3.0;
    let r = (1.0f64 / 3.0).sqrt() * s;
    [
        [c + third, third - r, third + r],
        [third + r, c + third, third - r],
        [third - r, third + r, c + third],
    ]
}

fn procedural(input: &GenerationInput<'_>, rng: &mut ChaCha8Rng) -> RasterImage {
    let img = input.image;
    let (w, h) = img.dims();
    let m = hue_matrix(rng.random_range(30.0..330.0));
    let rotated: Vec<[f64; 3]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let p = img.pixel(x, y);
            let rgb = [p[0] as f64, p[1] as f64, p[2] as f64];
            std::array::from_fn(|i| (0..3).map(|j| m[i][j] * rgb[j]).sum::<f64>().clamp(0.0, 255.0))
        })
        .collect();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if !input.mask.get(x, y) {
                continue;
            }
            let mut acc = [0f64; 3];
            let mut n = 0f64;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let v = rotated[(ny * w + nx) as usize];
                    (0..3).for_each(|c| acc[c] += v[c]);
                    n += 1.0;
                }
            }
            let a = img.pixel(x, y)[3];
            out.set_pixel(
                x,
                y,
                [
                    (acc[0] / n).round() as u8,
                    (acc[1] / n).round() as u8,
                    (acc[2] / n).round() as u8,
                    a,
                ],
            );
        }
    }
    out
}

fn perturb(px: [u8; 4], rng: &mut ChaCha8Rng, max: i16) -> [u8; 4] {
    let mut out = px;
    for c in out.iter_mut().take(3) {
        let delta = rng.random_range(1..=max) * if rng.random_bool(0.5) { 1 } else { -1 };
        let mut v = *c as i16 + delta;
        if !(0..=255).contains(&v) {
            v = *c as i16 - delta;
        }
        *c = v.clamp(0, 255) as u8;
    }
    out
}

impl GenerationBackend for StubBackend {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<RasterImage, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
        let img = input.image;
        Ok(match self.mode {
            StubMode::Identity => img.clone(),
            StubMode::Procedural => procedural(input, &mut rng),
            StubMode::GlobalNoise => {
                let mut out = img.clone();
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        out.set_pixel(x, y, perturb(img.pixel(x, y), &mut rng, 40));
                    }
                }
                out
            }
            StubMode::EdgeNoise { width } => {
                let band = edge_band(input.mask, width);
                let mut out = img.clone();
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        if band.get(x, y) {
                            out.set_pixel(x, y, perturb(img.pixel(x, y), &mut rng, 20));
                        }
                    }
                }
                out
            }
        })
    }

    fn descriptor(&self) -> BackendDescriptor {
        let mode = match self.mode {
            StubMode::Procedural => "procedural".to_string(),
            StubMode::Identity => "identity".to_string(),
            StubMode::GlobalNoise => "global_noise".to_string(),
            StubMode::EdgeNoise { width } => format!("edge_noise({width})"),
        };
        BackendDescriptor {
            id: format!("stub:{mode}"),
            kind: BackendKind::Stub,
        }
    }
}

impl std::str::FromStr for StubMode {
    type Err = String;

    /// `procedural`, `identity`, `global_noise`, or `edge_noise(N)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "procedural" => Ok(Self::Procedural),
            "identity" => Ok(Self::Identity),
            "global_noise" => Ok(Self::GlobalNoise),
            _ => s
                .strip_prefix("edge_noise(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.trim().parse().ok())
                .map(|width| Self::EdgeNoise { width })
                .ok_or_else(|| format!("unknown stub mode `{s}`")),
        }
    }
}
