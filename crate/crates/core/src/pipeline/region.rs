//! Selection geometry: bounding boxes, crops and the scale/move hint
//! transform applied to selected content.

use serde::{Deserialize, Serialize};

use super::EditError;
use crate::par;
use crate::raster::{RasterImage, Rgba, SelectionMask, WHITE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BoundingBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

fn check_dims(image: &RasterImage, mask: &SelectionMask) -> Result<(), EditError> {
    if image.dims() != mask.dims() {
        return Err(EditError::DimensionMismatch {
            image: image.dims(),
            mask: mask.dims(),
        });
    }
    Ok(())
}

/// Tight box around the selected bits, or `None` for an empty mask.
pub fn selection_bounds(mask: &SelectionMask) -> Option<BoundingBox> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    any.then(|| BoundingBox {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: RasterImage,
    pub mask: SelectionMask,
    pub bounds: BoundingBox,
}

/// Crops image and mask to the selection's bounding box grown by `padding`
/// on every side and clamped to the image.
pub fn crop_to_selection(image: &RasterImage, mask: &SelectionMask, padding: u32) -> Result<Crop, EditError> {
    check_dims(image, mask)?;
    let tight = selection_bounds(mask).ok_or(EditError::EmptySelection)?;
    let x0 = tight.x.saturating_sub(padding);
    let y0 = tight.y.saturating_sub(padding);
    let x1 = (tight.x + tight.width).saturating_add(padding).min(image.width());
    let y1 = (tight.y + tight.height).saturating_add(padding).min(image.height());
    let bounds = BoundingBox {
        x: x0,
        y: y0,
        width: x1 - x0,
        height: y1 - y0,
    };
    Ok(Crop {
        image: image.crop(bounds.x, bounds.y, bounds.width, bounds.height),
        mask: mask.crop(bounds.x, bounds.y, bounds.width, bounds.height),
        bounds,
    })
}

/// Coarse geometric hint applied to the selected content before generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTransform {
    pub scale: f64,
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default = "white")]
    pub fill: Rgba,
}

fn white() -> Rgba {
    WHITE
}

impl Default for RegionTransform {
    fn default() -> Self {
        Self {
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
            fill: WHITE,
        }
    }
}

/// Centroid of the selected pixel centers, in pixel-edge coordinates.
pub fn selection_centroid(mask: &SelectionMask) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0f64, 0f64, 0u64);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Scales the selected content about the selection centroid, then moves it
/// by `(dx, dy)`, with nearest-neighbor sampling. Selected pixels that no
/// longer receive selected content take `fill`; content that lands outside
/// the selection is clipped. Unselected pixels are copied unchanged.
pub fn apply_region_transform(
    image: &RasterImage,
    mask: &SelectionMask,
    transform: &RegionTransform,
) -> Result<RasterImage, EditError> {
    check_dims(image, mask)?;
    if !(transform.scale > 0.0 && transform.scale.is_finite()) {
        return Err(EditError::ParamOutOfRange("scale".into()));
    }
    if !(transform.dx.is_finite() && transform.dy.is_finite()) {
        return Err(EditError::ParamOutOfRange("translation".into()));
    }
    let (cx, cy) = selection_centroid(mask).ok_or(EditError::EmptySelection)?;
    let w = image.width() as usize;
    let src = image.as_bytes();
    let mut out = image.clone();
    par::for_each_row(out.as_bytes_mut(), w * 4, |y, row| {
        for x in 0..w {
            if !mask.get(x as u32, y as u32) {
                continue;
            }
            let sx = ((x as f64 + 0.5 - transform.dx - cx) / transform.scale + cx).floor() as i64;
            let sy = ((y as f64 + 0.5 - transform.dy - cy) / transform.scale + cy).floor() as i64;
            let px = if mask.get_signed(sx, sy) {
                let i = (sy as usize * w + sx as usize) * 4;
                [src[i], src[i + 1], src[i + 2], src[i + 3]]
            } else {
                transform.fill
            };
            row[x * 4..x * 4 + 4].copy_from_slice(&px);
        }
    });
    Ok(out)
}
