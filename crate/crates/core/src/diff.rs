//! Noise forensics: per-pixel RGB L1 distance, thresholded grayscale
//! rendering, inside/outside-selection statistics and multi-step
//! degradation curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::raster::{GrayMap, RasterImage, SelectionMask};

/// Default saturation threshold for [`render_grayscale`].
pub const DEFAULT_THRESHOLD: u16 = 24;
/// Largest possible RGB L1 distance, 3 × 255.
pub const MAX_L1: u16 = 765;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("dimension mismatch: {expected:?} vs {actual:?}")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("snapshot {step}: dimension mismatch {expected:?} vs {actual:?}")]
    StepDimensionMismatch {
        step: usize,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("threshold must be at least 1")]
    InvalidThreshold,
}

fn same_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<(), DiffError> {
    if expected == actual {
        Ok(())
    } else {
        Err(DiffError::DimensionMismatch { expected, actual })
    }
}

/// Per-pixel `|ΔR| + |ΔG| + |ΔB|`; alpha is ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffMap {
    width: u32,
    height: u32,
    values: Vec<u16>,
}

impl DiffMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }
}

pub fn l1_map(a: &RasterImage, b: &RasterImage) -> Result<DiffMap, DiffError> {
    same_dims(a.dims(), b.dims())?;
    let (width, height) = a.dims();
    let w = width as usize;
    let (pa, pb) = (a.as_bytes(), b.as_bytes());
    let mut values = vec![0u16; a.pixel_count()];
    par::for_each_row(&mut values, w, |y, row| {
        let base = y * w * 4;
        for (x, v) in row.iter_mut().enumerate() {
            let i = base + x * 4;
            *v = (0..3).map(|c| pa[i + c].abs_diff(pb[i + c]) as u16).sum();
        }
    });
    Ok(DiffMap { width, height, values })
}

/// Gray level for one L1 value: `round(255 × min(v, T) / T)`, halves rounded
/// away from zero.
#[inline]
pub fn gray_level(v: u16, threshold: u16) -> u8 {
    let t = threshold as u32;
    let v = (v as u32).min(t);
    ((2 * 255 * v + t) / (2 * t)) as u8
}

/// Maps 0 to black, rises linearly, and saturates to white at `threshold`.
pub fn render_grayscale(map: &DiffMap, threshold: u16) -> Result<GrayMap, DiffError> {
    if threshold == 0 {
        return Err(DiffError::InvalidThreshold);
    }
    let w = map.width as usize;
    let mut out = vec![0u8; map.values.len()];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, g) in row.iter_mut().enumerate() {
            *g = gray_level(map.values[y * w + x], threshold);
        }
    });
    Ok(GrayMap::from_raw(map.width, map.height, out).expect("dims taken from map"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffStats {
    pub pixel_count: u64,
    pub changed_pixel_count: u64,
    /// Present only when a mask was supplied.
    pub changed_outside_mask: Option<u64>,
    /// Present only when a mask was supplied.
    pub max_l1_outside_mask: Option<u16>,
    pub max_l1: u16,
    pub mean_l1: f64,
    pub fraction_changed: f64,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    changed: u64,
    changed_outside: u64,
    max_outside: u16,
    max: u16,
    sum: u64,
}

impl Acc {
    fn merge(self, o: Acc) -> Acc {
        Acc {
            changed: self.changed + o.changed,
            changed_outside: self.changed_outside + o.changed_outside,
            max_outside: self.max_outside.max(o.max_outside),
            max: self.max.max(o.max),
            sum: self.sum + o.sum,
        }
    }
}

/// Summarizes a diff map. Pixels whose mask bit is 0 count as outside.
pub fn stats(map: &DiffMap, mask: Option<&SelectionMask>) -> Result<DiffStats, DiffError> {
    if let Some(m) = mask {
        same_dims(map.dims(), m.dims())?;
    }
    let w = map.width as usize;
    let acc = par::map_reduce(
        map.height as usize,
        Acc::default,
        |y| {
            let mut a = Acc::default();
            for x in 0..w {
                let v = map.values[y * w + x];
                a.sum += v as u64;
                a.max = a.max.max(v);
                if v > 0 {
                    a.changed += 1;
                    if mask.is_some_and(|m| !m.bits()[y * w + x]) {
                        a.changed_outside += 1;
                        a.max_outside = a.max_outside.max(v);
                    }
                }
            }
            a
        },
        Acc::merge,
    );
    let n = map.values.len() as u64;
    Ok(DiffStats {
        pixel_count: n,
        changed_pixel_count: acc.changed,
        changed_outside_mask: mask.map(|_| acc.changed_outside),
        max_l1_outside_mask: mask.map(|_| acc.max_outside),
        max_l1: acc.max,
        mean_l1: acc.sum as f64 / n as f64,
        fraction_changed: acc.changed as f64 / n as f64,
    })
}

/// Stats of every snapshot against a fixed reference, in order.
pub fn degradation_curve(
    snapshots: &[RasterImage],
    reference: &RasterImage,
    mask: Option<&SelectionMask>,
) -> Result<Vec<DiffStats>, DiffError> {
    if let Some(m) = mask {
        same_dims(reference.dims(), m.dims())?;
    }
    snapshots
        .iter()
        .enumerate()
        .map(|(step, snap)| {
            if snap.dims() != reference.dims() {
                return Err(DiffError::StepDimensionMismatch {
                    step,
                    expected: reference.dims(),
                    actual: snap.dims(),
                });
            }
            stats(&l1_map(reference, snap)?, mask)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, c: [u8; 4]) -> RasterImage {
        RasterImage::filled(w, h, c).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = solid(2, 2, [0, 0, 0, 255]);
        assert!(l1_map(&a, &a).unwrap().values().iter().all(|v| *v == 0));
        let b = solid(2, 2, [8, 8, 8, 0]);
        assert_eq!(l1_map(&a, &b).unwrap().get(0, 0), 24);
        let r = solid(1, 1, [255, 0, 0, 255]);
        let g = solid(1, 1, [0, 255, 0, 255]);
        assert_eq!(l1_map(&r, &g).unwrap().get(0, 0), 510);
    }

    #[test]
    fn l1_rejects_mismatched_dims() {
        let err = l1_map(&solid(2, 2, [0; 4]), &solid(3, 2, [0; 4])).unwrap_err();
        assert_eq!(
            err,
            DiffError::DimensionMismatch {
                expected: (2, 2),
                actual: (3, 2)
            }
        );
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray_level(0, 24), 0);
        assert_eq!(gray_level(24, 24), 255);
        assert_eq!(gray_level(12, 24), 128);
        assert_eq!(gray_level(700, 24), 255);
        // 255 * 1 / 2 = 127.5 rounds away from zero
        assert_eq!(gray_level(1, 2), 128);
        assert!(render_grayscale(&l1_map(&solid(1, 1, [0; 4]), &solid(1, 1, [0; 4])).unwrap(), 0).is_err());
    }

    #[test]
    fn stats_examples() {
        let a = solid(10, 10, [0, 0, 0, 255]);
        let zero = stats(&l1_map(&a, &a).unwrap(), None).unwrap();
        assert_eq!(zero.changed_pixel_count, 0);
        assert_eq!(zero.mean_l1, 0.0);
        assert_eq!(zero.changed_outside_mask, None);

        let b = RasterImage::from_fn(10, 10, |x, _| if x == 3 { [1, 0, 0, 255] } else { [0, 0, 0, 255] }).unwrap();
        let mask = SelectionMask::from_fn(10, 10, |x, _| x < 5).unwrap();
        let s = stats(&l1_map(&a, &b).unwrap(), Some(&mask)).unwrap();
        assert_eq!(s.changed_pixel_count, 10);
        assert_eq!(s.fraction_changed, 0.1);
        assert_eq!(s.changed_outside_mask, Some(0));
        assert_eq!(s.max_l1_outside_mask, Some(0));

        let full = SelectionMask::full(10, 10).unwrap();
        assert_eq!(
            stats(&l1_map(&a, &b).unwrap(), Some(&full))
                .unwrap()
                .changed_outside_mask,
            Some(0)
        );
    }

    #[test]
    fn curve_reports_bad_step() {
        let r = solid(4, 4, [0; 4]);
        let curve = degradation_curve(&[r.clone(), r.clone()], &r, None).unwrap();
        assert!(curve.iter().all(|s| s.changed_pixel_count == 0));
        let err = degradation_curve(&[r.clone(), solid(5, 4, [0; 4])], &r, None).unwrap_err();
        assert!(matches!(err, DiffError::StepDimensionMismatch { step: 1, .. }));
    }
}
