//! Canny edge detection for the ControlNet hint.
//!
//! grayscale (BT.601) → separable Gaussian blur → 3×3 Sobel → non-maximum
//! suppression → double-threshold hysteresis. Borders are clamped.
//! Thresholds apply to the raw Sobel magnitude of 0–255 intensities, so the
//! conventional 100/200 pair carries over unchanged.

use crate::par;
use crate::raster::{GrayMap, RasterImage};

pub const DEFAULT_LOW: f32 = 100.0;
pub const DEFAULT_HIGH: f32 = 200.0;
pub const DEFAULT_SIGMA: f32 = 1.4;

const TAN_22_5: f32 = 0.414_213_57;

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn to_gray(image: &RasterImage) -> Vec<f32> {
    let w = image.width() as usize;
    let px = image.as_bytes();
    let mut out = vec![0f32; image.pixel_count()];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, g) in row.iter_mut().enumerate() {
            let i = (y * w + x) * 4;
            *g = 0.299 * px[i] as f32 + 0.587 * px[i + 1] as f32 + 0.114 * px[i + 2] as f32;
        }
    });
    out
}

#[inline]
fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; src.len()];
    par::for_each_row(&mut tmp, w, |y, row| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            *out = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * line[clamp(x as isize + j as isize - r, w)])
                .sum();
        }
    });
    let mut out = vec![0f32; src.len()];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    });
    out
}

/// Sobel gradients, returned as (gx, gy) per pixel.
fn sobel(src: &[f32], w: usize, h: usize) -> Vec<(f32, f32)> {
    let mut out = vec![(0f32, 0f32); src.len()];
    par::for_each_row(&mut out, w, |y, row| {
        let at = |dx: isize, dy: isize, x: usize| src[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)];
        for (x, g) in row.iter_mut().enumerate() {
            let gx =
                (at(1, -1, x) + 2.0 * at(1, 0, x) + at(1, 1, x)) - (at(-1, -1, x) + 2.0 * at(-1, 0, x) + at(-1, 1, x));
            let gy =
                (at(-1, 1, x) + 2.0 * at(0, 1, x) + at(1, 1, x)) - (at(-1, -1, x) + 2.0 * at(0, -1, x) + at(1, -1, x));
            *g = (gx, gy);
        }
    });
    out
}

/// Neighbor offset along the quantized gradient direction.
#[inline]
fn direction(gx: f32, gy: f32) -> (isize, isize) {
    let (ax, ay) = (gx.abs(), gy.abs());
    if ay <= TAN_22_5 * ax {
        (1, 0)
    } else if ax <= TAN_22_5 * ay {
        (0, 1)
    } else if (gx > 0.0) == (gy > 0.0) {
        (1, 1)
    } else {
        (1, -1)
    }
}

fn suppress(grad: &[(f32, f32)], w: usize, h: usize) -> Vec<f32> {
    let mag: Vec<f32> = grad.iter().map(|(gx, gy)| (gx * gx + gy * gy).sqrt()).collect();
    let mut out = vec![0f32; mag.len()];
    par::for_each_row(&mut out, w, |y, row| {
        let m_at = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        for (x, o) in row.iter_mut().enumerate() {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let (gx, gy) = grad[y * w + x];
            let (dx, dy) = direction(gx, gy);
            let (xi, yi) = (x as isize, y as isize);
            // Strict on the negative side, non-strict on the positive side, so a
            // plateau of two equal maxima keeps exactly one pixel.
            if m > m_at(xi - dx, yi - dy) && m >= m_at(xi + dx, yi + dy) {
                *o = m;
            }
        }
    });
    out
}

fn hysteresis(nms: &[f32], w: usize, h: usize, low: f32, high: f32) -> Vec<u8> {
    let mut out = vec![0u8; nms.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &m) in nms.iter().enumerate() {
        if m >= high && m > 0.0 {
            out[i] = 255;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0 && nms[j] >= low && nms[j] > 0.0 {
                    out[j] = 255;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// Binary (0/255) edge map with the same dimensions as `image`.
pub fn extract_canny(image: &RasterImage, low: f32, high: f32) -> GrayMap {
    extract_canny_with_sigma(image, low, high, DEFAULT_SIGMA)
}

pub fn extract_canny_with_sigma(image: &RasterImage, low: f32, high: f32, sigma: f32) -> GrayMap {
    assert!(0.0 <= low && low <= high, "canny thresholds need 0 <= low <= high");
    let (w, h) = (image.width() as usize, image.height() as usize);
    let gray = to_gray(image);
    let smooth = blur(&gray, w, h, sigma);
    let grad = sobel(&smooth, w, h);
    let nms = suppress(&grad, w, h);
    let edges = hysteresis(&nms, w, h, low, high);
    GrayMap::from_raw(image.width(), image.height(), edges).expect("dims taken from image")
}
