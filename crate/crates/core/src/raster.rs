//! 8-bit RGBA rasters, binary selection masks and single-channel maps, plus
//! PNG I/O for all three.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("mask value {value} at ({x}, {y}) is not 0 or 255")]
    NonBinaryMask { x: u32, y: u32, value: u8 },
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Rgba = [u8; 4];

pub const WHITE: Rgba = [255, 255, 255, 255];

fn check_dims(width: u32, height: u32) -> Result<usize, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::InvalidDimensions { width, height });
    }
    Ok(width as usize * height as usize)
}

/// Row-major RGBA image, 8 bits per channel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgba) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        let mut data = Vec::with_capacity(n * 4);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        Ok(Self { width, height, data })
    }

    pub fn from_rgba(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        if data.len() != n * 4 {
            return Err(RasterError::BufferSize {
                expected: n * 4,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgba) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        let mut data = Vec::with_capacity(n * 4);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Rgba {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, px: Rgba) {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        self.data[i..i + 4].copy_from_slice(&px);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Copies out the `w`x`h` block whose top-left corner is `(x0, y0)`.
    /// The block must lie inside the image.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> RasterImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height && w > 0 && h > 0);
        let mut data = Vec::with_capacity(w as usize * h as usize * 4);
        for y in y0..y0 + h {
            let start = (y as usize * self.width as usize + x0 as usize) * 4;
            data.extend_from_slice(&self.data[start..start + w as usize * 4]);
        }
        RasterImage {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_rgba_image(&self) -> RgbaImage {
        RgbaImage::from_raw(self.width, self.height, self.data.clone()).expect("buffer length checked at construction")
    }

    pub fn from_rgba_image(img: RgbaImage) -> Result<Self, RasterError> {
        let (w, h) = img.dimensions();
        Self::from_rgba(w, h, img.into_raw())
    }

    /// Decodes any PNG colour type into 8-bit RGBA.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_rgba_image(img.to_rgba8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgba_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Binary per-pixel selection. `true` marks an editable pixel.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for SelectionMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SelectionMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("selected", &self.count())
            .finish()
    }
}

impl SelectionMask {
    pub fn empty(width: u32, height: u32) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; n],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; n],
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        let mut bits = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self { width, height, bits })
    }

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
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Like [`get`](Self::get) but out-of-bounds coordinates read as unselected.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> SelectionMask {
        assert!(x0 + w <= self.width && y0 + h <= self.height && w > 0 && h > 0);
        let mut bits = Vec::with_capacity(w as usize * h as usize);
        for y in y0..y0 + h {
            let start = y as usize * self.width as usize + x0 as usize;
            bits.extend_from_slice(&self.bits[start..start + w as usize]);
        }
        SelectionMask {
            width: w,
            height: h,
            bits,
        }
    }

    /// Decodes a mask PNG. Every pixel's luma must be exactly 0 or 255.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (width, height) = img.dimensions();
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for (x, y, p) in img.enumerate_pixels() {
            match p.0[0] {
                0 => bits.push(false),
                255 => bits.push(true),
                value => return Err(RasterError::NonBinaryMask { x, y, value }),
            }
        }
        Ok(Self { width, height, bits })
    }

    /// Single-channel 0/255 PNG.
    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let raw = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        let img =
            image::GrayImage::from_raw(self.width, self.height, raw).expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Single-channel 8-bit map (edge maps, grayscale renders).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayMap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayMap {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        if data.len() != n {
            return Err(RasterError::BufferSize {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

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
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    /// Expands to an opaque RGBA image with R=G=B=value.
    pub fn to_raster(&self) -> RasterImage {
        let mut data = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            data.extend_from_slice(&[*v, *v, *v, 255]);
        }
        RasterImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}
