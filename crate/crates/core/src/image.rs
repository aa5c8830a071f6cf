//! Single-channel floating point rasters.
//!
//! Symbol images are ink-positive (ink = 1.0, background = 0.0). Line images
//! produced by the engraver are paper-positive (paper = 1.0, ink dark); the
//! two conventions never mix inside one function without an explicit flip.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Row-major grayscale raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Inclusive-exclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer length");
        GrayImage { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Value at integer coordinates, 0.0 outside the raster.
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.get(x as usize, y as usize)
        }
    }

    /// Bilinear sample at continuous pixel-center coordinates, zero outside.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = libm::floorf(x);
        let y0 = libm::floorf(y);
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.get_or_zero(x0, y0);
        let b = self.get_or_zero(x0 + 1, y0);
        let c = self.get_or_zero(x0, y0 + 1);
        let d = self.get_or_zero(x0 + 1, y0 + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn invert(&self) -> Self {
        self.map(|v| 1.0 - v)
    }

    pub fn flip_horizontal(&self) -> Self {
        GrayImage::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        GrayImage::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// Rotates counter-clockwise by `degrees` about the raster center with
    /// bilinear interpolation; uncovered pixels become 0.
    pub fn rotate(&self, degrees: f64) -> Self {
        if degrees == 0.0 {
            return self.clone();
        }
        let theta = degrees.to_radians();
        let (s, c) = (libm::sin(theta) as f32, libm::cos(theta) as f32);
        let cx = (self.width as f32 - 1.0) / 2.0;
        let cy = (self.height as f32 - 1.0) / 2.0;
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            // inverse rotation (image y axis points down)
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            self.sample_bilinear(sx, sy)
        })
    }

    /// Bounding box of pixels strictly above `threshold`.
    pub fn bbox_above(&self, threshold: f32) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) > threshold {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| Rect {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
    }

    pub fn crop(&self, r: Rect) -> Self {
        GrayImage::from_fn(r.w, r.h, |x, y| self.get(r.x + x, r.y + y))
    }

    /// Resamples to `width × height` with a triangle filter whose support
    /// widens when shrinking, so downscaling averages instead of aliasing.
    /// Returns an identical copy when the size is unchanged.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        assert!(width > 0 && height > 0, "resize to an empty raster");
        // horizontal pass then vertical pass
        let horiz = resample_axis(&self.data, self.width, self.height, width, true);
        let out = resample_axis(&horiz, width, self.height, height, false);
        GrayImage {
            width,
            height,
            data: out,
        }
    }

    /// Pastes `src` with its top-left corner at `(x, y)`, combining with `f(dst, src)`.
    pub fn blend_from(&mut self, src: &GrayImage, x: isize, y: isize, f: impl Fn(f32, f32) -> f32) {
        for sy in 0..src.height {
            let ty = y + sy as isize;
            if ty < 0 || ty as usize >= self.height {
                continue;
            }
            for sx in 0..src.width {
                let tx = x + sx as isize;
                if tx < 0 || tx as usize >= self.width {
                    continue;
                }
                let i = ty as usize * self.width + tx as usize;
                self.data[i] = f(self.data[i], src.get(sx, sy));
            }
        }
    }
}

fn resample_axis(src: &[f32], w: usize, h: usize, new_len: usize, horizontal: bool) -> Vec<f32> {
    let old_len = if horizontal { w } else { h };
    let scale = old_len as f32 / new_len as f32;
    let support = if scale > 1.0 { scale } else { 1.0 };
    // precompute taps per output coordinate
    let mut taps: Vec<Vec<(usize, f32)>> = Vec::with_capacity(new_len);
    for o in 0..new_len {
        let center = (o as f32 + 0.5) * scale - 0.5;
        let lo = libm::floorf(center - support) as isize;
        let hi = libm::ceilf(center + support) as isize;
        let mut t = Vec::new();
        let mut total = 0.0;
        for i in lo..=hi {
            let wgt = 1.0 - libm::fabsf(i as f32 - center) / support;
            if wgt <= 0.0 {
                continue;
            }
            let idx = i.clamp(0, old_len as isize - 1) as usize;
            t.push((idx, wgt));
            total += wgt;
        }
        for p in t.iter_mut() {
            p.1 /= total;
        }
        taps.push(t);
    }
    let (out_w, out_h) = if horizontal { (new_len, h) } else { (w, new_len) };
    let mut out = vec![0.0f32; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            if horizontal {
                for &(i, wgt) in &taps[x] {
                    acc += src[y * w + i] * wgt;
                }
            } else {
                for &(i, wgt) in &taps[y] {
                    acc += src[i * w + x] * wgt;
                }
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}
