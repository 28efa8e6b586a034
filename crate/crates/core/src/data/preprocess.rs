//! Image/mask decoding, letterbox resizing and normalization.
//!
//! Letterboxing resizes with preserved aspect ratio (never upscaling) and
//! pads to the target size; the [`Letterbox`] record keeps the scale and pad
//! offsets so a full-size prediction can be mapped back onto the original
//! resolution. When the content already fits (scale 1) the inverse mapping
//! is a pure crop and therefore lossless.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mask decode rule: luma above this value counts as sky.
pub const MASK_SKY_THRESHOLD: u8 = 127;

/// Preprocessing configuration shared by training and evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// Target (height, width); both must be divisible by 32.
    pub target: (usize, usize),
    /// Letterbox fill value in normalized image space.
    pub fill: f32,
    /// Per-channel shift applied after scaling to [0, 1].
    pub mean: [f32; 3],
    /// Per-channel divisor applied after the shift.
    pub scale: [f32; 3],
    /// Horizontal flip probability in training mode.
    pub flip_prob: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            target: (64, 64),
            fill: 114.0 / 255.0,
            mean: [0.0; 3],
            scale: [1.0; 3],
            flip_prob: 0.5,
        }
    }
}

impl PreprocessSpec {
    pub fn with_target(height: usize, width: usize) -> Self {
        PreprocessSpec {
            target: (height, width),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target;
        if h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "preprocess target {h}x{w} must be divisible by 32 and at least 32"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.scale.contains(&0.0) {
            return Err(Error::Config("normalization scale must be non-zero".into()));
        }
        Ok(())
    }
}

/// Geometry record of one letterbox operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    /// Content scale; capped at 1 so inference never upsamples.
    pub scale: f64,
    pub pad_top: usize,
    pub pad_left: usize,
    /// Original (height, width).
    pub original: (usize, usize),
    /// Scaled content size inside the target.
    pub content: (usize, usize),
    /// Target (height, width).
    pub target: (usize, usize),
}

impl Letterbox {
    /// Plans the geometry for fitting `(h, w)` into `(th, tw)`.
    pub fn plan((h, w): (usize, usize), (th, tw): (usize, usize)) -> Letterbox {
        let scale = (th as f64 / h as f64).min(tw as f64 / w as f64).min(1.0);
        let ch = ((h as f64 * scale).round() as usize).clamp(1, th);
        let cw = ((w as f64 * scale).round() as usize).clamp(1, tw);
        Letterbox {
            scale,
            pad_top: (th - ch) / 2,
            pad_left: (tw - cw) / 2,
            original: (h, w),
            content: (ch, cw),
            target: (th, tw),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.original == self.target
    }
}

/// Next multiple of 32 at or above `n`, minimum 32.
pub fn ceil32(n: usize) -> usize {
    n.max(1).div_ceil(32).max(1) * 32
}

pub fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut arr = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            arr[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
        }
    }
    arr
}

pub fn array_to_rgb(arr: &Array3<f32>) -> RgbImage {
    let (_, h, w) = arr.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            (arr[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn gray_to_mask(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        u8::from(img.get_pixel(c as u32, r as u32).0[0] > MASK_SKY_THRESHOLD)
    })
}

pub fn mask_to_gray(mask: &Array2<u8>) -> GrayImage {
    let (h, w) = mask.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([mask[[y as usize, x as usize]] * 255])
    })
}

/// Letterboxes a normalized `(3, H, W)` image into `lb.target`, bilinear.
pub fn letterbox_image(image: &Array3<f32>, lb: &Letterbox, fill: f32) -> Array3<f32> {
    let (th, tw) = lb.target;
    let (ch, cw) = lb.content;
    let mut out = Array3::<f32>::from_elem((3, th, tw), fill);
    let content = if lb.content == lb.original {
        image.clone()
    } else {
        let rgb = array_to_rgb(image);
        let resized = image::imageops::resize(&rgb, cw as u32, ch as u32, FilterType::Triangle);
        rgb_to_array(&resized)
    };
    out.slice_mut(s![
        ..,
        lb.pad_top..lb.pad_top + ch,
        lb.pad_left..lb.pad_left + cw
    ])
    .assign(&content);
    out
}

/// Letterboxes a binary mask with nearest-neighbor sampling; padding is
/// non-sky. The result stays strictly binary.
pub fn letterbox_mask(mask: &Array2<u8>, lb: &Letterbox) -> Array2<u8> {
    let (th, tw) = lb.target;
    let (ch, cw) = lb.content;
    let (h, w) = lb.original;
    let mut out = Array2::<u8>::zeros((th, tw));
    for r in 0..ch {
        // Nearest source row/col at the pixel center.
        let sr = (((r as f64 + 0.5) * h as f64 / ch as f64) as usize).min(h - 1);
        for c in 0..cw {
            let sc = (((c as f64 + 0.5) * w as f64 / cw as f64) as usize).min(w - 1);
            out[[lb.pad_top + r, lb.pad_left + c]] = mask[[sr, sc]];
        }
    }
    out
}

/// Maps a target-size binary mask back to the original resolution: crop the
/// content region, then nearest-resize to the original size (a no-op crop
/// when scale is 1).
pub fn unletterbox_mask(mask: &Array2<u8>, lb: &Letterbox) -> Array2<u8> {
    let (ch, cw) = lb.content;
    let (h, w) = lb.original;
    let content = mask.slice(s![
        lb.pad_top..lb.pad_top + ch,
        lb.pad_left..lb.pad_left + cw
    ]);
    if (ch, cw) == (h, w) {
        return content.to_owned();
    }
    Array2::from_shape_fn((h, w), |(r, c)| {
        let sr = (((r as f64 + 0.5) * ch as f64 / h as f64) as usize).min(ch - 1);
        let sc = (((c as f64 + 0.5) * cw as f64 / w as f64) as usize).min(cw - 1);
        content[[sr, sc]]
    })
}

pub fn normalize_inplace(image: &mut Array3<f32>, mean: [f32; 3], scale: [f32; 3]) {
    for c in 0..3 {
        let (m, s) = (mean[c], scale[c]);
        image
            .slice_mut(s![c, .., ..])
            .mapv_inplace(|v| (v - m) / s);
    }
}

/// Flips image and mask columns together.
pub fn flip_horizontal(image: &mut Array3<f32>, mask: &mut Array2<u8>) {
    image.invert_axis(ndarray::Axis(2));
    mask.invert_axis(ndarray::Axis(1));
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_luma8())
}
