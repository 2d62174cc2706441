//! Page preprocessing: resize-and-pad, colour normalization, photometric and
//! geometric augmentation, and the invertible [`TransformRecord`] that maps
//! detections back to original page coordinates.
//!
//! Geometric conventions: the forward transform is scale, pad (right and
//! bottom), clockwise quarter turns, small clockwise rotation about the canvas
//! centre, horizontal flip, vertical flip. Images are resampled bilinearly,
//! masks by nearest neighbour.

mod augment;
mod geometry;
mod photometric;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;
use crate::mask::{BinaryMask, MaskError};

pub use augment::{apply_augmentation, sample_augmentation, AugmentParams, AugmentPolicy, Interval};
pub use geometry::{flip, rotate_discrete, rotate_small, MAX_SMALL_ROTATION_DEG};
pub use photometric::{adjust_photometric, grayscale, GRAY_WEIGHTS};

/// 8-bit RGB page raster, row-major.
pub type Image = image::RgbImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("resize target must be positive")]
    InvalidTarget,
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("rotation of {0} degrees exceeds the small-rotation limit")]
    RotationTooLarge(f64),
    #[error("normalization std must be positive, got {0:?}")]
    InvalidStats([f64; 3]),
    #[error("invalid {name} interval [{lo}, {hi}]")]
    InvalidInterval { name: &'static str, lo: f64, hi: f64 },
    #[error("photometric factors must be positive")]
    InvalidFactor,
    #[error("records cannot be composed: the later record must be a pure rotation/flip and the earlier one must not flip")]
    NotComposable,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Everything needed to map between original page coordinates and the
/// presented (model input) canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub scale: f64,
    pub pad_right: u32,
    pub pad_bottom: u32,
    /// Clockwise degrees; multiples of 90 are exact quarter turns.
    pub rotation_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Default for TransformRecord {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformRecord {
    pub const fn identity() -> Self {
        Self {
            scale: 1.0,
            pad_right: 0,
            pad_bottom: 0,
            rotation_deg: 0.0,
            flip_h: false,
            flip_v: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Splits the rotation into clockwise quarter turns and a residual small
    /// angle in `[-45, 45]`; a residual of exactly ±45 stays with the small part.
    pub fn rotation_parts(&self) -> (u8, f64) {
        let q = self.rotation_deg / 90.0;
        let turns = if q.fract().abs() == 0.5 { q.trunc() } else { q.round() };
        let small = self.rotation_deg - 90.0 * turns;
        (turns.rem_euclid(4.0) as u8, small)
    }

    /// Record for applying `self` and then `later`.
    pub fn then(&self, later: &TransformRecord) -> Result<TransformRecord, PreprocessError> {
        if self.is_identity() {
            return Ok(*later);
        }
        if later.is_identity() {
            return Ok(*self);
        }
        let later_is_canvas_op = later.scale == 1.0 && later.pad_right == 0 && later.pad_bottom == 0;
        if !later_is_canvas_op || self.flip_h || self.flip_v {
            return Err(PreprocessError::NotComposable);
        }
        Ok(TransformRecord {
            rotation_deg: self.rotation_deg + later.rotation_deg,
            flip_h: later.flip_h,
            flip_v: later.flip_v,
            ..*self
        })
    }

    /// Size of the resized page before padding.
    pub fn scaled_dims(&self, orig_w: u32, orig_h: u32) -> (u32, u32) {
        (scaled_dim(orig_w, self.scale), scaled_dim(orig_h, self.scale))
    }

    /// Size of the presented canvas for a page of the given original size.
    pub fn presented_dims(&self, orig_w: u32, orig_h: u32) -> (u32, u32) {
        let (sw, sh) = self.scaled_dims(orig_w, orig_h);
        let (cw, ch) = (sw + self.pad_right, sh + self.pad_bottom);
        if self.rotation_parts().0 % 2 == 1 {
            (ch, cw)
        } else {
            (cw, ch)
        }
    }
}

/// `round_half_up(dim * scale)`, at least 1. The epsilon absorbs binary
/// representation error in products that are exact halves in decimal.
pub fn scaled_dim(dim: u32, scale: f64) -> u32 {
    if scale == 1.0 {
        return dim;
    }
    ((f64::from(dim) * scale + 0.5 + 1e-9).floor() as u32).max(1)
}

/// Per-channel pixel statistics used for normalization and fill colour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self, PreprocessError> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(PreprocessError::InvalidStats(std));
        }
        Ok(Self { mean, std })
    }

    /// The mean as an 8-bit colour, used to fill padding and rotation corners.
    pub fn mean_color(&self) -> [u8; 3] {
        self.mean.map(|m| m.round().clamp(0.0, 255.0) as u8)
    }
}

/// Normalized, real-valued image: interleaved RGB `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

pub fn normalize(img: &Image, stats: &NormalizationStats) -> NormalizedImage {
    let data = img
        .as_raw()
        .chunks_exact(3)
        .flat_map(|px| {
            (0..3).map(move |c| ((f64::from(px[c]) - stats.mean[c]) / stats.std[c]) as f32)
        })
        .collect();
    NormalizedImage {
        width: img.width(),
        height: img.height(),
        data,
    }
}

pub fn denormalize(img: &NormalizedImage, stats: &NormalizationStats) -> Image {
    let raw = img
        .data
        .chunks_exact(3)
        .flat_map(|px| {
            (0..3).map(move |c| {
                (f64::from(px[c]) * stats.std[c] + stats.mean[c]).round().clamp(0.0, 255.0) as u8
            })
        })
        .collect();
    Image::from_raw(img.width, img.height, raw).expect("buffer length matches dimensions")
}

/// Scales the longest side to `target` (bilinear, aspect preserved) and pads
/// right/bottom with `fill` to a `target`×`target` square.
pub fn resize_pad(img: &Image, target: u32, fill: [u8; 3]) -> Result<(Image, TransformRecord), PreprocessError> {
    if target == 0 {
        return Err(PreprocessError::InvalidTarget);
    }
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    let scale = f64::from(target) / f64::from(w.max(h));
    let rec = TransformRecord {
        scale,
        ..TransformRecord::identity()
    };
    let (sw, sh) = rec.scaled_dims(w, h);
    let (sw, sh) = (sw.min(target), sh.min(target));
    let rec = TransformRecord {
        pad_right: target - sw,
        pad_bottom: target - sh,
        ..rec
    };
    let resized = geometry::resize_bilinear(img, sw, sh);
    let mut out = Image::from_pixel(target, target, image::Rgb(fill));
    image::imageops::replace(&mut out, &resized, 0, 0);
    Ok((out, rec))
}

/// Applies a record's full forward transform to an image.
pub fn apply_transform_image(img: &Image, rec: &TransformRecord, fill: [u8; 3]) -> Result<Image, PreprocessError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    let (sw, sh) = rec.scaled_dims(w, h);
    let resized = if (sw, sh) == (w, h) {
        img.clone()
    } else {
        geometry::resize_bilinear(img, sw, sh)
    };
    let mut canvas = if rec.pad_right == 0 && rec.pad_bottom == 0 {
        resized
    } else {
        let mut c = Image::from_pixel(sw + rec.pad_right, sh + rec.pad_bottom, image::Rgb(fill));
        image::imageops::replace(&mut c, &resized, 0, 0);
        c
    };
    let (turns, small) = rec.rotation_parts();
    if turns != 0 {
        canvas = geometry::rotate_quarter_image(&canvas, turns);
    }
    if small != 0.0 {
        canvas = geometry::rotate_image(&canvas, small, fill);
    }
    Ok(geometry::flip_image(canvas, rec.flip_h, rec.flip_v))
}

/// Maps a mask from original page coordinates into presented coordinates.
pub fn forward_mask(mask: &BinaryMask, rec: &TransformRecord) -> Result<BinaryMask, PreprocessError> {
    let (w, h) = mask.dims();
    let (sw, sh) = rec.scaled_dims(w, h);
    let scaled = if (sw, sh) == (w, h) {
        mask.clone()
    } else {
        geometry::resize_mask_nearest(mask, sw, sh)?
    };
    let mut canvas = if rec.pad_right == 0 && rec.pad_bottom == 0 {
        scaled
    } else {
        scaled.paste_onto(sw + rec.pad_right, sh + rec.pad_bottom, 0, 0)?
    };
    let (turns, small) = rec.rotation_parts();
    if turns != 0 {
        canvas = geometry::rotate_quarter_mask(&canvas, turns);
    }
    if small != 0.0 {
        canvas = geometry::rotate_mask(&canvas, small);
    }
    Ok(geometry::flip_mask(&canvas, rec.flip_h, rec.flip_v))
}

/// Maps a presented-coordinate mask back onto the original `orig_w`×`orig_h` page.
pub fn invert_mask(
    mask: &BinaryMask,
    rec: &TransformRecord,
    orig_w: u32,
    orig_h: u32,
) -> Result<BinaryMask, PreprocessError> {
    let mut canvas = geometry::flip_mask(mask, rec.flip_h, rec.flip_v);
    let (turns, small) = rec.rotation_parts();
    if small != 0.0 {
        canvas = geometry::rotate_mask(&canvas, -small);
    }
    if turns != 0 {
        canvas = geometry::rotate_quarter_mask(&canvas, (4 - turns) % 4);
    }
    let (sw, sh) = rec.scaled_dims(orig_w, orig_h);
    let (cw, ch) = canvas.dims();
    let content = crate::mask::BoundingBox::new(0, 0, sw.min(cw), sh.min(ch));
    let unpadded = if content.w == cw && content.h == ch {
        canvas
    } else {
        canvas.crop(content)?
    };
    if unpadded.dims() == (orig_w, orig_h) {
        return Ok(unpadded);
    }
    geometry::resize_mask_nearest_to_scale(&unpadded, orig_w, orig_h, sw, sh)
}

/// Maps a detection back to original page coordinates; category and score are kept.
pub fn invert_transform(
    det: &Detection,
    rec: &TransformRecord,
    orig_w: u32,
    orig_h: u32,
) -> Result<Detection, PreprocessError> {
    if rec.is_identity() && det.mask().dims() == (orig_w, orig_h) {
        return Ok(det.clone());
    }
    let mask = invert_mask(det.mask(), rec, orig_w, orig_h)?;
    Ok(det.clone().with_mask(mask))
}
