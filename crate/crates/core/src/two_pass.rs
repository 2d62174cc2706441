//! Two-pass inference: erase confident text regions that touch no image, run
//! detection again on the cleaned page and add the newly found text.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::CategoryKind;
use crate::detection::Detection;
use crate::detector::{Detector, DetectorError, DetectorRequest};
use crate::mask::{BinaryMask, MaskError};
use crate::preprocess::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    First,
    Second,
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pass::First => "pass 1",
            Pass::Second => "pass 2",
        })
    }
}

#[derive(Debug, Error)]
pub enum TwoPassError<E: std::error::Error + 'static = DetectorError> {
    #[error("invalid two-pass configuration: {0}")]
    Config(String),
    #[error("cannot estimate the background of an empty region")]
    EmptyRegion,
    #[error("{pass}: {source}")]
    Detector {
        pass: Pass,
        #[source]
        source: E,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoPassConfig {
    pub erasable_categories: BTreeSet<CategoryKind>,
    pub blocker_categories: BTreeSet<CategoryKind>,
    pub duplicate_iou: f64,
    pub fill_ring_radius: u32,
}

impl Default for TwoPassConfig {
    fn default() -> Self {
        Self {
            erasable_categories: [CategoryKind::TextBox, CategoryKind::Paragraph].into(),
            blocker_categories: [CategoryKind::Image].into(),
            duplicate_iou: 0.5,
            fill_ring_radius: 3,
        }
    }
}

impl TwoPassConfig {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(k) = self.erasable_categories.intersection(&self.blocker_categories).next() {
            return Err(format!("{k} cannot be both erasable and a blocker"));
        }
        if !(self.duplicate_iou > 0.0 && self.duplicate_iou <= 1.0) {
            return Err(format!("duplicate_iou must lie in (0, 1], got {}", self.duplicate_iou));
        }
        Ok(())
    }
}

fn check_dims(img: &Image, mask: &BinaryMask) -> Result<(), MaskError> {
    if img.dimensions() != mask.dims() {
        return Err(MaskError::DimensionMismatch {
            left_w: img.width(),
            left_h: img.height(),
            right_w: mask.width(),
            right_h: mask.height(),
        });
    }
    Ok(())
}

fn lower_median(mut values: Vec<u8>) -> u8 {
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable(mid).1
}

fn channel_medians(pixels: impl Iterator<Item = [u8; 3]>) -> [u8; 3] {
    let mut ch: [Vec<u8>; 3] = Default::default();
    for p in pixels {
        for c in 0..3 {
            ch[c].push(p[c]);
        }
    }
    ch.map(lower_median)
}

/// Per-channel median colour of the ring `dilate(region, ring_radius) - region`.
/// For even counts the lower of the two middle values is taken. When the ring
/// is empty the whole image's median is used.
pub fn estimate_background<E: std::error::Error>(
    img: &Image,
    region: &BinaryMask,
    ring_radius: u32,
) -> Result<[u8; 3], TwoPassError<E>> {
    check_dims(img, region)?;
    if region.is_empty() {
        return Err(TwoPassError::EmptyRegion);
    }
    let ring = region.dilate(ring_radius).difference(region)?;
    if ring.is_empty() {
        return Ok(channel_medians(img.pixels().map(|p| p.0)));
    }
    Ok(channel_medians(ring.iter_ones().map(|(x, y)| img.get_pixel(x, y).0)))
}

/// Fills each region with its estimated background, in order. Later regions
/// see the fills of earlier ones, and overlapping pixels take the later fill.
pub fn erase_regions<E: std::error::Error>(
    img: &Image,
    regions: &[&BinaryMask],
    ring_radius: u32,
) -> Result<Image, TwoPassError<E>> {
    let mut out = img.clone();
    for region in regions {
        check_dims(img, region)?;
        if region.is_empty() {
            continue;
        }
        let color = estimate_background::<E>(&out, region, ring_radius)?;
        for (x, y) in region.iter_ones() {
            out.put_pixel(x, y, image::Rgb(color));
        }
    }
    Ok(out)
}

/// Runs detection twice. `infer` maps an image to detections; it is called on
/// the original page and then on the page with erasable detections removed.
///
/// The result is the first-pass detections, unchanged and in order, followed
/// by second-pass detections of erasable categories that do not duplicate a
/// same-category first-pass detection (IoU above `duplicate_iou`).
pub fn run_two_pass_with<E, F>(img: &Image, cfg: &TwoPassConfig, mut infer: F) -> Result<Vec<Detection>, TwoPassError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(&Image) -> Result<Vec<Detection>, E>,
{
    cfg.validate().map_err(TwoPassError::Config)?;
    let first = infer(img).map_err(|source| TwoPassError::Detector { pass: Pass::First, source })?;
    let blockers: Vec<&Detection> = first
        .iter()
        .filter(|d| cfg.blocker_categories.contains(&d.category.kind))
        .collect();
    let mut erase = Vec::new();
    'cand: for d in &first {
        if !cfg.erasable_categories.contains(&d.category.kind) {
            continue;
        }
        for b in &blockers {
            if d.mask().intersection_area(b.mask())? > 0 {
                continue 'cand;
            }
        }
        erase.push(d.mask());
    }
    let cleaned = erase_regions::<E>(img, &erase, cfg.fill_ring_radius)?;
    let second = infer(&cleaned).map_err(|source| TwoPassError::Detector { pass: Pass::Second, source })?;

    let mut out = first;
    let first_len = out.len();
    'add: for d in second {
        if !cfg.erasable_categories.contains(&d.category.kind) {
            continue;
        }
        for prior in &out[..first_len] {
            if prior.category == d.category && prior.mask().iou(d.mask())? > cfg.duplicate_iou {
                continue 'add;
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// [`run_two_pass_with`] over a detector, using the request's id and threshold.
pub fn run_two_pass(
    req: &DetectorRequest<'_>,
    det: &dyn Detector,
    cfg: &TwoPassConfig,
) -> Result<Vec<Detection>, TwoPassError> {
    run_two_pass_with(req.image, cfg, |img| det.detect(&req.with_image(img, req.window)))
}
