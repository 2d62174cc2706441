//! Sliced inference: detect on overlapping windows, paste the results back onto
//! the page and merge fragments and duplicates.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;
use crate::detector::{Detector, DetectorError, DetectorRequest};
use crate::mask::{BoundingBox, MaskError};

/// Which detector call failed during a sliced run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceLabel {
    Slice(usize),
    FullImage,
}

impl fmt::Display for SliceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceLabel::Slice(i) => write!(f, "slice {i}"),
            SliceLabel::FullImage => f.write_str("full-image pass"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SliceError {
    #[error("invalid slicing configuration: {0}")]
    Config(String),
    #[error("{label}: {source}")]
    Detector { label: SliceLabel, source: DetectorError },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePlan {
    pub page_w: u32,
    pub page_h: u32,
    pub window_w: u32,
    pub window_h: u32,
    pub overlap_ratio: f64,
    pub slices: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub ios_merge_threshold: f64,
    pub iou_nms_threshold: f64,
    pub fuse_full_image_pass: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            ios_merge_threshold: 0.8,
            iou_nms_threshold: 0.5,
            fuse_full_image_pass: true,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), SliceError> {
        for (name, v) in [("ios_merge_threshold", self.ios_merge_threshold), ("iou_nms_threshold", self.iou_nms_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SliceError::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn axis_origins(page: u32, window: u32, stride: u32) -> Vec<(u32, u32)> {
    if page <= window {
        return vec![(0, page)];
    }
    let mut origins = Vec::new();
    let mut o = 0u32;
    while o + window < page {
        origins.push(o);
        o += stride;
    }
    let last = page - window;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins.into_iter().map(|o| (o, window)).collect()
}

/// Overlapping windows covering a page, in row-major order.
///
/// Origins along each axis are multiples of `floor(window * (1 - overlap))`
/// with the last one clamped flush to the page edge. A page no larger than
/// the window along an axis gets a single span covering it.
pub fn plan_slices(
    page_w: u32,
    page_h: u32,
    window_w: u32,
    window_h: u32,
    overlap_ratio: f64,
) -> Result<SlicePlan, SliceError> {
    if window_w == 0 || window_h == 0 || page_w == 0 || page_h == 0 {
        return Err(SliceError::Config(format!(
            "page {page_w}x{page_h} and window {window_w}x{window_h} must be non-empty"
        )));
    }
    if !(0.0..1.0).contains(&overlap_ratio) {
        return Err(SliceError::Config(format!("overlap ratio {overlap_ratio} outside [0, 1)")));
    }
    let stride = |w: u32| ((f64::from(w) * (1.0 - overlap_ratio)).floor() as u32).max(1);
    let xs = axis_origins(page_w, window_w, stride(window_w));
    let ys = axis_origins(page_h, window_h, stride(window_h));
    let slices = ys
        .iter()
        .flat_map(|&(y, h)| xs.iter().map(move |&(x, w)| BoundingBox::new(x, y, w, h)))
        .collect();
    Ok(SlicePlan {
        page_w,
        page_h,
        window_w,
        window_h,
        overlap_ratio,
        slices,
    })
}

/// Runs `det` on every slice of `req.image` (and on the whole image when
/// `cfg.fuse_full_image_pass` is set), pastes slice results onto page-sized
/// canvases and merges the pool.
///
/// Up to `parallelism` detector calls run at once.
pub fn run_sliced(
    req: &DetectorRequest<'_>,
    plan: &SlicePlan,
    det: &dyn Detector,
    cfg: &MergeConfig,
    parallelism: usize,
) -> Result<Vec<Detection>, SliceError> {
    cfg.validate()?;
    let (page_w, page_h) = req.image.dimensions();
    if (plan.page_w, plan.page_h) != (page_w, page_h) {
        return Err(SliceError::Config(format!(
            "plan is for a {}x{} page, image is {page_w}x{page_h}",
            plan.page_w, plan.page_h
        )));
    }
    let mut jobs: Vec<SliceLabel> = (0..plan.slices.len()).map(SliceLabel::Slice).collect();
    if cfg.fuse_full_image_pass {
        jobs.push(SliceLabel::FullImage);
    }
    let run_one = |label: SliceLabel| -> Result<Vec<Detection>, SliceError> {
        let wrap = |source| SliceError::Detector { label, source };
        match label {
            SliceLabel::FullImage => det.detect(req).map_err(wrap),
            SliceLabel::Slice(i) => {
                let s = plan.slices[i];
                let sub = image::imageops::crop_imm(req.image, s.x, s.y, s.w, s.h).to_image();
                let window = match req.window {
                    Some(outer) => BoundingBox::new(outer.x + s.x, outer.y + s.y, s.w, s.h),
                    None => s,
                };
                let found = det.detect(&req.with_image(&sub, Some(window))).map_err(wrap)?;
                found
                    .into_iter()
                    .map(|d| {
                        let mask = d.mask().paste_onto(page_w, page_h, s.x, s.y)?;
                        Ok(d.with_mask(mask))
                    })
                    .collect()
            }
        }
    };

    type Slot = Mutex<Option<Result<Vec<Detection>, SliceError>>>;
    let results: Vec<Slot> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&label) = jobs.get(i) else { break };
                let r = run_one(label);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut pool = Vec::new();
    for slot in results {
        pool.extend(slot.into_inner().expect("result slot").expect("every job ran")?);
    }
    Ok(merge_detections(pool, cfg)?)
}

/// Greedy merge in descending score order. A detection is unioned into the
/// first kept same-category detection it overlaps with IoS above
/// `ios_merge_threshold`; otherwise it is dropped if its IoU with a kept
/// same-category detection exceeds `iou_nms_threshold`; otherwise kept.
///
/// Passes repeat until nothing changes, because a union can grow a kept mask
/// into one kept earlier in the same pass. The result is therefore a fixed
/// point: merging it again returns it unchanged.
pub fn merge_detections(pool: Vec<Detection>, cfg: &MergeConfig) -> Result<Vec<Detection>, MaskError> {
    if let Some(first) = pool.first() {
        let dims = first.mask().dims();
        if let Some(d) = pool.iter().find(|d| d.mask().dims() != dims) {
            return Err(MaskError::DimensionMismatch {
                left_w: dims.0,
                left_h: dims.1,
                right_w: d.mask().width(),
                right_h: d.mask().height(),
            });
        }
    }
    let mut current = pool;
    loop {
        let (next, changed) = merge_pass(current, cfg)?;
        current = next;
        if !changed {
            return Ok(current);
        }
    }
}

fn merge_pass(mut pool: Vec<Detection>, cfg: &MergeConfig) -> Result<(Vec<Detection>, bool), MaskError> {
    pool.sort_by(|a, b| b.score().total_cmp(&a.score()));
    let mut kept: Vec<Detection> = Vec::with_capacity(pool.len());
    let mut changed = false;
    'outer: for d in pool {
        for k in kept.iter_mut() {
            if k.category == d.category && k.mask().ios(d.mask())? > cfg.ios_merge_threshold {
                let merged = k.mask().union(d.mask())?;
                let score = k.score().max(d.score());
                *k = Detection::new(k.category, score, merged).expect("score stays in range");
                changed = true;
                continue 'outer;
            }
        }
        for k in &kept {
            if k.category == d.category && k.mask().iou(d.mask())? > cfg.iou_nms_threshold {
                changed = true;
                continue 'outer;
            }
        }
        kept.push(d);
    }
    Ok((kept, changed))
}
