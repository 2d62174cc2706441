use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::LayoutCategory;
use crate::detection::{Detection, PageAnnotation};
use crate::mask::{BinaryMask, BoundingBox};
use crate::preprocess::{forward_mask, Image, TransformRecord};

use super::{Detector, DetectorError, DetectorRequest};

/// Instances whose pixels have a per-channel variance below this in every
/// channel are treated as blank and never detected.
pub const VARIANCE_FLOOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockDetectorConfig {
    pub min_area_fraction: f64,
    pub crowd_radius: f64,
    pub crowd_limit: usize,
    pub score_floor: f64,
    pub score_ceil: f64,
    pub jitter_px: u32,
    pub seed: u64,
}

impl Default for MockDetectorConfig {
    fn default() -> Self {
        Self {
            min_area_fraction: 0.0005,
            crowd_radius: 64.0,
            crowd_limit: 8,
            score_floor: 0.5,
            score_ceil: 0.99,
            jitter_px: 0,
            seed: 0,
        }
    }
}

impl MockDetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::InvalidRequest(format!("mock config: {m}")));
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return bad("min_area_fraction must lie in [0, 1)");
        }
        if !(self.crowd_radius >= 0.0) {
            return bad("crowd_radius must be non-negative");
        }
        if !(0.0 <= self.score_floor && self.score_floor <= self.score_ceil && self.score_ceil <= 1.0) {
            return bad("scores must satisfy 0 <= score_floor <= score_ceil <= 1");
        }
        Ok(())
    }

    fn score(&self, area_fraction: f64) -> f64 {
        let t = if self.min_area_fraction == 0.0 {
            1.0
        } else {
            (area_fraction / (4.0 * self.min_area_fraction)).min(1.0)
        };
        self.score_floor + (self.score_ceil - self.score_floor) * t
    }
}

struct Instance {
    category: LayoutCategory,
    presented: BinaryMask,
    jittered: BinaryMask,
}

/// A ground-truth-driven stand-in for a trained model.
///
/// It reproduces the failure modes of a real layout detector: small instances
/// and instances in crowded neighbourhoods are missed, blank (erased) regions
/// are never found, and boundaries wobble by a seeded amount.
pub struct MockDetector {
    page_w: u32,
    page_h: u32,
    instances: Vec<Instance>,
    cfg: MockDetectorConfig,
}

impl MockDetector {
    /// Binds the mock to `gt`, presented to the detector through `rec`.
    pub fn new(gt: &PageAnnotation, rec: &TransformRecord, cfg: MockDetectorConfig) -> Result<Self, DetectorError> {
        cfg.validate()?;
        let (page_w, page_h) = rec.presented_dims(gt.width(), gt.height());
        let instances = gt
            .instances()
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let presented = forward_mask(inst.mask(), rec)
                    .map_err(|e| DetectorError::InvalidRequest(format!("ground truth {i}: {e}")))?;
                let jittered = jitter(&presented, cfg.seed, i as u64, cfg.jitter_px);
                Ok(Instance {
                    category: inst.category,
                    presented,
                    jittered,
                })
            })
            .collect::<Result<_, DetectorError>>()?;
        Ok(Self {
            page_w,
            page_h,
            instances,
            cfg,
        })
    }

    pub fn config(&self) -> &MockDetectorConfig {
        &self.cfg
    }

    /// Size of the presented page this mock expects.
    pub fn page_dims(&self) -> (u32, u32) {
        (self.page_w, self.page_h)
    }

    fn run(&self, image: &Image, window: Option<BoundingBox>, threshold: f64) -> Result<Vec<Detection>, DetectorError> {
        let window = window.unwrap_or(BoundingBox::new(0, 0, self.page_w, self.page_h));
        if !window.fits_within(self.page_w, self.page_h) || window.is_empty() {
            return Err(DetectorError::InvalidRequest(format!(
                "window {window:?} is not inside the {}x{} page",
                self.page_w, self.page_h
            )));
        }
        if image.dimensions() != (window.w, window.h) {
            return Err(DetectorError::InvalidRequest(format!(
                "image is {}x{}, expected {}x{}",
                image.width(),
                image.height(),
                window.w,
                window.h
            )));
        }
        let whole = window == BoundingBox::new(0, 0, self.page_w, self.page_h);
        let crop = |m: &BinaryMask| {
            if whole {
                m.clone()
            } else {
                m.crop(window).expect("window checked against page")
            }
        };

        // Instances that are visible in the window and not blank.
        let mut present: Vec<(usize, BinaryMask)> = Vec::new();
        for (i, inst) in self.instances.iter().enumerate() {
            let visible = crop(&inst.presented);
            if !visible.is_empty() && !is_blank(image, &visible) {
                present.push((i, visible));
            }
        }
        let centres: Vec<(f64, f64)> = present.iter().map(|(_, m)| m.bbox().center()).collect();
        let image_area = f64::from(window.w) * f64::from(window.h);
        let r2 = self.cfg.crowd_radius * self.cfg.crowd_radius;

        let mut out = Vec::new();
        for (k, (i, visible)) in present.iter().enumerate() {
            let frac = visible.area() as f64 / image_area;
            if frac < self.cfg.min_area_fraction {
                continue;
            }
            let (cx, cy) = centres[k];
            let neighbours = centres
                .iter()
                .enumerate()
                .filter(|&(j, &(x, y))| j != k && (x - cx).powi(2) + (y - cy).powi(2) <= r2)
                .count();
            if neighbours > self.cfg.crowd_limit {
                continue;
            }
            let score = self.cfg.score(frac);
            if score < threshold {
                continue;
            }
            let inst = &self.instances[*i];
            let mut mask = crop(&inst.jittered);
            if mask.is_empty() {
                mask = visible.clone();
            }
            out.push(Detection::new(inst.category, score, mask).expect("mock scores lie in [0, 1]"));
        }
        Ok(out)
    }
}

impl Detector for MockDetector {
    fn detect(&self, req: &DetectorRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        self.run(req.image, req.window, req.score_threshold)
    }
}

/// One-shot form of [`MockDetector`]: detections on `presented`, or on the
/// `window` of it when `presented` is a crop.
pub fn mock_detect(
    gt: &PageAnnotation,
    presented: &Image,
    rec: &TransformRecord,
    window: Option<BoundingBox>,
    cfg: &MockDetectorConfig,
) -> Result<Vec<Detection>, DetectorError> {
    MockDetector::new(gt, rec, *cfg)?.run(presented, window, 0.0)
}

fn jitter(mask: &BinaryMask, seed: u64, index: u64, amplitude: u32) -> BinaryMask {
    if amplitude == 0 {
        return mask.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let r = rng.random_range(0..=amplitude);
    let grow: bool = rng.random();
    if r == 0 {
        mask.clone()
    } else if grow {
        mask.dilate(r)
    } else {
        let shrunk = mask.erode(r);
        if shrunk.is_empty() {
            mask.clone()
        } else {
            shrunk
        }
    }
}

fn is_blank(image: &Image, mask: &BinaryMask) -> bool {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut n = 0f64;
    for (x, y) in mask.iter_ones() {
        let p = image.get_pixel(x, y).0;
        for c in 0..3 {
            let v = f64::from(p[c]);
            sum[c] += v;
            sq[c] += v * v;
        }
        n += 1.0;
    }
    (0..3).all(|c| {
        let mean = sum[c] / n;
        sq[c] / n - mean * mean < VARIANCE_FLOOR
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::{CategoryKind, CategoryTable};
    use crate::detection::ImageId;

    fn textured(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = if (x / 2 + y / 3) % 2 == 0 { 20 } else { 230 };
            image::Rgb([v, v, v])
        })
    }

    fn page(w: u32, h: u32, boxes: &[BoundingBox]) -> PageAnnotation {
        let t = CategoryTable::default();
        let mut gt = PageAnnotation::new(ImageId::Num(1), w, h);
        for b in boxes {
            gt.push(t.by_kind(CategoryKind::TextBox), BinaryMask::from_rect(w, h, *b).unwrap())
                .unwrap();
        }
        gt
    }

    #[test]
    fn empty_page_gives_nothing() {
        let gt = page(50, 40, &[]);
        let img = Image::from_pixel(50, 40, image::Rgb([255; 3]));
        let out = mock_detect(&gt, &img, &TransformRecord::identity(), None, &MockDetectorConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn large_isolated_instance_saturates_score() {
        let b = BoundingBox::new(10, 10, 20, 10);
        let gt = page(50, 40, &[b]);
        let out = mock_detect(&gt, &textured(50, 40), &TransformRecord::identity(), None, &MockDetectorConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox(), b);
        assert_eq!(out[0].score(), 0.99);
    }

    #[test]
    fn area_fraction_threshold() {
        // 1% of a 100x100 page; half of min_area_fraction 0.02 is missed.
        let gt = page(100, 100, &[BoundingBox::new(10, 10, 10, 10)]);
        let cfg = MockDetectorConfig {
            min_area_fraction: 0.02,
            ..MockDetectorConfig::default()
        };
        let img = textured(100, 100);
        assert!(mock_detect(&gt, &img, &TransformRecord::identity(), None, &cfg).unwrap().is_empty());
        let cfg = MockDetectorConfig {
            min_area_fraction: 0.004,
            ..cfg
        };
        let out = mock_detect(&gt, &img, &TransformRecord::identity(), None, &cfg).unwrap();
        // 0.01 / (4 * 0.004) = 0.625 of the way from floor to ceil.
        assert!((out[0].score() - (0.5 + 0.49 * 0.625)).abs() < 1e-12);
    }

    #[test]
    fn crowding_and_slicing() {
        // Rows of 5, 5 and 2 boxes at a 12 px pitch: every centre sees 11 others.
        let boxes: Vec<BoundingBox> = (0..12).map(|i| BoundingBox::new(100 + (i % 5) * 12, 100 + (i / 5) * 12, 8, 8)).collect();
        let gt = page(400, 400, &boxes);
        let img = textured(400, 400);
        let cfg = MockDetectorConfig {
            min_area_fraction: 0.0,
            ..MockDetectorConfig::default()
        };
        let det = MockDetector::new(&gt, &TransformRecord::identity(), cfg).unwrap();
        let id = ImageId::Num(1);
        let req = DetectorRequest::new(&id, &img, 0.0).unwrap();
        assert!(det.detect(&req).unwrap().is_empty());

        // A window holding only the first row.
        let window = BoundingBox::new(96, 96, 64, 14);
        let sub = image::imageops::crop_imm(&img, window.x, window.y, window.w, window.h).to_image();
        let out = det.detect(&req.with_image(&sub, Some(window))).unwrap();
        assert_eq!(out.len(), 5, "{:?}", out.iter().map(|d| d.bbox()).collect::<Vec<_>>());
    }

    #[test]
    fn blank_regions_are_not_detected() {
        let b = BoundingBox::new(10, 10, 20, 10);
        let gt = page(50, 40, &[b]);
        let img = Image::from_pixel(50, 40, image::Rgb([240; 3]));
        let out = mock_detect(&gt, &img, &TransformRecord::identity(), None, &MockDetectorConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn threshold_and_determinism() {
        let gt = page(60, 60, &[BoundingBox::new(5, 5, 30, 30), BoundingBox::new(45, 45, 3, 3)]);
        let cfg = MockDetectorConfig {
            min_area_fraction: 0.001,
            jitter_px: 2,
            seed: 9,
            ..MockDetectorConfig::default()
        };
        let det = MockDetector::new(&gt, &TransformRecord::identity(), cfg).unwrap();
        let img = textured(60, 60);
        let id = ImageId::Num(1);
        let all = det.detect(&DetectorRequest::new(&id, &img, 0.0).unwrap()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all, det.detect(&DetectorRequest::new(&id, &img, 0.0).unwrap()).unwrap());
        let high = det.detect(&DetectorRequest::new(&id, &img, 0.9).unwrap()).unwrap();
        assert_eq!(high.len(), 1);
        for d in &all {
            let best = gt
                .instances()
                .iter()
                .map(|g| g.mask().iou(d.mask()).unwrap())
                .fold(0.0, f64::max);
            assert!(best >= 0.3);
        }
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let gt = page(50, 40, &[]);
        let det = MockDetector::new(&gt, &TransformRecord::identity(), MockDetectorConfig::default()).unwrap();
        let img = textured(40, 40);
        let id = ImageId::Num(1);
        assert!(det.detect(&DetectorRequest::new(&id, &img, 0.0).unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = MockDetectorConfig {
            score_floor: 0.9,
            score_ceil: 0.5,
            ..MockDetectorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MockDetectorConfig {
            min_area_fraction: 1.0,
            ..MockDetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
