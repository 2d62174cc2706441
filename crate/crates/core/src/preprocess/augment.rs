use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mask::BinaryMask;

use super::geometry::{flip, rotate_discrete, rotate_small, MAX_SMALL_ROTATION_DEG};
use super::photometric::adjust_photometric;
use super::{Image, PreprocessError, TransformRecord};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * u
        }
    }
}

/// Randomized augmentation settings. Discrete quarter-turn rotations and flips
/// are off by default; small rotations default to ±5°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub brightness_range: Interval,
    pub contrast_range: Interval,
    pub saturation_range: Interval,
    pub rotation_range_deg: Interval,
    pub discrete_rotations_enabled: bool,
    pub flips_enabled: bool,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            brightness_range: Interval::new(0.9, 1.1),
            contrast_range: Interval::new(0.9, 1.1),
            saturation_range: Interval::new(0.9, 1.1),
            rotation_range_deg: Interval::new(-5.0, 5.0),
            discrete_rotations_enabled: false,
            flips_enabled: false,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let photometric = [
            ("brightness", self.brightness_range),
            ("contrast", self.contrast_range),
            ("saturation", self.saturation_range),
        ];
        for (name, r) in photometric {
            if !(r.lo <= r.hi && r.contains(1.0) && r.lo > 0.0) {
                return Err(PreprocessError::InvalidInterval { name, lo: r.lo, hi: r.hi });
            }
        }
        let r = self.rotation_range_deg;
        if !(r.lo <= r.hi && r.lo >= -MAX_SMALL_ROTATION_DEG && r.hi <= MAX_SMALL_ROTATION_DEG) {
            return Err(PreprocessError::InvalidInterval {
                name: "rotation",
                lo: r.lo,
                hi: r.hi,
            });
        }
        Ok(())
    }
}

/// Concrete augmentation parameters for one page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub rotation_deg: f64,
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

/// Deterministic draw for `(policy.seed, page_index)`. Every parameter is
/// always drawn in a fixed order, so toggling a feature never shifts the
/// others; disabled features then report identity values.
pub fn sample_augmentation(policy: &AugmentPolicy, page_index: u64) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(page_index);
    let brightness = policy.brightness_range.sample(&mut rng);
    let contrast = policy.contrast_range.sample(&mut rng);
    let saturation = policy.saturation_range.sample(&mut rng);
    let rotation_deg = policy.rotation_range_deg.sample(&mut rng);
    let quarter_turns = rng.random_range(0..4u8);
    let flip_h: bool = rng.random();
    let flip_v: bool = rng.random();
    AugmentParams {
        brightness,
        contrast,
        saturation,
        rotation_deg,
        quarter_turns: if policy.discrete_rotations_enabled { quarter_turns } else { 0 },
        flip_h: policy.flips_enabled && flip_h,
        flip_v: policy.flips_enabled && flip_v,
    }
}

/// Applies photometric changes, quarter turns, the small rotation and flips,
/// in that order.
pub fn apply_augmentation(
    img: &Image,
    masks: &[BinaryMask],
    params: &AugmentParams,
    fill: [u8; 3],
) -> Result<(Image, Vec<BinaryMask>, TransformRecord), PreprocessError> {
    let out = adjust_photometric(img, params.brightness, params.contrast, params.saturation)?;
    let (out, masks, turned) = rotate_discrete(&out, masks, params.quarter_turns);
    let (out, masks, rotated) = rotate_small(&out, &masks, params.rotation_deg, fill)?;
    let (out, masks, flipped) = flip(&out, &masks, params.flip_h, params.flip_v);
    let rec = turned.then(&rotated)?.then(&flipped)?;
    Ok((out, masks, rec))
}
