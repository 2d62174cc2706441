//! Detections, page annotations and image identifiers.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::LayoutCategory;
use crate::mask::{BinaryMask, BoundingBox};

/// Opaque page identifier. COCO files use integers; other producers use strings.
///
/// Integers order before strings; integers compare numerically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Num(u64),
    Text(String),
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Num(n) => write!(f, "{n}"),
            ImageId::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for ImageId {
    fn from(n: u64) -> Self {
        ImageId::Num(n)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("instance mask is {got_w}x{got_h}, page is {want_w}x{want_h}")]
    WrongMaskSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

/// A scored, categorized instance mask. The bounding box is always derived
/// from the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: LayoutCategory,
    score: f64,
    mask: BinaryMask,
    bbox: BoundingBox,
}

impl Detection {
    pub fn new(category: LayoutCategory, score: f64, mask: BinaryMask) -> Result<Self, DetectionError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectionError::ScoreOutOfRange(score));
        }
        let bbox = mask.bbox();
        Ok(Self {
            category,
            score,
            mask,
            bbox,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn into_mask(self) -> BinaryMask {
        self.mask
    }

    /// Replaces the mask, recomputing the cached box.
    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.bbox = mask.bbox();
        self.mask = mask;
        self
    }
}

/// Ground-truth instances for one page. Instance scores are fixed at 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct PageAnnotation {
    pub image_id: ImageId,
    width: u32,
    height: u32,
    instances: Vec<Detection>,
}

impl PageAnnotation {
    pub fn new(image_id: ImageId, width: u32, height: u32) -> Self {
        Self {
            image_id,
            width,
            height,
            instances: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn instances(&self) -> &[Detection] {
        &self.instances
    }

    pub fn push(&mut self, category: LayoutCategory, mask: BinaryMask) -> Result<(), DetectionError> {
        if mask.dims() != (self.width, self.height) {
            return Err(DetectionError::WrongMaskSize {
                got_w: mask.width(),
                got_h: mask.height(),
                want_w: self.width,
                want_h: self.height,
            });
        }
        self.instances.push(Detection::new(category, 1.0, mask)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::CategoryKind;

    const PARA: LayoutCategory = LayoutCategory {
        id: 1,
        kind: CategoryKind::Paragraph,
    };

    #[test]
    fn bbox_derived_from_mask() {
        let m = BinaryMask::from_rect(20, 10, BoundingBox::new(3, 2, 5, 4)).unwrap();
        let d = Detection::new(PARA, 0.5, m).unwrap();
        assert_eq!(d.bbox(), BoundingBox::new(3, 2, 5, 4));
        let d = d.with_mask(BinaryMask::new(20, 10).unwrap());
        assert_eq!(d.bbox(), BoundingBox::default());
    }

    #[test]
    fn score_range_enforced() {
        let m = BinaryMask::new(2, 2).unwrap();
        assert!(Detection::new(PARA, 1.5, m.clone()).is_err());
        assert!(Detection::new(PARA, f64::NAN, m).is_err());
    }

    #[test]
    fn page_rejects_mismatched_mask() {
        let mut page = PageAnnotation::new(ImageId::Num(1), 10, 10);
        assert!(page.push(PARA, BinaryMask::new(10, 9).unwrap()).is_err());
        page.push(PARA, BinaryMask::new(10, 10).unwrap()).unwrap();
        assert_eq!(page.instances()[0].score(), 1.0);
    }

    #[test]
    fn image_id_ordering_and_serde() {
        let mut ids = vec![ImageId::from("b"), ImageId::from(10), ImageId::from(2), ImageId::from("a")];
        ids.sort();
        assert_eq!(
            ids,
            vec![ImageId::from(2), ImageId::from(10), ImageId::from("a"), ImageId::from("b")]
        );
        assert_eq!(serde_json::to_string(&ImageId::from(7)).unwrap(), "7");
        assert_eq!(serde_json::from_str::<ImageId>("\"x\"").unwrap(), ImageId::from("x"));
    }
}
