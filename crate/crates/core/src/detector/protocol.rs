//! Wire format shared by external detectors: one JSON object per line over a
//! child process's stdio, or the same bodies over `POST /detect`.
//!
//! ```text
//! request:  {"id", "width", "height", "image_png_base64", "score_threshold"}
//! response: {"id", "detections": [{"category_id", "score", "segmentation": {"size": [h, w], "counts"}}]}
//! error:    {"id", "error"}
//! ```

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::ImageFormat;
use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::detection::Detection;
use crate::preprocess::Image;
use crate::rle::RleMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub image_png_base64: String,
    pub score_threshold: f64,
}

impl WireRequest {
    pub fn new(id: String, image: &Image, score_threshold: f64) -> Self {
        let mut png = Vec::new();
        image
            .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        Self {
            id,
            width: image.width(),
            height: image.height(),
            image_png_base64: STANDARD.encode(png),
            score_threshold,
        }
    }

    /// Decodes the embedded PNG and checks it against the declared size.
    pub fn decode_image(&self) -> Result<Image, String> {
        let png = STANDARD
            .decode(self.image_png_base64.as_bytes())
            .map_err(|e| format!("image_png_base64: {e}"))?;
        let img = image::load_from_memory_with_format(&png, ImageFormat::Png)
            .map_err(|e| format!("image_png_base64: {e}"))?
            .to_rgb8();
        if img.dimensions() != (self.width, self.height) {
            return Err(format!(
                "image is {}x{}, request declares {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            ));
        }
        Ok(img)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSegmentation {
    pub size: [u32; 2],
    pub counts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub category_id: u32,
    pub score: f64,
    pub segmentation: WireSegmentation,
}

impl WireDetection {
    pub fn from_detection(det: &Detection) -> Self {
        let rle = RleMask::encode(det.mask());
        Self {
            category_id: det.category.id,
            score: det.score(),
            segmentation: WireSegmentation {
                size: [rle.height(), rle.width()],
                counts: rle.to_compressed(),
            },
        }
    }
}

/// A parsed response line: either detections or a backend error, tagged by id.
#[derive(Debug, Clone, PartialEq)]
pub enum WireResponse {
    Detections { id: String, detections: Vec<WireDetection> },
    Error { id: String, message: String },
}

#[derive(Deserialize)]
struct RawResponse {
    id: String,
    #[serde(default)]
    detections: Option<Vec<WireDetection>>,
    #[serde(default)]
    error: Option<String>,
}

impl WireResponse {
    pub fn id(&self) -> &str {
        match self {
            WireResponse::Detections { id, .. } | WireResponse::Error { id, .. } => id,
        }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let raw: RawResponse = serde_json::from_str(line).map_err(|e| format!("malformed response: {e}"))?;
        match (raw.detections, raw.error) {
            (Some(detections), None) => Ok(WireResponse::Detections { id: raw.id, detections }),
            (None, Some(message)) => Ok(WireResponse::Error { id: raw.id, message }),
            (Some(_), Some(_)) => Err(format!("response {} carries both detections and error", raw.id)),
            (None, None) => Err(format!("response {} carries neither detections nor error", raw.id)),
        }
    }

    pub fn to_line(&self) -> String {
        let v = match self {
            WireResponse::Detections { id, detections } => serde_json::json!({"id": id, "detections": detections}),
            WireResponse::Error { id, message } => serde_json::json!({"id": id, "error": message}),
        };
        v.to_string()
    }
}

/// Validates wire detections against the request and decodes their masks.
/// Detections scoring below `score_threshold` are dropped. A bad record is
/// reported by its index in the response.
pub fn decode_detections(
    records: &[WireDetection],
    categories: &CategoryTable,
    width: u32,
    height: u32,
    score_threshold: f64,
) -> Result<Vec<Detection>, String> {
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let bad = |msg: String| format!("detection {i}: {msg}");
        let category = categories.get(rec.category_id).map_err(|e| bad(e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(bad(format!("score {} outside [0, 1]", rec.score)));
        }
        let [h, w] = rec.segmentation.size;
        if (w, h) != (width, height) {
            return Err(bad(format!("size [{h}, {w}] does not match the {width}x{height} request")));
        }
        let mask = RleMask::from_compressed(rec.segmentation.counts.as_bytes(), h, w)
            .and_then(|r| r.decode())
            .map_err(|e| bad(e.to_string()))?;
        if rec.score < score_threshold {
            continue;
        }
        out.push(Detection::new(category, rec.score, mask).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}
