//! The detector contract and its two implementations: a deterministic mock
//! driven by ground truth, and a client for external model processes.

mod external;
mod mock;
pub mod protocol;

use thiserror::Error;

use crate::detection::{Detection, ImageId};
use crate::mask::BoundingBox;
use crate::preprocess::Image;

pub use external::{Endpoint, ExternalConfig, ExternalDetector};
pub use mock::{mock_detect, MockDetector, MockDetectorConfig, VARIANCE_FLOOR};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("invalid detector request: {0}")]
    InvalidRequest(String),
    #[error("detector unavailable: {0}")]
    Unavailable(String),
    #[error("protocol violation for request {id}: {message}")]
    Protocol { id: String, message: String },
    #[error("request {id} timed out after {secs:.1} s")]
    Timeout { id: String, secs: f64 },
    #[error("detector reported an error for request {id}: {message}")]
    Remote { id: String, message: String },
}

/// One page (or page window) to run detection on.
#[derive(Debug, Clone, Copy)]
pub struct DetectorRequest<'a> {
    pub image_id: &'a ImageId,
    pub image: &'a Image,
    pub score_threshold: f64,
    /// Where `image` sits on the presented page when it is a crop of it.
    /// External backends ignore this; the mock uses it to locate ground truth.
    pub window: Option<BoundingBox>,
}

impl<'a> DetectorRequest<'a> {
    pub fn new(image_id: &'a ImageId, image: &'a Image, score_threshold: f64) -> Result<Self, DetectorError> {
        if !(0.0..=1.0).contains(&score_threshold) {
            return Err(DetectorError::InvalidRequest(format!(
                "score threshold {score_threshold} outside [0, 1]"
            )));
        }
        Ok(Self {
            image_id,
            image,
            score_threshold,
            window: None,
        })
    }

    pub fn with_image(self, image: &'a Image, window: Option<BoundingBox>) -> Self {
        Self { image, window, ..self }
    }
}

/// Anything that turns a page image into scored instance masks.
///
/// Returned masks are in the coordinates of `req.image` and every score is at
/// least `req.score_threshold`. Implementations must be deterministic for a
/// given instance and request, and safe to call from several threads.
pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectorRequest<'_>) -> Result<Vec<Detection>, DetectorError>;
}

impl<T: Detector + ?Sized> Detector for &T {
    fn detect(&self, req: &DetectorRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        (**self).detect(req)
    }
}

impl<T: Detector + ?Sized> Detector for Box<T> {
    fn detect(&self, req: &DetectorRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        (**self).detect(req)
    }
}
