//! Detector-agnostic document layout analysis pipeline.
//!
//! Pages are decomposed into paragraphs, text boxes, images and tables. The
//! neural model sits behind the [`detector::Detector`] trait; everything
//! around it (mask algebra, RLE interchange, preprocessing and augmentation,
//! sliced and two-pass inference, Dice/mAP scoring, learning-rate schedule
//! arithmetic) lives here.

pub mod category;
pub mod dataset;
pub mod detection;
pub mod detector;
pub mod eval;
pub mod mask;
pub mod preprocess;
pub mod rle;
pub mod schedule;
pub mod sliced;
pub mod two_pass;

pub use category::{CategoryKind, CategoryTable, LayoutCategory};
pub use detection::{Detection, ImageId, PageAnnotation};
pub use mask::{BinaryMask, BoundingBox, MaskError};
pub use rle::{RleError, RleMask};
