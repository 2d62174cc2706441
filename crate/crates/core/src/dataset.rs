//! COCO-style annotation ingestion and result files.
//!
//! The index keeps page metadata and raw segmentation records only. Masks
//! are decoded when a page's annotation is requested and pixel data is read
//! from disk on demand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::category::{CategoryError, CategoryTable, LayoutCategory};
use crate::detection::{Detection, DetectionError, ImageId, PageAnnotation};
use crate::rle::{RleError, RleMask};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("annotation file has no {0:?} array")]
    MissingArray(&'static str),
    #[error("{array}[{index}]: {message}")]
    BadRecord {
        array: &'static str,
        index: usize,
        message: String,
    },
    #[error("category table: {0}")]
    Category(#[from] CategoryError),
    #[error("duplicate image id {0}")]
    DuplicateImage(ImageId),
    #[error("annotations[{index}] references unknown image id {image_id}")]
    DanglingImage { index: usize, image_id: ImageId },
    #[error("annotations[{index}] references unknown category id {category_id}")]
    DanglingCategory { index: usize, category_id: u32 },
    #[error("annotations[{index}]: segmentation is {seg_h}x{seg_w} but image {image_id} is {page_h}x{page_w}")]
    SizeMismatch {
        index: usize,
        image_id: ImageId,
        seg_h: u32,
        seg_w: u32,
        page_h: u32,
        page_w: u32,
    },
    #[error("annotations[{index}]: polygon segmentation is unsupported, expected RLE")]
    PolygonUnsupported { index: usize },
    #[error("annotations[{index}]: {source}")]
    Segmentation { index: usize, source: RleError },
    #[error("unknown image id {0}")]
    UnknownImage(ImageId),
    #[error("image {image_id}: {message}")]
    Image { image_id: ImageId, message: String },
    #[error("predictions[{index}]: {message}")]
    BadPrediction { index: usize, message: String },
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Metadata for one page image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageInfo {
    pub file_name: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
enum RawCounts {
    Compressed(String),
    Runs(Vec<u32>),
}

#[derive(Debug, Clone)]
struct RawInstance {
    index: usize,
    category: LayoutCategory,
    height: u32,
    width: u32,
    counts: RawCounts,
}

/// Cross-referenced view of an annotation file.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    categories: CategoryTable,
    pages: BTreeMap<ImageId, PageInfo>,
    instances: BTreeMap<ImageId, Vec<RawInstance>>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: ImageId,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: ImageId,
    category_id: u32,
    segmentation: Value,
}

#[derive(Deserialize)]
struct RleRecord {
    size: [u32; 2],
    counts: Value,
}

fn records<'a, T: Deserialize<'a>>(doc: &'a Value, array: &'static str) -> Result<Vec<T>, DatasetError> {
    let items = doc
        .get(array)
        .and_then(Value::as_array)
        .ok_or(DatasetError::MissingArray(array))?;
    items
        .iter()
        .enumerate()
        .map(|(index, v)| {
            T::deserialize(v).map_err(|e| DatasetError::BadRecord {
                array,
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

fn parse_counts(seg: &Value, index: usize) -> Result<(u32, u32, RawCounts), DatasetError> {
    if seg.is_array() {
        return Err(DatasetError::PolygonUnsupported { index });
    }
    let rec = RleRecord::deserialize(seg).map_err(|e| DatasetError::BadRecord {
        array: "annotations",
        index,
        message: format!("segmentation: {e}"),
    })?;
    let [h, w] = rec.size;
    let counts = match rec.counts {
        Value::String(s) => RawCounts::Compressed(s),
        Value::Array(items) => RawCounts::Runs(
            items
                .iter()
                .map(|v| v.as_u64().and_then(|n| u32::try_from(n).ok()))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| DatasetError::BadRecord {
                    array: "annotations",
                    index,
                    message: "segmentation counts must be non-negative integers".into(),
                })?,
        ),
        _ => {
            return Err(DatasetError::BadRecord {
                array: "annotations",
                index,
                message: "segmentation counts must be a string or an array".into(),
            })
        }
    };
    Ok((h, w, counts))
}

impl RawInstance {
    fn rle(&self) -> Result<RleMask, DatasetError> {
        let res = match &self.counts {
            RawCounts::Compressed(s) => RleMask::from_compressed(s.as_bytes(), self.height, self.width),
            RawCounts::Runs(c) => RleMask::new(self.height, self.width, c.clone()),
        };
        res.map_err(|source| DatasetError::Segmentation {
            index: self.index,
            source,
        })
    }
}

/// Reads a COCO-style annotation file. Image paths resolve against `image_root`.
pub fn load_dataset(annotation_file: &Path, image_root: &Path) -> Result<DatasetIndex, DatasetError> {
    let bytes = fs::read(annotation_file).map_err(|e| DatasetError::io(annotation_file, e))?;
    let doc: Value = serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json {
        path: annotation_file.to_path_buf(),
        source,
    })?;
    DatasetIndex::from_json(&doc, image_root)
}

impl DatasetIndex {
    pub fn from_json(doc: &Value, image_root: &Path) -> Result<Self, DatasetError> {
        let images: Vec<CocoImage> = records(doc, "images")?;
        let annotations: Vec<CocoAnnotation> = records(doc, "annotations")?;
        let cats: Vec<CocoCategory> = records(doc, "categories")?;

        let categories = CategoryTable::from_pairs(cats.iter().map(|c| (c.id, c.name.as_str())))?;

        let mut pages = BTreeMap::new();
        for (index, img) in images.into_iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(DatasetError::BadRecord {
                    array: "images",
                    index,
                    message: format!("non-positive size {}x{}", img.width, img.height),
                });
            }
            let info = PageInfo {
                path: image_root.join(&img.file_name),
                file_name: img.file_name,
                width: img.width,
                height: img.height,
            };
            if pages.insert(img.id.clone(), info).is_some() {
                return Err(DatasetError::DuplicateImage(img.id));
            }
        }

        let mut instances: BTreeMap<ImageId, Vec<RawInstance>> =
            pages.keys().map(|id| (id.clone(), Vec::new())).collect();
        for (index, ann) in annotations.into_iter().enumerate() {
            let Some(page) = pages.get(&ann.image_id) else {
                return Err(DatasetError::DanglingImage {
                    index,
                    image_id: ann.image_id,
                });
            };
            let category = categories
                .get(ann.category_id)
                .map_err(|_| DatasetError::DanglingCategory {
                    index,
                    category_id: ann.category_id,
                })?;
            let (height, width, counts) = parse_counts(&ann.segmentation, index)?;
            if (height, width) != (page.height, page.width) {
                return Err(DatasetError::SizeMismatch {
                    index,
                    image_id: ann.image_id,
                    seg_h: height,
                    seg_w: width,
                    page_h: page.height,
                    page_w: page.width,
                });
            }
            instances.entry(ann.image_id).or_default().push(RawInstance {
                index,
                category,
                height,
                width,
                counts,
            });
        }

        Ok(Self {
            categories,
            pages,
            instances,
        })
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Page ids in ascending order.
    pub fn image_ids(&self) -> impl Iterator<Item = &ImageId> {
        self.pages.keys()
    }

    pub fn pages(&self) -> impl Iterator<Item = (&ImageId, &PageInfo)> {
        self.pages.iter()
    }

    pub fn page(&self, id: &ImageId) -> Option<&PageInfo> {
        self.pages.get(id)
    }

    pub fn instance_count(&self, id: &ImageId) -> usize {
        self.instances.get(id).map_or(0, Vec::len)
    }

    /// Decodes the ground truth of one page.
    pub fn annotation(&self, id: &ImageId) -> Result<PageAnnotation, DatasetError> {
        let page = self.pages.get(id).ok_or_else(|| DatasetError::UnknownImage(id.clone()))?;
        let mut out = PageAnnotation::new(id.clone(), page.width, page.height);
        for raw in self.instances.get(id).into_iter().flatten() {
            let mask = raw.rle()?.decode().map_err(|source| DatasetError::Segmentation {
                index: raw.index,
                source,
            })?;
            out.push(raw.category, mask).map_err(|e| DatasetError::BadRecord {
                array: "annotations",
                index: raw.index,
                message: e.to_string(),
            })?;
        }
        Ok(out)
    }

    /// Reads and decodes a page image as 8-bit RGB, checking its size.
    pub fn load_image(&self, id: &ImageId) -> Result<RgbImage, DatasetError> {
        let page = self.pages.get(id).ok_or_else(|| DatasetError::UnknownImage(id.clone()))?;
        let img = image::open(&page.path)
            .map_err(|e| DatasetError::Image {
                image_id: id.clone(),
                message: format!("{}: {e}", page.path.display()),
            })?
            .to_rgb8();
        if img.dimensions() != (page.width, page.height) {
            return Err(DatasetError::Image {
                image_id: id.clone(),
                message: format!(
                    "decoded size {}x{} differs from annotated {}x{}",
                    img.width(),
                    img.height(),
                    page.width,
                    page.height
                ),
            });
        }
        Ok(img)
    }
}

pub type PredictionMap = BTreeMap<ImageId, Vec<Detection>>;

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn segmentation_json(out: &mut String, det: &Detection) {
    let rle = RleMask::encode(det.mask());
    write!(
        out,
        "{{\"size\":[{},{}],\"counts\":{}}}",
        rle.height(),
        rle.width(),
        json_string(&rle.to_compressed())
    )
    .expect("writing to a String cannot fail");
}

/// Canonical result-file text: one record per detection, sorted by image id
/// then descending score, fixed key order, no whitespace, 6-digit scores.
pub fn predictions_to_string(detections: &PredictionMap) -> String {
    let mut out = String::from("[");
    let mut first = true;
    for (image_id, dets) in detections {
        let mut order: Vec<&Detection> = dets.iter().collect();
        order.sort_by(|a, b| b.score().total_cmp(&a.score()));
        let id = serde_json::to_string(image_id).expect("image id serialization cannot fail");
        for det in order {
            if !first {
                out.push(',');
            }
            first = false;
            write!(
                out,
                "{{\"image_id\":{id},\"category_id\":{},\"score\":{:.6},\"segmentation\":",
                det.category.id,
                det.score()
            )
            .expect("writing to a String cannot fail");
            segmentation_json(&mut out, det);
            out.push('}');
        }
    }
    out.push(']');
    out
}

pub fn write_predictions(detections: &PredictionMap, out: &Path) -> Result<(), DatasetError> {
    fs::write(out, predictions_to_string(detections)).map_err(|e| DatasetError::io(out, e))
}

#[derive(Deserialize)]
struct PredictionRecord {
    image_id: ImageId,
    category_id: u32,
    score: f64,
    segmentation: RleRecord,
}

pub fn predictions_from_json(doc: &Value, categories: &CategoryTable) -> Result<PredictionMap, DatasetError> {
    let items = doc.as_array().ok_or_else(|| DatasetError::BadPrediction {
        index: 0,
        message: "result file must be a JSON array".into(),
    })?;
    let mut out = PredictionMap::new();
    for (index, item) in items.iter().enumerate() {
        let bad = |message: String| DatasetError::BadPrediction { index, message };
        let rec = PredictionRecord::deserialize(item).map_err(|e| bad(e.to_string()))?;
        let category = categories.get(rec.category_id).map_err(|e| bad(e.to_string()))?;
        let [h, w] = rec.segmentation.size;
        let rle = match &rec.segmentation.counts {
            Value::String(s) => RleMask::from_compressed(s.as_bytes(), h, w),
            _ => return Err(bad("segmentation counts must be a compressed string".into())),
        }
        .map_err(|e| bad(e.to_string()))?;
        let mask = rle.decode().map_err(|e| bad(e.to_string()))?;
        let det = Detection::new(category, rec.score, mask).map_err(|e: DetectionError| bad(e.to_string()))?;
        out.entry(rec.image_id).or_default().push(det);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path, categories: &CategoryTable) -> Result<PredictionMap, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let doc: Value = serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    predictions_from_json(&doc, categories)
}

/// Canonical COCO annotation text for a set of pages. Annotation ids are
/// assigned sequentially from 1 in page order.
pub fn annotations_to_string<'a>(
    categories: &CategoryTable,
    pages: impl IntoIterator<Item = (&'a str, &'a PageAnnotation)>,
) -> String {
    let mut images = String::new();
    let mut anns = String::new();
    let mut next_id = 1u64;
    for (file_name, page) in pages {
        if !images.is_empty() {
            images.push(',');
        }
        let id = serde_json::to_string(&page.image_id).expect("image id serialization cannot fail");
        write!(
            images,
            "{{\"id\":{id},\"file_name\":{},\"width\":{},\"height\":{}}}",
            json_string(file_name),
            page.width(),
            page.height()
        )
        .expect("writing to a String cannot fail");
        for inst in page.instances() {
            if !anns.is_empty() {
                anns.push(',');
            }
            write!(
                anns,
                "{{\"id\":{next_id},\"image_id\":{id},\"category_id\":{},\"segmentation\":",
                inst.category.id
            )
            .expect("writing to a String cannot fail");
            segmentation_json(&mut anns, inst);
            anns.push('}');
            next_id += 1;
        }
    }
    let cats: Vec<String> = categories
        .iter()
        .map(|c| format!("{{\"id\":{},\"name\":{}}}", c.id, json_string(c.kind.name())))
        .collect();
    format!(
        "{{\"images\":[{images}],\"annotations\":[{anns}],\"categories\":[{}]}}",
        cats.join(",")
    )
}
