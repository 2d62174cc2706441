//! Dice and COCO-style mask mAP over a corpus of pages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::{CategoryKind, CategoryTable};
use crate::dataset::PredictionMap;
use crate::detection::{Detection, ImageId, PageAnnotation};
use crate::mask::{BinaryMask, MaskError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction for image {0} which has no ground truth")]
    UnknownImage(ImageId),
    #[error("ground truth lists image {0} twice")]
    DuplicatePage(ImageId),
    #[error("image {image_id}: {source}")]
    Mask { image_id: ImageId, source: MaskError },
}

/// `2|P ∧ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice_pair(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MaskError> {
    let inter = pred.intersection_area(gt)?;
    let total = pred.area() + gt.area();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceCell {
    pub image_id: ImageId,
    pub category: CategoryKind,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    /// One cell per page and category, pages in id order.
    pub per_page_category: Vec<DiceCell>,
    pub per_category: BTreeMap<CategoryKind, f64>,
    /// Mean over all cells.
    pub overall: f64,
}

fn index_pages<'a>(preds: &PredictionMap, gts: &'a [PageAnnotation]) -> Result<BTreeMap<&'a ImageId, &'a PageAnnotation>, EvalError> {
    let mut pages = BTreeMap::new();
    for page in gts {
        if pages.insert(&page.image_id, page).is_some() {
            return Err(EvalError::DuplicatePage(page.image_id.clone()));
        }
    }
    if let Some(id) = preds.keys().find(|id| !pages.contains_key(id)) {
        return Err(EvalError::UnknownImage(id.clone()));
    }
    Ok(pages)
}

fn union_of<'a>(width: u32, height: u32, masks: impl Iterator<Item = &'a BinaryMask>) -> Result<BinaryMask, MaskError> {
    let mut out = BinaryMask::new(width, height)?;
    for m in masks {
        out.union_in_place(m)?;
    }
    Ok(out)
}

/// Per page and category, the union of predicted masks against the union of
/// ground-truth masks. Pages without predictions count as empty predictions.
pub fn dice_corpus(
    preds: &PredictionMap,
    gts: &[PageAnnotation],
    categories: &CategoryTable,
) -> Result<DiceReport, EvalError> {
    let pages = index_pages(preds, gts)?;
    let none = Vec::new();
    let mut cells = Vec::new();
    for (id, page) in &pages {
        let page_preds = preds.get(*id).unwrap_or(&none);
        let wrap = |source| EvalError::Mask {
            image_id: (*id).clone(),
            source,
        };
        for cat in categories.iter() {
            let p = union_of(
                page.width(),
                page.height(),
                page_preds.iter().filter(|d| d.category == cat).map(Detection::mask),
            )
            .map_err(wrap)?;
            let g = union_of(
                page.width(),
                page.height(),
                page.instances().iter().filter(|d| d.category == cat).map(Detection::mask),
            )
            .map_err(wrap)?;
            cells.push(DiceCell {
                image_id: (*id).clone(),
                category: cat.kind,
                dice: dice_pair(&p, &g).map_err(wrap)?,
            });
        }
    }
    let mut per_category = BTreeMap::new();
    for cat in categories.iter() {
        let vals: Vec<f64> = cells.iter().filter(|c| c.category == cat.kind).map(|c| c.dice).collect();
        per_category.insert(cat.kind, mean(&vals));
    }
    let overall = mean(&cells.iter().map(|c| c.dice).collect::<Vec<_>>());
    Ok(DiceReport {
        per_page_category: cells,
        per_category,
        overall,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Predictions and ground truth of one category on one page.
#[derive(Debug, Clone, Default)]
pub struct PageMatches {
    /// Prediction scores in input order.
    pub scores: Vec<f64>,
    pub gt_count: usize,
    /// `ious[p][g]` for prediction `p` and ground truth `g`.
    pub ious: Vec<Vec<f64>>,
}

impl PageMatches {
    pub fn new(preds: &[&Detection], gts: &[&BinaryMask]) -> Result<Self, MaskError> {
        let mut ious = Vec::with_capacity(preds.len());
        for p in preds {
            let pb = p.bbox();
            let row = gts
                .iter()
                .map(|g| {
                    let gb = g.bbox();
                    let disjoint = pb.x >= gb.right() || gb.x >= pb.right() || pb.y >= gb.bottom() || gb.y >= pb.bottom();
                    if disjoint && p.mask().dims() == g.dims() {
                        Ok(0.0)
                    } else {
                        p.mask().iou(g)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            ious.push(row);
        }
        Ok(Self {
            scores: preds.iter().map(|p| p.score()).collect(),
            gt_count: gts.len(),
            ious,
        })
    }
}

/// 101-point interpolated average precision pooled over pages, or `None`
/// when there is no ground truth.
///
/// Predictions are taken in descending score order, ties in input order
/// (pages first, then position within the page). Each one claims the
/// unmatched ground truth of highest IoU on its page, if that IoU reaches
/// `iou_threshold`.
pub fn average_precision(pages: &[PageMatches], iou_threshold: f64) -> Option<f64> {
    let n_gt: usize = pages.iter().map(|p| p.gt_count).sum();
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<(usize, usize)> = pages
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.scores.len()).map(move |i| (pi, i)))
        .collect();
    order.sort_by(|a, b| pages[b.0].scores[b.1].total_cmp(&pages[a.0].scores[a.1]));

    let mut taken: Vec<Vec<bool>> = pages.iter().map(|p| vec![false; p.gt_count]).collect();
    // (true positives so far, predictions so far) after each prediction.
    let mut curve = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &(pi, i)) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &iou) in pages[pi].ious[i].iter().enumerate() {
            if taken[pi][g] || iou < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[pi][g] = true;
            tp += 1;
        }
        curve.push((tp, k + 1));
    }

    // Running maximum of precision from the right.
    let mut interp = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for (j, &(tp, n)) in curve.iter().enumerate().rev() {
        running = running.max(tp as f64 / n as f64);
        interp[j] = running;
    }
    let mut total = 0.0;
    let mut j = 0;
    for r in 0..=100usize {
        // First point whose recall tp / n_gt reaches r / 100.
        while j < curve.len() && curve[j].0 * 100 < r * n_gt {
            j += 1;
        }
        if j < curve.len() {
            total += interp[j];
        }
    }
    Some(total / 101.0)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// Mean AP over thresholds, for categories that have ground truth.
    pub per_category_ap: BTreeMap<CategoryKind, f64>,
    /// AP at each threshold, aligned with `iou_thresholds`.
    pub per_category_threshold_ap: BTreeMap<CategoryKind, Vec<f64>>,
    pub map_value: f64,
    pub iou_thresholds: Vec<f64>,
}

/// Mask mAP pooled over pages. Categories with no ground truth anywhere are
/// left out of the mean.
pub fn map_corpus(
    preds: &PredictionMap,
    gts: &[PageAnnotation],
    categories: &CategoryTable,
    thresholds: &[f64],
) -> Result<MapReport, EvalError> {
    let pages = index_pages(preds, gts)?;
    let none = Vec::new();
    let mut per_category_ap = BTreeMap::new();
    let mut per_category_threshold_ap = BTreeMap::new();
    for cat in categories.iter() {
        let mut matches = Vec::with_capacity(pages.len());
        for (id, page) in &pages {
            let p: Vec<&Detection> = preds.get(*id).unwrap_or(&none).iter().filter(|d| d.category == cat).collect();
            let g: Vec<&BinaryMask> = page.instances().iter().filter(|d| d.category == cat).map(Detection::mask).collect();
            matches.push(PageMatches::new(&p, &g).map_err(|source| EvalError::Mask {
                image_id: (*id).clone(),
                source,
            })?);
        }
        let aps: Option<Vec<f64>> = thresholds.iter().map(|&t| average_precision(&matches, t)).collect();
        if let Some(aps) = aps {
            per_category_ap.insert(cat.kind, mean(&aps));
            per_category_threshold_ap.insert(cat.kind, aps);
        }
    }
    let map_value = mean(&per_category_ap.values().copied().collect::<Vec<_>>());
    Ok(MapReport {
        per_category_ap,
        per_category_threshold_ap,
        map_value,
        iou_thresholds: thresholds.to_vec(),
    })
}

impl DiceReport {
    /// Per-category and overall Dice as an aligned table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12}{:>10}\n", "category", "dice");
        for (k, v) in &self.per_category {
            let _ = writeln!(s, "{:<12}{:>10.6}", k.name(), v);
        }
        let _ = writeln!(s, "{:<12}{:>10.6}", "overall", self.overall);
        s
    }
}

impl MapReport {
    /// Per-category AP and mAP in percent as an aligned table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12}{:>10}\n", "category", "AP");
        for (k, v) in &self.per_category_ap {
            let _ = writeln!(s, "{:<12}{:>10.3}", k.name(), v * 100.0);
        }
        let _ = writeln!(s, "{:<12}{:>10.3}", "mAP", self.map_value * 100.0);
        s
    }
}
