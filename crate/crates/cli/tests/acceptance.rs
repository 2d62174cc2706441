//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use doclayout_core::dataset::{annotations_to_string, PredictionMap};
use doclayout_core::detector::{Detector, DetectorRequest, MockDetector, MockDetectorConfig};
use doclayout_core::eval::{average_precision, coco_thresholds, dice_corpus, map_corpus, PageMatches};
use doclayout_core::preprocess::{
    denormalize, forward_mask, invert_mask, invert_transform, normalize, resize_pad, rotate_discrete, rotate_small,
    Image, NormalizationStats, TransformRecord,
};
use doclayout_core::schedule::{PhasePlan, ScheduleConfig};
use doclayout_core::sliced::{merge_detections, plan_slices, run_sliced, MergeConfig};
use doclayout_core::two_pass::{run_two_pass, TwoPassConfig};
use doclayout_core::{BinaryMask, BoundingBox, CategoryKind, CategoryTable, Detection, ImageId, PageAnnotation, RleMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: [(&str, fn() -> Check); 9] = [
        ("rle codec", rle_codec),
        ("mask algebra", mask_algebra),
        ("lr schedule", lr_schedule),
        ("dice and map", dice_and_map),
        ("sliced inference", sliced_inference),
        ("split instance merge", split_instance_merge),
        ("two-pass inference", two_pass),
        ("preprocessing roundtrips", preprocessing),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} of {} passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    match rng.random_range(0..3) {
        0 => {
            let p = rng.random_range(0.0..=1.0);
            BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p)).unwrap()
        }
        1 => {
            let mut m = BinaryMask::new(w, h).unwrap();
            for _ in 0..rng.random_range(0..6) {
                let x = rng.random_range(0..w);
                let y = rng.random_range(0..h);
                let b = BoundingBox::new(x, y, rng.random_range(1..=w - x), rng.random_range(1..=h - y));
                m.union_in_place(&BinaryMask::from_rect(w, h, b).unwrap()).unwrap();
            }
            m
        }
        _ => {
            let period = rng.random_range(1..=9);
            BinaryMask::from_fn(w, h, |x, y| (x * 3 + y) / period % 2 == 0).unwrap()
        }
    }
}

/// Column-major runs, starting with a (possibly empty) run of zeros.
fn oracle_counts(m: &BinaryMask) -> Vec<u32> {
    let mut counts = vec![0];
    let mut current = false;
    for x in 0..m.width() {
        for y in 0..m.height() {
            if m.get(x, y) != current {
                counts.push(0);
                current = !current;
            }
            *counts.last_mut().unwrap() += 1;
        }
    }
    counts
}

fn oracle_string(counts: &[u32]) -> String {
    let mut s = String::new();
    for (i, &c) in counts.iter().enumerate() {
        let mut x = i64::from(c);
        if i > 2 {
            x -= i64::from(counts[i - 2]);
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            s.push((c as u8 + 48) as char);
            if !more {
                break;
            }
        }
    }
    s
}

fn rle_case(m: &BinaryMask) -> Result<(), String> {
    let rle = RleMask::encode(m);
    let counts = oracle_counts(m);
    ensure!(rle.counts() == counts.as_slice(), "{}x{}: counts {:?} != {:?}", m.width(), m.height(), rle.counts(), counts);
    ensure!(rle.area() == m.area(), "area mismatch");
    ensure!(&rle.decode().map_err(|e| e.to_string())? == m, "decode differs");
    let s = oracle_string(&counts);
    ensure!(rle.to_compressed() == s, "string {} != {}", rle.to_compressed(), s);
    let back = RleMask::from_compressed(s.as_bytes(), m.height(), m.width()).map_err(|e| e.to_string())?;
    ensure!(back == rle, "string decode differs for {s}");
    Ok(())
}

fn rle_codec() -> Check {
    let start = Instant::now();
    for bits in 0u32..512 {
        rle_case(&BinaryMask::from_fn(3, 3, |x, y| bits >> (y * 3 + x) & 1 == 1).unwrap())?;
    }
    let mut r = rng(1);
    for _ in 0..10_000 {
        let (w, h) = (r.random_range(1..=128), r.random_range(1..=128));
        rle_case(&random_mask(&mut r, w, h))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("512 exhaustive 3x3 and 10000 random masks in {secs:.2} s"))
}

fn mask_algebra() -> Check {
    let mut r = rng(2);
    for n in 0..1000 {
        let (w, h) = (r.random_range(1..=64), r.random_range(1..=64));
        let a = random_mask(&mut r, w, h);
        let b = random_mask(&mut r, w, h);
        let (mut na, mut nb, mut ni, mut nu) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                let (pa, pb) = (a.get(x, y), b.get(x, y));
                na += u64::from(pa);
                nb += u64::from(pb);
                ni += u64::from(pa && pb);
                nu += u64::from(pa || pb);
            }
        }
        let iou = if nu == 0 { 1.0 } else { ni as f64 / nu as f64 };
        let ios = match (na, nb) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => ni as f64 / na.min(nb) as f64,
        };
        let err = |e: doclayout_core::MaskError| e.to_string();
        ensure!(a.area() == na && b.area() == nb, "pair {n}: area");
        ensure!(a.intersection_area(&b).map_err(err)? == ni, "pair {n}: intersection");
        ensure!(a.union_area(&b).map_err(err)? == nu, "pair {n}: union");
        ensure!(a.intersection(&b).map_err(err)?.area() == ni, "pair {n}: intersection mask");
        ensure!(a.union(&b).map_err(err)?.area() == nu, "pair {n}: union mask");
        ensure!(a.difference(&b).map_err(err)?.area() == na - ni, "pair {n}: difference");
        ensure!(nu + ni == na + nb, "pair {n}: inclusion-exclusion");
        ensure!(a.iou(&b).map_err(err)? == iou, "pair {n}: iou");
        ensure!(a.ios(&b).map_err(err)? == ios, "pair {n}: ios");
        if na > 0 && nb > 0 {
            ensure!(iou <= ios, "pair {n}: iou above ios");
        }
    }
    Ok("1000 random pairs match the per-pixel oracle".into())
}

fn lr_schedule() -> Check {
    let s = ScheduleConfig::default();
    let total = 45828u64;
    let expect = [
        (0, 8e-8),
        (50, 8e-5),
        (total * 88 / 100, 8e-6),
        (total * 97 / 100, 8e-7),
    ];
    ensure!(s.milestone_iters() == vec![expect[2].0, expect[3].0], "milestones {:?}", s.milestone_iters());
    for (iter, want) in expect {
        let got = s.lr_at(iter).map_err(|e| e.to_string())?;
        ensure!(((got - want) / want).abs() <= 1e-12, "lr_at({iter}) = {got:e}, want {want:e}");
    }
    let p = PhasePlan::default().summary();
    ensure!(p.total_iters == total, "total_iters {}", p.total_iters);
    ensure!(p.iters_per_epoch == 1273, "iters_per_epoch {}", p.iters_per_epoch);
    ensure!(s.total_iters == total, "schedule length {}", s.total_iters);
    Ok(format!("4 anchor rates within 1e-12, {total} iterations, 1273 per epoch"))
}

fn rect(w: u32, h: u32, x: u32, y: u32, bw: u32, bh: u32) -> BinaryMask {
    BinaryMask::from_rect(w, h, BoundingBox::new(x, y, bw, bh)).unwrap()
}

fn det(kind: CategoryKind, score: f64, mask: BinaryMask) -> Detection {
    Detection::new(CategoryTable::default().by_kind(kind), score, mask).unwrap()
}

fn pixel_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for y in 0..a.height() {
        for x in 0..a.width() {
            i += u64::from(a.get(x, y) && b.get(x, y));
            u += u64::from(a.get(x, y) || b.get(x, y));
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

/// Brute-force AP: greedy matching with per-pixel IoU, then for each recall
/// level the best precision over every prefix reaching it.
fn oracle_ap(pages: &[(&[Detection], &[Detection])], kind: CategoryKind, thr: f64) -> Option<f64> {
    let mut preds: Vec<(usize, usize, f64)> = Vec::new();
    let mut n_gt = 0;
    for (pi, (p, g)) in pages.iter().enumerate() {
        n_gt += g.iter().filter(|d| d.category.kind == kind).count();
        for (i, d) in p.iter().enumerate() {
            if d.category.kind == kind {
                preds.push((pi, i, d.score()));
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    // Stable: equal scores keep page-then-position order.
    preds.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut taken: Vec<Vec<bool>> = pages.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &(pi, i, _)) in preds.iter().enumerate() {
        let (p, g) = pages[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gd) in g.iter().enumerate() {
            if gd.category.kind != kind || taken[pi][gi] {
                continue;
            }
            let iou = pixel_iou(p[i].mask(), gd.mask());
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            taken[pi][gi] = true;
            tp += 1;
        }
        points.push((tp, k + 1));
    }
    let mut total = 0.0;
    for r in 0..=100usize {
        let best = points
            .iter()
            .filter(|(tp, _)| tp * 100 >= r * n_gt)
            .map(|&(tp, n)| tp as f64 / n as f64)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        total += best.unwrap_or(0.0);
    }
    Some(total / 101.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn page(id: u64, w: u32, h: u32, instances: &[Detection]) -> PageAnnotation {
    let mut p = PageAnnotation::new(ImageId::Num(id), w, h);
    for d in instances {
        p.push(d.category, d.mask().clone()).unwrap();
    }
    p
}

fn dice_and_map() -> Check {
    use CategoryKind::*;
    let t = CategoryTable::default();
    let err = |e: doclayout_core::eval::EvalError| e.to_string();

    // Perfect predictions.
    let gt1 = vec![
        det(Paragraph, 1.0, rect(40, 30, 2, 2, 20, 6)),
        det(Table, 1.0, rect(40, 30, 5, 12, 30, 15)),
        det(TextBox, 1.0, rect(40, 30, 25, 2, 10, 5)),
    ];
    let gts = vec![page(1, 40, 30, &gt1)];
    let perfect: PredictionMap = [(ImageId::Num(1), gt1.clone())].into();
    let d = dice_corpus(&perfect, &gts, &t).map_err(err)?;
    let m = map_corpus(&perfect, &gts, &t, &coco_thresholds()).map_err(err)?;
    ensure!(d.overall == 1.0, "perfect Dice {}", d.overall);
    ensure!(m.map_value == 1.0, "perfect mAP {}", m.map_value);

    // Two ground truths, one found.
    let two = [rect(30, 10, 0, 0, 10, 10), rect(30, 10, 20, 0, 10, 10)];
    let found = det(Table, 0.9, two[0].clone());
    let refs: Vec<&BinaryMask> = two.iter().collect();
    let ap = average_precision(&[PageMatches::new(&[&found], &refs).unwrap()], 0.5).unwrap();
    ensure!((ap - 51.0 / 101.0).abs() <= 1e-9, "half recall AP {ap}");

    // Two small pages against the brute-force oracle.
    let (w, h) = (12, 10);
    let l_shape = BinaryMask::from_fn(w, h, |x, y| (x < 3 && y < 8) || (y >= 5 && y < 8 && x < 8)).unwrap();
    let g1 = vec![
        det(Paragraph, 1.0, rect(w, h, 0, 0, 6, 4)),
        det(Paragraph, 1.0, rect(w, h, 6, 0, 6, 4)),
        det(Table, 1.0, l_shape.clone()),
        det(Image, 1.0, rect(w, h, 9, 6, 3, 4)),
    ];
    let p1 = vec![
        det(Paragraph, 0.9, rect(w, h, 0, 0, 6, 3)),
        det(Paragraph, 0.8, rect(w, h, 0, 0, 6, 4)),
        det(Paragraph, 0.3, rect(w, h, 5, 0, 7, 4)),
        det(Table, 0.7, rect(w, h, 0, 5, 8, 3)),
        det(TextBox, 0.6, rect(w, h, 4, 8, 4, 2)),
    ];
    let g2 = vec![
        det(Paragraph, 1.0, rect(w, h, 1, 1, 10, 2)),
        det(Table, 1.0, rect(w, h, 0, 4, 12, 6)),
        det(Table, 1.0, rect(w, h, 0, 0, 1, 1)),
    ];
    let p2 = vec![
        det(Paragraph, 0.8, rect(w, h, 1, 1, 10, 3)),
        det(Table, 0.95, rect(w, h, 0, 3, 12, 7)),
        det(Table, 0.7, rect(w, h, 0, 4, 12, 6)),
        det(Image, 0.5, rect(w, h, 3, 3, 3, 3)),
    ];
    let gts = vec![page(1, w, h, &g1), page(2, w, h, &g2)];
    let preds: PredictionMap = [(ImageId::Num(1), p1.clone()), (ImageId::Num(2), p2.clone())].into();
    let got_map = map_corpus(&preds, &gts, &t, &coco_thresholds()).map_err(err)?;
    let got_dice = dice_corpus(&preds, &gts, &t).map_err(err)?;

    let pages: [(&[Detection], &[Detection]); 2] = [(&p1, &g1), (&p2, &g2)];
    let mut per_cat = BTreeMap::new();
    for cat in t.iter() {
        let aps: Option<Vec<f64>> = coco_thresholds().iter().map(|&thr| oracle_ap(&pages, cat.kind, thr)).collect();
        if let Some(aps) = aps {
            per_cat.insert(cat.kind, mean(&aps));
        }
    }
    let want_map = mean(&per_cat.values().copied().collect::<Vec<_>>());
    ensure!(got_map.per_category_ap == per_cat, "per-category AP {:?} != {:?}", got_map.per_category_ap, per_cat);
    ensure!(got_map.map_value == want_map, "mAP {} != {}", got_map.map_value, want_map);

    let mut cells = Vec::new();
    for (p, g) in pages {
        for cat in t.iter() {
            let (mut i, mut a, mut b) = (0u64, 0u64, 0u64);
            for y in 0..h {
                for x in 0..w {
                    let hit = |ds: &[Detection]| ds.iter().any(|d| d.category == cat && d.mask().get(x, y));
                    let (pp, gg) = (hit(p), hit(g));
                    i += u64::from(pp && gg);
                    a += u64::from(pp);
                    b += u64::from(gg);
                }
            }
            cells.push(if a + b == 0 { 1.0 } else { 2.0 * i as f64 / (a + b) as f64 });
        }
    }
    let got_cells: Vec<f64> = got_dice.per_page_category.iter().map(|c| c.dice).collect();
    ensure!(got_cells == cells, "Dice cells {got_cells:?} != {cells:?}");
    ensure!(got_dice.overall == mean(&cells), "overall Dice {}", got_dice.overall);
    ensure!(want_map > 0.0 && want_map < 1.0, "fixture is degenerate: mAP {want_map}");

    // The mock with no loss reproduces ground truth.
    let img = doclayout_core::preprocess::Image::from_fn(40, 30, |x, y| image::Rgb([((x * 37 + y * 11) % 251) as u8, 90, 200]));
    let mock = MockDetector::new(
        &gts_of(&gt1),
        &TransformRecord::identity(),
        MockDetectorConfig {
            min_area_fraction: 0.0,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let found = mock.detect(&DetectorRequest::new(&ImageId::Num(1), &img, 0.0).unwrap()).map_err(|e| e.to_string())?;
    let lossless = dice_corpus(&[(ImageId::Num(1), found)].into(), &[gts_of(&gt1)], &t).map_err(err)?;
    ensure!(lossless.overall == 1.0, "lossless mock Dice {}", lossless.overall);

    Ok(format!(
        "perfect 1.0/1.0, half recall {ap:.9}, oracle mAP {want_map:.6} and Dice {:.6} matched exactly",
        got_dice.overall
    ))
}

fn gts_of(instances: &[Detection]) -> PageAnnotation {
    page(1, 40, 30, instances)
}

/// White page with textured instances.
fn render(w: u32, h: u32, instances: &[Detection]) -> Image {
    let mut img = Image::from_pixel(w, h, image::Rgb([255; 3]));
    for d in instances {
        for (x, y) in d.mask().iter_ones() {
            let v = if (x + y) % 3 == 0 { 20 } else { 200 };
            img.put_pixel(x, y, image::Rgb([v, v / 2, 255 - v]));
        }
    }
    img
}

fn annotate(w: u32, h: u32, instances: &[Detection]) -> PageAnnotation {
    page(1, w, h, instances)
}

fn sliced_inference() -> Check {
    use CategoryKind::*;
    let (w, h) = (1024u32, 1024u32);
    let cfg = MockDetectorConfig::default();
    let kinds = [Paragraph, TextBox, Image, Table];
    let mut r = rng(3);
    let mut gt = Vec::new();
    for row in 0..5 {
        for col in 0..6 {
            let (bw, bh) = (r.random_range(16..=20), r.random_range(16..=20));
            let b = BoundingBox::new(60 + col * 170 + r.random_range(0..40), 60 + row * 200 + r.random_range(0..40), bw, bh);
            gt.push(det(kinds[gt.len() % 4], 1.0, BinaryMask::from_rect(w, h, b).unwrap()));
        }
    }
    let page_area = f64::from(w * h);
    let slice_area = 512.0 * 512.0;
    for d in &gt {
        let a = d.mask().area() as f64;
        ensure!(a / page_area < cfg.min_area_fraction, "fixture: instance visible at full scale");
        ensure!(a / slice_area >= cfg.min_area_fraction, "fixture: instance invisible in a slice");
    }
    let img = render(w, h, &gt);
    let mock = MockDetector::new(&annotate(w, h, &gt), &TransformRecord::identity(), cfg).map_err(|e| e.to_string())?;
    let id = ImageId::Num(1);
    let req = DetectorRequest::new(&id, &img, 0.0).unwrap();

    let start = Instant::now();
    let plain = mock.detect(&req).map_err(|e| e.to_string())?;
    let plan = plan_slices(w, h, 512, 512, 0.25).map_err(|e| e.to_string())?;
    let sliced = run_sliced(&req, &plan, &mock, &MergeConfig::default(), 4).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();

    ensure!(plain.is_empty(), "plain inference found {}", plain.len());
    ensure!(sliced.len() >= 27, "sliced inference found {}", sliced.len());
    for (i, a) in sliced.iter().enumerate() {
        for b in &sliced[i + 1..] {
            if a.category == b.category {
                let iou = pixel_iou(a.mask(), b.mask());
                ensure!(iou <= 0.5, "same-category pair with IoU {iou}");
            }
        }
    }
    let matched = gt
        .iter()
        .filter(|g| sliced.iter().any(|d| d.category == g.category && pixel_iou(d.mask(), g.mask()) >= 0.99))
        .count();
    ensure!(matched >= 27, "only {matched} ground-truth instances recovered");
    ensure!(secs < 30.0, "took {secs:.2} s");
    Ok(format!("plain 0, sliced {} ({matched} of 30 recovered) in {secs:.2} s", sliced.len()))
}

fn split_instance_merge() -> Check {
    let (w, h) = (896u32, 512u32);
    let table = det(CategoryKind::Table, 1.0, rect(w, h, 200, 100, 500, 300));
    let img = render(w, h, std::slice::from_ref(&table));
    let cfg = MockDetectorConfig::default();
    let mock = MockDetector::new(&annotate(w, h, std::slice::from_ref(&table)), &TransformRecord::identity(), cfg)
        .map_err(|e| e.to_string())?;
    let id = ImageId::Num(1);
    let req = DetectorRequest::new(&id, &img, 0.0).unwrap();
    let plan = plan_slices(w, h, 512, 512, 0.25).map_err(|e| e.to_string())?;
    ensure!(plan.slices.len() == 2, "fixture: {} slices", plan.slices.len());
    ensure!(
        plan.slices.iter().all(|s| !s.contains(&table.bbox())),
        "fixture: a single slice holds the whole table"
    );

    let slices_only = MergeConfig {
        fuse_full_image_pass: false,
        ..Default::default()
    };
    let fragments = run_sliced(&req, &plan, &mock, &slices_only, 2).map_err(|e| e.to_string())?;
    let merged = run_sliced(&req, &plan, &mock, &MergeConfig::default(), 2).map_err(|e| e.to_string())?;
    ensure!(merged.len() == 1, "{} detections after merge", merged.len());
    let iou = pixel_iou(merged[0].mask(), table.mask());
    ensure!(iou >= 0.99, "merged IoU {iou}");
    ensure!(merge_detections(merged.clone(), &MergeConfig::default()).unwrap() == merged, "merge not idempotent");
    Ok(format!("{} slice fragments merged into one table, IoU {iou:.4}", fragments.len()))
}

fn two_pass() -> Check {
    let (w, h) = (256u32, 256u32);
    let (cx, cy) = (128.0f64, 128.0f64);
    let text_box = |r: f64, deg: f64| {
        let t = deg.to_radians();
        let (x, y) = ((cx + r * t.cos()).round() as u32, (cy + r * t.sin()).round() as u32);
        det(CategoryKind::TextBox, 1.0, rect(w, h, x - 5, y - 4, 10, 8))
    };
    // Each ring member has 8 ring neighbours in range and at least one anchor.
    let ring: Vec<Detection> = (0..12).map(|k| text_box(35.0, 30.0 * f64::from(k))).collect();
    let anchors: Vec<Detection> = [15.0, 135.0, 255.0].iter().map(|&a| text_box(80.0, a)).collect();
    let gt: Vec<Detection> = ring.iter().chain(&anchors).cloned().collect();
    let img = render(w, h, &gt);
    let cfg = MockDetectorConfig::default();
    ensure!(cfg.crowd_limit == 8, "crowd limit {}", cfg.crowd_limit);
    let mock = MockDetector::new(&annotate(w, h, &gt), &TransformRecord::identity(), cfg).map_err(|e| e.to_string())?;
    let id = ImageId::Num(1);
    let req = DetectorRequest::new(&id, &img, 0.0).unwrap();

    let single = mock.detect(&req).map_err(|e| e.to_string())?;
    ensure!(single.len() == 3, "single pass found {}", single.len());
    let tp_cfg = TwoPassConfig::default();
    let both = run_two_pass(&req, &mock, &tp_cfg).map_err(|e| e.to_string())?;
    ensure!(both.len() == 15, "two-pass found {}", both.len());
    ensure!(both[..3] == single[..], "pass-one detections not kept");
    for d in &both[3..] {
        ensure!(tp_cfg.erasable_categories.contains(&d.category.kind), "added a {}", d.category.kind);
        for p in single.iter().filter(|p| p.category == d.category) {
            ensure!(pixel_iou(p.mask(), d.mask()) <= 0.5, "added detection duplicates pass one");
        }
    }
    for g in &gt {
        ensure!(both.iter().any(|d| pixel_iou(d.mask(), g.mask()) == 1.0), "an instance was not recovered");
    }
    Ok("single pass 3, two-pass 15 with pass-one set kept".into())
}

fn preprocessing() -> Check {
    let mut r = rng(4);
    let gradient = |w: u32, h: u32| Image::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x ^ y) % 256) as u8]));

    // Nearest-neighbour quantization moves each edge by up to one presented
    // pixel, so the IoU bound is checked on layout-sized rectangles and the
    // edge bound on everything down to 30 px.
    let mut worst_resize = 1.0f64;
    let mut worst_edge = 0i64;
    for (pw, ph) in [(1000u32, 700u32), (300, 200), (640, 900)] {
        let (_, rec) = resize_pad(&gradient(pw, ph), 512, [0; 3]).map_err(|e| e.to_string())?;
        let edge_bound = (1.0 / rec.scale).ceil() as i64;
        for n in 0..40 {
            let lo = if n % 2 == 0 { 100 } else { 30 };
            let (bw, bh) = (r.random_range(lo..=pw / 2), r.random_range(lo..=ph / 2));
            let m = rect(pw, ph, r.random_range(0..pw - bw), r.random_range(0..ph - bh), bw, bh);
            let presented = forward_mask(&m, &rec).map_err(|e| e.to_string())?;
            let d = det(CategoryKind::Table, 0.5, presented);
            let back = invert_transform(&d, &rec, pw, ph).map_err(|e| e.to_string())?;
            let (a, b) = (m.bbox(), back.mask().bbox());
            let edge = [
                i64::from(a.x) - i64::from(b.x),
                i64::from(a.y) - i64::from(b.y),
                i64::from(a.right()) - i64::from(b.right()),
                i64::from(a.bottom()) - i64::from(b.bottom()),
            ]
            .into_iter()
            .map(i64::abs)
            .max()
            .unwrap();
            ensure!(edge <= edge_bound, "{pw}x{ph}: edge moved {edge} px for {a:?}");
            worst_edge = worst_edge.max(edge);
            if lo == 100 {
                worst_resize = worst_resize.min(pixel_iou(back.mask(), &m));
            }
        }
    }
    ensure!(worst_resize >= 0.95, "resize roundtrip IoU {worst_resize}");

    let (pw, ph) = (400u32, 300u32);
    let img = gradient(pw, ph);
    let mut worst_rot = 1.0f64;
    for theta in [-5.0, -2.5, 1.0, 5.0] {
        let masks: Vec<BinaryMask> = (0..10)
            .map(|_| {
                let (bw, bh) = (r.random_range(40..150), r.random_range(40..120));
                rect(pw, ph, r.random_range(40..pw - 40 - bw), r.random_range(40..ph - 40 - bh), bw, bh)
            })
            .collect();
        let (_, rotated, rec) = rotate_small(&img, &masks, theta, [0; 3]).map_err(|e| e.to_string())?;
        for (m, rm) in masks.iter().zip(&rotated) {
            let back = invert_mask(rm, &rec, pw, ph).map_err(|e| e.to_string())?;
            worst_rot = worst_rot.min(pixel_iou(&back, m));
        }
    }
    ensure!(worst_rot >= 0.85, "rotation roundtrip IoU {worst_rot}");

    let odd = Image::from_fn(37, 23, |_, _| image::Rgb([r.random(), r.random(), r.random()]));
    let masks = vec![random_mask(&mut r, 37, 23), random_mask(&mut r, 37, 23)];
    let (mut i, mut ms) = (odd.clone(), masks.clone());
    for _ in 0..4 {
        let (ni, nm, _) = rotate_discrete(&i, &ms, 1);
        i = ni;
        ms = nm;
    }
    ensure!(i == odd && ms == masks, "four quarter turns are not the identity");
    let (i1, m1, _) = rotate_discrete(&odd, &masks, 1);
    let (i2, m2, _) = rotate_discrete(&i1, &m1, 3);
    ensure!(i2 == odd && m2 == masks, "k=1 then k=3 is not the identity");

    let stats = NormalizationStats::new([123.675, 116.28, 103.53], [58.395, 57.12, 57.375]).unwrap();
    let noisy = Image::from_fn(64, 48, |_, _| image::Rgb([r.random(), r.random(), r.random()]));
    let back = denormalize(&normalize(&noisy, &stats), &stats);
    let worst_px = noisy
        .as_raw()
        .iter()
        .zip(back.as_raw())
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs() / 255.0)
        .fold(0.0, f64::max);
    ensure!(worst_px <= 0.5 / 255.0, "normalize roundtrip error {worst_px}");

    Ok(format!(
        "resize IoU >= {worst_resize:.4} (edges within {worst_edge} px), rotation IoU >= {worst_rot:.4}, quarter turns exact, normalize error {worst_px}"
    ))
}

const BIN: &str = env!("CARGO_BIN_EXE_doclayout");

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN).args(args).env_remove("DOCLAYOUT_DETECTOR").output().map_err(|e| e.to_string())?;
    ensure!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    Ok(())
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let images = dir.path().join("pages");
    fs::create_dir_all(&images).unwrap();
    let t = CategoryTable::default();
    let mut r = rng(5);
    let mut pages = Vec::new();
    for n in 1..=3u64 {
        let (w, h) = (r.random_range(150..260), r.random_range(150..260));
        let instances: Vec<Detection> = (0..6)
            .map(|k| {
                let kind = [CategoryKind::Paragraph, CategoryKind::TextBox, CategoryKind::Image, CategoryKind::Table][k % 4];
                let (bw, bh) = (r.random_range(10..50), r.random_range(10..50));
                det(kind, 1.0, rect(w, h, r.random_range(0..w - bw), r.random_range(0..h - bh), bw, bh))
            })
            .collect();
        let name = format!("p{n}.png");
        render(w, h, &instances).save(images.join(&name)).unwrap();
        pages.push((name, page(n, w, h, &instances)));
    }
    let ann = dir.path().join("gt.json");
    fs::write(&ann, annotations_to_string(&t, pages.iter().map(|(n, p)| (n.as_str(), p)))).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    let infer_dir = dir.path().join("infer");
    fs::create_dir_all(&infer_dir).unwrap();
    let preds = infer_dir.join("preds.json");
    let infer = [
        "infer", "--mock", "--jitter", "3", "--seed", "9", "--sliced", "--window", "96", "--two-pass", "--jobs", "3",
        "--annotations", &s(&ann), "--images", &s(&images), "--out", &s(&preds),
    ];
    let aug_dir = dir.path().join("aug");
    let augment = [
        "augment", "--seed", "9", "--flips", "--discrete-rotations", "--mean", "128,128,128", "--jobs", "3",
        "--annotations", &s(&ann), "--images", &s(&images), "--out", &s(&aug_dir),
    ];

    let mut runs = Vec::new();
    for _ in 0..2 {
        run_cli(&infer)?;
        run_cli(&augment)?;
        runs.push((snapshot(&infer_dir), snapshot(&aug_dir)));
        fs::remove_dir_all(&aug_dir).unwrap();
        for (p, _) in &runs.last().unwrap().0 {
            fs::remove_file(infer_dir.join(p)).unwrap();
        }
    }
    let ((i1, a1), (i2, a2)) = (&runs[0], &runs[1]);
    ensure!(!i1.is_empty() && !a1.is_empty(), "no outputs written");
    ensure!(i1 == i2, "infer outputs differ between runs");
    ensure!(a1 == a2, "augment outputs differ between runs");
    Ok(format!("infer ({} files) and augment ({} files) byte-identical across runs", i1.len(), a1.len()))
}
