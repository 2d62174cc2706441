use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use doclayout_core::dataset::{annotations_to_string, load_dataset, DatasetIndex};
use doclayout_core::preprocess::{apply_augmentation, sample_augmentation, AugmentParams, AugmentPolicy, Interval, TransformRecord};
use doclayout_core::{BinaryMask, ImageId, PageAnnotation};

use crate::config::{self, parse_pair, parse_triple, set};
use crate::error::{CliError, CliResult, Exit, OrExit};

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output directory; receives images/, records/, annotations.json and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Brightness factor range LO,HI.
    #[arg(long, value_parser = parse_pair)]
    brightness: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair)]
    contrast: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair)]
    saturation: Option<[f64; 2]>,
    /// Small rotation range in degrees LO,HI (clockwise positive).
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    rotation: Option<[f64; 2]>,
    /// Also draw random quarter turns.
    #[arg(long)]
    discrete_rotations: bool,
    /// Also draw random horizontal and vertical flips.
    #[arg(long)]
    flips: bool,
    /// Per-channel pixel mean R,G,B in 0..255, used to fill uncovered corners.
    #[arg(long, value_parser = parse_triple)]
    mean: Option<[f64; 3]>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub annotations: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub policy: AugmentPolicy,
    pub mean: Option<[f64; 3]>,
    pub jobs: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            images: None,
            out: None,
            policy: AugmentPolicy::default(),
            mean: None,
            jobs: 1,
        }
    }
}

/// Per-page record written to `records/<id>.json`.
#[derive(Debug, Serialize)]
struct PageRecord<'a> {
    image_id: &'a ImageId,
    source_file: &'a str,
    output_file: &'a str,
    page_index: u64,
    params: AugmentParams,
    transform: TransformRecord,
    /// Instances that left the canvas entirely.
    dropped_instances: Vec<usize>,
}

fn interval(pair: Option<[f64; 2]>) -> Option<Interval> {
    pair.map(|[lo, hi]| Interval::new(lo, hi))
}

/// File stem for a page: the id with anything outside `[A-Za-z0-9._-]` replaced.
fn safe_stem(id: &ImageId) -> String {
    id.to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

struct Page {
    id: ImageId,
    file_name: String,
    annotation: PageAnnotation,
}

fn augment_page(
    index: &DatasetIndex,
    cfg: &AugmentConfig,
    fill: [u8; 3],
    out: &Path,
    page_index: u64,
    id: &ImageId,
) -> CliResult<Page> {
    let img = index.load_image(id).or_exit(Exit::Data, format!("loading image {id}"))?;
    let gt = index.annotation(id).or_exit(Exit::Data, format!("ground truth of {id}"))?;
    let masks: Vec<BinaryMask> = gt.instances().iter().map(|d| d.mask().clone()).collect();
    let params = sample_augmentation(&cfg.policy, page_index);
    let (aug, aug_masks, rec) =
        apply_augmentation(&img, &masks, &params, fill).or_exit(Exit::Data, format!("augmenting image {id}"))?;

    let mut annotation = PageAnnotation::new(id.clone(), aug.width(), aug.height());
    let mut dropped = Vec::new();
    for (i, (inst, mask)) in gt.instances().iter().zip(aug_masks).enumerate() {
        if mask.is_empty() {
            dropped.push(i);
            continue;
        }
        annotation
            .push(inst.category, mask)
            .or_exit(Exit::Data, format!("transformed instance {i} of {id}"))?;
    }

    let stem = safe_stem(id);
    let file_name = format!("{stem}.png");
    let image_path = out.join("images").join(&file_name);
    aug.save_with_format(&image_path, image::ImageFormat::Png)
        .or_exit(Exit::Data, format!("writing {}", image_path.display()))?;
    let source = index.page(id).map(|p| p.file_name.as_str()).unwrap_or_default();
    let record = PageRecord {
        image_id: id,
        source_file: source,
        output_file: &file_name,
        page_index,
        params,
        transform: rec,
        dropped_instances: dropped,
    };
    let record_path = out.join("records").join(format!("{stem}.json"));
    fs::write(&record_path, serde_json::to_string(&record).expect("record serializes"))
        .or_exit(Exit::Data, format!("writing {}", record_path.display()))?;
    Ok(Page {
        id: id.clone(),
        file_name,
        annotation,
    })
}

pub fn run(args: AugmentArgs) -> CliResult<()> {
    let mut cfg: AugmentConfig = config::load(args.config.as_deref())?;
    set(&mut cfg.annotations, args.annotations.map(Some));
    set(&mut cfg.images, args.images.map(Some));
    set(&mut cfg.out, args.out.map(Some));
    set(&mut cfg.policy.seed, args.seed);
    set(&mut cfg.policy.brightness_range, interval(args.brightness));
    set(&mut cfg.policy.contrast_range, interval(args.contrast));
    set(&mut cfg.policy.saturation_range, interval(args.saturation));
    set(&mut cfg.policy.rotation_range_deg, interval(args.rotation));
    cfg.policy.discrete_rotations_enabled |= args.discrete_rotations;
    cfg.policy.flips_enabled |= args.flips;
    set(&mut cfg.mean, args.mean.map(Some));
    set(&mut cfg.jobs, args.jobs);

    let (Some(annotations), Some(images), Some(out)) = (cfg.annotations.clone(), cfg.images.clone(), cfg.out.clone()) else {
        return Err(CliError::usage("--annotations, --images and --out are required"));
    };
    let Some(mean) = cfg.mean else {
        return Err(CliError::usage("--mean is required: it fills pixels uncovered by rotation"));
    };
    cfg.policy.validate().or_exit(Exit::Usage, "augmentation policy")?;
    if cfg.jobs == 0 {
        return Err(CliError::usage("--jobs must be positive"));
    }
    let fill = mean.map(|m| m.round().clamp(0.0, 255.0) as u8);

    let index = load_dataset(&annotations, &images).or_exit(Exit::Data, format!("loading {}", annotations.display()))?;
    let ids: Vec<&ImageId> = index.image_ids().collect();
    let stems: BTreeSet<String> = ids.iter().map(|id| safe_stem(id)).collect();
    if stems.len() != ids.len() {
        return Err(CliError::new(Exit::Data, anyhow::anyhow!("image ids collide after file-name sanitizing")));
    }
    for dir in ["images", "records"] {
        let d = out.join(dir);
        fs::create_dir_all(&d).or_exit(Exit::Data, format!("creating {}", d.display()))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .or_exit(Exit::Usage, "creating worker pool")?;
    let pages: Vec<CliResult<Page>> = pool.install(|| {
        ids.par_iter()
            .enumerate()
            .map(|(i, id)| augment_page(&index, &cfg, fill, &out, i as u64, id))
            .collect()
    });
    let pages = pages.into_iter().collect::<CliResult<Vec<Page>>>()?;

    let text = annotations_to_string(
        index.categories(),
        pages.iter().map(|p| (p.file_name.as_str(), &p.annotation)),
    );
    let ann_path = out.join("annotations.json");
    fs::write(&ann_path, text).or_exit(Exit::Data, format!("writing {}", ann_path.display()))?;
    config::echo(&cfg, &out.join("config.json"))?;
    for p in &pages {
        println!("{}\t{}\t{} instances", p.id, p.file_name, p.annotation.instances().len());
    }
    Ok(())
}
