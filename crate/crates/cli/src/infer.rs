use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use doclayout_core::dataset::{load_dataset, write_predictions, DatasetIndex, PredictionMap};
use doclayout_core::detector::{
    Detector, DetectorError, DetectorRequest, Endpoint, ExternalConfig, ExternalDetector, MockDetector,
    MockDetectorConfig,
};
use doclayout_core::preprocess::{invert_transform, resize_pad, Image, TransformRecord};
use doclayout_core::sliced::{plan_slices, run_sliced, MergeConfig, SliceError};
use doclayout_core::two_pass::{run_two_pass_with, TwoPassConfig, TwoPassError};
use doclayout_core::{Detection, ImageId};

use crate::config::{self, parse_triple, set};
use crate::error::{CliError, CliResult, Exit, OrExit};

/// Environment variable naming the default detector endpoint.
pub const ENDPOINT_ENV: &str = "DOCLAYOUT_DETECTOR";

#[derive(Debug, Args)]
pub struct InferArgs {
    /// COCO annotation file listing the pages (and, for --mock, their ground truth).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Directory holding the page images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Result file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with defaults for any of these options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the ground-truth-driven mock detector.
    #[arg(long)]
    mock: bool,
    /// External detector: a command line, or an http:// address.
    #[arg(long)]
    endpoint: Option<String>,
    /// Minimum detection score. Required for external detectors.
    #[arg(long)]
    score_threshold: Option<f64>,
    /// Detect on overlapping windows and merge.
    #[arg(long)]
    sliced: bool,
    /// Slice window side in pixels.
    #[arg(long)]
    window: Option<u32>,
    /// Fractional overlap between neighbouring slices.
    #[arg(long)]
    overlap: Option<f64>,
    /// Skip the full-image pass that is normally merged with slice results.
    #[arg(long)]
    no_full_pass: bool,
    /// Concurrent detector calls per page in sliced mode.
    #[arg(long)]
    slice_jobs: Option<usize>,
    /// Erase confident text and detect again.
    #[arg(long)]
    two_pass: bool,
    /// Resize the longest side to this many pixels and pad to a square.
    #[arg(long)]
    resize: Option<u32>,
    /// Per-channel pixel mean R,G,B in 0..255, used as the padding colour.
    #[arg(long, value_parser = parse_triple)]
    mean: Option<[f64; 3]>,
    #[arg(long)]
    min_area_fraction: Option<f64>,
    #[arg(long)]
    crowd_radius: Option<f64>,
    #[arg(long)]
    crowd_limit: Option<usize>,
    /// Mock boundary jitter amplitude in pixels.
    #[arg(long)]
    jitter: Option<u32>,
    /// Mock jitter seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds to wait for an external detector per page.
    #[arg(long)]
    timeout: Option<f64>,
    /// External detector processes or connections.
    #[arg(long)]
    pool: Option<usize>,
    /// Pages processed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub annotations: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mock: bool,
    pub endpoint: Option<String>,
    pub score_threshold: Option<f64>,
    pub sliced: bool,
    pub window: u32,
    pub overlap: f64,
    pub merge: MergeConfig,
    pub slice_jobs: usize,
    pub two_pass: bool,
    pub two_pass_config: TwoPassConfig,
    pub resize: Option<u32>,
    pub mean: Option<[f64; 3]>,
    pub mock_detector: MockDetectorConfig,
    pub timeout_secs: f64,
    pub pool_size: usize,
    pub jobs: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            images: None,
            out: None,
            mock: false,
            endpoint: None,
            score_threshold: None,
            sliced: false,
            window: 512,
            overlap: 0.25,
            merge: MergeConfig::default(),
            slice_jobs: 1,
            two_pass: false,
            two_pass_config: TwoPassConfig::default(),
            resize: None,
            mean: None,
            mock_detector: MockDetectorConfig::default(),
            timeout_secs: 120.0,
            pool_size: 1,
            jobs: 1,
        }
    }
}

impl InferConfig {
    fn resolve(args: InferArgs) -> CliResult<Self> {
        let mut c: InferConfig = config::load(args.config.as_deref())?;
        set(&mut c.annotations, args.annotations.map(Some));
        set(&mut c.images, args.images.map(Some));
        set(&mut c.out, args.out.map(Some));
        c.mock |= args.mock;
        set(&mut c.endpoint, args.endpoint.map(Some));
        set(&mut c.score_threshold, args.score_threshold.map(Some));
        c.sliced |= args.sliced;
        set(&mut c.window, args.window);
        set(&mut c.overlap, args.overlap);
        if args.no_full_pass {
            c.merge.fuse_full_image_pass = false;
        }
        set(&mut c.slice_jobs, args.slice_jobs);
        c.two_pass |= args.two_pass;
        set(&mut c.resize, args.resize.map(Some));
        set(&mut c.mean, args.mean.map(Some));
        let m = &mut c.mock_detector;
        set(&mut m.min_area_fraction, args.min_area_fraction);
        set(&mut m.crowd_radius, args.crowd_radius);
        set(&mut m.crowd_limit, args.crowd_limit);
        set(&mut m.jitter_px, args.jitter);
        set(&mut m.seed, args.seed);
        set(&mut c.timeout_secs, args.timeout);
        set(&mut c.pool_size, args.pool);
        set(&mut c.jobs, args.jobs);

        if !c.mock && c.endpoint.is_none() {
            c.endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty());
        }
        if c.mock && c.endpoint.is_some() {
            return Err(CliError::usage("--mock and --endpoint are mutually exclusive"));
        }
        if !c.mock && c.endpoint.is_none() {
            return Err(CliError::usage(format!(
                "no detector: pass --mock or --endpoint, or set {ENDPOINT_ENV}"
            )));
        }
        match c.score_threshold {
            None if c.mock => c.score_threshold = Some(0.0),
            None => return Err(CliError::usage("--score-threshold is required with an external detector")),
            Some(t) if !(0.0..=1.0).contains(&t) => {
                return Err(CliError::usage(format!("--score-threshold {t} outside [0, 1]")))
            }
            Some(_) => {}
        }
        if c.resize.is_some() && c.mean.is_none() {
            return Err(CliError::usage("--resize needs --mean for the padding colour"));
        }
        if c.resize == Some(0) {
            return Err(CliError::usage("--resize must be positive"));
        }
        if c.jobs == 0 || c.slice_jobs == 0 || c.pool_size == 0 {
            return Err(CliError::usage("--jobs, --slice-jobs and --pool must be positive"));
        }
        if !(c.timeout_secs > 0.0 && c.timeout_secs.is_finite()) {
            return Err(CliError::usage("--timeout must be a positive number of seconds"));
        }
        plan_slices(1, 1, c.window, c.window, c.overlap).or_exit(Exit::Usage, "slicing options")?;
        c.merge.validate().or_exit(Exit::Usage, "merge options")?;
        c.two_pass_config.validate().map_err(CliError::usage)?;
        c.mock_detector.validate().or_exit(Exit::Usage, "mock options")?;
        for (name, v) in [("--annotations", &c.annotations), ("--images", &c.images), ("--out", &c.out)] {
            if v.is_none() {
                return Err(CliError::usage(format!("{name} is required")));
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Error)]
enum PassError {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Slice(#[from] SliceError),
}

fn slice_exit(e: &SliceError) -> Exit {
    match e {
        SliceError::Detector { .. } => Exit::Detector,
        SliceError::Config(_) => Exit::Usage,
        SliceError::Mask(_) => Exit::Data,
    }
}

fn pass_exit(e: &PassError) -> Exit {
    match e {
        PassError::Detector(DetectorError::InvalidRequest(_)) => Exit::Data,
        PassError::Detector(_) => Exit::Detector,
        PassError::Slice(s) => slice_exit(s),
    }
}

enum Backend {
    Mock(MockDetectorConfig),
    External(ExternalDetector),
}

struct Job<'a> {
    cfg: &'a InferConfig,
    index: &'a DatasetIndex,
    backend: Backend,
}

impl Job<'_> {
    fn page(&self, id: &ImageId) -> CliResult<(Vec<Detection>, Duration)> {
        let start = Instant::now();
        let img = self.index.load_image(id).or_exit(Exit::Data, format!("loading image {id}"))?;
        let (w, h) = img.dimensions();
        let (presented, rec) = match self.cfg.resize {
            Some(target) => {
                let fill = self.cfg.mean.expect("checked with resize").map(|m| m.round().clamp(0.0, 255.0) as u8);
                resize_pad(&img, target, fill).or_exit(Exit::Data, format!("resizing image {id}"))?
            }
            None => (img, TransformRecord::identity()),
        };

        let mock;
        let det: &dyn Detector = match &self.backend {
            Backend::Mock(mcfg) => {
                let gt = self.index.annotation(id).or_exit(Exit::Data, format!("ground truth of {id}"))?;
                mock = MockDetector::new(&gt, &rec, *mcfg).or_exit(Exit::Usage, "mock detector")?;
                &mock
            }
            Backend::External(d) => d,
        };
        let threshold = self.cfg.score_threshold.expect("resolved");
        let req = DetectorRequest::new(id, &presented, threshold).or_exit(Exit::Usage, "detector request")?;

        let base = |image: &Image| -> Result<Vec<Detection>, PassError> {
            let r = req.with_image(image, None);
            if !self.cfg.sliced {
                return Ok(det.detect(&r)?);
            }
            let (pw, ph) = image.dimensions();
            let plan = plan_slices(pw, ph, self.cfg.window, self.cfg.window, self.cfg.overlap)?;
            Ok(run_sliced(&r, &plan, det, &self.cfg.merge, self.cfg.slice_jobs)?)
        };
        let found = if self.cfg.two_pass {
            run_two_pass_with(&presented, &self.cfg.two_pass_config, base).map_err(|e| {
                let exit = match &e {
                    TwoPassError::Detector { source, .. } => pass_exit(source),
                    TwoPassError::Config(_) => Exit::Usage,
                    TwoPassError::EmptyRegion | TwoPassError::Mask(_) => Exit::Data,
                };
                CliError::new(exit, anyhow::Error::new(e).context(format!("image {id}")))
            })?
        } else {
            base(&presented).map_err(|e| CliError::new(pass_exit(&e), anyhow::Error::new(e).context(format!("image {id}"))))?
        };
        let restored = found
            .iter()
            .map(|d| invert_transform(d, &rec, w, h))
            .collect::<Result<Vec<_>, _>>()
            .or_exit(Exit::Data, format!("mapping detections of {id} back to the page"))?;
        Ok((restored, start.elapsed()))
    }
}

pub fn run(args: InferArgs) -> CliResult<()> {
    let cfg = InferConfig::resolve(args)?;
    let annotations = cfg.annotations.as_deref().expect("resolved");
    let images = cfg.images.as_deref().expect("resolved");
    let out = cfg.out.as_deref().expect("resolved");
    let index = load_dataset(annotations, images).or_exit(Exit::Data, format!("loading {}", annotations.display()))?;

    let backend = match &cfg.endpoint {
        None => Backend::Mock(cfg.mock_detector),
        Some(spec) => {
            let endpoint: Endpoint = spec.parse().or_exit(Exit::Usage, "--endpoint")?;
            let ext = ExternalDetector::new(
                endpoint,
                index.categories().clone(),
                ExternalConfig {
                    timeout: Duration::from_secs_f64(cfg.timeout_secs),
                    pool_size: cfg.pool_size,
                },
            );
            ext.warm_up().or_exit(Exit::Detector, format!("starting detector {spec}"))?;
            Backend::External(ext)
        }
    };
    let job = Job {
        cfg: &cfg,
        index: &index,
        backend,
    };

    let ids: Vec<&ImageId> = index.image_ids().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .or_exit(Exit::Usage, "creating worker pool")?;
    let results: Vec<CliResult<(Vec<Detection>, Duration)>> = pool.install(|| ids.par_iter().map(|id| job.page(id)).collect());

    let mut preds = PredictionMap::new();
    let mut total = Duration::ZERO;
    for (id, r) in ids.iter().zip(results) {
        let (dets, took) = r?;
        println!("{id}\t{} detections\t{:.1} ms", dets.len(), took.as_secs_f64() * 1e3);
        total += took;
        preds.insert((*id).clone(), dets);
    }
    write_predictions(&preds, out).or_exit(Exit::Data, format!("writing {}", out.display()))?;
    config::echo(&cfg, &config::sidecar(out))?;
    println!(
        "{} pages, {} detections, {:.1} ms total -> {}",
        preds.len(),
        preds.values().map(Vec::len).sum::<usize>(),
        total.as_secs_f64() * 1e3,
        out.display()
    );
    Ok(())
}
