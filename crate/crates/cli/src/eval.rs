use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use doclayout_core::dataset::{load_dataset, load_predictions};
use doclayout_core::eval::{coco_thresholds, dice_corpus, map_corpus, DiceReport, MapReport};
use doclayout_core::PageAnnotation;

use crate::config::{self, set};
use crate::error::{CliError, CliResult, Exit, OrExit};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result file with predicted instances.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// COCO ground-truth annotation file.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Also compute mask mAP over IoU 0.50:0.95.
    #[arg(long)]
    map: bool,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub predictions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub map: bool,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a> {
    dice: &'a DiceReport,
    map: Option<&'a MapReport>,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let mut cfg: EvalConfig = config::load(args.config.as_deref())?;
    set(&mut cfg.predictions, args.predictions.map(Some));
    set(&mut cfg.annotations, args.annotations.map(Some));
    set(&mut cfg.out, args.out.map(Some));
    cfg.map |= args.map;
    let (Some(pred_path), Some(ann_path)) = (cfg.predictions.clone(), cfg.annotations.clone()) else {
        return Err(CliError::usage("--predictions and --annotations are required"));
    };

    let image_root = ann_path.parent().map(PathBuf::from).unwrap_or_default();
    let index = load_dataset(&ann_path, &image_root).or_exit(Exit::Data, format!("loading {}", ann_path.display()))?;
    let preds =
        load_predictions(&pred_path, index.categories()).or_exit(Exit::Data, format!("loading {}", pred_path.display()))?;
    let gts: Vec<PageAnnotation> = index
        .image_ids()
        .map(|id| index.annotation(id))
        .collect::<Result<_, _>>()
        .or_exit(Exit::Data, "decoding ground truth")?;

    let dice = dice_corpus(&preds, &gts, index.categories()).or_exit(Exit::Data, "scoring Dice")?;
    print!("{}", dice.to_table());
    let map = if cfg.map {
        let m = map_corpus(&preds, &gts, index.categories(), &coco_thresholds()).or_exit(Exit::Data, "scoring mAP")?;
        println!();
        print!("{}", m.to_table());
        Some(m)
    } else {
        None
    };

    if let Some(out) = &cfg.out {
        let report = serde_json::to_string(&Report {
            dice: &dice,
            map: map.as_ref(),
        })
        .expect("report serializes");
        fs::write(out, report).or_exit(Exit::Data, format!("writing {}", out.display()))?;
        config::echo(&cfg, &config::sidecar(out))?;
    }
    Ok(())
}
