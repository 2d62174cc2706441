use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use doclayout_core::schedule::{format_lr, PhasePlan, Preset, ScheduleConfig};

use crate::config::{self, set};
use crate::error::{CliError, CliResult, Exit, OrExit};

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Print phase arithmetic instead of the table.
    #[arg(long)]
    summary: bool,
    /// Place milestones over the whole run or over one cycle.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    warmup_iters: Option<u64>,
    #[arg(long)]
    warmup_factor: Option<f64>,
    /// Comma-separated fractions of the total iteration count.
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<f64>>,
    /// Comma-separated multipliers of the base rate, one per milestone.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// Overrides the preset's iteration count.
    #[arg(long)]
    total_iters: Option<u64>,
    #[arg(long)]
    dataset_size: Option<u64>,
    #[arg(long)]
    batch_size: Option<u64>,
    #[arg(long)]
    epochs_per_cycle: Option<u64>,
    #[arg(long)]
    cycles: Option<u64>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleJob {
    pub preset: Preset,
    pub plan: PhasePlan,
    pub schedule: ScheduleConfig,
    pub summary: bool,
    pub out: Option<PathBuf>,
}

impl Default for ScheduleJob {
    fn default() -> Self {
        Self {
            preset: Preset::Full,
            plan: PhasePlan::default(),
            schedule: ScheduleConfig::default(),
            summary: false,
            out: None,
        }
    }
}

pub fn run(args: ScheduleArgs) -> CliResult<()> {
    let mut job: ScheduleJob = config::load(args.config.as_deref())?;
    let from_file = args.config.is_some();
    set(&mut job.preset, args.preset);
    set(&mut job.plan.dataset_size, args.dataset_size);
    set(&mut job.plan.batch_size, args.batch_size);
    set(&mut job.plan.epochs_per_cycle, args.epochs_per_cycle);
    set(&mut job.plan.cycles, args.cycles);
    job.plan.validate().or_exit(Exit::Usage, "phase plan")?;

    let s = &mut job.schedule;
    // The preset decides the length unless it was given explicitly.
    if args.total_iters.is_none() && (args.preset.is_some() || !from_file) {
        s.total_iters = job.preset.total_iters(&job.plan);
    }
    set(&mut s.total_iters, args.total_iters);
    set(&mut s.base_lr, args.base_lr);
    set(&mut s.warmup_iters, args.warmup_iters);
    set(&mut s.warmup_factor, args.warmup_factor);
    set(&mut s.milestones, args.milestones);
    set(&mut s.gammas, args.gammas);
    job.summary |= args.summary;
    set(&mut job.out, args.out.map(Some));
    job.schedule.validate().or_exit(Exit::Usage, "schedule")?;

    let text = if job.summary {
        summary_text(&job)
    } else {
        job.schedule.to_csv().map_err(|e| CliError::new(Exit::Usage, e))?
    };
    match &job.out {
        Some(path) => {
            fs::write(path, text).or_exit(Exit::Data, format!("writing {}", path.display()))?;
            config::echo(&job, &config::sidecar(path))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::new(Exit::Data, e));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn summary_text(job: &ScheduleJob) -> String {
    let p = job.plan.summary();
    let s = &job.schedule;
    let milestones: Vec<String> = s
        .milestone_iters()
        .iter()
        .zip(&s.gammas)
        .map(|(i, g)| format!("{i} ({})", format_lr(s.base_lr * g)))
        .collect();
    let checkpoints: Vec<String> = p.checkpoint_iters.iter().map(u64::to_string).collect();
    format!(
        "iters_per_epoch: {}\niters_per_cycle: {}\ntotal_iters: {}\nschedule_iters: {}\ncheckpoints_per_cycle: {}\ncheckpoint_iters: {}\nlog_interval: {}\nlog_count: {}\nwarmup: {} -> {} over {} iters\nmilestones: {}\n",
        p.iters_per_epoch,
        p.iters_per_cycle,
        p.total_iters,
        s.total_iters,
        p.checkpoints_per_cycle,
        checkpoints.join(","),
        p.log_interval,
        p.log_count,
        format_lr(s.base_lr * s.warmup_factor),
        format_lr(s.base_lr),
        s.warmup_iters,
        milestones.join(", "),
    )
}
