//! End-to-end experiment runs: schedule execution with periodic evaluation,
//! CSV streaming, and checkpointing. Everything is a pure function of
//! (config, master seed); reruns produce byte-identical artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pruning::{
    budgets_from_rate, run_schedule_segment, Phase, ScheduleHistory, ScheduleState,
};
use crate::stream;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use super::eval::evaluate;
use super::metrics::{CsvWriter, MetricsRecord};

/// Where a finished run left its artifacts, plus the final evaluations.
#[derive(Debug)]
pub struct RunOutcome {
    pub final_iter: usize,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
    /// Train and test records from the last evaluation point.
    pub final_records: Vec<MetricsRecord>,
    pub history: ScheduleHistory,
}

/// Runs the configured schedule from scratch. See [`run_experiment_segment`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    run_experiment_segment(cfg, out_dir, None, None)
}

/// Runs the configured schedule, optionally resuming from a checkpoint and
/// stopping early at `stop_iter`. Evaluation on both splits happens after
/// every `eval_every`-th iteration and at the end of the segment, streaming
/// records to the CSV; the final state is checkpointed (with the active
/// mask when stopping inside a pruning phase).
pub fn run_experiment_segment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    stop_iter: Option<usize>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let total = cfg.schedule.total_iters();
    let stop = stop_iter.unwrap_or(total);
    if stop > total {
        return Err(Error::InvalidArgument(format!(
            "stop iteration {stop} beyond schedule of {total}"
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;

    let (train_source, test_source) = cfg.build_sources()?;
    let state = match resume {
        None => ScheduleState::start(cfg.build_network(&train_source)?),
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            if ckpt.seed != cfg.master_seed {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint seed {} does not match config master_seed {}",
                    ckpt.seed, cfg.master_seed
                )));
            }
            let iter = ckpt.meta_iter as usize;
            let (net, mask) = ckpt.into_network()?;
            ScheduleState { net, mask, iter }
        }
    };
    let plan = budgets_from_rate(&state.net, cfg.rate, cfg.prune_biases)?;

    let csv_path = out_dir.join(&cfg.csv_name);
    let file = File::create(&csv_path).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    let mut csv = CsvWriter::new(BufWriter::new(file)).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;

    let mut final_records: Vec<MetricsRecord> = Vec::new();
    let master = cfg.master_seed;
    let (state, history) = {
        let observer = |completed: usize, phase: Phase, net: &crate::ndcore::Network| {
            if completed % cfg.eval.eval_every != 0 && completed != stop {
                return Ok(());
            }
            let rate = if phase == Phase::Prune { cfg.rate } else { 0.0 };
            let mut records = Vec::with_capacity(2);
            for (split_tag, source) in [(0u64, &train_source), (1u64, &test_source)] {
                let mut rng = stream::derive(
                    master,
                    &[stream::tag::EVAL, completed as u64, split_tag],
                );
                records.push(evaluate(net, source, cfg, completed, phase, rate, &mut rng)?);
            }
            for r in &records {
                csv.write_record(r).map_err(|e| Error::Io {
                    path: csv_path.clone(),
                    source: e,
                })?;
            }
            final_records = records;
            Ok(())
        };
        run_schedule_segment(
            state,
            &cfg.schedule,
            &plan,
            &train_source,
            &cfg.meta,
            master,
            stop,
            observer,
        )?
    };
    csv.flush().map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;

    let checkpoint_path = out_dir.join(&cfg.checkpoint_name);
    let ckpt = Checkpoint::from_network(
        &state.net,
        state.mask.as_ref(),
        master,
        state.iter as u64,
    );
    save_checkpoint(&checkpoint_path, &ckpt)?;

    Ok(RunOutcome {
        final_iter: state.iter,
        csv_path,
        checkpoint_path,
        final_records,
        history,
    })
}
