//! Episodic evaluation: per task, fine-tune a copy of the network on the
//! support set, then score the query set.

use rand::{RngCore, SeedableRng};

use crate::error::Result;
use crate::ndcore::{argmax, loss, Network, Targets};
use crate::pruning::Phase;
use crate::reptile::adapt_params;
use crate::stream::StreamRng;
use crate::tasks::{sample_episode, TaskSource};

use super::config::{ExperimentConfig, Metric};
use super::metrics::{confidence_interval, MetricsRecord};

/// Fraction of query points whose argmax matches the label.
fn query_accuracy(outputs: &crate::ndcore::Tensor, labels: &[usize]) -> f64 {
    let c = outputs.cols();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(s, &y)| argmax(&outputs.data()[s * c..(s + 1) * c]) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Evaluates a (copy of the) network over `eval_tasks` episodes from the
/// source: adapt on the support set for `eval_inner_iterations` steps with
/// batches of `eval_inner_batch` at the inner learning rate, then score
/// query accuracy (or negative MSE for regression) and query loss. The
/// passed network is never modified. Per-episode streams are drawn up front
/// so episodes are order-independent.
pub fn evaluate(
    net: &Network,
    source: &TaskSource,
    cfg: &ExperimentConfig,
    meta_iter: usize,
    phase: Phase,
    current_rate: f64,
    rng: &mut StreamRng,
) -> Result<MetricsRecord> {
    let episode_seeds: Vec<u64> = (0..cfg.eval.eval_tasks).map(|_| rng.next_u64()).collect();
    let mut scores = Vec::with_capacity(episode_seeds.len());
    let mut losses = Vec::with_capacity(episode_seeds.len());
    for seed in episode_seeds {
        let mut ep_rng = StreamRng::seed_from_u64(seed);
        let episode = sample_episode(
            source,
            cfg.meta.n_way,
            cfg.meta.k_shot,
            cfg.meta.query,
            &mut ep_rng,
        )?;
        let adapted = adapt_params(
            net,
            &episode.support_x,
            &episode.support_y,
            &cfg.meta.loss,
            cfg.meta.inner_lr,
            cfg.eval.eval_inner_iterations,
            cfg.eval.eval_inner_batch,
            &mut ep_rng,
            None,
        )?;
        let outputs = adapted.forward(&episode.query_x)?;
        let query_loss = loss(&cfg.meta.loss, &outputs, &episode.query_y)?;
        let score = match (&cfg.metric, &episode.query_y) {
            (Metric::Accuracy, Targets::Labels(labels)) => query_accuracy(&outputs, labels),
            (Metric::NegMse, Targets::Values(targets)) => {
                -loss(&crate::ndcore::LossKind::Mse, &outputs, &Targets::Values(targets.clone()))?
            }
            (Metric::Accuracy, Targets::Values(_)) | (Metric::NegMse, Targets::Labels(_)) => {
                return Err(crate::error::Error::TargetMismatch(
                    "metric does not match the episode's target kind".into(),
                ))
            }
        };
        scores.push(score);
        losses.push(query_loss);
    }
    let (accuracy, ci_halfwidth) = confidence_interval(&scores)?;
    let loss_mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(MetricsRecord {
        meta_iter,
        phase,
        split: source.split(),
        accuracy,
        ci_halfwidth,
        loss: loss_mean,
        rate: current_rate,
    })
}
