//! Inner-loop adaptation and the Reptile outer update.
//!
//! One meta-iteration ([`reptile_round`]) samples a mini-batch of tasks,
//! adapts the current parameters to each task's support set with plain SGD,
//! and moves the meta-parameters toward the mean of the adapted snapshots:
//! `phi <- phi + beta * (mean(phi_i) - phi)`. All task adaptations start
//! from the identical pre-round snapshot, and the outer reduction sums in
//! ascending task order, so parallel and serial schedules agree bitwise.

use rand::{Rng, RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::ndcore::{backward, sgd_step, LossKind, Network, Targets, Tensor};
use crate::pruning::SparsityMask;
use crate::stream::StreamRng;
use crate::tasks::{sample_episode, TaskEpisode, TaskSource};

/// Meta-training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    /// Inner-loop SGD learning rate (eta).
    pub inner_lr: f64,
    /// Initial outer learning rate (beta0), linearly decayed.
    pub outer_lr: f64,
    /// Tasks per meta-iteration (s).
    pub meta_batch: usize,
    /// SGD steps per task adaptation.
    pub inner_iterations: usize,
    /// Minibatch size inside the adaptation loop.
    pub inner_batch: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub query: usize,
    pub loss: LossKind,
    /// Total meta-iterations across all schedule phases; drives the decay.
    pub total_meta_iterations: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.001,
            outer_lr: 1.0,
            meta_batch: 5,
            inner_iterations: 8,
            inner_batch: 10,
            n_way: 5,
            k_shot: 1,
            query: 15,
            loss: LossKind::CrossEntropy,
            total_meta_iterations: 1000,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inner_lr must be positive, got {}",
                self.inner_lr
            )));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "outer_lr must be positive, got {}",
                self.outer_lr
            )));
        }
        for (name, v) in [
            ("meta_batch", self.meta_batch),
            ("inner_batch", self.inner_batch),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("query", self.query),
            ("total_meta_iterations", self.total_meta_iterations),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Outer learning rate at a given meta-iteration: linear decay
/// `beta0 * (1 - iter/total)`.
pub fn lr_schedule(beta0: f64, iter: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("schedule total must be positive".into()));
    }
    if iter >= total {
        return Err(Error::InvalidArgument(format!(
            "iteration {iter} outside schedule of {total}"
        )));
    }
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta0 must be positive, got {beta0}"
        )));
    }
    Ok(beta0 * (1.0 - iter as f64 / total as f64))
}

/// Row/label subset of a support set.
fn gather_batch(x: &Tensor, y: &Targets, idx: &[usize]) -> Result<(Tensor, Targets)> {
    let cols = x.cols();
    let xd = x.data();
    let mut xs = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        xs.extend_from_slice(&xd[i * cols..(i + 1) * cols]);
    }
    let bx = Tensor::matrix(idx.len(), cols, xs)?;
    let by = match y {
        Targets::Labels(labels) => Targets::Labels(idx.iter().map(|&i| labels[i]).collect()),
        Targets::Values(vals) => {
            let vc = vals.cols();
            let vd = vals.data();
            let mut out = Vec::with_capacity(idx.len() * vc);
            for &i in idx {
                out.extend_from_slice(&vd[i * vc..(i + 1) * vc]);
            }
            Targets::Values(Tensor::matrix(idx.len(), vc, out)?)
        }
    };
    Ok((bx, by))
}

/// Without-replacement minibatch cursor over `0..n`. Each pass is a fresh
/// shuffled permutation; a short tail at the end of a pass is used as a
/// smaller batch before reshuffling.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize) -> Self {
        Batcher {
            order: (0..n).collect(),
            pos: n, // force a shuffle on first draw
            batch,
        }
    }

    fn next(&mut self, rng: &mut StreamRng) -> Vec<usize> {
        let n = self.order.len();
        if self.pos >= n {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.pos = 0;
        }
        let take = self.batch.min(n - self.pos);
        let out = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        out
    }
}

/// Core adaptation loop shared by meta-training, masked fine-tuning, and
/// evaluation: `iterations` SGD steps on minibatches of the given set.
/// If `batch >= n` the whole set is used each step in natural order.
/// When a mask is given, every update is multiplied by it element-wise.
pub(crate) fn adapt_params(
    net: &Network,
    x: &Tensor,
    y: &Targets,
    kind: &LossKind,
    lr: f64,
    iterations: usize,
    batch: usize,
    rng: &mut StreamRng,
    mask: Option<&SparsityMask>,
) -> Result<Network> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} targets for {} samples",
            y.len(),
            n
        )));
    }
    let mut current = net.clone();
    if iterations == 0 {
        return Ok(current);
    }
    let full_batch = batch >= n;
    let mut batcher = Batcher::new(n, batch);
    for _ in 0..iterations {
        let (bx, by);
        let (step_x, step_y) = if full_batch {
            (x, y)
        } else {
            let idx = batcher.next(rng);
            let pair = gather_batch(x, y, &idx)?;
            bx = pair.0;
            by = pair.1;
            (&bx, &by)
        };
        let (_, grads) = backward(&current, step_x, step_y, kind)?;
        current = match mask {
            None => sgd_step(&current, &grads, lr)?,
            Some(m) => crate::pruning::masked_sgd_step(&current, &grads, lr, m)?,
        };
    }
    Ok(current)
}

/// Task-specific adaptation: `cfg.inner_iterations` SGD steps on the
/// episode's support set only. The input network is not modified.
pub fn inner_adapt(
    net: &Network,
    episode: &TaskEpisode,
    cfg: &MetaConfig,
    rng: &mut StreamRng,
) -> Result<Network> {
    adapt_params(
        net,
        &episode.support_x,
        &episode.support_y,
        &cfg.loss,
        cfg.inner_lr,
        cfg.inner_iterations,
        cfg.inner_batch,
        rng,
        None,
    )
}

fn check_congruent(net: &Network, other: &Network) -> Result<()> {
    if net.specs() != other.specs() {
        return Err(Error::Dimension(
            "adapted network layer specs differ from meta network".into(),
        ));
    }
    Ok(())
}

/// The Reptile move: `phi + beta * (mean(adapted) - phi)`, element-wise.
pub fn outer_update(net: &Network, adapted: &[Network], beta: f64) -> Result<Network> {
    outer_update_masked(net, adapted, beta, None)
}

pub(crate) fn outer_update_masked(
    net: &Network,
    adapted: &[Network],
    beta: f64,
    mask: Option<&SparsityMask>,
) -> Result<Network> {
    if adapted.is_empty() {
        return Err(Error::InvalidArgument(
            "outer update needs at least one adapted network".into(),
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "outer learning rate must be nonnegative, got {beta}"
        )));
    }
    for a in adapted {
        check_congruent(net, a)?;
    }
    if let Some(m) = mask {
        m.check_congruent(net)?;
    }
    let s = adapted.len() as f64;
    let mut out = net.clone();
    for li in 0..net.layer_count() {
        for weight in [true, false] {
            let dst = if weight {
                out.weights_mut()[li].data_mut()
            } else {
                out.biases_mut()[li].data_mut()
            };
            let mask_data = mask.map(|m| {
                if weight {
                    m.weight_masks()[li].data()
                } else {
                    m.bias_masks()[li].data()
                }
            });
            for (i, p) in dst.iter_mut().enumerate() {
                let mut sum = 0.0;
                for a in adapted {
                    let src = if weight {
                        a.weights()[li].data()
                    } else {
                        a.biases()[li].data()
                    };
                    sum += src[i];
                }
                let mut delta = beta * (sum / s - *p);
                if let Some(md) = mask_data {
                    delta *= md[i];
                }
                *p += delta;
            }
        }
    }
    for t in out.weights().iter().chain(out.biases().iter()) {
        t.check_finite("outer update output")?;
    }
    Ok(out)
}

/// One meta-iteration: sample `cfg.meta_batch` episodes, adapt each from the
/// same pre-round snapshot, apply the outer update at the scheduled rate.
/// Each task consumes an independent stream seeded from `rng`, so the tasks
/// could run in any order (or concurrently) with identical results.
pub fn reptile_round(
    net: &Network,
    source: &TaskSource,
    cfg: &MetaConfig,
    iter: usize,
    rng: &mut StreamRng,
) -> Result<Network> {
    round_with_mask(net, source, cfg, iter, rng, None)
}

pub(crate) fn round_with_mask(
    net: &Network,
    source: &TaskSource,
    cfg: &MetaConfig,
    iter: usize,
    rng: &mut StreamRng,
    mask: Option<&SparsityMask>,
) -> Result<Network> {
    cfg.validate()?;
    let beta = lr_schedule(cfg.outer_lr, iter, cfg.total_meta_iterations)?;
    let task_seeds: Vec<u64> = (0..cfg.meta_batch).map(|_| rng.next_u64()).collect();
    let mut adapted = Vec::with_capacity(cfg.meta_batch);
    for seed in task_seeds {
        let mut task_rng = StreamRng::seed_from_u64(seed);
        let episode = sample_episode(source, cfg.n_way, cfg.k_shot, cfg.query, &mut task_rng)?;
        adapted.push(adapt_params(
            net,
            &episode.support_x,
            &episode.support_y,
            &cfg.loss,
            cfg.inner_lr,
            cfg.inner_iterations,
            cfg.inner_batch,
            &mut task_rng,
            mask,
        )?);
    }
    outer_update_masked(net, &adapted, beta, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::LayerSpec;
    use crate::stream;
    use crate::tasks::{make_blobs_source, BlobsParams};

    fn scalar_net(w: f64, b: f64) -> Network {
        Network::from_parts(
            vec![LayerSpec::Linear { in_dim: 1, out_dim: 1 }],
            vec![Tensor::matrix(1, 1, vec![w]).unwrap()],
            vec![Tensor::from_vec(vec![b]).unwrap()],
        )
        .unwrap()
    }

    fn scalar_episode() -> TaskEpisode {
        TaskEpisode {
            support_x: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            support_y: Targets::Values(Tensor::matrix(1, 1, vec![0.0]).unwrap()),
            query_x: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            query_y: Targets::Values(Tensor::matrix(1, 1, vec![0.0]).unwrap()),
        }
    }

    fn scalar_cfg(iterations: usize) -> MetaConfig {
        MetaConfig {
            inner_lr: 0.1,
            inner_iterations: iterations,
            inner_batch: 1,
            n_way: 1,
            k_shot: 1,
            query: 1,
            loss: LossKind::Mse,
            ..MetaConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_input_unchanged() {
        let net = scalar_net(3.0, 0.0);
        let mut rng = stream::derive(0, &[]);
        let adapted = inner_adapt(&net, &scalar_episode(), &scalar_cfg(0), &mut rng).unwrap();
        assert_eq!(adapted, net);
    }

    #[test]
    fn scalar_adaptation_follows_the_hand_recurrence() {
        // f(x) = w x + b on support {(1, 0)}, eta = 0.1:
        // y = w + b, dw = db = 2y, so (w, b) <- (w - 0.2 y, b - 0.2 y).
        let net = scalar_net(3.0, 0.0);
        let mut rng = stream::derive(0, &[]);
        let one = inner_adapt(&net, &scalar_episode(), &scalar_cfg(1), &mut rng).unwrap();
        assert!((one.weights()[0].data()[0] - 2.4).abs() < 1e-15);
        assert!((one.biases()[0].data()[0] + 0.6).abs() < 1e-15);

        let two = inner_adapt(&net, &scalar_episode(), &scalar_cfg(2), &mut rng).unwrap();
        // Second step: y = 2.4 - 0.6 = 1.8, so w = 2.4 - 0.36, b = -0.6 - 0.36.
        assert!((two.weights()[0].data()[0] - 2.04).abs() < 1e-15);
        assert!((two.biases()[0].data()[0] + 0.96).abs() < 1e-15);
        // And the input is untouched.
        assert_eq!(net.weights()[0].data(), &[3.0]);
    }

    #[test]
    fn outer_update_direct_formula() {
        let phi = Network::from_parts(
            vec![LayerSpec::Linear { in_dim: 2, out_dim: 1 }],
            vec![Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()],
            vec![Tensor::from_vec(vec![0.0]).unwrap()],
        )
        .unwrap();
        let mk = |w: [f64; 2]| {
            Network::from_parts(
                vec![LayerSpec::Linear { in_dim: 2, out_dim: 1 }],
                vec![Tensor::matrix(1, 2, w.to_vec()).unwrap()],
                vec![Tensor::from_vec(vec![0.0]).unwrap()],
            )
            .unwrap()
        };
        let updated = outer_update(&phi, &[mk([2.0, 0.0]), mk([4.0, 2.0])], 0.5).unwrap();
        assert_eq!(updated.weights()[0].data(), &[1.5, 0.5]);

        let unchanged = outer_update(&phi, &[mk([2.0, 0.0]), mk([4.0, 2.0])], 0.0).unwrap();
        assert_eq!(unchanged, phi);

        let fixed = outer_update(&phi, &[phi.clone(), phi.clone(), phi.clone()], 0.7).unwrap();
        assert_eq!(fixed, phi);
    }

    #[test]
    fn outer_update_rejects_empty_set() {
        let phi = scalar_net(1.0, 0.0);
        assert!(matches!(
            outer_update(&phi, &[], 0.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn lr_schedule_linear_decay() {
        assert_eq!(lr_schedule(1.0, 0, 100).unwrap(), 1.0);
        assert_eq!(lr_schedule(1.0, 50, 100).unwrap(), 0.5);
        assert!((lr_schedule(1.0, 99, 100).unwrap() - 0.01).abs() < 1e-15);
        assert!(lr_schedule(1.0, 0, 0).is_err());
        assert!(lr_schedule(1.0, 100, 100).is_err());
    }

    fn blobs_setup(seed: u64) -> (TaskSource, MetaConfig) {
        let mut rng = stream::derive(seed, &[stream::tag::SOURCE]);
        let (train, _) = make_blobs_source(
            BlobsParams {
                classes: 8,
                input_dim: 4,
                noise_sigma: 1.0,
            },
            0.5,
            &mut rng,
        )
        .unwrap();
        let cfg = MetaConfig {
            n_way: 3,
            k_shot: 2,
            query: 2,
            inner_lr: 0.05,
            inner_iterations: 3,
            inner_batch: 4,
            meta_batch: 2,
            total_meta_iterations: 10,
            ..MetaConfig::default()
        };
        (train, cfg)
    }

    #[test]
    fn round_is_seed_deterministic() {
        let (train, cfg) = blobs_setup(11);
        let mut init_rng = stream::derive(11, &[stream::tag::INIT]);
        let net = Network::mlp(4, &[6], 3, &mut init_rng).unwrap();
        let mut r1 = stream::derive(11, &[stream::tag::ROUND, 0]);
        let mut r2 = stream::derive(11, &[stream::tag::ROUND, 0]);
        let a = reptile_round(&net, &train, &cfg, 0, &mut r1).unwrap();
        let b = reptile_round(&net, &train, &cfg, 0, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_equals_composition_of_tested_ops() {
        // Replicate the round's stream discipline by hand: draw one seed per
        // task, sample the episode, adapt, then take the outer move.
        let (train, cfg) = blobs_setup(13);
        let mut init_rng = stream::derive(13, &[stream::tag::INIT]);
        let net = Network::mlp(4, &[6], 3, &mut init_rng).unwrap();

        let mut round_rng = stream::derive(13, &[stream::tag::ROUND, 4]);
        let by_round = reptile_round(&net, &train, &cfg, 4, &mut round_rng).unwrap();

        let mut hand_rng = stream::derive(13, &[stream::tag::ROUND, 4]);
        let seeds: Vec<u64> = (0..cfg.meta_batch).map(|_| hand_rng.next_u64()).collect();
        let mut adapted = Vec::new();
        for seed in seeds {
            let mut task_rng = StreamRng::seed_from_u64(seed);
            let ep = sample_episode(&train, cfg.n_way, cfg.k_shot, cfg.query, &mut task_rng)
                .unwrap();
            adapted.push(inner_adapt(&net, &ep, &cfg, &mut task_rng).unwrap());
        }
        let beta = lr_schedule(cfg.outer_lr, 4, cfg.total_meta_iterations).unwrap();
        let by_hand = outer_update(&net, &adapted, beta).unwrap();
        assert_eq!(by_round, by_hand);
    }

    #[test]
    fn single_task_round_is_a_pull_toward_the_adapted_net() {
        let (train, mut cfg) = blobs_setup(17);
        cfg.meta_batch = 1;
        let mut init_rng = stream::derive(17, &[stream::tag::INIT]);
        let net = Network::mlp(4, &[6], 3, &mut init_rng).unwrap();

        let mut round_rng = stream::derive(17, &[stream::tag::ROUND, 0]);
        let by_round = reptile_round(&net, &train, &cfg, 0, &mut round_rng).unwrap();

        let mut hand_rng = stream::derive(17, &[stream::tag::ROUND, 0]);
        let seed = hand_rng.next_u64();
        let mut task_rng = StreamRng::seed_from_u64(seed);
        let ep = sample_episode(&train, cfg.n_way, cfg.k_shot, cfg.query, &mut task_rng).unwrap();
        let adapted = inner_adapt(&net, &ep, &cfg, &mut task_rng).unwrap();

        let beta = lr_schedule(cfg.outer_lr, 0, cfg.total_meta_iterations).unwrap();
        for li in 0..net.layer_count() {
            for (p, (a, r)) in net.weights()[li]
                .data()
                .iter()
                .zip(adapted.weights()[li].data().iter().zip(by_round.weights()[li].data()))
            {
                assert!((p + beta * (a - p) - r).abs() < 1e-15);
            }
        }
    }
}
