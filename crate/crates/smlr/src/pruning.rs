//! Layer-wise magnitude pruning and the prune/retrain schedule driver.
//!
//! A [`SparsityPlan`] fixes per-tensor keep budgets `k_l` from a pruning
//! rate. [`topk_mask`] keeps the `k_l` largest-magnitude entries of each
//! prunable tensor; masked Reptile rounds multiply every update (inner SGD
//! steps and the outer move) by the mask, so pruned coordinates stay exactly
//! zero throughout a pruning phase. [`run_schedule`] drives the full
//! pretrain -> (prune -> retrain) x rounds procedure; with one round it is
//! the dense-sparse-dense schedule, with several it is iterative hard
//! thresholding, recomputing the mask from the then-current parameters at
//! the start of every round. The final output is dense.

use crate::error::{Error, Result};
use crate::ndcore::{GradientSet, Network, Tensor};
use crate::reptile::{adapt_params, reptile_round, round_with_mask, MetaConfig};
use crate::stream::{self, StreamRng};
use crate::tasks::{TaskEpisode, TaskSource};

/// Per-tensor keep budgets derived from a pruning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPlan {
    rate: f64,
    weight_budgets: Vec<usize>,
    bias_budgets: Vec<usize>,
    prune_biases: bool,
}

impl SparsityPlan {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn prune_biases(&self) -> bool {
        self.prune_biases
    }

    pub fn weight_budgets(&self) -> &[usize] {
        &self.weight_budgets
    }

    pub fn bias_budgets(&self) -> &[usize] {
        &self.bias_budgets
    }

    /// Total keep budget `k` across all tensors.
    pub fn total_kept(&self) -> usize {
        self.weight_budgets.iter().sum::<usize>() + self.bias_budgets.iter().sum::<usize>()
    }

    fn check_congruent(&self, net: &Network) -> Result<()> {
        if self.weight_budgets.len() != net.weights().len()
            || self.bias_budgets.len() != net.biases().len()
        {
            return Err(Error::Dimension(
                "sparsity plan layer count does not match network".into(),
            ));
        }
        for (k, t) in self
            .weight_budgets
            .iter()
            .zip(net.weights())
            .chain(self.bias_budgets.iter().zip(net.biases()))
        {
            if *k > t.len() {
                return Err(Error::Dimension(format!(
                    "budget {} exceeds tensor size {}",
                    k,
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

/// Zero-one masks congruent with a network's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    weight_masks: Vec<Tensor>,
    bias_masks: Vec<Tensor>,
}

impl SparsityMask {
    pub fn weight_masks(&self) -> &[Tensor] {
        &self.weight_masks
    }

    pub fn bias_masks(&self) -> &[Tensor] {
        &self.bias_masks
    }

    pub fn all_ones(net: &Network) -> SparsityMask {
        SparsityMask {
            weight_masks: net
                .weights()
                .iter()
                .map(|t| Tensor::ones(t.shape().to_vec()))
                .collect(),
            bias_masks: net
                .biases()
                .iter()
                .map(|t| Tensor::ones(t.shape().to_vec()))
                .collect(),
        }
    }

    /// Number of kept (one) entries per weight tensor, then per bias tensor.
    pub fn ones_per_tensor(&self) -> (Vec<usize>, Vec<usize>) {
        let count = |t: &Tensor| t.data().iter().filter(|&&v| v == 1.0).count();
        (
            self.weight_masks.iter().map(count).collect(),
            self.bias_masks.iter().map(count).collect(),
        )
    }

    /// Rebuilds a mask from raw tensors (checkpoint loading), checking
    /// congruence and that every entry is 0 or 1.
    pub(crate) fn from_parts(
        weight_masks: Vec<Tensor>,
        bias_masks: Vec<Tensor>,
        net: &Network,
    ) -> Result<SparsityMask> {
        let mask = SparsityMask {
            weight_masks,
            bias_masks,
        };
        mask.check_congruent(net)?;
        for t in mask.weight_masks.iter().chain(mask.bias_masks.iter()) {
            if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::MaskInvariant(
                    "mask entries must be 0 or 1".into(),
                ));
            }
        }
        Ok(mask)
    }

    pub(crate) fn check_congruent(&self, net: &Network) -> Result<()> {
        if self.weight_masks.len() != net.weights().len()
            || self.bias_masks.len() != net.biases().len()
        {
            return Err(Error::Dimension(
                "mask layer count does not match network".into(),
            ));
        }
        for (m, t) in self
            .weight_masks
            .iter()
            .zip(net.weights())
            .chain(self.bias_masks.iter().zip(net.biases()))
        {
            if m.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "mask shape {:?} does not match tensor {:?}",
                    m.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Derives keep budgets: each prunable tensor of size `p_l` keeps
/// `k_l = p_l - floor(rate * p_l)`; non-prunable tensors keep everything.
/// Biases are prunable only when `prune_biases` is set.
pub fn budgets_from_rate(net: &Network, rate: f64, prune_biases: bool) -> Result<SparsityPlan> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "pruning rate must be in [0, 1), got {rate}"
        )));
    }
    let budget = |t: &Tensor, prunable: bool| {
        let p = t.len();
        if prunable {
            p - ((rate * p as f64).floor() as usize).min(p)
        } else {
            p
        }
    };
    Ok(SparsityPlan {
        rate,
        weight_budgets: net.weights().iter().map(|t| budget(t, true)).collect(),
        bias_budgets: net
            .biases()
            .iter()
            .map(|t| budget(t, prune_biases))
            .collect(),
        prune_biases,
    })
}

/// Ones at the `k_l` largest-magnitude positions of each tensor, ties in
/// magnitude broken toward the lowest flat index. Pure function of the
/// parameter magnitudes, so it is invariant under positive rescaling.
pub fn topk_mask(net: &Network, plan: &SparsityPlan) -> Result<SparsityMask> {
    plan.check_congruent(net)?;
    let mask_for = |t: &Tensor, k: usize| -> Tensor {
        let mut idx: Vec<usize> = (0..t.len()).collect();
        let d = t.data();
        idx.sort_by(|&a, &b| {
            d[b].abs()
                .partial_cmp(&d[a].abs())
                .expect("finite magnitudes")
                .then(a.cmp(&b))
        });
        let mut m = vec![0.0; t.len()];
        for &i in idx.iter().take(k) {
            m[i] = 1.0;
        }
        Tensor::new(t.shape().to_vec(), m).expect("mask congruent by construction")
    };
    Ok(SparsityMask {
        weight_masks: net
            .weights()
            .iter()
            .zip(&plan.weight_budgets)
            .map(|(t, &k)| mask_for(t, k))
            .collect(),
        bias_masks: net
            .biases()
            .iter()
            .zip(&plan.bias_budgets)
            .map(|(t, &k)| mask_for(t, k))
            .collect(),
    })
}

/// Element-wise product of parameters and mask.
pub fn apply_mask(net: &Network, mask: &SparsityMask) -> Result<Network> {
    mask.check_congruent(net)?;
    let mut out = net.clone();
    for (t, m) in out.weights_mut().iter_mut().zip(&mask.weight_masks) {
        for (p, &mv) in t.data_mut().iter_mut().zip(m.data()) {
            *p *= mv;
        }
    }
    for (t, m) in out.biases_mut().iter_mut().zip(&mask.bias_masks) {
        for (p, &mv) in t.data_mut().iter_mut().zip(m.data()) {
            *p *= mv;
        }
    }
    Ok(out)
}

/// True iff every off-mask parameter is exactly zero.
pub fn satisfies_mask(net: &Network, mask: &SparsityMask) -> Result<bool> {
    mask.check_congruent(net)?;
    let ok = net
        .weights()
        .iter()
        .zip(&mask.weight_masks)
        .chain(net.biases().iter().zip(&mask.bias_masks))
        .all(|(t, m)| {
            t.data()
                .iter()
                .zip(m.data())
                .all(|(&p, &mv)| mv == 1.0 || p == 0.0)
        });
    Ok(ok)
}

/// SGD step with the update vector masked: `param - lr * grad * mask`.
/// Pruned coordinates are left bit-identical.
pub fn masked_sgd_step(
    net: &Network,
    grads: &GradientSet,
    lr: f64,
    mask: &SparsityMask,
) -> Result<Network> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    mask.check_congruent(net)?;
    let mut out = net.clone();
    for li in 0..net.layer_count() {
        let w = out.weights_mut()[li].data_mut();
        for (i, p) in w.iter_mut().enumerate() {
            let m = mask.weight_masks[li].data()[i];
            if m != 0.0 {
                *p -= lr * grads.d_weights[li].data()[i] * m;
            }
        }
        let b = out.biases_mut()[li].data_mut();
        for (i, p) in b.iter_mut().enumerate() {
            let m = mask.bias_masks[li].data()[i];
            if m != 0.0 {
                *p -= lr * grads.d_biases[li].data()[i] * m;
            }
        }
    }
    for t in out.weights().iter().chain(out.biases().iter()) {
        t.check_finite("masked sgd step output")?;
    }
    Ok(out)
}

/// Task adaptation restricted to the mask: gradients are computed densely,
/// then every SGD update is masked, so off-mask coordinates never move.
pub fn masked_inner_adapt(
    net: &Network,
    episode: &TaskEpisode,
    cfg: &MetaConfig,
    mask: &SparsityMask,
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
        Some(mask),
    )
}

/// A Reptile round with every update masked. Requires the input network to
/// already satisfy the mask (`net == apply_mask(net, mask)`).
pub fn masked_reptile_round(
    net: &Network,
    mask: &SparsityMask,
    source: &TaskSource,
    cfg: &MetaConfig,
    iter: usize,
    rng: &mut StreamRng,
) -> Result<Network> {
    if !satisfies_mask(net, mask)? {
        return Err(Error::MaskInvariant(
            "network has nonzero entries off the mask".into(),
        ));
    }
    round_with_mask(net, source, cfg, iter, rng, Some(mask))
}

/// Schedule phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Prune,
    Retrain,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Prune => "prune",
            Phase::Retrain => "retrain",
        }
    }
}

/// Iteration counts for the pretrain / (prune, retrain) x rounds schedule.
/// `rounds == 1` is the DSD instantiation, `rounds > 1` the IHT one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSchedule {
    pub pretrain_iters: usize,
    pub prune_iters: usize,
    pub retrain_iters: usize,
    pub rounds: usize,
    /// Fraction of each prune+retrain interval spent pruning.
    pub ratio: f64,
}

impl PruneSchedule {
    /// One-shot schedule from explicit phase lengths.
    pub fn dsd(pretrain_iters: usize, prune_iters: usize, retrain_iters: usize) -> PruneSchedule {
        Self::with_rounds(pretrain_iters, prune_iters, retrain_iters, 1)
    }

    pub fn with_rounds(
        pretrain_iters: usize,
        prune_iters: usize,
        retrain_iters: usize,
        rounds: usize,
    ) -> PruneSchedule {
        let interval = prune_iters + retrain_iters;
        let ratio = if interval == 0 {
            0.0
        } else {
            prune_iters as f64 / interval as f64
        };
        PruneSchedule {
            pretrain_iters,
            prune_iters,
            retrain_iters,
            rounds,
            ratio,
        }
    }

    /// Multi-round schedule from an interval length and a pruning ratio:
    /// `prune_iters = floor(ratio * interval)`, retrain takes the rest.
    pub fn iht(
        pretrain_iters: usize,
        rounds: usize,
        interval_iters: usize,
        ratio: f64,
    ) -> Result<PruneSchedule> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ratio must be in (0, 1), got {ratio}"
            )));
        }
        if rounds == 0 || interval_iters == 0 {
            return Err(Error::InvalidArgument(
                "iht schedule needs rounds >= 1 and a positive interval".into(),
            ));
        }
        let prune_iters = (ratio * interval_iters as f64).floor() as usize;
        Ok(PruneSchedule {
            pretrain_iters,
            prune_iters,
            retrain_iters: interval_iters - prune_iters,
            rounds,
            ratio: prune_iters as f64 / interval_iters as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("schedule needs rounds >= 1".into()));
        }
        let interval = self.prune_iters + self.retrain_iters;
        if interval > 0 {
            let implied = self.prune_iters as f64 / interval as f64;
            if (self.ratio - implied).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "ratio {} inconsistent with prune {} / interval {}",
                    self.ratio, self.prune_iters, interval
                )));
            }
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.pretrain_iters + self.rounds * (self.prune_iters + self.retrain_iters)
    }

    /// Phase and (1-based) round index at a global iteration; pretrain
    /// reports round 0.
    pub fn phase_at(&self, iter: usize) -> (Phase, usize) {
        if iter < self.pretrain_iters {
            return (Phase::Pretrain, 0);
        }
        let interval = self.prune_iters + self.retrain_iters;
        debug_assert!(interval > 0 || iter < self.pretrain_iters);
        let offset = iter - self.pretrain_iters;
        let round = offset / interval;
        let within = offset % interval;
        if within < self.prune_iters {
            (Phase::Prune, round + 1)
        } else {
            (Phase::Retrain, round + 1)
        }
    }

    /// Global iteration at which round `r` (1-based) starts pruning.
    fn prune_start(&self, round: usize) -> usize {
        self.pretrain_iters + (round - 1) * (self.prune_iters + self.retrain_iters)
    }
}

/// What happened during a schedule (or schedule segment) run.
#[derive(Debug, Clone, Default)]
pub struct ScheduleHistory {
    /// `(phase, round, start_iter, iters)` spans in execution order.
    pub spans: Vec<(Phase, usize, usize, usize)>,
    /// Global iterations at which the mask was recomputed from the
    /// then-current parameters.
    pub mask_recomputations: Vec<usize>,
}

impl ScheduleHistory {
    fn record(&mut self, phase: Phase, round: usize, iter: usize) {
        match self.spans.last_mut() {
            Some((p, r, start, iters)) if *p == phase && *r == round && *start + *iters == iter => {
                *iters += 1
            }
            _ => self.spans.push((phase, round, iter, 1)),
        }
    }
}

/// Mutable position inside a schedule, checkpointable and resumable.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    pub net: Network,
    /// Active mask while inside a pruning phase.
    pub mask: Option<SparsityMask>,
    /// Completed global iterations.
    pub iter: usize,
}

impl ScheduleState {
    pub fn start(net: Network) -> ScheduleState {
        ScheduleState {
            net,
            mask: None,
            iter: 0,
        }
    }
}

/// Runs the full schedule from a fresh start. See [`run_schedule_segment`].
pub fn run_schedule<F>(
    net0: &Network,
    sched: &PruneSchedule,
    plan: &SparsityPlan,
    source: &TaskSource,
    cfg: &MetaConfig,
    master_seed: u64,
    observer: F,
) -> Result<(Network, ScheduleHistory)>
where
    F: FnMut(usize, Phase, &Network) -> Result<()>,
{
    let (state, history) = run_schedule_segment(
        ScheduleState::start(net0.clone()),
        sched,
        plan,
        source,
        cfg,
        master_seed,
        sched.total_iters(),
        observer,
    )?;
    Ok((state.net, history))
}

/// Advances a schedule from `state.iter` up to `stop_iter` (exclusive).
///
/// Every iteration's round RNG is derived from `(master_seed, iteration)`,
/// so a run split into segments (e.g. across checkpoint handoffs) is
/// bit-identical to an uninterrupted one. At the start of each pruning
/// phase the mask is recomputed from the current parameters and applied;
/// resuming mid-phase requires the checkpointed mask. The observer is
/// called after every completed iteration with the count of completed
/// iterations, the phase it belonged to, and the current parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_schedule_segment<F>(
    mut state: ScheduleState,
    sched: &PruneSchedule,
    plan: &SparsityPlan,
    source: &TaskSource,
    cfg: &MetaConfig,
    master_seed: u64,
    stop_iter: usize,
    mut observer: F,
) -> Result<(ScheduleState, ScheduleHistory)>
where
    F: FnMut(usize, Phase, &Network) -> Result<()>,
{
    sched.validate()?;
    cfg.validate()?;
    plan.check_congruent(&state.net)?;
    let total = sched.total_iters();
    if stop_iter > total || state.iter > stop_iter {
        return Err(Error::InvalidArgument(format!(
            "segment [{}, {}) outside schedule of {} iterations",
            state.iter, stop_iter, total
        )));
    }
    if cfg.total_meta_iterations < total {
        return Err(Error::InvalidArgument(format!(
            "total_meta_iterations {} shorter than schedule {}",
            cfg.total_meta_iterations, total
        )));
    }

    let mut history = ScheduleHistory::default();
    while state.iter < stop_iter {
        let iter = state.iter;
        let (phase, round) = sched.phase_at(iter);
        match phase {
            Phase::Prune => {
                if iter == sched.prune_start(round) {
                    let mask = topk_mask(&state.net, plan)?;
                    state.net = apply_mask(&state.net, &mask)?;
                    state.mask = Some(mask);
                    history.mask_recomputations.push(iter);
                } else if state.mask.is_none() {
                    return Err(Error::MaskRequired(format!(
                        "resumed at iteration {iter}, inside pruning round {round}"
                    )));
                }
            }
            Phase::Pretrain | Phase::Retrain => {
                state.mask = None;
            }
        }
        let mut rng = stream::derive(master_seed, &[stream::tag::ROUND, iter as u64]);
        state.net = match &state.mask {
            Some(mask) => masked_reptile_round(&state.net, mask, source, cfg, iter, &mut rng)?,
            None => reptile_round(&state.net, source, cfg, iter, &mut rng)?,
        };
        history.record(phase, round, iter);
        state.iter += 1;
        observer(state.iter, phase, &state.net)?;
    }
    Ok((state, history))
}
