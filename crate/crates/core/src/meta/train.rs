use super::{worker_pool, MetaError, PreparedDemo, Result, TrainConfig};
use crate::autodiff::{clip_params, gradient, BoundParams, Graph, ParamSet, Var};
use crate::nn::AdamState;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A per-task loss that is trained by the outer loop: adapt or condition on
/// `train`, then score against the actions of `val`.
pub trait Objective: Sync {
    fn task_loss<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        train: &[&PreparedDemo],
        val: &PreparedDemo,
    ) -> Result<Var<'g>>;

    fn task_loss_value(&self, params: &ParamSet, train: &[&PreparedDemo], val: &PreparedDemo) -> Result<f64> {
        let g = Graph::new();
        Ok(self.task_loss(&g, &params.bind(&g), train, val)?.item())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDemos {
    pub task_seed: u64,
    pub demos: Vec<PreparedDemo>,
}

impl TaskDemos {
    /// Deterministic split used for reporting: the last demo validates, the
    /// ones before it adapt (cycled if there are fewer than `shots`).
    pub fn fixed_pair(&self, shots: usize) -> Option<(Vec<&PreparedDemo>, &PreparedDemo)> {
        let n = self.demos.len();
        if n < 2 {
            return None;
        }
        let train = (0..shots).map(|i| &self.demos[i % (n - 1)]).collect();
        Some((train, &self.demos[n - 1]))
    }

    fn sample_pair(&self, shots: usize, rng: &mut impl Rng) -> (Vec<&PreparedDemo>, &PreparedDemo) {
        let n = self.demos.len();
        let val = rng.random_range(0..n);
        let mut rest: Vec<usize> = (0..n).filter(|&i| i != val).collect();
        let train = if shots <= rest.len() {
            rest.shuffle(rng);
            rest[..shots].iter().map(|&i| &self.demos[i]).collect()
        } else {
            (0..shots).map(|_| &self.demos[rest[rng.random_range(0..rest.len())]]).collect()
        };
        (train, &self.demos[val])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<TaskDemos>,
    /// Held-out tasks for monitoring; never trained on.
    pub heldout: Vec<TaskDemos>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-task meta-loss. Epoch 0 is the fixed-pair loss before any
    /// update; later epochs average the sampled meta-batches.
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ParamSet,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ParamSet, outer_lr: f64) -> Self {
        let adam = AdamState::new(&params, outer_lr);
        TrainState { params, adam, epoch: 0, history: Vec::new() }
    }
}

pub type TrainOutcome = TrainState;

fn add_into(acc: &mut ParamSet, g: &ParamSet) {
    for (name, t) in acc.iter_mut() {
        let src = g.get(name).expect("same structure");
        t.data_mut().iter_mut().zip(src.data()).for_each(|(a, b)| *a += b);
    }
}

/// Summed loss and gradient over tasks. Tasks run in parallel and are
/// reduced in order, so the result does not depend on the thread count.
pub fn meta_gradient<O: Objective + ?Sized>(
    obj: &O,
    params: &ParamSet,
    tasks: &[(Vec<&PreparedDemo>, &PreparedDemo)],
) -> Result<(f64, ParamSet)> {
    let per_task: Vec<Result<(f64, ParamSet)>> = tasks
        .par_iter()
        .map(|(train, val)| {
            let g = Graph::new();
            let bound = params.bind(&g);
            let loss = obj.task_loss(&g, &bound, train, val)?;
            let grads = gradient(loss, &bound, false)?;
            Ok((loss.item(), grads.values()))
        })
        .collect();
    let mut total = 0.0;
    let mut acc = params.zeros_like();
    for r in per_task {
        let (l, g) = r?;
        total += l;
        add_into(&mut acc, &g);
    }
    Ok((total, acc))
}

fn mean_fixed_loss<O: Objective + ?Sized>(
    obj: &O,
    params: &ParamSet,
    tasks: &[TaskDemos],
    shots: usize,
) -> Result<Option<f64>> {
    let pairs: Vec<_> = tasks.iter().filter_map(|t| t.fixed_pair(shots)).collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let losses: Vec<Result<f64>> =
        pairs.par_iter().map(|(train, val)| obj.task_loss_value(params, train, val)).collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(Some(sum / pairs.len() as f64))
}

/// Outer loop: shuffled meta-batches each epoch, clipped summed gradient,
/// Adam. The batch order of epoch `e` depends only on `(seed, e)`, so a run
/// resumed from a checkpoint matches an uninterrupted one.
pub fn meta_train<O: Objective + ?Sized>(
    obj: &O,
    data: &TrainData,
    cfg: &TrainConfig,
    mut state: TrainState,
    checkpoint: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(MetaError::EmptyDataset);
    }
    if let Some(t) = data.train.iter().find(|t| t.demos.len() < 2) {
        return Err(MetaError::TooFewDemos { task: t.task_seed, count: t.demos.len() });
    }
    let pool = worker_pool();
    if state.history.is_empty() {
        let train_loss =
            pool.install(|| mean_fixed_loss(obj, &state.params, &data.train, cfg.shots))?.unwrap_or(f64::NAN);
        let heldout_loss = pool.install(|| mean_fixed_loss(obj, &state.params, &data.heldout, cfg.shots))?;
        if !train_loss.is_finite() {
            return Err(MetaError::Diverged { epoch: 0 });
        }
        state.history.push(EpochRecord { epoch: 0, train_loss, heldout_loss });
    }
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.meta_batch) {
            let tasks: Vec<_> = chunk.iter().map(|&i| data.train[i].sample_pair(cfg.shots, &mut rng)).collect();
            let (loss, grads) = pool.install(|| meta_gradient(obj, &state.params, &tasks))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(MetaError::Diverged { epoch });
            }
            let grads = match cfg.meta_clip {
                Some((lo, hi)) => clip_params(&grads, lo, hi)?,
                None => grads,
            };
            state.adam.step(&mut state.params, &grads)?;
            sum += loss;
        }
        if !state.params.is_finite() {
            return Err(MetaError::Diverged { epoch });
        }
        let heldout_loss = pool.install(|| mean_fixed_loss(obj, &state.params, &data.heldout, cfg.shots))?;
        state.history.push(EpochRecord { epoch, train_loss: sum / data.train.len() as f64, heldout_loss });
        state.epoch = epoch;
        log::info!("epoch {epoch}: train {:.5} held-out {:?}", sum / data.train.len() as f64, heldout_loss);
        if cfg.checkpoint_every > 0 && epoch.is_multiple_of(cfg.checkpoint_every) {
            checkpoint(&state)?;
        }
    }
    Ok(state)
}
