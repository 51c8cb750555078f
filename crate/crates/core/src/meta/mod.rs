//! Meta-imitation: inner losses, gradient-based adaptation, and the outer
//! training loop.

mod loss;
mod train;

pub use loss::{
    actionfree_inner_loss, adapt, adapt_bound, bc_loss, bc_loss_graph, inner_loss_graph, meta_loss, meta_loss_graph,
    twohead_inner_loss, Mil,
};
pub use train::{meta_gradient, meta_train, EpochRecord, Objective, TaskDemos, TrainData, TrainOutcome, TrainState};

use crate::autodiff::{GraphError, ParamSet, StepOrder, Tensor};
use crate::env::{EnvError, Observation, Policy, ReachEnv};
use crate::expert::{Demonstration, Modality};
use crate::nn::{act, AdamError, ArchitectureConfig, ObsBatch};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetaError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("demonstration has no actions")]
    MissingActions,
    #[error("the {0} inner loss needs a two-head architecture")]
    SingleHead(InnerLoss),
    #[error("adaptation needs at least one demonstration")]
    NoDemos,
    #[error("task {task} has {count} demonstrations; meta-training needs at least 2")]
    TooFewDemos { task: u64, count: usize },
    #[error("no meta-training tasks")]
    EmptyDataset,
    #[error("the {kind} inner loss cannot adapt from a {modality} demonstration")]
    Modality { kind: InnerLoss, modality: Modality },
    #[error("demonstration and current observation differ in modality")]
    ObsModality,
    #[error("meta-loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerLoss {
    /// Squared error against the demonstrated actions.
    #[default]
    Bc,
    /// Squared error of a separate pre-update head against the actions.
    TwoHead,
    /// Squared norm of the pre-update head's output; ignores actions.
    ActionFree,
}

impl fmt::Display for InnerLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InnerLoss::Bc => "bc",
            InnerLoss::TwoHead => "two-head",
            InnerLoss::ActionFree => "action-free",
        })
    }
}

impl std::str::FromStr for InnerLoss {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bc" => Ok(InnerLoss::Bc),
            "two-head" => Ok(InnerLoss::TwoHead),
            "action-free" => Ok(InnerLoss::ActionFree),
            other => Err(format!("unknown inner loss `{other}` (expected bc, two-head or action-free)")),
        }
    }
}

impl InnerLoss {
    pub fn needs_two_heads(self) -> bool {
        self != InnerLoss::Bc
    }

    pub fn accepts(self, modality: Modality) -> bool {
        self == InnerLoss::ActionFree || modality == Modality::Full
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner step size α.
    pub inner_lr: f64,
    /// Outer (Adam) step size β.
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub inner_clip: Option<(f64, f64)>,
    pub meta_clip: Option<(f64, f64)>,
    pub inner_loss: InnerLoss,
    /// Demonstrations averaged per adaptation.
    pub shots: usize,
    pub epochs: usize,
    pub seed: u64,
    pub order: StepOrder,
    /// Keep the bias-transformation vector fixed during adaptation.
    pub freeze_z: bool,
    /// The pre-update head shares the post-update head's parameters.
    pub tied_heads: bool,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_lr: 0.001,
            outer_lr: 0.001,
            inner_steps: 1,
            meta_batch: 5,
            inner_clip: None,
            meta_clip: Some((-20.0, 20.0)),
            inner_loss: InnerLoss::Bc,
            shots: 1,
            epochs: 10,
            seed: 0,
            order: StepOrder::Exact,
            freeze_z: false,
            tied_heads: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MetaError::Config(m.to_string()));
        if !(self.inner_lr >= 0.0) || !(self.outer_lr >= 0.0) {
            return bad("step sizes must be non-negative");
        }
        if self.meta_batch == 0 {
            return bad("meta_batch must be at least 1");
        }
        if self.shots == 0 {
            return bad("shots must be at least 1");
        }
        for (lo, hi) in self.inner_clip.iter().chain(&self.meta_clip) {
            if !(lo <= hi) {
                return bad("clip interval has lo > hi");
            }
        }
        Ok(())
    }

    /// Checks the config against an architecture.
    pub fn check_arch(&self, arch: &ArchitectureConfig) -> Result<()> {
        if self.inner_loss.needs_two_heads() && !arch.two_head && !self.tied_heads {
            return Err(MetaError::SingleHead(self.inner_loss));
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze_z && name == "bt.z"
    }
}

/// A demonstration as policy-ready tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDemo {
    pub obs: ObsBatch,
    /// `[T, action_dim]`
    pub actions: Option<Tensor>,
    pub modality: Modality,
}

impl PreparedDemo {
    pub fn new(env: &ReachEnv, demo: &Demonstration) -> Self {
        PreparedDemo { obs: demo.obs_batch(env), actions: demo.action_tensor(), modality: demo.modality }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Observation at timestep `t` as a batch of one.
    pub fn observation(&self, t: usize) -> ObsBatch {
        let d = self.obs.state.shape()[1];
        let state = Tensor::new(&[1, d], self.obs.state.data()[t * d..(t + 1) * d].to_vec());
        let image = self.obs.image.as_ref().map(|img| {
            let per: usize = img.shape()[1..].iter().product();
            let mut shape = img.shape().to_vec();
            shape[0] = 1;
            Tensor::new(&shape, img.data()[t * per..(t + 1) * per].to_vec())
        });
        ObsBatch { state, image }
    }
}

/// Observation to single-row batch.
pub fn single_batch(obs: &Observation) -> ObsBatch {
    crate::env::to_batch(std::slice::from_ref(obs))
}

/// Fixed parameters deployed as a closed-loop policy.
#[derive(Clone, Debug)]
pub struct ParamPolicy {
    pub arch: ArchitectureConfig,
    pub params: ParamSet,
}

impl ParamPolicy {
    pub fn action(&self, obs: &ObsBatch) -> Result<Tensor> {
        Ok(act(&self.arch, &self.params, obs)?)
    }
}

impl Policy for ParamPolicy {
    fn act(&mut self, obs: &Observation) -> std::result::Result<[f64; 2], EnvError> {
        let a = self.action(&single_batch(obs)).map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok([a.data()[0], a.data()[1]])
    }
}

/// Adapts `params` to the given demonstrations and returns the resulting
/// policy.
pub fn one_shot_policy(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &ParamSet,
    demos: &[PreparedDemo],
) -> Result<ParamPolicy> {
    for d in demos {
        if !cfg.inner_loss.accepts(d.modality) {
            return Err(MetaError::Modality { kind: cfg.inner_loss, modality: d.modality });
        }
    }
    let adapted = adapt(arch, cfg, params, demos)?;
    Ok(ParamPolicy { arch: arch.clone(), params: adapted })
}

/// Worker pool honoring `MIL_THREADS`.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("MIL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}
