use super::container::{read_file, write_file, Cursor};
use super::{DataError, Result};
use crate::autodiff::{ParamSet, Tensor};
use crate::baselines::{Contextual, Lstm, Method};
use crate::meta::{EpochRecord, Mil, Objective, TrainConfig, TrainState};
use crate::nn::{init_params, AdamState, ArchitectureConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything besides the numbers needed to rebuild a trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub method: Method,
    /// The policy network; baselines derive theirs from it.
    pub arch: ArchitectureConfig,
    pub lstm_width: usize,
    pub train: TrainConfig,
    pub env_hash: String,
}

impl ModelSpec {
    pub fn contextual(&self) -> Contextual {
        Contextual::from_base(&self.arch)
    }

    pub fn lstm(&self) -> Lstm {
        Lstm::from_base(&self.arch, self.lstm_width)
    }

    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        match self.method {
            Method::Mil => Ok(init_params(&self.arch, rng)),
            Method::Contextual => Ok(self.contextual().init(rng)),
            Method::Lstm => Ok(self.lstm().init(rng)),
            Method::Random => Err(DataError::Invalid("the random policy has no parameters".into())),
        }
    }

    pub fn objective(&self) -> Result<Box<dyn Objective>> {
        match self.method {
            Method::Mil => Ok(Box::new(Mil { arch: self.arch.clone(), cfg: self.train.clone() })),
            Method::Contextual => Ok(Box::new(self.contextual())),
            Method::Lstm => Ok(Box::new(self.lstm())),
            Method::Random => Err(DataError::Invalid("the random policy is not trainable".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

type Shapes = Vec<(String, Vec<usize>)>;

fn shapes(p: &ParamSet) -> Shapes {
    p.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
}

fn rebuild(shapes: &Shapes, cur: &mut Cursor) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        p.insert(name.clone(), Tensor::new(shape, cur.take(n)?.to_vec()));
    }
    Ok(p)
}

fn check_kind(manifest: &serde_json::Value, expected: &'static str) -> Result<()> {
    let found = manifest.get("kind").and_then(|k| k.as_str()).unwrap_or("unknown");
    if found != expected {
        return Err(DataError::Kind { expected, found: found.into() });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    kind: String,
    spec: ModelSpec,
    shapes: Shapes,
}

pub fn write_model(m: &SavedModel, path: &Path) -> Result<()> {
    let manifest = ModelManifest { kind: "params".into(), spec: m.spec.clone(), shapes: shapes(&m.params) };
    write_file(path, &serde_json::to_value(&manifest)?, &m.params.flatten())
}

pub fn read_model(path: &Path) -> Result<SavedModel> {
    let (manifest, payload) = read_file(path)?;
    check_kind(&manifest, "params")?;
    let m: ModelManifest = serde_json::from_value(manifest)?;
    let mut cur = Cursor::new(&payload);
    let params = rebuild(&m.shapes, &mut cur)?;
    cur.finish()?;
    Ok(SavedModel { spec: m.spec, params })
}

#[derive(Serialize, Deserialize)]
struct AdamScalars {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    kind: String,
    spec: ModelSpec,
    shapes: Shapes,
    adam: AdamScalars,
    epoch: usize,
    history: Vec<EpochRecord>,
}

/// Parameters, optimizer moments and history; payload is params, then the
/// first moments, then the second moments.
pub fn write_checkpoint(spec: &ModelSpec, state: &TrainState, path: &Path) -> Result<()> {
    let a = &state.adam;
    let manifest = CheckpointManifest {
        kind: "checkpoint".into(),
        spec: spec.clone(),
        shapes: shapes(&state.params),
        adam: AdamScalars { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step },
        epoch: state.epoch,
        history: state.history.clone(),
    };
    let mut payload = state.params.flatten();
    payload.extend(a.m.flatten());
    payload.extend(a.v.flatten());
    write_file(path, &serde_json::to_value(&manifest)?, &payload)
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelSpec, TrainState)> {
    let (manifest, payload) = read_file(path)?;
    check_kind(&manifest, "checkpoint")?;
    let m: CheckpointManifest = serde_json::from_value(manifest)?;
    let mut cur = Cursor::new(&payload);
    let params = rebuild(&m.shapes, &mut cur)?;
    let mm = rebuild(&m.shapes, &mut cur)?;
    let v = rebuild(&m.shapes, &mut cur)?;
    cur.finish()?;
    let adam = AdamState {
        lr: m.adam.lr,
        beta1: m.adam.beta1,
        beta2: m.adam.beta2,
        eps: m.adam.eps,
        step: m.adam.step,
        m: mm,
        v,
    };
    Ok((m.spec, TrainState { params, adam, epoch: m.epoch, history: m.history }))
}
