use super::container::{read_file, write_file, Cursor};
use super::{mix_seed, DataError, Result};
use crate::env::{color_distance, ArmState, EnvConfig, ReachEnv, Scene, Split, Task};
use crate::expert::{generate_demo, ilqg_solve, Demonstration, ExpertConfig, Modality};
use crate::meta::{PreparedDemo, TaskDemos, TrainData};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Meta-test target colors must stay this far from every meta-train one.
const MIN_SPLIT_DISTANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: Task,
    pub demos: Vec<Demonstration>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env: EnvConfig,
    pub meta_train: Vec<TaskEntry>,
    /// Held out from meta-training; used for monitoring and evaluation.
    pub meta_test: Vec<TaskEntry>,
}

impl DemoDataset {
    /// Structural checks run on every load and before every write.
    pub fn validate(&self) -> Result<()> {
        for (list, split) in [(&self.meta_train, Split::MetaTrain), (&self.meta_test, Split::MetaTest)] {
            for e in list {
                if e.task.split != split {
                    return Err(DataError::Invalid(format!(
                        "task {} is filed under {split} but tagged {}",
                        e.task.seed, e.task.split
                    )));
                }
                if let Some(d) = e.demos.iter().find(|d| d.task_seed != e.task.seed || d.split != split) {
                    return Err(DataError::Invalid(format!(
                        "demo for task {} filed under task {}",
                        d.task_seed, e.task.seed
                    )));
                }
            }
        }
        if let Some(e) = self.meta_train.iter().find(|e| e.demos.len() < 2) {
            return Err(DataError::Invalid(format!(
                "meta-train task {} has {} demonstrations; at least 2 are required",
                e.task.seed,
                e.demos.len()
            )));
        }
        for te in &self.meta_test {
            if let Some(tr) = self
                .meta_train
                .iter()
                .find(|tr| color_distance(&tr.task.target_color, &te.task.target_color) < MIN_SPLIT_DISTANCE)
            {
                return Err(DataError::Invalid(format!(
                    "meta-test task {} shares its target color with meta-train task {}",
                    te.task.seed, tr.task.seed
                )));
            }
        }
        Ok(())
    }

    pub fn num_demos(&self) -> usize {
        self.meta_train.iter().chain(&self.meta_test).map(|e| e.demos.len()).sum()
    }

    /// Policy-ready tensors. Meta-test tasks with at least two demos become
    /// the held-out monitoring set.
    pub fn train_data(&self, env: &ReachEnv) -> TrainData {
        let prep = |e: &TaskEntry| TaskDemos {
            task_seed: e.task.seed,
            demos: e.demos.iter().map(|d| PreparedDemo::new(env, d)).collect(),
        };
        TrainData {
            train: self.meta_train.par_iter().map(prep).collect(),
            heldout: self.meta_test.par_iter().filter(|e| e.demos.len() >= 2).map(prep).collect(),
        }
    }

    /// Same demonstrations seen through a weaker observation modality.
    pub fn with_modality(&self, modality: Modality) -> DemoDataset {
        let conv = |list: &[TaskEntry]| {
            list.iter()
                .map(|e| TaskEntry {
                    task: e.task.clone(),
                    demos: e.demos.iter().map(|d| d.with_modality(modality)).collect(),
                })
                .collect()
        };
        DemoDataset { env: self.env.clone(), meta_train: conv(&self.meta_train), meta_test: conv(&self.meta_test) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub meta_train_tasks: usize,
    pub demos_per_task: usize,
    pub meta_test_tasks: usize,
    pub meta_test_demos: usize,
    pub modality: Modality,
    pub seed: u64,
    pub expert: ExpertConfig,
    /// Minimum fraction of successful demonstrations.
    pub min_expert_success: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            meta_train_tasks: 300,
            demos_per_task: 2,
            meta_test_tasks: 20,
            meta_test_demos: 2,
            modality: Modality::Full,
            seed: 0,
            expert: ExpertConfig::default(),
            min_expert_success: 0.95,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos_per_task < 2 {
            return Err(DataError::Invalid(format!(
                "demos_per_task = {}; meta-training needs at least 2 demonstrations per task",
                self.demos_per_task
            )));
        }
        if self.meta_train_tasks == 0 {
            return Err(DataError::Invalid("meta_train_tasks must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_expert_success) {
            return Err(DataError::Invalid("min_expert_success must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub meta_train_tasks: usize,
    pub meta_test_tasks: usize,
    pub demos: usize,
    pub expert_successes: usize,
    pub expert_success_rate: f64,
    pub env_hash: String,
}

/// Task seed for the `i`-th task of a split.
pub fn task_seed(seed: u64, split: Split, i: usize) -> u64 {
    mix_seed(mix_seed(seed, split as u64), i as u64)
}

fn generate_entry(env: &ReachEnv, cfg: &GenerateConfig, task: Task, n: usize) -> Result<TaskEntry> {
    let demos = (0..n)
        .map(|j| {
            let expert = ilqg_solve(env, &task, mix_seed(task.seed, j as u64), &cfg.expert);
            generate_demo(env, &expert, cfg.expert.noise_sigma, cfg.modality)
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(TaskEntry { task, demos })
}

/// Solves and records every demonstration. Tasks run in parallel; the result
/// depends only on `(env, cfg)`.
pub fn generate_dataset(env: &ReachEnv, cfg: &GenerateConfig) -> Result<(DemoDataset, GenerateSummary)> {
    cfg.validate()?;
    let mut test_tasks = Vec::with_capacity(cfg.meta_test_tasks);
    let train_tasks: Vec<Task> = (0..cfg.meta_train_tasks)
        .map(|i| env.config.sample_task(task_seed(cfg.seed, Split::MetaTrain, i), Split::MetaTrain))
        .collect();
    // split regions are disjoint by construction; the filter only guards the
    // validation invariant against configuration drift
    let mut i = 0;
    while test_tasks.len() < cfg.meta_test_tasks {
        let t = env.config.sample_task(task_seed(cfg.seed, Split::MetaTest, i), Split::MetaTest);
        if train_tasks.iter().all(|tr| color_distance(&tr.target_color, &t.target_color) >= MIN_SPLIT_DISTANCE) {
            test_tasks.push(t);
        }
        i += 1;
    }
    let meta_train = train_tasks
        .into_par_iter()
        .map(|t| generate_entry(env, cfg, t, cfg.demos_per_task))
        .collect::<Result<Vec<_>>>()?;
    let meta_test = test_tasks
        .into_par_iter()
        .map(|t| generate_entry(env, cfg, t, cfg.meta_test_demos))
        .collect::<Result<Vec<_>>>()?;
    let ds = DemoDataset { env: env.config.clone(), meta_train, meta_test };
    ds.validate()?;
    let mut successes = 0;
    for e in ds.meta_train.iter().chain(&ds.meta_test) {
        for d in &e.demos {
            successes += d.success()? as usize;
        }
    }
    let demos = ds.num_demos();
    let summary = GenerateSummary {
        meta_train_tasks: ds.meta_train.len(),
        meta_test_tasks: ds.meta_test.len(),
        demos,
        expert_successes: successes,
        expert_success_rate: if demos == 0 { 1.0 } else { successes as f64 / demos as f64 },
        env_hash: env.config.hash(),
    };
    Ok((ds, summary))
}

#[derive(Serialize, Deserialize)]
struct DemoHeader {
    episode_seed: u64,
    modality: Modality,
    scene: Scene,
    len: usize,
    has_actions: bool,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    task: Task,
    demos: Vec<DemoHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    kind: String,
    env_hash: String,
    env: EnvConfig,
    meta_train: Vec<EntryHeader>,
    meta_test: Vec<EntryHeader>,
}

const KIND: &str = "dataset";

fn pack(list: &[TaskEntry], payload: &mut Vec<f64>) -> Vec<EntryHeader> {
    list.iter()
        .map(|e| EntryHeader {
            task: e.task.clone(),
            demos: e
                .demos
                .iter()
                .map(|d| {
                    payload.extend(d.states.iter().flat_map(|s| [s.q[0], s.q[1], s.qd[0], s.qd[1]]));
                    if let Some(a) = &d.actions {
                        payload.extend(a.iter().flatten());
                    }
                    payload.extend(d.ee.iter().flatten());
                    DemoHeader {
                        episode_seed: d.episode_seed,
                        modality: d.modality,
                        scene: d.scene.clone(),
                        len: d.len(),
                        has_actions: d.actions.is_some(),
                    }
                })
                .collect(),
        })
        .collect()
}

fn pairs(s: &[f64]) -> Vec<[f64; 2]> {
    s.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn unpack(headers: Vec<EntryHeader>, cur: &mut Cursor) -> Result<Vec<TaskEntry>> {
    headers
        .into_iter()
        .map(|h| {
            let demos = h
                .demos
                .into_iter()
                .map(|d| {
                    let states = cur
                        .take(4 * d.len)?
                        .chunks_exact(4)
                        .map(|c| ArmState { q: [c[0], c[1]], qd: [c[2], c[3]] })
                        .collect();
                    let actions = if d.has_actions { Some(pairs(cur.take(2 * d.len)?)) } else { None };
                    let ee = pairs(cur.take(2 * d.len)?);
                    Ok(Demonstration {
                        task_seed: h.task.seed,
                        split: h.task.split,
                        episode_seed: d.episode_seed,
                        modality: d.modality,
                        scene: d.scene,
                        states,
                        actions,
                        ee,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(TaskEntry { task: h.task, demos })
        })
        .collect()
}

pub fn write_dataset(ds: &DemoDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut payload = Vec::new();
    let meta_train = pack(&ds.meta_train, &mut payload);
    let meta_test = pack(&ds.meta_test, &mut payload);
    let manifest =
        DatasetManifest { kind: KIND.into(), env_hash: ds.env.hash(), env: ds.env.clone(), meta_train, meta_test };
    write_file(path, &serde_json::to_value(&manifest)?, &payload)
}

/// Reads and validates a dataset. When `expected` is given, its hash must
/// match the file's unless `allow_env_mismatch` is set, in which case the
/// mismatch is only logged.
pub fn read_dataset(path: &Path, expected: Option<&EnvConfig>, allow_env_mismatch: bool) -> Result<DemoDataset> {
    let (manifest, payload) = read_file(path)?;
    let kind = manifest.get("kind").and_then(|k| k.as_str()).unwrap_or("unknown").to_string();
    if kind != KIND {
        return Err(DataError::Kind { expected: KIND, found: kind });
    }
    let m: DatasetManifest = serde_json::from_value(manifest)?;
    if m.env.hash() != m.env_hash {
        return Err(DataError::Invalid("stored environment does not match its hash".into()));
    }
    if let Some(cfg) = expected {
        let want = cfg.hash();
        if want != m.env_hash {
            if !allow_env_mismatch {
                return Err(DataError::EnvMismatch { expected: want, found: m.env_hash });
            }
            log::warn!(
                "dataset {} was generated with environment {}, loading under {want}",
                path.display(),
                m.env_hash
            );
        }
    }
    let mut cur = Cursor::new(&payload);
    let meta_train = unpack(m.meta_train, &mut cur)?;
    let meta_test = unpack(m.meta_test, &mut cur)?;
    cur.finish()?;
    let ds = DemoDataset { env: m.env, meta_train, meta_test };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ReachEnv, DemoDataset) {
        let env = ReachEnv::default();
        let cfg = GenerateConfig { meta_train_tasks: 3, meta_test_tasks: 2, ..Default::default() };
        let (ds, summary) = generate_dataset(&env, &cfg).unwrap();
        assert_eq!(summary.demos, 10);
        (env, ds)
    }

    #[test]
    fn round_trip_and_env_hash() {
        let (env, ds) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mil");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path, Some(&env.config), false).unwrap(), ds);
        let mut other = env.config.clone();
        other.horizon = 40;
        assert!(matches!(read_dataset(&path, Some(&other), false), Err(DataError::EnvMismatch { .. })));
        assert_eq!(read_dataset(&path, Some(&other), true).unwrap(), ds);
    }

    #[test]
    fn action_free_round_trip() {
        let (_, ds) = small();
        let ds = ds.with_modality(Modality::VideoState);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mil");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path, None, false).unwrap(), ds);
    }

    #[test]
    fn single_demo_tasks_are_rejected() {
        let cfg = GenerateConfig { demos_per_task: 1, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(DataError::Invalid(_))));
        let (_, mut ds) = small();
        ds.meta_train[0].demos.pop();
        assert!(ds.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let env = ReachEnv::default();
        let cfg = GenerateConfig { meta_train_tasks: 2, meta_test_tasks: 1, ..Default::default() };
        assert_eq!(generate_dataset(&env, &cfg).unwrap(), generate_dataset(&env, &cfg).unwrap());
    }
}
