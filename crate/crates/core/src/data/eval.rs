use super::dataset::{DemoDataset, TaskEntry};
use super::model::SavedModel;
use super::{mix_seed, DataError, Result};
use crate::baselines::{ConditionedPolicy, Method, RandomPolicy};
use crate::env::{Policy, ReachEnv};
use crate::expert::{generate_demo, ilqg_solve, ExpertConfig, Modality};
use crate::meta::{bc_loss, one_shot_policy, worker_pool, MetaError, PreparedDemo};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub tasks: usize,
    pub trials: usize,
    pub shots: usize,
    pub seed: u64,
    /// Solves the fresh conditioning demonstrations.
    pub expert: ExpertConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { tasks: 20, trials: 10, shots: 1, seed: 0, expert: ExpertConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_seed: u64,
    pub successes: usize,
    pub trials: usize,
    /// Behavioral-cloning loss on the task's stored validation demo before
    /// adaptation (MIL only).
    pub pre_loss: Option<f64>,
    /// Same loss for the adapted or conditioned policy.
    pub post_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub shots: usize,
    pub trials_per_task: usize,
    pub seed: u64,
    pub env_hash: String,
    pub tasks: Vec<TaskResult>,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_pre_loss: Option<f64>,
    pub mean_post_loss: Option<f64>,
    /// Tasks whose post-adaptation loss is below the pre-adaptation loss.
    pub post_below_pre: Option<usize>,
    /// Kept out of the written report so repeated runs stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn total_trials(&self) -> usize {
        self.tasks.iter().map(|t| t.trials).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("method,shots,task_seed,successes,trials,pre_loss,post_loss\n");
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.method,
                self.shots,
                t.task_seed,
                t.successes,
                t.trials,
                opt(t.pre_loss),
                opt(t.post_loss)
            );
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        std::fs::write(stem.with_extension("json"), self.to_json())?;
        std::fs::write(stem.with_extension("csv"), self.to_csv())?;
        Ok(())
    }
}

const DEMO_SALT: u64 = 0x64656d6f;
const TRIAL_SALT: u64 = 0x747269616c;

/// Episode seeds of the conditioning demos and of the trials for one task.
/// The two families come from different salts and are checked to be
/// disjoint.
fn episode_seeds(seed: u64, task_seed: u64, shots: usize, trials: usize) -> (Vec<u64>, Vec<u64>) {
    let base = mix_seed(seed, task_seed);
    let demos: Vec<u64> = (0..shots).map(|j| mix_seed(base ^ DEMO_SALT, j as u64)).collect();
    let trial_seeds: Vec<u64> = (0..trials)
        .map(|i| {
            let mut s = mix_seed(base ^ TRIAL_SALT, i as u64);
            while demos.contains(&s) {
                s = mix_seed(s, 1);
            }
            s
        })
        .collect();
    (demos, trial_seeds)
}

fn squared_error(pred: &crate::autodiff::Tensor, target: &crate::autodiff::Tensor) -> f64 {
    pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn eval_task(
    env: &ReachEnv,
    method: Method,
    model: Option<&SavedModel>,
    entry: &TaskEntry,
    modality: Modality,
    opts: &EvalOptions,
) -> Result<TaskResult> {
    let task = &entry.task;
    let (demo_seeds, trial_seeds) = episode_seeds(opts.seed, task.seed, opts.shots, opts.trials);
    let val = entry.demos.last().filter(|d| d.actions.is_some()).map(|d| PreparedDemo::new(env, d));
    let fresh = || -> Result<Vec<PreparedDemo>> {
        demo_seeds
            .iter()
            .map(|&s| {
                let expert = ilqg_solve(env, task, s, &opts.expert);
                Ok(PreparedDemo::new(env, &generate_demo(env, &expert, opts.expert.noise_sigma, modality)?))
            })
            .collect()
    };
    let model = || model.ok_or_else(|| DataError::Invalid(format!("the {method} method needs a parameter file")));
    let mut pre_loss = None;
    let mut post_loss = None;
    let run =
        |policy: &mut dyn Policy, trial: u64| -> Result<bool> { Ok(env.rollout(policy, task, trial)?.success()?) };
    let mut successes = 0;
    match method {
        Method::Random => {
            for &s in &trial_seeds {
                successes += run(&mut RandomPolicy::new(mix_seed(s, 0x72)), s)? as usize;
            }
        }
        Method::Mil => {
            let m = model()?;
            let demos = fresh()?;
            let mut policy = one_shot_policy(&m.spec.arch, &m.spec.train, &m.params, &demos)?;
            if let Some(v) = &val {
                pre_loss = Some(bc_loss(&m.spec.arch, &m.params, v)?);
                post_loss = Some(bc_loss(&m.spec.arch, &policy.params, v)?);
            }
            for &s in &trial_seeds {
                successes += run(&mut policy, s)? as usize;
            }
        }
        Method::Contextual | Method::Lstm => {
            let m = model()?;
            let demos = fresh()?;
            let mut policy = if method == Method::Contextual {
                ConditionedPolicy::contextual(m.spec.contextual(), m.params.clone(), &demos)?
            } else {
                ConditionedPolicy::lstm(m.spec.lstm(), m.params.clone(), &demos)?
            };
            if let Some(v) = &val {
                let pred = policy.action(&v.obs)?;
                post_loss = Some(squared_error(&pred, v.actions.as_ref().expect("filtered")));
            }
            for &s in &trial_seeds {
                successes += run(&mut policy, s)? as usize;
            }
        }
    }
    Ok(TaskResult { task_seed: task.seed, successes, trials: opts.trials, pre_loss, post_loss })
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// One-shot (or k-shot) evaluation on the first `opts.tasks` meta-test
/// tasks. For each task, fresh demonstrations are solved with episode seeds
/// distinct from the trial seeds; the policy adapts (MIL) or conditions on
/// them (baselines) and is rolled out once per trial. Tasks run in parallel
/// and are reported in dataset order.
pub fn evaluate(
    env: &ReachEnv,
    method: Method,
    model: Option<&SavedModel>,
    dataset: &DemoDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    if opts.shots == 0 {
        return Err(DataError::Invalid("shots must be at least 1".into()));
    }
    if opts.tasks > dataset.meta_test.len() {
        return Err(DataError::TooFewTasks { needed: opts.tasks, available: dataset.meta_test.len() });
    }
    if let Some(m) = model {
        if m.spec.method != method {
            return Err(DataError::Invalid(format!("parameter file holds a {} model, not {method}", m.spec.method)));
        }
        if m.spec.arch.vision != env.config.obs.vision {
            return Err(MetaError::ObsModality.into());
        }
    }
    let modality =
        dataset.meta_test.iter().flat_map(|e| e.demos.first()).map(|d| d.modality).next().unwrap_or(Modality::Full);
    let entries = &dataset.meta_test[..opts.tasks];
    let results: Vec<Result<TaskResult>> = worker_pool()
        .install(|| entries.par_iter().map(|e| eval_task(env, method, model, e, modality, opts)).collect());
    let tasks = results.into_iter().collect::<Result<Vec<_>>>()?;
    let successes: usize = tasks.iter().map(|t| t.successes).sum();
    let total = tasks.len() * opts.trials;
    let post_below_pre = if tasks.iter().all(|t| t.pre_loss.is_some() && t.post_loss.is_some()) && !tasks.is_empty() {
        Some(tasks.iter().filter(|t| t.post_loss < t.pre_loss).count())
    } else {
        None
    };
    Ok(EvalReport {
        method,
        shots: opts.shots,
        trials_per_task: opts.trials,
        seed: opts.seed,
        env_hash: env.config.hash(),
        successes,
        success_rate: if total == 0 { 0.0 } else { successes as f64 / total as f64 },
        mean_pre_loss: mean(tasks.iter().map(|t| t.pre_loss)),
        mean_post_loss: mean(tasks.iter().map(|t| t.post_loss)),
        post_below_pre,
        tasks,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_and_trial_seeds_differ() {
        for task in 0..50 {
            let (d, t) = episode_seeds(7, task, 5, 10);
            assert!(d.iter().all(|s| !t.contains(s)));
        }
    }
}
