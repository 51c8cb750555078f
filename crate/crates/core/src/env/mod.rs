//! Planar two-link reaching: a colored target among two distractors.

mod arm;
mod render;
mod task;

pub use arm::{ArmParams, ArmState};
pub use render::{rasterize, Viewport, ARM_COLOR, BACKGROUND, OBJECT_RADIUS};
pub use task::{
    color_distance, color_region, sample_color, Color, Layout, Split, Task, CELL_MARGIN, MIN_OBJECT_COLOR_DISTANCE,
    SPLIT_COLOR_GAP,
};

use crate::autodiff::Tensor;
use crate::nn::ObsBatch;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Distance to the goal that counts as reached.
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Number of final timesteps in which the goal must be reached.
pub const SUCCESS_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("simulator diverged at step {step}")]
    Diverged { step: usize },
    #[error("non-finite torque {0:?}")]
    BadTorque([f64; 2]),
    #[error("trajectory has {len} steps, success needs at least {SUCCESS_WINDOW}")]
    TooShort { len: usize },
    #[error("horizon {0} is shorter than the success window")]
    BadHorizon(usize),
    #[error("policy failed: {0}")]
    Policy(String),
}

/// What the policy sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    pub vision: bool,
    pub image_height: usize,
    pub image_width: usize,
    /// Append joint velocities to the proprioceptive state.
    pub include_velocities: bool,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig { vision: false, image_height: 32, image_width: 40, include_velocities: false }
    }
}

impl ObsConfig {
    pub fn proprio_dim(&self) -> usize {
        if self.include_velocities {
            6
        } else {
            4
        }
    }

    /// Length of the flat state vector fed to the policy.
    pub fn state_dim(&self) -> usize {
        if self.vision {
            self.proprio_dim()
        } else {
            self.proprio_dim() + 3 * 5
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub arm: ArmParams,
    pub layout: Layout,
    pub obs: ObsConfig,
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { arm: ArmParams::default(), layout: Layout::default(), obs: ObsConfig::default(), horizon: 50 }
    }
}

impl EnvConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn rest_state(&self) -> ArmState {
        ArmState::at_rest(self.arm.rest_pose)
    }

    pub fn viewport(&self) -> Viewport {
        Viewport { height: self.obs.image_height, width: self.obs.image_width, arena_size: self.layout.arena_size }
    }

    pub fn sample_task(&self, seed: u64, split: Split) -> Task {
        let start = self.arm.end_effector(self.arm.rest_pose);
        task::sample_task(seed, split, &self.layout, self.arm.base, start)
    }
}

/// Object placement for one episode. `colors[i]` sits at `positions[i]`; the
/// target's slot is shuffled per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub colors: [Color; 3],
    pub positions: [[f64; 2]; 3],
    pub target_index: usize,
}

impl Scene {
    pub fn goal(&self) -> [f64; 2] {
        self.positions[self.target_index]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
    /// `[H, W, 3]` in vision mode.
    pub image: Option<Tensor>,
}

/// Stacks observations into a policy batch.
pub fn to_batch(obs: &[Observation]) -> ObsBatch {
    let dim = obs.first().map_or(0, |o| o.state.len());
    let state = Tensor::new(&[obs.len(), dim], obs.iter().flat_map(|o| o.state.iter().copied()).collect());
    let image = obs.first().and_then(|o| o.image.as_ref()).map(|first| {
        let mut shape = vec![obs.len()];
        shape.extend_from_slice(first.shape());
        let data =
            obs.iter().flat_map(|o| o.image.as_ref().expect("uniform modality").data().iter().copied()).collect();
        Tensor::new(&shape, data)
    });
    ObsBatch { state, image }
}

/// Anything that maps observations to torques.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 2], EnvError>;
}

impl<F: FnMut(&Observation) -> Result<[f64; 2], EnvError>> Policy for F {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 2], EnvError> {
        self(obs)
    }
}

/// A closed-loop episode. `states[t]` is seen before `actions[t]` is applied;
/// `ee[t]` is the end-effector position after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scene: Scene,
    pub states: Vec<ArmState>,
    pub actions: Vec<[f64; 2]>,
    pub ee: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn success(&self) -> Result<bool, EnvError> {
        is_success(&self.ee, self.scene.goal())
    }
}

/// True iff some end-effector position among the final
/// [`SUCCESS_WINDOW`] lies within [`SUCCESS_RADIUS`] of `goal`.
pub fn is_success(ee: &[[f64; 2]], goal: [f64; 2]) -> Result<bool, EnvError> {
    if ee.len() < SUCCESS_WINDOW {
        return Err(EnvError::TooShort { len: ee.len() });
    }
    Ok(ee[ee.len() - SUCCESS_WINDOW..]
        .iter()
        .any(|p| ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt() <= SUCCESS_RADIUS))
}

/// The reaching environment. Stateless: episodes are carried in
/// [`ArmState`] and [`Scene`] values.
#[derive(Clone, Debug, Default)]
pub struct ReachEnv {
    pub config: EnvConfig,
}

impl ReachEnv {
    pub fn new(config: EnvConfig) -> Self {
        ReachEnv { config }
    }

    /// Canonical rest pose and freshly placed objects.
    pub fn reset(&self, task: &Task, episode_seed: u64) -> (ArmState, Scene) {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        rng.set_stream(task.seed.wrapping_mul(2).wrapping_add(matches!(task.split, Split::MetaTest) as u64));
        let state = self.config.rest_state();
        let start = self.config.arm.end_effector(state.q);
        let placed = self.config.layout.sample_positions(self.config.arm.base, start, &mut rng);
        let mut order = [0usize, 1, 2];
        order.shuffle(&mut rng);
        let all = task.colors();
        let scene = Scene {
            colors: order.map(|i| all[i]),
            positions: order.map(|i| placed[i]),
            target_index: order.iter().position(|&i| i == 0).expect("permutation"),
        };
        (state, scene)
    }

    pub fn step(&self, state: &ArmState, torque: [f64; 2]) -> Result<ArmState, EnvError> {
        if !torque.iter().all(|t| t.is_finite()) {
            return Err(EnvError::BadTorque(torque));
        }
        let next = self.config.arm.step(state, torque);
        if next.is_finite() {
            Ok(next)
        } else {
            Err(EnvError::Diverged { step: 0 })
        }
    }

    pub fn end_effector(&self, state: &ArmState) -> [f64; 2] {
        self.config.arm.end_effector(state.q)
    }

    pub fn render(&self, state: &ArmState, scene: &Scene) -> Tensor {
        let arm = &self.config.arm;
        let joints = [arm.base, arm.elbow(state.q), arm.end_effector(state.q)];
        let objects: Vec<_> = scene.positions.iter().copied().zip(scene.colors.iter().copied()).collect();
        rasterize(&self.config.viewport(), joints, &objects)
    }

    pub fn observe(&self, state: &ArmState, scene: &Scene) -> Observation {
        let ee = self.end_effector(state);
        let mut s = vec![state.q[0], state.q[1], ee[0], ee[1]];
        if self.config.obs.include_velocities {
            s.extend(state.qd);
        }
        if self.config.obs.vision {
            return Observation { state: s, image: Some(self.render(state, scene)) };
        }
        for (p, c) in scene.positions.iter().zip(&scene.colors) {
            s.extend(p);
            s.extend(c);
        }
        Observation { state: s, image: None }
    }

    /// Observations along a recorded trajectory.
    pub fn observations(&self, traj: &Trajectory) -> Vec<Observation> {
        traj.states.iter().map(|s| self.observe(s, &traj.scene)).collect()
    }

    /// Runs `policy` for the configured horizon.
    pub fn rollout(&self, policy: &mut dyn Policy, task: &Task, episode_seed: u64) -> Result<Trajectory, EnvError> {
        self.rollout_for(policy, task, episode_seed, self.config.horizon)
    }

    pub fn rollout_for(
        &self,
        policy: &mut dyn Policy,
        task: &Task,
        episode_seed: u64,
        horizon: usize,
    ) -> Result<Trajectory, EnvError> {
        if horizon < SUCCESS_WINDOW {
            return Err(EnvError::BadHorizon(horizon));
        }
        let (mut state, scene) = self.reset(task, episode_seed);
        let mut traj = Trajectory {
            scene,
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            ee: Vec::with_capacity(horizon),
        };
        for t in 0..horizon {
            let obs = self.observe(&state, &traj.scene);
            let u = policy.act(&obs)?;
            let next = self.step(&state, u).map_err(|e| match e {
                EnvError::Diverged { .. } => EnvError::Diverged { step: t },
                e => e,
            })?;
            traj.states.push(state);
            traj.actions.push(u);
            traj.ee.push(self.end_effector(&next));
            state = next;
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_positions_vary() {
        let env = ReachEnv::default();
        let task = env.config.sample_task(4, Split::MetaTrain);
        let (s1, a) = env.reset(&task, 10);
        let (_, b) = env.reset(&task, 10);
        let (_, c) = env.reset(&task, 11);
        assert_eq!(s1.qd, [0.0, 0.0]);
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
        let mut ca = a.colors.to_vec();
        let mut cc = c.colors.to_vec();
        ca.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cc.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(ca, cc);
        assert_eq!(a.colors[a.target_index], task.target_color);
    }

    #[test]
    fn success_window() {
        let goal = [0.0, 0.0];
        let far = [1.0, 1.0];
        assert!(is_success(&[goal; 10], goal).unwrap());
        let mut t = vec![far; 20];
        t[20 - 11] = goal;
        assert!(!is_success(&t, goal).unwrap());
        t[20 - 10] = goal;
        assert!(is_success(&t, goal).unwrap());
        assert!(!is_success(&[[0.0501, 0.0]; 12], goal).unwrap());
        assert!(is_success(&[[0.05, 0.0]; 12], goal).unwrap());
        assert_eq!(is_success(&[goal; 9], goal), Err(EnvError::TooShort { len: 9 }));
    }

    #[test]
    fn zero_policy_stays_at_rest() {
        let env = ReachEnv::default();
        let task = env.config.sample_task(1, Split::MetaTest);
        let traj = env.rollout(&mut |_: &Observation| Ok([0.0, 0.0]), &task, 3).unwrap();
        assert_eq!(traj.len(), 50);
        let rest = env.config.rest_state();
        assert!(traj.states.iter().all(|s| *s == rest));
    }

    #[test]
    fn observation_layout() {
        let env = ReachEnv::default();
        let task = env.config.sample_task(2, Split::MetaTrain);
        let (s, scene) = env.reset(&task, 0);
        let o = env.observe(&s, &scene);
        assert_eq!(o.state.len(), env.config.obs.state_dim());
        let ee = env.end_effector(&s);
        assert_eq!(&o.state[2..4], &ee[..]);
        assert_eq!(&o.state[4..6], &scene.positions[0][..]);
        assert_eq!(&o.state[6..9], &scene.colors[0][..]);
    }

    #[test]
    fn hash_tracks_config() {
        let a = EnvConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.horizon = 40;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
