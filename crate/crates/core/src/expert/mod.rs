//! Goal-aware iLQG experts for the reaching arm and noisy demonstrations
//! collected from them.

mod ilqg;

pub use ilqg::{solve, Controller, Cost, Dynamics, Expansion, IlqgOptions, Solution};

use crate::autodiff::Tensor;
use crate::env::{to_batch, ArmParams, ArmState, EnvError, Observation, ReachEnv, Scene, Split, Task};
use crate::nn::ObsBatch;
use nalgebra::{DMatrix, DVector, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Arm dynamics in iLQG form. State is `(q₁, q₂, q̇₁, q̇₂)`.
pub struct ArmDynamics<'a> {
    pub arm: &'a ArmParams,
    pub finite_differences: bool,
}

fn arm_state(x: &DVector<f64>) -> ArmState {
    ArmState::from_vector(&Vector4::new(x[0], x[1], x[2], x[3]))
}

impl Dynamics for ArmDynamics<'_> {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let next = self.arm.step(&arm_state(x), [u[0], u[1]]);
        DVector::from_column_slice(next.to_vector().as_slice())
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, tau) = (arm_state(x), [u[0], u[1]]);
        let (a, b) = if self.finite_differences {
            self.arm.step_jacobians_fd(&s, tau, 1e-6)
        } else {
            self.arm.step_jacobians(&s, tau)
        };
        (DMatrix::from_column_slice(4, 4, a.as_slice()), DMatrix::from_column_slice(4, 2, b.as_slice()))
    }
}

/// `‖ee − goal‖² + c‖u‖²` per step and `w‖ee − goal‖²` at the end, expanded
/// with the Gauss-Newton Hessian.
pub struct ReachCost<'a> {
    pub arm: &'a ArmParams,
    pub goal: [f64; 2],
    pub control_weight: f64,
    pub terminal_weight: f64,
}

impl ReachCost<'_> {
    fn residual(&self, x: &DVector<f64>) -> [f64; 2] {
        let ee = self.arm.end_effector([x[0], x[1]]);
        [ee[0] - self.goal[0], ee[1] - self.goal[1]]
    }

    /// Gradient and Gauss-Newton Hessian of `w‖ee − goal‖²` in state space.
    fn position_terms(&self, x: &DVector<f64>, w: f64) -> (DVector<f64>, DMatrix<f64>) {
        let r = self.residual(x);
        let j = self.arm.ee_jacobian([x[0], x[1]]);
        let jr = j.transpose() * nalgebra::Vector2::new(r[0], r[1]);
        let jj = j.transpose() * j;
        let mut lx = DVector::zeros(4);
        let mut lxx = DMatrix::zeros(4, 4);
        for a in 0..2 {
            lx[a] = 2.0 * w * jr[a];
            for b in 0..2 {
                lxx[(a, b)] = 2.0 * w * jj[(a, b)];
            }
        }
        (lx, lxx)
    }
}

impl Cost for ReachCost<'_> {
    fn running(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let r = self.residual(x);
        r[0] * r[0] + r[1] * r[1] + self.control_weight * u.norm_squared()
    }

    fn running_expansion(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion {
        let (lx, lxx) = self.position_terms(x, 1.0);
        Expansion {
            lx,
            lxx,
            lu: u * (2.0 * self.control_weight),
            luu: DMatrix::identity(2, 2) * (2.0 * self.control_weight),
            lux: DMatrix::zeros(2, 4),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let r = self.residual(x);
        self.terminal_weight * (r[0] * r[0] + r[1] * r[1])
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.position_terms(x, self.terminal_weight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub ilqg: IlqgOptions,
    pub control_weight: f64,
    pub terminal_weight: f64,
    /// Demonstration torque noise (N·m).
    pub noise_sigma: f64,
    /// Linearize the arm by finite differences instead of analytically.
    pub finite_difference_jacobians: bool,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            ilqg: IlqgOptions::default(),
            control_weight: 0.1,
            terminal_weight: 10.0,
            noise_sigma: 0.05,
            finite_difference_jacobians: false,
        }
    }
}

/// An iLQG controller solved for one episode's goal.
#[derive(Clone, Debug)]
pub struct Expert {
    pub task_seed: u64,
    pub split: Split,
    pub episode_seed: u64,
    pub scene: Scene,
    pub solution: Solution,
}

impl Expert {
    pub fn controller(&self) -> &Controller {
        &self.solution.controller
    }
}

/// Solves the episode `(task, episode_seed)` from the rest pose.
pub fn ilqg_solve(env: &ReachEnv, task: &Task, episode_seed: u64, cfg: &ExpertConfig) -> Expert {
    let (state, scene) = env.reset(task, episode_seed);
    let arm = &env.config.arm;
    let dynamics = ArmDynamics { arm, finite_differences: cfg.finite_difference_jacobians };
    let cost =
        ReachCost { arm, goal: scene.goal(), control_weight: cfg.control_weight, terminal_weight: cfg.terminal_weight };
    let x0 = DVector::from_column_slice(state.to_vector().as_slice());
    let horizon = env.config.horizon;
    // Several warm starts; the reaching cost has local minima where the arm
    // overshoots and keeps spinning.
    let mut starts = vec![vec![DVector::zeros(2); horizon]];
    for elbow in [1.0, -1.0] {
        if let Some(q) = inverse_kinematics(arm, scene.goal(), elbow, state.q[0]) {
            starts.push(pd_controls(arm, &state, q, horizon));
        }
    }
    let solution = starts
        .into_iter()
        .map(|u| solve(&dynamics, &cost, &x0, u, &cfg.ilqg))
        .reduce(|best, s| if s.cost() < best.cost() { s } else { best })
        .expect("at least one start");
    if solution.line_search_failed {
        log::warn!("iLQG line search stalled on task {} episode {}", task.seed, episode_seed);
    }
    Expert { task_seed: task.seed, split: task.split, episode_seed, scene, solution }
}

/// Joint angles placing the end-effector at `p`, with the elbow bent to the
/// side given by the sign of `elbow`, and `q₁` unwrapped near `q1_near`.
pub fn inverse_kinematics(arm: &ArmParams, p: [f64; 2], elbow: f64, q1_near: f64) -> Option<[f64; 2]> {
    let [l1, l2] = arm.link_lengths;
    let (dx, dy) = (p[0] - arm.base[0], p[1] - arm.base[1]);
    let c2 = (dx * dx + dy * dy - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return None;
    }
    let q2 = elbow.signum() * c2.acos();
    let q1 = dy.atan2(dx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    let tau = std::f64::consts::TAU;
    let q1 = q1 + ((q1_near - q1) / tau).round() * tau;
    Some([q1, q2])
}

/// Open-loop torques from simulating a joint-space PD controller toward `q`.
fn pd_controls(arm: &ArmParams, start: &ArmState, q: [f64; 2], horizon: usize) -> Vec<DVector<f64>> {
    const KP: f64 = 1.0;
    const KD: f64 = 0.3;
    let mut s = *start;
    (0..horizon)
        .map(|_| {
            let u = arm.clamp_torque([KP * (q[0] - s.q[0]) - KD * s.qd[0], KP * (q[1] - s.q[1]) - KD * s.qd[1]]);
            s = arm.step(&s, u);
            DVector::from_vec(u.to_vec())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "full")]
    Full,
    /// Observations without actions.
    #[serde(rename = "video+state")]
    VideoState,
    /// Observations without actions or proprioception.
    #[serde(rename = "video-only")]
    VideoOnly,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Full => "full",
            Modality::VideoState => "video+state",
            Modality::VideoOnly => "video-only",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Modality::Full),
            "video+state" => Ok(Modality::VideoState),
            "video-only" => Ok(Modality::VideoOnly),
            other => Err(format!("unknown modality `{other}` (expected full, video+state or video-only)")),
        }
    }
}

/// One recorded expert episode. Observations are rebuilt from `states` and
/// `scene` on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task_seed: u64,
    pub split: Split,
    pub episode_seed: u64,
    pub modality: Modality,
    pub scene: Scene,
    pub states: Vec<ArmState>,
    pub actions: Option<Vec<[f64; 2]>>,
    pub ee: Vec<[f64; 2]>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn success(&self) -> Result<bool, EnvError> {
        crate::env::is_success(&self.ee, self.scene.goal())
    }

    /// Same episode seen through a poorer modality.
    pub fn with_modality(&self, modality: Modality) -> Demonstration {
        let mut d = self.clone();
        d.modality = modality;
        if modality != Modality::Full {
            d.actions = None;
        }
        d
    }

    /// Policy observations. Video-only demos have their proprioceptive
    /// entries zeroed.
    pub fn observations(&self, env: &ReachEnv) -> Vec<Observation> {
        let blank = env.config.obs.proprio_dim();
        self.states
            .iter()
            .map(|s| {
                let mut o = env.observe(s, &self.scene);
                if self.modality == Modality::VideoOnly {
                    o.state[..blank].iter_mut().for_each(|v| *v = 0.0);
                }
                o
            })
            .collect()
    }

    pub fn obs_batch(&self, env: &ReachEnv) -> ObsBatch {
        to_batch(&self.observations(env))
    }

    /// `[T, 2]` actions, if present.
    pub fn action_tensor(&self) -> Option<Tensor> {
        self.actions.as_ref().map(|a| Tensor::new(&[a.len(), 2], a.iter().flat_map(|u| u.iter().copied()).collect()))
    }
}

const NOISE_SALT: u64 = 0x6e6f_6973_6521;

/// Closed-loop rollout of `expert` with Gaussian torque noise. The recorded
/// actions are the commanded torques, before the arm clamps them.
pub fn generate_demo(
    env: &ReachEnv,
    expert: &Expert,
    noise_sigma: f64,
    modality: Modality,
) -> Result<Demonstration, EnvError> {
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| EnvError::Policy(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(expert.episode_seed ^ NOISE_SALT);
    rng.set_stream(expert.task_seed.wrapping_mul(2).wrapping_add(matches!(expert.split, Split::MetaTest) as u64));
    let ctrl = expert.controller();
    let mut state = env.config.rest_state();
    let horizon = ctrl.horizon();
    let (mut states, mut actions, mut ee) =
        (Vec::with_capacity(horizon), Vec::with_capacity(horizon), Vec::with_capacity(horizon));
    for t in 0..horizon {
        let x = DVector::from_column_slice(state.to_vector().as_slice());
        let u = ctrl.control(t, &x);
        let mut a = [u[0], u[1]];
        if noise_sigma > 0.0 {
            a[0] += noise.sample(&mut rng);
            a[1] += noise.sample(&mut rng);
        }
        let next = env.step(&state, a).map_err(|e| match e {
            EnvError::Diverged { .. } => EnvError::Diverged { step: t },
            e => e,
        })?;
        states.push(state);
        actions.push(a);
        ee.push(env.end_effector(&next));
        state = next;
    }
    let demo = Demonstration {
        task_seed: expert.task_seed,
        split: expert.split,
        episode_seed: expert.episode_seed,
        modality: Modality::Full,
        scene: expert.scene.clone(),
        states,
        actions: Some(actions),
        ee,
    };
    Ok(demo.with_modality(modality))
}
