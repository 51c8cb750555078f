//! Analytic gradients against central finite differences, for every layer,
//! the full policy, and the meta-objective under each inner loss.

use crate::autodiff::{
    finite_difference_gradient, gradient, max_relative_error, BoundParams, Graph, ParamSet, StepOrder, Tensor, Var,
};
use crate::expert::Modality;
use crate::meta::{InnerLoss, Mil, Objective, PreparedDemo, TrainConfig};
use crate::nn::{
    bias_transform, conv2d, dense, init_params, layer_norm, layer_norm_spatial, normalize_rows, policy_forward,
    softmax_rows, spatial_soft_argmax, ArchitectureConfig, ObsBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const DEFAULT_THRESHOLD: f64 = 1e-4;
/// The quadratic meta-objective has an exact analytic gradient.
pub const QUADRATIC_THRESHOLD: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compares `gradient` with finite differences of `build` over `inputs`.
pub fn check<F, E>(name: &str, inputs: &ParamSet, threshold: f64, build: F) -> CheckResult
where
    F: for<'g> Fn(&'g Graph, &BoundParams<'g>) -> Result<Var<'g>, E>,
{
    let g = Graph::new();
    let bound = inputs.bind(&g);
    let err = build(&g, &bound)
        .ok()
        .and_then(|loss| gradient(loss, &bound, false).ok())
        .and_then(|grads| {
            let analytic = grads.values().flatten();
            let numeric = finite_difference_gradient(
                |x| {
                    let g = Graph::new();
                    build(&g, &inputs.unflatten(x).bind(&g)).map(|l| l.item()).unwrap_or(f64::NAN)
                },
                &inputs.flatten(),
                FD_STEP,
            )
            .ok()?;
            Some(max_relative_error(&analytic, &numeric))
        })
        .unwrap_or(f64::INFINITY);
    CheckResult { name: name.into(), params: inputs.numel(), max_rel_err: err, threshold }
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry contributes.
fn project<'g>(out: Var<'g>, seed: u64) -> crate::autodiff::Result<Var<'g>> {
    let r = random(&out.shape(), &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out.mul(out.graph().constant(r))?.sum())
}

fn inputs(entries: &[(&str, &[usize])], rng: &mut impl Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in entries {
        p.insert(*name, random(shape, rng));
    }
    p
}

pub fn layer_checks(seed: u64) -> Vec<CheckResult> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let t = DEFAULT_THRESHOLD;
    let mut out = Vec::new();
    let p = inputs(&[("x", &[3, 4]), ("w", &[4, 5]), ("b", &[5])], rng);
    out.push(check("layers/dense", &p, t, |_, v| project(dense(v.get("x")?, v.get("w")?, v.get("b")?)?, 1)));
    let p = inputs(&[("x", &[3, 4]), ("z", &[2]), ("w1", &[4, 5]), ("w2", &[2, 5]), ("b", &[5])], rng);
    out.push(check("layers/bias_transform", &p, t, |_, v| {
        project(bias_transform(v.get("x")?, v.get("z")?, v.get("w1")?, v.get("w2")?, v.get("b")?)?, 2)
    }));
    let p = inputs(&[("img", &[2, 6, 5, 2]), ("k", &[3, 3, 2, 3])], rng);
    out.push(check("layers/conv2d", &p, t, |_, v| project(conv2d(v.get("img")?, v.get("k")?, 2)?, 3)));
    let p = inputs(&[("x", &[3, 4])], rng);
    out.push(check("layers/relu", &p, t, |_, v| project(v.get("x")?.relu(), 9)));
    out.push(check("layers/tanh", &p, t, |_, v| project(v.get("x")?.tanh(), 10)));
    out.push(check("layers/sigmoid", &p, t, |_, v| project(v.get("x")?.sigmoid(), 11)));
    let p = inputs(&[("x", &[3, 6])], rng);
    out.push(check("layers/normalize_rows", &p, t, |_, v| project(normalize_rows(v.get("x")?)?, 4)));
    let p = inputs(&[("x", &[3, 6]), ("g", &[6]), ("b", &[6])], rng);
    out.push(check("layers/layer_norm", &p, t, |_, v| project(layer_norm(v.get("x")?, v.get("g")?, v.get("b")?)?, 5)));
    let p = inputs(&[("x", &[2, 3, 4, 2]), ("g", &[2]), ("b", &[2])], rng);
    out.push(check("layers/layer_norm_spatial", &p, t, |_, v| {
        project(layer_norm_spatial(v.get("x")?, v.get("g")?, v.get("b")?)?, 6)
    }));
    let p = inputs(&[("x", &[3, 5])], rng);
    out.push(check("layers/softmax", &p, t, |_, v| project(softmax_rows(v.get("x")?)?, 7)));
    let p = inputs(&[("x", &[2, 4, 3, 2])], rng);
    out.push(check("layers/spatial_soft_argmax", &p, t, |_, v| project(spatial_soft_argmax(v.get("x")?)?, 8)));
    out
}

/// Small non-vision network with every optional piece switched on.
pub fn tiny_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        vision: false,
        fc_layers: 3,
        fc_hidden: 8,
        bias_transform_dim: 3,
        two_head: true,
        layer_norm: true,
        state_dim: 4,
        ..ArchitectureConfig::default()
    }
}

/// The vision architecture's layer structure on an 8×8 image with 2
/// filters. Stride 1 keeps three convolutions valid at this size.
pub fn mini_vision_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        vision: true,
        image_height: 8,
        image_width: 8,
        conv_filters: 2,
        conv_stride: 1,
        fc_hidden: 6,
        bias_transform_dim: 2,
        two_head: true,
        state_dim: 4,
        ..ArchitectureConfig::default()
    }
}

/// A random demonstration matching `arch`.
pub fn random_demo(arch: &ArchitectureConfig, len: usize, with_actions: bool, rng: &mut impl Rng) -> PreparedDemo {
    let image = arch.vision.then(|| {
        let s = [len, arch.image_height, arch.image_width, arch.image_channels];
        let n = s.iter().product();
        Tensor::new(&s, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
    });
    let obs = ObsBatch { state: random(&[len, arch.state_dim], rng), image };
    let actions = with_actions.then(|| random(&[len, arch.action_dim], rng));
    let modality = if with_actions { Modality::Full } else { Modality::VideoState };
    PreparedDemo { obs, actions, modality }
}

fn meta_check(name: &str, arch: &ArchitectureConfig, inner_loss: InnerLoss, seed: u64) -> CheckResult {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(arch, rng);
    let train = random_demo(arch, 4, inner_loss != InnerLoss::ActionFree, rng);
    let val = random_demo(arch, 4, true, rng);
    // a step size large enough for second-order terms to matter
    let cfg =
        TrainConfig { inner_lr: 0.05, inner_loss, order: StepOrder::Exact, meta_clip: None, ..Default::default() };
    let mil = Mil { arch: arch.clone(), cfg };
    check(name, &params, DEFAULT_THRESHOLD, |g, v| mil.task_loss(g, v, &[&train], &val))
}

pub fn policy_checks(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (name, arch) in [("policy/state", tiny_arch()), ("policy/vision-mini", mini_vision_arch())] {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&arch, rng);
        let demo = random_demo(&arch, 3, true, rng);
        out.push(check(name, &params, DEFAULT_THRESHOLD, |g, v| -> crate::autodiff::Result<Var<'_>> {
            let a = policy_forward(&arch, v, &demo.obs.to_graph(g))?.action;
            Ok(a.sub(g.constant(demo.actions.clone().expect("actions")))?.square().sum())
        }));
    }
    out
}

pub fn meta_checks(seed: u64) -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = [InnerLoss::Bc, InnerLoss::TwoHead, InnerLoss::ActionFree]
        .into_iter()
        .map(|k| meta_check(&format!("meta/{k}"), &tiny_arch(), k, seed))
        .collect();
    out.push(meta_check("meta/vision-mini", &mini_vision_arch(), InnerLoss::Bc, seed));
    out
}

/// `L(θ) = ½θᵀAθ − bᵀθ` adapted by one step: the meta-gradient is
/// `(I − αA)(Aθ′ − b)` exactly.
pub fn quadratic_check(seed: u64) -> CheckResult {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let m = random(&[n, n], rng);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| m.at2(k, i) * m.at2(k, j)).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
    }
    let a = Tensor::new(&[n, n], a);
    let b = random(&[1, n], rng);
    let theta = random(&[1, n], rng);
    let alpha = 0.1;
    fn quad<'g>(t: Var<'g>, a: &Tensor, b: &Tensor) -> crate::autodiff::Result<Var<'g>> {
        let g = t.graph();
        let at = t.matmul(g.constant(a.clone()))?;
        at.mul(t)?.sum().scale(0.5).sub(t.mul(g.constant(b.clone()))?.sum())
    }
    let loss = |t| quad(t, &a, &b);
    let g = Graph::new();
    let mut p = ParamSet::new();
    p.insert("theta", theta.clone());
    let bound = p.bind(&g);
    let t = bound.get("theta").expect("bound");
    let err = (|| -> crate::autodiff::Result<f64> {
        let inner = gradient(loss(t)?, &bound, true)?;
        let adapted = t.sub(inner.get("theta")?.scale(alpha))?;
        let grad = gradient(loss(adapted)?, &bound, false)?.values().flatten();
        // analytic: A symmetric, so (I − αA)(Aθ′ − b) with θ′ = θ − α(Aθ − b)
        let mv = |v: &[f64]| (0..n).map(|i| (0..n).map(|j| a.at2(i, j) * v[j]).sum::<f64>()).collect::<Vec<_>>();
        let at = mv(theta.data());
        let tp: Vec<f64> = (0..n).map(|i| theta.data()[i] - alpha * (at[i] - b.data()[i])).collect();
        let atp = mv(&tp);
        let r: Vec<f64> = (0..n).map(|i| atp[i] - b.data()[i]).collect();
        let ar = mv(&r);
        let expected: Vec<f64> = (0..n).map(|i| r[i] - alpha * ar[i]).collect();
        Ok(max_relative_error(&grad, &expected))
    })()
    .unwrap_or(f64::INFINITY);
    CheckResult { name: "meta/quadratic".into(), params: n, max_rel_err: err, threshold: QUADRATIC_THRESHOLD }
}

/// Every suite, in a fixed order. Runs on the calling thread so an injected
/// fault applies to all checks.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = layer_checks(seed);
    out.extend(policy_checks(seed));
    out.extend(meta_checks(seed));
    out.push(quadratic_check(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fault;

    #[test]
    fn suite_passes() {
        for r in run_all(0) {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn meta_checks_fit_the_size_budget() {
        assert!(init_params(&tiny_arch(), &mut ChaCha8Rng::seed_from_u64(0)).numel() <= 500);
    }

    #[test]
    fn injected_fault_is_caught() {
        let _guard = fault::inject("softmax_rows").or_else(|| fault::inject("exp")).unwrap();
        let failing: Vec<String> = layer_checks(0).into_iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        assert!(failing.contains(&"layers/softmax".to_string()), "{failing:?}");
    }
}
