use super::train::Objective;
use super::{MetaError, PreparedDemo, Result, TrainConfig};
use crate::autodiff::{apply_sgd_step, gradient, BoundParams, Graph, ParamSet, StepOrder, Var};
use crate::nn::{dense, forward_hidden, policy_forward, ArchitectureConfig};

fn actions<'g>(g: &'g Graph, demo: &PreparedDemo) -> Result<Var<'g>> {
    demo.actions.as_ref().map(|a| g.constant(a.clone())).ok_or(MetaError::MissingActions)
}

/// Σ_t ‖f(o_t) − a_t‖² on the graph.
pub fn bc_loss_graph<'g>(
    g: &'g Graph,
    arch: &ArchitectureConfig,
    params: &BoundParams<'g>,
    demo: &PreparedDemo,
) -> Result<Var<'g>> {
    let target = actions(g, demo)?;
    let out = policy_forward(arch, params, &demo.obs.to_graph(g))?;
    Ok(out.action.sub(target)?.square().sum())
}

fn head<'g>(params: &BoundParams<'g>, tied: bool) -> Result<(Var<'g>, Var<'g>)> {
    let (w, b) = if tied { ("out.w", "out.b") } else { ("inner.w", "inner.b") };
    Ok((params.get(w)?, params.get(b)?))
}

/// The configured inner loss on the graph.
pub fn inner_loss_graph<'g>(
    g: &'g Graph,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &BoundParams<'g>,
    demo: &PreparedDemo,
) -> Result<Var<'g>> {
    match cfg.inner_loss {
        super::InnerLoss::Bc => bc_loss_graph(g, arch, params, demo),
        kind => {
            if !arch.two_head && !cfg.tied_heads {
                return Err(MetaError::SingleHead(kind));
            }
            let target = match kind {
                super::InnerLoss::TwoHead => Some(actions(g, demo)?),
                _ => None,
            };
            let hidden = forward_hidden(arch, params, &demo.obs.to_graph(g))?;
            let (w, b) = head(params, cfg.tied_heads)?;
            let mut r = dense(hidden, w, b)?;
            if let Some(a) = target {
                r = r.sub(a)?;
            }
            Ok(r.square().sum())
        }
    }
}

/// Graph-connected adaptation: per inner step, average the inner-loss
/// gradients over `demos`, clip, and descend.
pub fn adapt_bound<'g>(
    g: &'g Graph,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &BoundParams<'g>,
    demos: &[&PreparedDemo],
) -> Result<BoundParams<'g>> {
    if demos.is_empty() {
        return Err(MetaError::NoDemos);
    }
    let create_graph = cfg.order == StepOrder::Exact;
    let mut cur = params.clone();
    for _ in 0..cfg.inner_steps {
        let mut mean: Option<BoundParams<'g>> = None;
        for (j, demo) in demos.iter().enumerate() {
            let loss = inner_loss_graph(g, arch, cfg, &cur, demo)?;
            let grads = gradient(loss, &cur, create_graph)?;
            mean = Some(match mean {
                None => grads,
                Some(m) => {
                    // running mean: exact when every demo gives the same gradient
                    let mut next = m.clone();
                    let inv = 1.0 / (j + 1) as f64;
                    for (name, mv) in m.iter() {
                        next.set(name, mv.add(grads.get(name)?.sub(mv)?.scale(inv))?);
                    }
                    next
                }
            });
        }
        let mean = mean.expect("demos is non-empty");
        cur = apply_sgd_step(&cur, &mean, cfg.inner_lr, cfg.inner_clip, &|n| cfg.is_frozen(n))?;
    }
    Ok(cur)
}

/// Validation behavioral-cloning loss after adapting on `train`.
pub fn meta_loss_graph<'g>(
    g: &'g Graph,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &BoundParams<'g>,
    train: &[&PreparedDemo],
    val: &PreparedDemo,
) -> Result<Var<'g>> {
    let adapted = adapt_bound(g, arch, cfg, params, train)?;
    bc_loss_graph(g, arch, &adapted, val)
}

pub fn bc_loss(arch: &ArchitectureConfig, params: &ParamSet, demo: &PreparedDemo) -> Result<f64> {
    let g = Graph::new();
    Ok(bc_loss_graph(&g, arch, &params.bind(&g), demo)?.item())
}

fn plain_inner(
    arch: &ArchitectureConfig,
    params: &ParamSet,
    demo: &PreparedDemo,
    kind: super::InnerLoss,
) -> Result<f64> {
    if !arch.two_head {
        return Err(MetaError::SingleHead(kind));
    }
    let cfg = TrainConfig { inner_loss: kind, ..TrainConfig::default() };
    let g = Graph::new();
    Ok(inner_loss_graph(&g, arch, &cfg, &params.bind(&g), demo)?.item())
}

/// Σ_t ‖W y_t + b − a_t‖² with the pre-update head `(inner.w, inner.b)`.
pub fn twohead_inner_loss(arch: &ArchitectureConfig, params: &ParamSet, demo: &PreparedDemo) -> Result<f64> {
    plain_inner(arch, params, demo, super::InnerLoss::TwoHead)
}

/// Σ_t ‖W y_t + b‖² with the pre-update head; never reads actions.
pub fn actionfree_inner_loss(arch: &ArchitectureConfig, params: &ParamSet, demo: &PreparedDemo) -> Result<f64> {
    plain_inner(arch, params, demo, super::InnerLoss::ActionFree)
}

/// Adapted parameter values.
pub fn adapt(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &ParamSet,
    demos: &[PreparedDemo],
) -> Result<ParamSet> {
    // nothing differentiates through the result, so skip second-order recording
    let cfg = TrainConfig { order: StepOrder::FirstOrder, ..cfg.clone() };
    let g = Graph::new();
    let refs: Vec<&PreparedDemo> = demos.iter().collect();
    Ok(adapt_bound(&g, arch, &cfg, &params.bind(&g), &refs)?.values())
}

/// Σ over tasks of the validation loss after adaptation.
pub fn meta_loss(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    params: &ParamSet,
    tasks: &[(Vec<&PreparedDemo>, &PreparedDemo)],
) -> Result<f64> {
    let cfg = TrainConfig { order: StepOrder::FirstOrder, ..cfg.clone() };
    tasks.iter().try_fold(0.0, |acc, (train, val)| {
        let g = Graph::new();
        Ok(acc + meta_loss_graph(&g, arch, &cfg, &params.bind(&g), train, val)?.item())
    })
}

/// Meta-imitation as a training objective.
#[derive(Clone, Debug)]
pub struct Mil {
    pub arch: ArchitectureConfig,
    pub cfg: TrainConfig,
}

impl Objective for Mil {
    fn task_loss<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        train: &[&PreparedDemo],
        val: &PreparedDemo,
    ) -> Result<Var<'g>> {
        meta_loss_graph(g, &self.arch, &self.cfg, params, train, val)
    }

    fn task_loss_value(&self, params: &ParamSet, train: &[&PreparedDemo], val: &PreparedDemo) -> Result<f64> {
        meta_loss(&self.arch, &self.cfg, params, &[(train.to_vec(), val)])
    }
}
