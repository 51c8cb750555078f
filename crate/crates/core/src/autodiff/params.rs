//! Named parameter sets and their graph-bound counterparts.

use super::graph::{Graph, GraphError, Result, Var};
use super::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Named policy parameters. Iteration order is the sorted name order, which
/// fixes the layout of [`ParamSet::flatten`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// True when both sets have identical names and shapes.
    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet { entries: self.entries.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    /// All values concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for v in self.entries.values() {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) against this set's structure.
    pub fn unflatten(&self, flat: &[f64]) -> ParamSet {
        assert_eq!(flat.len(), self.numel());
        let mut off = 0;
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| {
                let t = Tensor::new(v.shape(), flat[off..off + v.len()].to_vec());
                off += v.len();
                (k.clone(), t)
            })
            .collect();
        ParamSet { entries }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Binds every entry as a differentiable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph) -> BoundParams<'g> {
        BoundParams { entries: self.entries.iter().map(|(k, v)| (k.clone(), graph.leaf(v.clone()))).collect() }
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet { entries: iter.into_iter().collect() }
    }
}

/// A [`ParamSet`] living inside a graph: each entry is a node.
#[derive(Clone, Debug)]
pub struct BoundParams<'g> {
    entries: BTreeMap<String, Var<'g>>,
}

impl<'g> BoundParams<'g> {
    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.entries.get(name).copied().ok_or_else(|| GraphError::Unbound(name.to_string()))
    }

    pub fn maybe(&self, name: &str) -> Option<Var<'g>> {
        self.entries.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set(&mut self, name: impl Into<String>, v: Var<'g>) {
        self.entries.insert(name.into(), v);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'g>)> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn vars(&self) -> Vec<Var<'g>> {
        self.entries.values().copied().collect()
    }

    /// Current numeric values.
    pub fn values(&self) -> ParamSet {
        self.entries.iter().map(|(k, v)| (k.clone(), (*v.value()).clone())).collect()
    }

    fn with_vars(&self, vars: Vec<Var<'g>>) -> BoundParams<'g> {
        BoundParams { entries: self.entries.keys().cloned().zip(vars).collect() }
    }
}

/// Builds a graph over `bindings`, runs `build`, and returns the output value.
///
/// `build` looks its leaves up by name; a missing name surfaces as
/// [`GraphError::Unbound`].
pub fn evaluate<F>(bindings: &ParamSet, build: F) -> Result<Tensor>
where
    F: for<'g> FnOnce(&'g Graph, &BoundParams<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let bound = bindings.bind(&graph);
    let out = build(&graph, &bound)?;
    Ok((*out.value()).clone())
}

/// Gradients of a scalar loss with respect to every bound parameter.
pub fn gradient<'g>(loss: Var<'g>, wrt: &BoundParams<'g>, create_graph: bool) -> Result<BoundParams<'g>> {
    let grads = loss.graph().grad(loss, &wrt.vars(), create_graph)?;
    Ok(wrt.with_vars(grads))
}

/// How an inner gradient step is differentiated by later backward passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOrder {
    /// The step's gradient is itself differentiated (full meta-gradient).
    #[default]
    Exact,
    /// The step's gradient is treated as a constant.
    FirstOrder,
}

/// `θ' = θ − α·clip(g)` applied to an already-computed gradient, entry by
/// entry. Entries for which `frozen` returns true are passed through.
pub fn apply_sgd_step<'g>(
    params: &BoundParams<'g>,
    grads: &BoundParams<'g>,
    alpha: f64,
    clip: Option<(f64, f64)>,
    frozen: &dyn Fn(&str) -> bool,
) -> Result<BoundParams<'g>> {
    if !(alpha >= 0.0) {
        return Err(GraphError::NegativeStep(alpha));
    }
    let mut out = params.clone();
    for (name, p) in params.iter() {
        if frozen(name) {
            continue;
        }
        let mut g = grads.get(name)?;
        if let Some((lo, hi)) = clip {
            g = g.clip(lo, hi)?;
        }
        out.set(name, p.sub(g.scale(alpha))?);
    }
    Ok(out)
}

/// One graph-connected gradient-descent step on `loss`.
pub fn differentiable_sgd_step<'g>(
    params: &BoundParams<'g>,
    loss: Var<'g>,
    alpha: f64,
    clip: Option<(f64, f64)>,
    order: StepOrder,
) -> Result<BoundParams<'g>> {
    if let Some((lo, hi)) = clip {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(GraphError::InvalidInterval { lo, hi });
        }
    }
    let grads = gradient(loss, params, order == StepOrder::Exact)?;
    apply_sgd_step(params, &grads, alpha, clip, &|_| false)
}

/// Elementwise clamp of a plain tensor.
pub fn clip_elementwise(t: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(GraphError::InvalidInterval { lo, hi });
    }
    Ok(t.map(|x| x.clamp(lo, hi)))
}

/// [`clip_elementwise`] over every entry of a parameter set.
pub fn clip_params(p: &ParamSet, lo: f64, hi: f64) -> Result<ParamSet> {
    p.iter().map(|(k, v)| Ok((k.to_string(), clip_elementwise(v, lo, hi)?))).collect()
}
