//! Comparison policies: random torques, a network conditioned on the
//! demonstration's final observation, and a recurrent network that reads the
//! whole demonstration.

use crate::autodiff::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::env::{EnvError, Observation, Policy};
use crate::meta::{single_batch, MetaError, Objective, PreparedDemo, Result};
use crate::nn::{dense, forward_hidden, init_params, truncated_normal, ArchitectureConfig, ObsBatch, PolicyInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Mil,
    Contextual,
    Lstm,
    Random,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mil => "mil",
            Method::Contextual => "contextual",
            Method::Lstm => "lstm",
            Method::Random => "random",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mil" => Ok(Method::Mil),
            "contextual" => Ok(Method::Contextual),
            "lstm" => Ok(Method::Lstm),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown method `{other}` (expected mil, contextual, lstm or random)")),
        }
    }
}

/// I.i.d. standard-normal torques.
pub fn random_action(rng: &mut impl Rng) -> [f64; 2] {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _: &Observation) -> std::result::Result<[f64; 2], EnvError> {
        Ok(random_action(&mut self.rng))
    }
}

fn repeat_row<'g>(x: Var<'g>, n: usize) -> Result<Var<'g>> {
    let w = x.shape()[1];
    Ok(x.reshape(&[w])?.broadcast_rows(n)?)
}

fn last_observation(demo: &PreparedDemo) -> Result<ObsBatch> {
    if demo.is_empty() {
        return Err(MetaError::NoDemos);
    }
    Ok(demo.observation(demo.len() - 1))
}

fn average<'g>(preds: Vec<Var<'g>>) -> Result<Var<'g>> {
    let k = preds.len();
    let mut sum = preds[0];
    for p in &preds[1..] {
        sum = sum.add(*p)?;
    }
    Ok(if k == 1 { sum } else { sum.scale(1.0 / k as f64) })
}

fn bc<'g>(g: &'g Graph, pred: Var<'g>, val: &PreparedDemo) -> Result<Var<'g>> {
    let a = val.actions.as_ref().ok_or(MetaError::MissingActions)?;
    Ok(pred.sub(g.constant(a.clone()))?.square().sum())
}

/// Feedforward policy over (demo's final observation, current observation).
#[derive(Clone, Debug)]
pub struct Contextual {
    /// Architecture of the underlying network, whose inputs are the pair.
    pub arch: ArchitectureConfig,
}

impl Contextual {
    /// Doubles the inputs of a base architecture: state vectors are
    /// concatenated, images stacked along channels.
    pub fn from_base(base: &ArchitectureConfig) -> Self {
        let arch = ArchitectureConfig {
            state_dim: base.state_dim * 2,
            image_channels: base.image_channels * 2,
            bias_transform_dim: 0,
            two_head: false,
            ..base.clone()
        };
        Contextual { arch }
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        init_params(&self.arch, rng)
    }

    fn pair_input<'g>(&self, g: &'g Graph, last: &ObsBatch, current: &ObsBatch) -> Result<PolicyInput<'g>> {
        if last.image.is_some() != current.image.is_some() {
            return Err(MetaError::ObsModality);
        }
        let n = current.len();
        let state =
            Var::concat_cols(&[repeat_row(g.constant(last.state.clone()), n)?, g.constant(current.state.clone())])?;
        let image = match (&last.image, &current.image) {
            (Some(li), Some(ci)) => {
                let s = ci.shape();
                let (h, w, c) = (s[1], s[2], s[3]);
                let li = repeat_row(g.constant(li.clone()).reshape(&[1, h * w * c])?, n)?.reshape(&[n * h * w, c])?;
                let ci = g.constant(ci.clone()).reshape(&[n * h * w, c])?;
                Some(Var::concat_cols(&[li, ci])?.reshape(&[n, h, w, 2 * c])?)
            }
            _ => None,
        };
        Ok(PolicyInput { state, image })
    }

    /// Actions for each row of `current`, averaged over the conditioning
    /// demonstrations.
    pub fn forward_graph<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        demos: &[&PreparedDemo],
        current: &ObsBatch,
    ) -> Result<Var<'g>> {
        if demos.is_empty() {
            return Err(MetaError::NoDemos);
        }
        let mut preds = Vec::with_capacity(demos.len());
        for d in demos {
            let input = self.pair_input(g, &last_observation(d)?, current)?;
            let hidden = forward_hidden(&self.arch, params, &input)?;
            preds.push(dense(hidden, params.get("out.w")?, params.get("out.b")?)?);
        }
        average(preds)
    }
}

/// `f(final demo observation, current observation)` on plain tensors.
pub fn contextual_forward(
    model: &Contextual,
    params: &ParamSet,
    demo_final: &ObsBatch,
    current: &ObsBatch,
) -> Result<Tensor> {
    let g = Graph::new();
    let bound = params.bind(&g);
    let input = model.pair_input(&g, demo_final, current)?;
    let hidden = forward_hidden(&model.arch, &bound, &input)?;
    Ok((*dense(hidden, bound.get("out.w")?, bound.get("out.b")?)?.value()).clone())
}

impl Objective for Contextual {
    fn task_loss<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        train: &[&PreparedDemo],
        val: &PreparedDemo,
    ) -> Result<Var<'g>> {
        let pred = self.forward_graph(g, params, train, &val.obs)?;
        bc(g, pred, val)
    }
}

/// Hidden and cell vectors, `[1, width]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Feature trunk followed by an LSTM that reads `(features, action)` for
/// every demonstration step, then the current observation with a zero
/// action, and decodes its final hidden state.
#[derive(Clone, Debug)]
pub struct Lstm {
    /// Trunk architecture; its output head is unused.
    pub arch: ArchitectureConfig,
    pub width: usize,
}

impl Lstm {
    pub fn from_base(base: &ArchitectureConfig, width: usize) -> Self {
        let arch = ArchitectureConfig { bias_transform_dim: 0, two_head: false, ..base.clone() };
        Lstm { arch, width }
    }

    fn input_dim(&self) -> usize {
        let trunk = if self.arch.fc_layers > 1 { self.arch.fc_hidden } else { self.arch.fc_input_dim() };
        trunk + self.arch.action_dim
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        let mut p = init_params(&self.arch, rng);
        let w = self.width;
        p.insert("lstm.wx", truncated_normal(&[self.input_dim(), 4 * w], rng));
        p.insert("lstm.wh", truncated_normal(&[w, 4 * w], rng));
        // forget gate starts open
        let b = (0..4 * w).map(|i| if (w..2 * w).contains(&i) { 1.0 } else { 0.0 }).collect();
        p.insert("lstm.b", Tensor::new(&[4 * w], b));
        p.insert("out.w", truncated_normal(&[w, self.arch.action_dim], rng));
        p
    }

    /// One LSTM step over `n` rows. `xw` is the input already multiplied by
    /// `lstm.wx`.
    fn cell<'g>(&self, params: &BoundParams<'g>, xw: Var<'g>, h: Var<'g>, c: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let n = xw.shape()[0];
        let w = self.width;
        let z = xw.add(h.matmul(params.get("lstm.wh")?)?)?.add(params.get("lstm.b")?.broadcast_rows(n)?)?;
        let i = z.slice(0, n, 0, w)?.sigmoid();
        let f = z.slice(0, n, w, 2 * w)?.sigmoid();
        let gg = z.slice(0, n, 2 * w, 3 * w)?.tanh();
        let o = z.slice(0, n, 3 * w, 4 * w)?.sigmoid();
        let c2 = f.mul(c)?.add(i.mul(gg)?)?;
        let h2 = o.mul(c2.tanh())?;
        Ok((h2, c2))
    }

    /// State after reading the whole demonstration. Missing actions read as
    /// zeros.
    pub fn encode<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        demo: &PreparedDemo,
    ) -> Result<(Var<'g>, Var<'g>)> {
        if demo.is_empty() {
            return Err(MetaError::NoDemos);
        }
        let t_len = demo.len();
        let feats = forward_hidden(&self.arch, params, &demo.obs.to_graph(g))?;
        let actions = match &demo.actions {
            Some(a) => g.constant(a.clone()),
            None => g.constant(Tensor::zeros(&[t_len, self.arch.action_dim])),
        };
        let xw = Var::concat_cols(&[feats, actions])?.matmul(params.get("lstm.wx")?)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.width]));
        let mut c = h;
        for t in 0..t_len {
            (h, c) = self.cell(params, xw.slice(t, t + 1, 0, 4 * self.width)?, h, c)?;
        }
        Ok((h, c))
    }

    /// Actions for each row of `current`, each continuing from `state`.
    pub fn readout<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        state: (Var<'g>, Var<'g>),
        current: &ObsBatch,
    ) -> Result<Var<'g>> {
        if current.image.is_some() != self.arch.vision {
            return Err(MetaError::ObsModality);
        }
        let n = current.len();
        let feats = forward_hidden(&self.arch, params, &current.to_graph(g))?;
        let zeros = g.constant(Tensor::zeros(&[n, self.arch.action_dim]));
        let xw = Var::concat_cols(&[feats, zeros])?.matmul(params.get("lstm.wx")?)?;
        let (h, _) = self.cell(params, xw, repeat_row(state.0, n)?, repeat_row(state.1, n)?)?;
        Ok(dense(h, params.get("out.w")?, params.get("out.b")?)?)
    }

    pub fn forward_graph<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        demos: &[&PreparedDemo],
        current: &ObsBatch,
    ) -> Result<Var<'g>> {
        if demos.is_empty() {
            return Err(MetaError::NoDemos);
        }
        let mut preds = Vec::with_capacity(demos.len());
        for d in demos {
            let state = self.encode(g, params, d)?;
            preds.push(self.readout(g, params, state, current)?);
        }
        average(preds)
    }

    /// Encoded demonstration as plain tensors, for reuse across timesteps.
    pub fn encode_values(&self, params: &ParamSet, demo: &PreparedDemo) -> Result<LstmState> {
        let g = Graph::new();
        let (h, c) = self.encode(&g, &params.bind(&g), demo)?;
        Ok(LstmState { h: (*h.value()).clone(), c: (*c.value()).clone() })
    }

    pub fn readout_values(&self, params: &ParamSet, state: &LstmState, current: &ObsBatch) -> Result<Tensor> {
        let g = Graph::new();
        let s = (g.constant(state.h.clone()), g.constant(state.c.clone()));
        Ok((*self.readout(&g, &params.bind(&g), s, current)?.value()).clone())
    }
}

/// Action after reading `demo` then `current`.
pub fn lstm_forward(model: &Lstm, params: &ParamSet, demo: &PreparedDemo, current: &ObsBatch) -> Result<Tensor> {
    let g = Graph::new();
    Ok((*model.forward_graph(&g, &params.bind(&g), &[demo], current)?.value()).clone())
}

impl Objective for Lstm {
    fn task_loss<'g>(
        &self,
        g: &'g Graph,
        params: &BoundParams<'g>,
        train: &[&PreparedDemo],
        val: &PreparedDemo,
    ) -> Result<Var<'g>> {
        let pred = self.forward_graph(g, params, train, &val.obs)?;
        bc(g, pred, val)
    }
}

/// A baseline conditioned on fixed demonstrations, averaging its actions
/// over them.
pub enum ConditionedPolicy {
    Contextual { model: Contextual, params: ParamSet, finals: Vec<ObsBatch> },
    Lstm { model: Lstm, params: ParamSet, states: Vec<LstmState> },
}

impl ConditionedPolicy {
    pub fn contextual(model: Contextual, params: ParamSet, demos: &[PreparedDemo]) -> Result<Self> {
        if demos.is_empty() {
            return Err(MetaError::NoDemos);
        }
        let finals = demos.iter().map(last_observation).collect::<Result<_>>()?;
        Ok(ConditionedPolicy::Contextual { model, params, finals })
    }

    pub fn lstm(model: Lstm, params: ParamSet, demos: &[PreparedDemo]) -> Result<Self> {
        if demos.is_empty() {
            return Err(MetaError::NoDemos);
        }
        let states = demos.iter().map(|d| model.encode_values(&params, d)).collect::<Result<_>>()?;
        Ok(ConditionedPolicy::Lstm { model, params, states })
    }

    pub fn action(&self, obs: &ObsBatch) -> Result<Tensor> {
        let preds: Vec<Tensor> = match self {
            ConditionedPolicy::Contextual { model, params, finals } => {
                finals.iter().map(|f| contextual_forward(model, params, f, obs)).collect::<Result<_>>()?
            }
            ConditionedPolicy::Lstm { model, params, states } => {
                states.iter().map(|s| model.readout_values(params, s, obs)).collect::<Result<_>>()?
            }
        };
        let k = preds.len() as f64;
        let mut out = preds[0].clone();
        for p in &preds[1..] {
            out = out.zip_map(p, |a, b| a + b);
        }
        Ok(if preds.len() == 1 { out } else { out.map(|v| v / k) })
    }
}

impl Policy for ConditionedPolicy {
    fn act(&mut self, obs: &Observation) -> std::result::Result<[f64; 2], EnvError> {
        let a = self.action(&single_batch(obs)).map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok([a.data()[0], a.data()[1]])
    }
}
