//! Policy architecture: optional conv trunk, fully-connected stack with a
//! bias transformation on the first layer, and one or two linear heads.

use super::layers::{bias_transform, conv2d, dense, layer_norm, layer_norm_spatial, spatial_soft_argmax};
use crate::autodiff::{BoundParams, Graph, GraphError, ParamSet, Result, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("architecture field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("need at least one hidden layer plus the output layer (fc_layers ≥ 2)")]
    TooFewLayers,
    #[error("convolution stack shrinks the image to nothing")]
    ConvCollapse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub vision: bool,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Spatial soft-argmax on the last conv map instead of flattening it.
    pub feature_points: bool,
    /// Fully-connected layers including the output layer.
    pub fc_layers: usize,
    pub fc_hidden: usize,
    /// Length of the bias-transformation vector `z`; 0 disables it.
    pub bias_transform_dim: usize,
    pub two_head: bool,
    pub layer_norm: bool,
    /// Proprioceptive (vision) or full state (non-vision) input length.
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            vision: false,
            image_height: 32,
            image_width: 40,
            image_channels: 3,
            conv_layers: 3,
            conv_filters: 40,
            conv_kernel: 3,
            conv_stride: 2,
            feature_points: false,
            fc_layers: 4,
            fc_hidden: 200,
            bias_transform_dim: 10,
            two_head: false,
            layer_norm: true,
            state_dim: 19,
            action_dim: 2,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> std::result::Result<(), ArchError> {
        let positive = [("fc_hidden", self.fc_hidden), ("state_dim", self.state_dim), ("action_dim", self.action_dim)];
        for (name, v) in positive {
            if v == 0 {
                return Err(ArchError::NonPositive(name));
            }
        }
        if self.fc_layers < 2 {
            return Err(ArchError::TooFewLayers);
        }
        if self.vision {
            let conv = [
                ("image_height", self.image_height),
                ("image_width", self.image_width),
                ("image_channels", self.image_channels),
                ("conv_layers", self.conv_layers),
                ("conv_filters", self.conv_filters),
                ("conv_kernel", self.conv_kernel),
                ("conv_stride", self.conv_stride),
            ];
            for (name, v) in conv {
                if v == 0 {
                    return Err(ArchError::NonPositive(name));
                }
            }
            self.conv_output().ok_or(ArchError::ConvCollapse)?;
        }
        Ok(())
    }

    /// Spatial extents `(height, width)` of the last conv map.
    pub fn conv_output(&self) -> Option<(usize, usize)> {
        let (mut h, mut w) = (self.image_height, self.image_width);
        for _ in 0..self.conv_layers {
            if h < self.conv_kernel || w < self.conv_kernel {
                return None;
            }
            h = (h - self.conv_kernel) / self.conv_stride + 1;
            w = (w - self.conv_kernel) / self.conv_stride + 1;
        }
        Some((h, w))
    }

    /// Input width of the fully-connected stack.
    pub fn fc_input_dim(&self) -> usize {
        if !self.vision {
            return self.state_dim;
        }
        let (h, w) = self.conv_output().unwrap_or((0, 0));
        let visual = if self.feature_points { 2 * self.conv_filters } else { h * w * self.conv_filters };
        visual + self.state_dim
    }

    /// Parameter names and shapes, in no particular order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        if self.vision {
            let mut cin = self.image_channels;
            for i in 0..self.conv_layers {
                let f = self.conv_filters;
                out.push((format!("conv{i}.k"), vec![self.conv_kernel, self.conv_kernel, cin, f]));
                if self.layer_norm {
                    out.push((format!("conv{i}.ln_g"), vec![f]));
                    out.push((format!("conv{i}.ln_b"), vec![f]));
                } else {
                    out.push((format!("conv{i}.b"), vec![f]));
                }
                cin = f;
            }
        }
        let mut din = self.fc_input_dim();
        for i in 0..self.fc_layers - 1 {
            let h = self.fc_hidden;
            out.push((format!("fc{i}.w"), vec![din, h]));
            out.push((format!("fc{i}.b"), vec![h]));
            if i == 0 && self.bias_transform_dim > 0 {
                out.push(("fc0.wz".into(), vec![self.bias_transform_dim, h]));
                out.push(("bt.z".into(), vec![self.bias_transform_dim]));
            }
            if self.layer_norm {
                out.push((format!("fc{i}.ln_g"), vec![h]));
                out.push((format!("fc{i}.ln_b"), vec![h]));
            }
            din = h;
        }
        out.push(("out.w".into(), vec![din, self.action_dim]));
        out.push(("out.b".into(), vec![self.action_dim]));
        if self.two_head {
            out.push(("inner.w".into(), vec![din, self.action_dim]));
            out.push(("inner.b".into(), vec![self.action_dim]));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Truncated normal (±2σ) with σ = 1/√fan-in, where fan-in is the product of
/// all but the last dimension.
pub fn truncated_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let fan_in: usize = shape[..shape.len() - 1].iter().product();
    let sd = 1.0 / (fan_in as f64).sqrt();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = StandardNormal.sample(rng);
            if x.abs() <= 2.0 {
                break x * sd;
            }
        })
        .collect();
    Tensor::new(shape, data)
}

/// [`truncated_normal`] weights, zero biases and `z`, unit layer-norm gains.
pub fn init_params(cfg: &ArchitectureConfig, rng: &mut impl Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in cfg.param_shapes() {
        let t = if name.ends_with("ln_g") {
            Tensor::ones(&shape)
        } else if name.ends_with(".b") || name.ends_with("ln_b") || name == "bt.z" {
            Tensor::zeros(&shape)
        } else {
            truncated_normal(&shape, rng)
        };
        p.insert(name, t);
    }
    p
}

/// A batch of observations as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    /// `[n, state_dim]`
    pub state: Tensor,
    /// `[n, H, W, C]` in vision mode.
    pub image: Option<Tensor>,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.state.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_graph<'g>(&self, g: &'g Graph) -> PolicyInput<'g> {
        PolicyInput { state: g.constant(self.state.clone()), image: self.image.as_ref().map(|t| g.constant(t.clone())) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyInput<'g> {
    pub state: Var<'g>,
    pub image: Option<Var<'g>>,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput<'g> {
    /// `[n, action_dim]` from the outer head.
    pub action: Var<'g>,
    /// `[n, fc_hidden]` post-activation of the last hidden layer.
    pub hidden: Var<'g>,
}

fn mismatch(what: &str, got: Vec<usize>, node: usize) -> GraphError {
    GraphError::BadShape {
        op: "policy_forward",
        node,
        shape: got,
        reason: format!("observation does not match architecture: {what}"),
    }
}

/// Trunk only: everything up to the last hidden activation.
pub fn forward_hidden<'g>(
    cfg: &ArchitectureConfig,
    params: &BoundParams<'g>,
    input: &PolicyInput<'g>,
) -> Result<Var<'g>> {
    let s = input.state.shape();
    if s.len() != 2 || s[1] != cfg.state_dim {
        return Err(mismatch("state width", s, input.state.id()));
    }
    let n = s[0];
    let mut x = if cfg.vision {
        let img = input.image.ok_or_else(|| mismatch("missing image", vec![], input.state.id()))?;
        let is = img.shape();
        if is != [n, cfg.image_height, cfg.image_width, cfg.image_channels] {
            return Err(mismatch("image extents", is, img.id()));
        }
        let mut h = img;
        for i in 0..cfg.conv_layers {
            h = conv2d(h, params.get(&format!("conv{i}.k"))?, cfg.conv_stride)?;
            h = if cfg.layer_norm {
                layer_norm_spatial(h, params.get(&format!("conv{i}.ln_g"))?, params.get(&format!("conv{i}.ln_b"))?)?
            } else {
                let sh = h.shape();
                let b = params.get(&format!("conv{i}.b"))?;
                let rows = sh[0] * sh[1] * sh[2];
                h.reshape(&[rows, sh[3]])?.add(b.broadcast_rows(rows)?)?.reshape(&sh)?
            };
            h = h.relu();
        }
        let features = if cfg.feature_points {
            spatial_soft_argmax(h)?
        } else {
            let sh = h.shape();
            h.reshape(&[n, sh[1] * sh[2] * sh[3]])?
        };
        Var::concat_cols(&[features, input.state])?
    } else {
        if input.image.is_some() {
            return Err(mismatch("unexpected image", vec![], input.state.id()));
        }
        input.state
    };
    for i in 0..cfg.fc_layers - 1 {
        let w = params.get(&format!("fc{i}.w"))?;
        let b = params.get(&format!("fc{i}.b"))?;
        x = if i == 0 && cfg.bias_transform_dim > 0 {
            bias_transform(x, params.get("bt.z")?, w, params.get("fc0.wz")?, b)?
        } else {
            dense(x, w, b)?
        };
        if cfg.layer_norm {
            x = layer_norm(x, params.get(&format!("fc{i}.ln_g"))?, params.get(&format!("fc{i}.ln_b"))?)?;
        }
        x = x.relu();
    }
    Ok(x)
}

/// Full policy: action from the outer head plus the last hidden activations.
pub fn policy_forward<'g>(
    cfg: &ArchitectureConfig,
    params: &BoundParams<'g>,
    input: &PolicyInput<'g>,
) -> Result<PolicyOutput<'g>> {
    let hidden = forward_hidden(cfg, params, input)?;
    let action = dense(hidden, params.get("out.w")?, params.get("out.b")?)?;
    Ok(PolicyOutput { action, hidden })
}

/// Forward pass on plain tensors, returning actions `[n, action_dim]`.
pub fn act(cfg: &ArchitectureConfig, params: &ParamSet, obs: &ObsBatch) -> Result<Tensor> {
    let g = Graph::new();
    let bound = params.bind(&g);
    let out = policy_forward(cfg, &bound, &obs.to_graph(&g))?;
    Ok((*out.action.value()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shapes() {
        let cfg = ArchitectureConfig::default();
        cfg.validate().unwrap();
        let v = ArchitectureConfig { vision: true, state_dim: 4, ..cfg.clone() };
        v.validate().unwrap();
        assert_eq!(v.conv_output(), Some((3, 4)));
        assert_eq!(v.fc_input_dim(), 3 * 4 * 40 + 4);
    }

    #[test]
    fn invalid_configs() {
        let cfg = ArchitectureConfig { fc_layers: 1, ..Default::default() };
        assert_eq!(cfg.validate(), Err(ArchError::TooFewLayers));
        let cfg = ArchitectureConfig { vision: true, image_height: 4, ..Default::default() };
        assert_eq!(cfg.validate(), Err(ArchError::ConvCollapse));
    }

    #[test]
    fn zero_params_zero_action() {
        let cfg = ArchitectureConfig { fc_hidden: 16, ..Default::default() };
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let zero = p.zeros_like();
        let obs = ObsBatch { state: Tensor::full(&[3, 19], 0.7), image: None };
        let a = act(&cfg, &zero, &obs).unwrap();
        assert_eq!(a.shape(), &[3, 2]);
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn observation_mismatch_is_reported() {
        let cfg = ArchitectureConfig { fc_hidden: 8, ..Default::default() };
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let obs = ObsBatch { state: Tensor::zeros(&[2, 5]), image: None };
        assert!(act(&cfg, &p, &obs).is_err());
    }
}
