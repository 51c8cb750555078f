//! Differentiable layers, each a composition of graph ops.

use crate::autodiff::{ConvGeometry, GraphError, Result, Tensor, Var};

/// Variance guard inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `y = x·W + b` for row-batched `x: [n, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let xw = x.matmul(w)?;
    let n = xw.shape()[0];
    xw.add(b.broadcast_rows(n)?)
}

/// `y = x·W₁ + z·W₂ + b`. The learned vector `z` acts as an input that is
/// the same for every row, so `z·W₂ + b` is a reparameterized bias.
pub fn bias_transform<'g>(x: Var<'g>, z: Var<'g>, w1: Var<'g>, w2: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let d = z.shape();
    if d.len() != 1 {
        return Err(GraphError::BadShape {
            op: "bias_transform",
            node: z.id(),
            shape: d,
            reason: "z must be a vector".into(),
        });
    }
    let zw = z.reshape(&[1, d[0]])?.matmul(w2)?;
    let out = zw.shape()[1];
    let bias = zw.reshape(&[out])?.add(b)?;
    let xw = x.matmul(w1)?;
    let n = xw.shape()[0];
    xw.add(bias.broadcast_rows(n)?)
}

/// Valid, strided 2-D convolution without bias.
///
/// `image: [N, H, W, C]`, `kernels: [k, k, C, F]` → `[N, OH, OW, F]` with
/// `OH = ⌊(H − k)/stride⌋ + 1`.
pub fn conv2d<'g>(image: Var<'g>, kernels: Var<'g>, stride: usize) -> Result<Var<'g>> {
    let s = image.shape();
    let ks = kernels.shape();
    if s.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[2] != s[3] {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d",
            node: image.graph().len(),
            lhs: image.id(),
            lhs_shape: s,
            rhs: kernels.id(),
            rhs_shape: ks,
        });
    }
    let geo = ConvGeometry { batch: s[0], height: s[1], width: s[2], channels: s[3], kernel: ks[0], stride };
    let filters = ks[3];
    let cols = image.im2col(geo)?;
    let k = kernels.reshape(&[geo.patch_len(), filters])?;
    cols.matmul(k)?.reshape(&[geo.batch, geo.out_height(), geo.out_width(), filters])
}

/// Per-row standardization `(x − mean)/√(var + ε)` of `x: [n, m]`.
pub fn normalize_rows<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(GraphError::BadShape {
            op: "layer_norm",
            node: x.id(),
            shape: s,
            reason: "expected [n, m] with m ≥ 1".into(),
        });
    }
    let m = s[1];
    let inv_m = 1.0 / m as f64;
    let mean = x.sum_cols()?.scale(inv_m);
    let centered = x.sub(mean.broadcast_cols(m)?)?;
    let var = centered.square().sum_cols()?.scale(inv_m);
    let inv_std = var.add_scalar(LAYER_NORM_EPS).rsqrt();
    centered.mul(inv_std.broadcast_cols(m)?)
}

/// Layer normalization over the feature axis of `x: [n, m]`, followed by the
/// per-feature affine `γ ⊙ x̂ + β`.
pub fn layer_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    let n = x.shape()[0];
    normalize_rows(x)?.mul(gamma.broadcast_rows(n)?)?.add(beta.broadcast_rows(n)?)
}

/// Layer normalization of conv maps `[N, H, W, F]`: statistics over all of a
/// sample's `H·W·F` activations, affine parameters shared per channel.
pub fn layer_norm_spatial<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    let (n, h, w, f) = (s[0], s[1], s[2], s[3]);
    let normed = normalize_rows(x.reshape(&[n, h * w * f])?)?.reshape(&[n * h * w, f])?;
    layer_norm_affine(normed, gamma, beta)?.reshape(&[n, h, w, f])
}

fn layer_norm_affine<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    let n = x.shape()[0];
    x.mul(gamma.broadcast_rows(n)?)?.add(beta.broadcast_rows(n)?)
}

/// Row-wise softmax of `x: [n, m]`.
pub fn softmax_rows<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    let v = x.value();
    // shifting by a per-row constant leaves softmax and its derivatives unchanged
    let maxes: Vec<f64> = (0..s[0]).map(|r| v.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let shift = x.graph().constant(Tensor::vector(maxes)).broadcast_cols(s[1])?;
    let e = x.sub(shift)?.exp();
    let total = e.sum_cols()?.recip();
    e.mul(total.broadcast_cols(s[1])?)
}

/// Normalized pixel coordinates `[H·W, 2]` (x then y), each in `[−1, 1]`.
pub fn pixel_grid(height: usize, width: usize) -> Tensor {
    let coord = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut data = Vec::with_capacity(height * width * 2);
    for r in 0..height {
        for c in 0..width {
            data.push(coord(c, width));
            data.push(coord(r, height));
        }
    }
    Tensor::new(&[height * width, 2], data)
}

/// Spatial soft-argmax over channel-last maps `[N, H, W, C]` → `[N, 2C]`,
/// laid out as `(x₀, y₀, x₁, y₁, …)`: per channel the expected pixel
/// coordinate under a softmax over all `H·W` locations.
pub fn spatial_soft_argmax<'g>(features: Var<'g>) -> Result<Var<'g>> {
    let s = features.shape();
    if s.len() != 4 || s[1] * s[2] == 0 {
        return Err(GraphError::BadShape {
            op: "spatial_soft_argmax",
            node: features.id(),
            shape: s,
            reason: "expected [N, H, W, C] with H·W > 0".into(),
        });
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let per_channel = features.reshape(&[n, h * w, c])?.batch_transpose()?.reshape(&[n * c, h * w])?;
    soft_argmax_rows(per_channel, h, w)?.reshape(&[n, 2 * c])
}

/// Spatial soft-argmax of a single channel-first map `[C, H, W]` → `[2C]`.
pub fn spatial_soft_argmax_chw<'g>(features: Var<'g>) -> Result<Var<'g>> {
    let s = features.shape();
    if s.len() != 3 || s[1] * s[2] == 0 {
        return Err(GraphError::BadShape {
            op: "spatial_soft_argmax",
            node: features.id(),
            shape: s,
            reason: "expected [C, H, W] with H·W > 0".into(),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    soft_argmax_rows(features.reshape(&[c, h * w])?, h, w)?.reshape(&[2 * c])
}

fn soft_argmax_rows<'g>(rows: Var<'g>, h: usize, w: usize) -> Result<Var<'g>> {
    let grid = rows.graph().constant(pixel_grid(h, w));
    softmax_rows(rows)?.matmul(grid)
}
