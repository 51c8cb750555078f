//! Dense row-major `f64` tensors and the raw kernels the graph ops run on.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense n-dimensional array of `f64`, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    /// Builds a tensor, panicking if `data` does not fill `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "data length does not match shape {shape:?}");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn try_new(shape: &[usize], data: Vec<f64>) -> Option<Self> {
        (shape.iter().product::<usize>() == data.len()).then(|| Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape);
        Tensor { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// `C = op(A) · op(B)` for 2-D operands, where `op` optionally transposes.
pub(crate) fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "gemm inner extents");
    let mut out = vec![0.0; m * n];
    // row-major strides; transposition is just swapped strides
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    if m > 0 && n > 0 && k > 0 {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(&[m, n], out)
}

#[cfg(test)]
pub(crate) fn transpose2(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(&[c, r], out)
}

/// `[B, X, Y] -> [B, Y, X]`.
pub(crate) fn batch_transpose(a: &Tensor) -> Tensor {
    let (b, x, y) = (a.shape[0], a.shape[1], a.shape[2]);
    let mut out = vec![0.0; b * x * y];
    for n in 0..b {
        let base = n * x * y;
        for i in 0..x {
            for j in 0..y {
                out[base + j * x + i] = a.data[base + i * y + j];
            }
        }
    }
    Tensor::new(&[b, y, x], out)
}

/// Geometry of a valid (unpadded) strided 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn patches(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }
}

/// Gathers every receptive field into a row: `[N,H,W,C] -> [N·OH·OW, k·k·C]`.
pub(crate) fn im2col(x: &Tensor, g: &ConvGeometry) -> Tensor {
    let (oh, ow, k, c) = (g.out_height(), g.out_width(), g.kernel, g.channels);
    let plen = g.patch_len();
    let mut out = vec![0.0; g.patches() * plen];
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out[row * plen..(row + 1) * plen];
                let mut p = 0;
                for ky in 0..k {
                    let iy = oy * g.stride + ky;
                    let src = ((n * g.height + iy) * g.width + ox * g.stride) * c;
                    dst[p..p + k * c].copy_from_slice(&x.data[src..src + k * c]);
                    p += k * c;
                }
                row += 1;
            }
        }
    }
    Tensor::new(&[g.patches(), plen], out)
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into an image.
pub(crate) fn col2im(cols: &Tensor, g: &ConvGeometry) -> Tensor {
    let (oh, ow, k, c) = (g.out_height(), g.out_width(), g.kernel, g.channels);
    let plen = g.patch_len();
    let mut out = vec![0.0; g.batch * g.height * g.width * c];
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let srcrow = &cols.data[row * plen..(row + 1) * plen];
                let mut p = 0;
                for ky in 0..k {
                    let iy = oy * g.stride + ky;
                    let dst = ((n * g.height + iy) * g.width + ox * g.stride) * c;
                    for (o, s) in out[dst..dst + k * c].iter_mut().zip(&srcrow[p..p + k * c]) {
                        *o += s;
                    }
                    p += k * c;
                }
                row += 1;
            }
        }
    }
    Tensor::new(&[g.batch, g.height, g.width, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]);
        let c = gemm(&a, false, &b, false);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        let at = transpose2(&a);
        let bt = transpose2(&b);
        assert_eq!(gemm(&at, true, &b, false), c);
        assert_eq!(gemm(&a, false, &bt, true), c);
        assert_eq!(gemm(&at, true, &bt, true), c);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeometry { batch: 2, height: 5, width: 6, channels: 2, kernel: 3, stride: 2 };
        let x = Tensor::new(&[2, 5, 6, 2], (0..120).map(|i| ((i * 37) % 11) as f64 - 5.0).collect());
        let y = Tensor::new(
            &[g.patches(), g.patch_len()],
            (0..g.patches() * g.patch_len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect(),
        );
        let lhs: f64 = im2col(&x, &g).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(col2im(&y, &g).data()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
