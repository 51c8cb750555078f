//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use super::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("function returned a non-finite value while perturbing input {index}")]
    NonFinite { index: usize },
    #[error("function output length changed from {expected} to {got}")]
    OutputLength { expected: usize, got: usize },
}

/// Central-difference Jacobian of `f` at `x`, shaped `[out_len, in_len]`.
pub fn finite_difference_jacobian<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor, FdError>
where
    F: Fn(&Tensor) -> Tensor,
{
    if !(eps > 0.0) {
        return Err(FdError::BadStep(eps));
    }
    let n = x.len();
    let base = f(x);
    if !base.is_finite() {
        return Err(FdError::NonFinite { index: usize::MAX });
    }
    let m = base.len();
    let mut jac = Tensor::zeros(&[m, n]);
    let mut probe = x.clone();
    for j in 0..n {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[j] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[j] = orig;
        for out in [&fp, &fm] {
            if out.len() != m {
                return Err(FdError::OutputLength { expected: m, got: out.len() });
            }
            if !out.is_finite() {
                return Err(FdError::NonFinite { index: j });
            }
        }
        for i in 0..m {
            jac.data_mut()[i * n + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, FdError>
where
    F: Fn(&[f64]) -> f64,
{
    let jac = finite_difference_jacobian(|t| Tensor::scalar(f(t.data())), &Tensor::vector(x.to_vec()), eps)?;
    Ok(jac.into_data())
}

/// Entries whose magnitude is below this are compared by absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-7;

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, REL_ERR_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_ERR_FLOOR)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_recovers_matrix() {
        let a = [[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]];
        let f = |x: &Tensor| {
            let d = x.data();
            Tensor::vector(a.iter().map(|r| r.iter().zip(d).map(|(p, q)| p * q).sum()).collect())
        };
        let j = finite_difference_jacobian(f, &Tensor::vector(vec![0.3, -0.7, 2.0]), 1e-3).unwrap();
        for (i, row) in a.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((j.at2(i, k) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_at_zero() {
        let eps = 1e-3;
        let j = finite_difference_jacobian(|x| x.map(f64::sin), &Tensor::vector(vec![0.0]), eps).unwrap();
        assert!((j.item() - 1.0).abs() < eps * eps);
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let x = Tensor::vector(vec![1.0]);
        assert_eq!(finite_difference_jacobian(|t| t.clone(), &x, 0.0), Err(FdError::BadStep(0.0)));
        let r = finite_difference_jacobian(|t| t.map(|v| if v > 1.0 { f64::NAN } else { v }), &x, 1e-3);
        assert_eq!(r, Err(FdError::NonFinite { index: 0 }));
    }
}
