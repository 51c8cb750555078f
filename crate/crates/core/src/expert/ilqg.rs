//! Iterative LQG with a Levenberg-regularized backward pass and a
//! backtracking forward pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(∂f/∂x, ∂f/∂u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Second-order expansion of a cost term around `(x, u)`.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

pub trait Cost {
    fn running(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn running_expansion(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion;
    fn terminal(&self, x: &DVector<f64>) -> f64;
    /// `(lx, lxx)` of the terminal cost.
    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqgOptions {
    pub iterations: usize,
    /// Stop once the relative cost decrease falls below this.
    pub tolerance: f64,
    pub max_backtracks: usize,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_factor: f64,
}

impl Default for IlqgOptions {
    fn default() -> Self {
        IlqgOptions { iterations: 100, tolerance: 1e-6, max_backtracks: 10, mu_min: 1e-6, mu_max: 1e10, mu_factor: 4.0 }
    }
}

/// Time-varying affine feedback law `u = ū + K(x − x̄) + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub gains: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub x_nominal: Vec<DVector<f64>>,
    pub u_nominal: Vec<DVector<f64>>,
}

impl Controller {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.u_nominal[t] + &self.gains[t] * (x - &self.x_nominal[t]) + &self.feedforward[t]
    }

    pub fn is_finite(&self) -> bool {
        self.gains.iter().all(|k| k.iter().all(|v| v.is_finite()))
            && self.feedforward.iter().all(|k| k.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub controller: Controller,
    /// States of the accepted trajectory, length `T + 1`.
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Total cost of the initial trajectory, then after each accepted iteration.
    pub costs: Vec<f64>,
    /// Largest regularization used by any backward pass.
    pub max_mu: f64,
    /// Set when no step was accepted even at the largest regularization.
    pub line_search_failed: bool,
    /// Stopped on the tolerance rather than the iteration cap.
    pub converged: bool,
}

impl Solution {
    pub fn cost(&self) -> f64 {
        *self.costs.last().expect("initial cost is recorded")
    }
}

fn rollout<D: Dynamics, C: Cost>(
    dyn_: &D,
    cost: &C,
    x0: &DVector<f64>,
    policy: impl Fn(usize, &DVector<f64>) -> DVector<f64>,
    horizon: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    let mut total = 0.0;
    xs.push(x0.clone());
    for t in 0..horizon {
        let u = policy(t, &xs[t]);
        total += cost.running(t, &xs[t], &u);
        let next = dyn_.step(&xs[t], &u);
        us.push(u);
        xs.push(next);
    }
    total += cost.terminal(&xs[horizon]);
    (xs, us, total)
}

struct Backward {
    gains: Vec<DMatrix<f64>>,
    feedforward: Vec<DVector<f64>>,
    /// Cost decrease predicted by the quadratic model for a full step.
    predicted: f64,
}

fn backward<D: Dynamics, C: Cost>(
    dyn_: &D,
    cost: &C,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    mu: f64,
) -> Option<Backward> {
    let horizon = us.len();
    let m = dyn_.control_dim();
    let (mut vx, mut vxx) = cost.terminal_expansion(&xs[horizon]);
    let mut gains = vec![DMatrix::zeros(m, dyn_.state_dim()); horizon];
    let mut feedforward = vec![DVector::zeros(m); horizon];
    let mut predicted = 0.0;
    for t in (0..horizon).rev() {
        let (a, b) = dyn_.jacobians(&xs[t], &us[t]);
        let e = cost.running_expansion(t, &xs[t], &us[t]);
        let qx = &e.lx + a.transpose() * &vx;
        let qu = &e.lu + b.transpose() * &vx;
        let vxx_a = &vxx * &a;
        let qxx = &e.lxx + a.transpose() * &vxx_a;
        let qux = &e.lux + b.transpose() * &vxx_a;
        let quu = &e.luu + b.transpose() * &vxx * &b;
        let quu_reg = &quu + DMatrix::identity(m, m) * mu;
        let chol = quu_reg.cholesky()?;
        let k = -chol.solve(&qu);
        let kk = -chol.solve(&qux);
        predicted -= k.dot(&qu) + 0.5 * k.dot(&(&quu * &k));
        vx = &qx + kk.transpose() * &quu * &k + kk.transpose() * &qu + qux.transpose() * &k;
        let v = &qxx + kk.transpose() * &quu * &kk + kk.transpose() * &qux + qux.transpose() * &kk;
        vxx = (&v + v.transpose()) * 0.5;
        gains[t] = kk;
        feedforward[t] = k;
    }
    Some(Backward { gains, feedforward, predicted })
}

/// Optimizes a control sequence from `x0`, starting from `u_init`.
pub fn solve<D: Dynamics, C: Cost>(
    dyn_: &D,
    cost: &C,
    x0: &DVector<f64>,
    u_init: Vec<DVector<f64>>,
    opts: &IlqgOptions,
) -> Solution {
    let horizon = u_init.len();
    let (mut xs, mut us, mut current) = rollout(dyn_, cost, x0, |t, _| u_init[t].clone(), horizon);
    let mut costs = vec![current];
    let mut mu = 0.0f64;
    let mut max_mu = 0.0f64;
    let mut failed = false;
    let mut controller = Controller {
        gains: vec![DMatrix::zeros(dyn_.control_dim(), dyn_.state_dim()); horizon],
        feedforward: vec![DVector::zeros(dyn_.control_dim()); horizon],
        x_nominal: xs[..horizon].to_vec(),
        u_nominal: us.clone(),
    };

    let mut iter = 0;
    let mut converged = false;
    while iter < opts.iterations {
        let Some(bw) = backward(dyn_, cost, &xs, &us, mu) else {
            mu = (mu * opts.mu_factor).max(opts.mu_min);
            max_mu = max_mu.max(mu);
            if mu > opts.mu_max {
                failed = true;
                break;
            }
            continue;
        };
        iter += 1;
        if bw.predicted <= opts.tolerance * current.abs() && iter > 1 {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..=opts.max_backtracks {
            let law = |t: usize, x: &DVector<f64>| &us[t] + &bw.gains[t] * (x - &xs[t]) + &bw.feedforward[t] * alpha;
            let (nx, nu, c) = rollout(dyn_, cost, x0, law, horizon);
            if c.is_finite() && c <= current {
                accepted = Some((nx, nu, c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((nx, nu, c)) => {
                controller = Controller {
                    feedforward: bw.feedforward.iter().map(|k| k * alpha).collect(),
                    gains: bw.gains,
                    x_nominal: xs[..horizon].to_vec(),
                    u_nominal: us,
                };
                let improvement = (current - c) / current.abs().max(1e-300);
                xs = nx;
                us = nu;
                current = c;
                costs.push(c);
                mu = if mu / opts.mu_factor < opts.mu_min { 0.0 } else { mu / opts.mu_factor };
                if improvement < opts.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                mu = (mu * opts.mu_factor).max(opts.mu_min);
                max_mu = max_mu.max(mu);
                if mu > opts.mu_max {
                    failed = true;
                    break;
                }
            }
        }
    }
    let converged = converged && !failed;
    Solution { controller, states: xs, controls: us, costs, max_mu, line_search_failed: failed, converged }
}
