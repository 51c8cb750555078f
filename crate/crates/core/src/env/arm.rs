//! Top-down two-link arm: rigid-body dynamics with viscous joint damping,
//! integrated with semi-implicit Euler.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmParams {
    pub link_lengths: [f64; 2],
    /// Link masses, modeled as uniform rods.
    pub link_masses: [f64; 2],
    /// Reflected rotor inertia added to each joint.
    pub armature: f64,
    pub damping: f64,
    pub torque_limit: f64,
    pub dt: f64,
    /// Shoulder position in arena coordinates.
    pub base: [f64; 2],
    /// Rest pose at reset.
    pub rest_pose: [f64; 2],
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            link_lengths: [0.1, 0.1],
            link_masses: [1.0, 1.0],
            armature: 0.05,
            damping: 0.1,
            torque_limit: 1.0,
            dt: 0.05,
            base: [0.3, 0.3],
            rest_pose: [0.0, std::f64::consts::FRAC_PI_2],
        }
    }
}

/// Joint angles (rad, unwrapped) and velocities (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: [f64; 2],
    pub qd: [f64; 2],
}

impl ArmState {
    pub fn at_rest(q: [f64; 2]) -> Self {
        ArmState { q, qd: [0.0, 0.0] }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.q[0], self.q[1], self.qd[0], self.qd[1])
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        ArmState { q: [x[0], x[1]], qd: [x[2], x[3]] }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }
}

struct Terms {
    mass: Matrix2<f64>,
    mass_inv: Matrix2<f64>,
    /// `∂M/∂q₂`
    dmass: Matrix2<f64>,
    coriolis: Vector2<f64>,
    h: f64,
    dh: f64,
}

impl ArmParams {
    fn terms(&self, s: &ArmState) -> Terms {
        let [l1, _] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let lc1 = self.link_lengths[0] / 2.0;
        let lc2 = self.link_lengths[1] / 2.0;
        let i1 = m1 * self.link_lengths[0].powi(2) / 12.0;
        let i2 = m2 * self.link_lengths[1].powi(2) / 12.0;
        let (s2, c2) = s.q[1].sin_cos();
        let k = m2 * l1 * lc2;
        let m11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2) + 2.0 * k * c2 + self.armature;
        let m12 = i2 + m2 * lc2 * lc2 + k * c2;
        let m22 = i2 + m2 * lc2 * lc2 + self.armature;
        let mass = Matrix2::new(m11, m12, m12, m22);
        let mass_inv = mass.try_inverse().expect("mass matrix is positive definite");
        let dmass = Matrix2::new(-2.0 * k * s2, -k * s2, -k * s2, 0.0);
        let h = k * s2;
        let [qd1, qd2] = s.qd;
        let coriolis = Vector2::new(-h * qd2 * (2.0 * qd1 + qd2), h * qd1 * qd1);
        Terms { mass, mass_inv, dmass, coriolis, h, dh: k * c2 }
    }

    pub fn clamp_torque(&self, u: [f64; 2]) -> [f64; 2] {
        let lim = self.torque_limit;
        [u[0].clamp(-lim, lim), u[1].clamp(-lim, lim)]
    }

    fn acceleration(&self, s: &ArmState, tau: [f64; 2], t: &Terms) -> Vector2<f64> {
        let qd = Vector2::new(s.qd[0], s.qd[1]);
        t.mass_inv * (Vector2::new(tau[0], tau[1]) - t.coriolis - self.damping * qd)
    }

    /// One integration step. Torques are clamped to the limit first.
    pub fn step(&self, s: &ArmState, torque: [f64; 2]) -> ArmState {
        let tau = self.clamp_torque(torque);
        let terms = self.terms(s);
        let acc = self.acceleration(s, tau, &terms);
        let qd = [s.qd[0] + self.dt * acc[0], s.qd[1] + self.dt * acc[1]];
        let q = [s.q[0] + self.dt * qd[0], s.q[1] + self.dt * qd[1]];
        ArmState { q, qd }
    }

    /// `(∂x'/∂x, ∂x'/∂u)` of [`step`](Self::step) at `(s, torque)`, with
    /// state ordered `(q₁, q₂, q̇₁, q̇₂)`. Clamped torque components have zero
    /// sensitivity.
    pub fn step_jacobians(&self, s: &ArmState, torque: [f64; 2]) -> (Matrix4<f64>, Matrix4x2<f64>) {
        let tau = self.clamp_torque(torque);
        let t = self.terms(s);
        let acc = self.acceleration(s, tau, &t);
        let [qd1, qd2] = s.qd;
        let dc_dq2 = Vector2::new(-t.dh * qd2 * (2.0 * qd1 + qd2), t.dh * qd1 * qd1);
        let dacc_dq2 = t.mass_inv * (-dc_dq2 - t.dmass * acc);
        let dc_dqd = Matrix2::new(-2.0 * t.h * qd2, -t.h * (2.0 * qd1 + 2.0 * qd2), 2.0 * t.h * qd1, 0.0);
        let dacc_dqd = t.mass_inv * (-dc_dqd - Matrix2::identity() * self.damping);
        let lim = self.torque_limit;
        let active = Matrix2::from_diagonal(&Vector2::new(
            if torque[0].abs() < lim { 1.0 } else { 0.0 },
            if torque[1].abs() < lim { 1.0 } else { 0.0 },
        ));
        let dacc_du = t.mass_inv * active;

        let dt = self.dt;
        // velocity rows
        let mut a = Matrix4::zeros();
        let mut b = Matrix4x2::zeros();
        for r in 0..2 {
            a[(2 + r, 1)] = dt * dacc_dq2[r];
            for c in 0..2 {
                a[(2 + r, 2 + c)] = if r == c { 1.0 } else { 0.0 } + dt * dacc_dqd[(r, c)];
                b[(2 + r, c)] = dt * dacc_du[(r, c)];
            }
        }
        // position rows: q' = q + dt·q̇'
        for r in 0..2 {
            for c in 0..4 {
                a[(r, c)] = if r == c { 1.0 } else { 0.0 } + dt * a[(2 + r, c)];
            }
            for c in 0..2 {
                b[(r, c)] = dt * b[(2 + r, c)];
            }
        }
        (a, b)
    }

    /// Central-difference version of [`step_jacobians`](Self::step_jacobians).
    pub fn step_jacobians_fd(&self, s: &ArmState, torque: [f64; 2], eps: f64) -> (Matrix4<f64>, Matrix4x2<f64>) {
        let x = s.to_vector();
        let mut a = Matrix4::zeros();
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let d = (self.step(&ArmState::from_vector(&xp), torque).to_vector()
                - self.step(&ArmState::from_vector(&xm), torque).to_vector())
                / (2.0 * eps);
            a.set_column(j, &d);
        }
        let mut b = Matrix4x2::zeros();
        for j in 0..2 {
            let mut up = torque;
            let mut um = torque;
            up[j] += eps;
            um[j] -= eps;
            let d = (self.step(s, up).to_vector() - self.step(s, um).to_vector()) / (2.0 * eps);
            b.set_column(j, &d);
        }
        (a, b)
    }

    pub fn elbow(&self, q: [f64; 2]) -> [f64; 2] {
        let l1 = self.link_lengths[0];
        [self.base[0] + l1 * q[0].cos(), self.base[1] + l1 * q[0].sin()]
    }

    /// End-effector position in arena coordinates.
    pub fn end_effector(&self, q: [f64; 2]) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let a = q[0] + q[1];
        [self.base[0] + l1 * q[0].cos() + l2 * a.cos(), self.base[1] + l1 * q[0].sin() + l2 * a.sin()]
    }

    /// `∂ee/∂q`.
    pub fn ee_jacobian(&self, q: [f64; 2]) -> Matrix2<f64> {
        let [l1, l2] = self.link_lengths;
        let a = q[0] + q[1];
        Matrix2::new(-l1 * q[0].sin() - l2 * a.sin(), -l2 * a.sin(), l1 * q[0].cos() + l2 * a.cos(), l2 * a.cos())
    }

    pub fn kinetic_energy(&self, s: &ArmState) -> f64 {
        let qd = Vector2::new(s.qd[0], s.qd[1]);
        0.5 * (qd.transpose() * self.terms(s).mass * qd)[(0, 0)]
    }

    /// Largest distance from the base the end-effector can reach.
    pub fn reach(&self) -> f64 {
        self.link_lengths[0] + self.link_lengths[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_rest_without_torque_stays_put() {
        let p = ArmParams::default();
        let s = ArmState::at_rest([0.3, 1.1]);
        assert_eq!(p.step(&s, [0.0, 0.0]), s);
    }

    #[test]
    fn damping_dissipates_energy() {
        let p = ArmParams::default();
        let mut s = ArmState { q: [0.2, 0.9], qd: [1.5, -2.0] };
        let mut e = p.kinetic_energy(&s);
        for _ in 0..40 {
            s = p.step(&s, [0.0, 0.0]);
            let e2 = p.kinetic_energy(&s);
            assert!(e2 < e, "{e2} ≥ {e}");
            e = e2;
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let p = ArmParams::default();
        for (s, u) in [
            (ArmState { q: [0.4, 1.2], qd: [0.7, -1.1] }, [0.3, -0.2]),
            (ArmState { q: [-2.0, 0.2], qd: [-3.0, 2.5] }, [-0.9, 0.95]),
            (ArmState { q: [1.0, -1.0], qd: [0.0, 0.0] }, [2.0, 0.1]),
        ] {
            let (a, b) = p.step_jacobians(&s, u);
            let (af, bf) = p.step_jacobians_fd(&s, u, 1e-6);
            assert!((a - af).amax() < 1e-8, "{a} vs {af}");
            assert!((b - bf).amax() < 1e-8, "{b} vs {bf}");
        }
    }

    #[test]
    fn ee_jacobian_matches_kinematics() {
        let p = ArmParams::default();
        let q = [0.7, -0.4];
        let j = p.ee_jacobian(q);
        for c in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += 1e-6;
            qm[c] -= 1e-6;
            let (ep, em) = (p.end_effector(qp), p.end_effector(qm));
            for r in 0..2 {
                assert!(((ep[r] - em[r]) / 2e-6 - j[(r, c)]).abs() < 1e-9);
            }
        }
    }
}
