use nalgebra::{DVector, Matrix2, Vector2};

use super::{EnvSpec, Environment};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::StateVec;

/// Torque-controlled two-link planar arm with task-space reward.
///
/// State `(q1, q2, dq1, dq2)`, links modelled as uniform rods. Joints stop at
/// their limits (position clamped, outward velocity zeroed). The default start
/// and goal sit on opposite sides of the shoulder limit, so the short way
/// round is blocked and the arm has to swing away from the goal first.
#[derive(Clone, Debug)]
pub struct PlanarArm<T: Real> {
    spec: EnvSpec<T>,
    length: [T; 2],
    mass: [T; 2],
    gravity: T,
    start: [T; 2],
    goal: [T; 2],
}

impl<T: Real> PlanarArm<T> {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let l = T::lit;
        let g = |k: &str, d: f64| cfg.f64_or(&format!("planararm.{k}"), d).map(l);
        let two_pi = 2.0 * std::f64::consts::PI;
        let q1_limit = g("q1_limit", 2.8)?;
        let q2_limit = g("q2_limit", 2.6)?;
        let max_vel = g("max_velocity", two_pi)?;
        let max_torque = g("max_torque", 5.0)?;
        let length = [g("link1_length", 1.0)?, g("link2_length", 1.0)?];
        // default goal: the arm stretched out at q1 = -2.2
        let reach = (length[0] + length[1]).to_f64_lossy();
        let goal = [
            g("goal_x", reach * (-2.2_f64).cos())?,
            g("goal_y", reach * (-2.2_f64).sin())?,
        ];
        let arm = Self {
            spec: EnvSpec::new(
                vec![-q1_limit, -q2_limit, -max_vel, -max_vel],
                vec![q1_limit, q2_limit, max_vel, max_vel],
                vec![-max_torque, -max_torque],
                vec![max_torque, max_torque],
                g("dt", 0.02)?,
                vec![],
            )?,
            length,
            mass: [g("link1_mass", 1.0)?, g("link2_mass", 1.0)?],
            gravity: g("gravity", 0.0)?,
            start: [g("start_q1", 2.2)?, g("start_q2", 0.0)?],
            goal,
        };
        let start = StateVec::from_vec(vec![arm.start[0], arm.start[1], T::zero(), T::zero()]);
        if !arm.spec.contains(start.as_slice()) {
            return Err(Error::Config("planararm start outside joint limits".into()));
        }
        Ok(arm)
    }

    pub fn end_effector(&self, q1: T, q2: T) -> [T; 2] {
        let [l1, l2] = self.length;
        [
            l1 * q1.cos() + l2 * (q1 + q2).cos(),
            l1 * q1.sin() + l2 * (q1 + q2).sin(),
        ]
    }

    pub fn goal(&self) -> [T; 2] {
        self.goal
    }

    pub fn mass_matrix(&self, q2: T) -> Matrix2<T> {
        let [l1, l2] = self.length;
        let [m1, m2] = self.mass;
        let half = T::lit(0.5);
        let twelfth = T::lit(1.0 / 12.0);
        let (lc1, lc2) = (half * l1, half * l2);
        let (i1, i2) = (twelfth * m1 * l1 * l1, twelfth * m2 * l2 * l2);
        let c2 = q2.cos();
        let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + T::lit(2.0) * l1 * lc2 * c2) + i2;
        let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
        let m22 = m2 * lc2 * lc2 + i2;
        Matrix2::new(m11, m12, m12, m22)
    }

    /// Generalised gravity torque `g(q)`; gravity acts along `-y`.
    pub fn gravity_torque(&self, q1: T, q2: T) -> Vector2<T> {
        let [l1, l2] = self.length;
        let [m1, m2] = self.mass;
        let half = T::lit(0.5);
        let (lc1, lc2) = (half * l1, half * l2);
        let g = self.gravity;
        let outer = m2 * lc2 * g * (q1 + q2).cos();
        Vector2::new((m1 * lc1 + m2 * l1) * g * q1.cos() + outer, outer)
    }
}

impl<T: Real> Environment<T> for PlanarArm<T> {
    fn id(&self) -> &'static str {
        "planararm"
    }

    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset(&self, _seed: u64) -> StateVec<T> {
        StateVec::from_vec(vec![self.start[0], self.start[1], T::zero(), T::zero()])
    }

    fn dynamics(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        let (q1, q2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let [l1, l2] = self.length;
        let m2 = self.mass[1];
        let h = m2 * l1 * T::lit(0.5) * l2 * q2.sin();
        let coriolis = Vector2::new(-h * (T::lit(2.0) * w1 * w2 + w2 * w2), h * w1 * w1);
        let rhs = Vector2::new(a[0], a[1]) - coriolis - self.gravity_torque(q1, q2);
        let acc = self
            .mass_matrix(q2)
            .lu()
            .solve(&rhs)
            .unwrap_or_else(Vector2::zeros);
        DVector::from_vec(vec![w1, w2, acc[0], acc[1]])
    }

    fn reward(&self, s: &StateVec<T>) -> T {
        let p = self.end_effector(s[0], s[1]);
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];
        T::one() - (dx * dx + dy * dy).sqrt().tanh()
    }

    fn project(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = self.spec.project(x);
        for j in 0..2 {
            let v = j + 2;
            if (out[j] <= self.spec.state_lower[j] && out[v] < T::zero())
                || (out[j] >= self.spec.state_upper[j] && out[v] > T::zero())
            {
                out[v] = T::zero();
            }
        }
        out
    }
}
