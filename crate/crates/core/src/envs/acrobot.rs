use nalgebra::DVector;

use super::{EnvSpec, Environment};
use crate::config::Config;
use crate::error::Result;
use crate::scalar::Real;
use crate::types::StateVec;

/// Two-link underactuated pendulum with continuous torque on the elbow.
///
/// State `(theta1, theta2, dtheta1, dtheta2)`. `theta1` is measured from the
/// upright direction, so `theta1 = pi` hangs straight down; `theta2` is the
/// elbow angle relative to link 1. Angles wrap over `[-pi, pi)`. Physical
/// constants follow the usual benchmark (unit masses and lengths, centre of
/// mass at half length, unit link inertia).
#[derive(Clone, Debug)]
pub struct Acrobot<T: Real> {
    spec: EnvSpec<T>,
    mass1: T,
    mass2: T,
    length1: T,
    com1: T,
    com2: T,
    inertia1: T,
    inertia2: T,
    gravity: T,
    goal_height: T,
}

impl<T: Real> Acrobot<T> {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let l = T::lit;
        let g = |k: &str, d: f64| cfg.f64_or(&format!("acrobot.{k}"), d).map(l);
        let pi = std::f64::consts::PI;
        let max_vel1 = g("max_velocity1", 4.0 * pi)?;
        let max_vel2 = g("max_velocity2", 9.0 * pi)?;
        let max_torque = g("max_torque", 1.0)?;
        Ok(Self {
            spec: EnvSpec::new(
                vec![-T::pi(), -T::pi(), -max_vel1, -max_vel2],
                vec![T::pi(), T::pi(), max_vel1, max_vel2],
                vec![-max_torque],
                vec![max_torque],
                g("dt", 0.1)?,
                vec![0, 1],
            )?,
            mass1: g("mass1", 1.0)?,
            mass2: g("mass2", 1.0)?,
            length1: g("length1", 1.0)?,
            com1: g("com1", 0.5)?,
            com2: g("com2", 0.5)?,
            inertia1: g("inertia1", 1.0)?,
            inertia2: g("inertia2", 1.0)?,
            gravity: g("gravity", 9.8)?,
            goal_height: g("goal_height", 1.0)?,
        })
    }

    /// Height of the tip above the pivot, in link lengths.
    pub fn tip_height(&self, s: &StateVec<T>) -> T {
        s[0].cos() + (s[0] + s[1]).cos()
    }

    /// Total mechanical energy, zero potential at the pivot height.
    pub fn energy(&self, s: &StateVec<T>) -> T {
        let (th1, th2, w1, w2) = (s[0], s[1], s[2], s[3]);
        let half = T::lit(0.5);
        let (m11, m12, m22) = self.mass_matrix(th2);
        let kinetic = half * (m11 * w1 * w1 + T::lit(2.0) * m12 * w1 * w2 + m22 * w2 * w2);
        let potential = self.gravity
            * (self.mass1 * self.com1 * th1.cos()
                + self.mass2 * (self.length1 * th1.cos() + self.com2 * (th1 + th2).cos()));
        kinetic + potential
    }

    fn mass_matrix(&self, th2: T) -> (T, T, T) {
        let (m1, m2, l1, lc1, lc2) = (self.mass1, self.mass2, self.length1, self.com1, self.com2);
        let c2 = th2.cos();
        let two = T::lit(2.0);
        let d1 = m1 * lc1 * lc1
            + m2 * (l1 * l1 + lc2 * lc2 + two * l1 * lc2 * c2)
            + self.inertia1
            + self.inertia2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + self.inertia2;
        let d22 = m2 * lc2 * lc2 + self.inertia2;
        (d1, d2, d22)
    }
}

impl<T: Real> Environment<T> for Acrobot<T> {
    fn id(&self) -> &'static str {
        "acrobot"
    }

    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset(&self, _seed: u64) -> StateVec<T> {
        StateVec::from_vec(vec![T::pi(), T::zero(), T::zero(), T::zero()])
    }

    fn dynamics(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        let (m1, m2, l1, lc1, lc2) = (self.mass1, self.mass2, self.length1, self.com1, self.com2);
        let g = self.gravity;
        let two = T::lit(2.0);
        let (up1, th2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let (d1, d2, d22) = self.mass_matrix(th2);
        let s2 = th2.sin();
        // gravity terms from V = g (m1 lc1 cos th1 + m2 (l1 cos th1 + lc2 cos(th1 + th2)))
        let phi2 = -m2 * lc2 * g * (up1 + th2).sin();
        let phi1 = -m2 * l1 * lc2 * w2 * w2 * s2 - two * m2 * l1 * lc2 * w2 * w1 * s2
            - (m1 * lc1 + m2 * l1) * g * up1.sin()
            + phi2;
        let acc2 = (a[0] + d2 / d1 * phi1 - m2 * l1 * lc2 * w1 * w1 * s2 - phi2)
            / (d22 - d2 * d2 / d1);
        let acc1 = -(d2 * acc2 + phi1) / d1;
        DVector::from_vec(vec![w1, w2, acc1, acc2])
    }

    fn reward(&self, s: &StateVec<T>) -> T {
        if self.is_goal(s) {
            T::one()
        } else {
            T::zero()
        }
    }

    fn is_goal(&self, s: &StateVec<T>) -> bool {
        self.tip_height(s) > self.goal_height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rk4;
    use crate::types::ActionVec;

    fn env() -> Acrobot<f64> {
        Acrobot::from_config(&Config::new()).unwrap()
    }

    #[test]
    fn starts_hanging_down_at_rest() {
        let e = env();
        let s0 = e.reset(3);
        assert_eq!(s0.as_slice(), &[std::f64::consts::PI, 0.0, 0.0, 0.0]);
        assert!((e.tip_height(&s0) - -2.0).abs() < 1e-12);
        assert_eq!(e.reward(&s0), 0.0);
        assert!(!e.is_goal(&s0));
    }

    #[test]
    fn hanging_state_is_an_equilibrium() {
        let e = env();
        let f = e.dynamics(e.reset(0).as_vector(), &DVector::from_vec(vec![0.0]));
        assert!(f.amax() < 1e-12);
    }

    #[test]
    fn upright_is_goal() {
        let e = env();
        let up = StateVec::from_slice(&[0.0, 0.0, 0.0, 0.0]);
        assert!(e.is_goal(&up));
        assert_eq!(e.reward(&up), 1.0);
        let out = e.step(&up, &ActionVec::from_slice(&[0.0]));
        assert!(out.done);
    }

    #[test]
    fn energy_drift_vanishes_at_fourth_order() {
        let e = env();
        let zero = DVector::from_vec(vec![0.0]);
        let drift = |dt: f64, steps: usize| {
            let mut x = DVector::from_vec(vec![2.0, 0.5, 0.3, -0.4]);
            let e0 = e.energy(&StateVec::from(x.clone()));
            for _ in 0..steps {
                x = rk4(|y| e.dynamics(y, &zero), &x, dt);
            }
            (e.energy(&StateVec::from(x)) - e0).abs()
        };
        let coarse = drift(0.1, 100);
        let fine = drift(0.025, 400);
        assert!(coarse < 1e-2, "energy drift {coarse}");
        // 4x smaller step: RK4 error drops ~256x
        assert!(fine < coarse / 50.0, "{fine} vs {coarse}");
    }

    #[test]
    fn energy_gradient_matches_gravity_terms() {
        // at rest, the generalised gravity force is -dV/dq; check via M qdd = -dV/dq
        let e = env();
        let q = [2.3, -0.7];
        let x = DVector::from_vec(vec![q[0], q[1], 0.0, 0.0]);
        let f = e.dynamics(&x, &DVector::from_vec(vec![0.0]));
        let (m11, m12, m22) = e.mass_matrix(q[1]);
        let h = 1e-6;
        let v = |a: f64, b: f64| e.energy(&StateVec::from_slice(&[a, b, 0.0, 0.0]));
        let dv1 = (v(q[0] + h, q[1]) - v(q[0] - h, q[1])) / (2.0 * h);
        let dv2 = (v(q[0], q[1] + h) - v(q[0], q[1] - h)) / (2.0 * h);
        assert!((m11 * f[2] + m12 * f[3] + dv1).abs() < 1e-6);
        assert!((m12 * f[2] + m22 * f[3] + dv2).abs() < 1e-6);
    }
}
