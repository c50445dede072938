use nalgebra::{DMatrix, DVector};

use super::{EnvSpec, Environment};
use crate::config::Config;
use crate::error::Result;
use crate::scalar::{wrap_diff, Real};
use crate::types::StateVec;

/// Force-controlled point mass on a wrap-around line with two goals.
///
/// State `(position, velocity)`; position wraps over `[-10, 10)`, velocity is
/// clamped to `[-2.5, 2.5]`, force in `[-1, 1]`. The near goal `G1 = (-2.5, 0)`
/// pays at most 1, the far goal `G2 = (6, 0)` pays up to 2.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator<T: Real> {
    spec: EnvSpec<T>,
    goal_near: [T; 2],
    goal_far: [T; 2],
}

impl<T: Real> DoubleIntegrator<T> {
    pub fn new(dt: T) -> Result<Self> {
        let l = T::lit;
        Ok(Self {
            spec: EnvSpec::new(
                vec![l(-10.0), l(-2.5)],
                vec![l(10.0), l(2.5)],
                vec![l(-1.0)],
                vec![l(1.0)],
                dt,
                vec![0],
            )?,
            goal_near: [l(-2.5), l(0.0)],
            goal_far: [l(6.0), l(0.0)],
        })
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Self::new(T::lit(cfg.f64_or("doubleint.dt", 0.05)?))
    }

    /// Euclidean distance over (wrapped position error, velocity error).
    fn distance(&self, s: &StateVec<T>, g: &[T; 2]) -> T {
        let dp = wrap_diff(s[0] - g[0], self.spec.period(0));
        let dv = s[1] - g[1];
        (dp * dp + dv * dv).sqrt()
    }
}

impl<T: Real> Environment<T> for DoubleIntegrator<T> {
    fn id(&self) -> &'static str {
        "doubleint"
    }

    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset(&self, _seed: u64) -> StateVec<T> {
        StateVec::zeros(2)
    }

    fn dynamics(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        DVector::from_vec(vec![x[1], a[0]])
    }

    fn analytic_jacobians(&self, _x: &DVector<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
        let (z, o) = (T::zero(), T::one());
        Some((
            DMatrix::from_row_slice(2, 2, &[z, o, z, z]),
            DMatrix::from_row_slice(2, 1, &[z, o]),
        ))
    }

    fn reward(&self, s: &StateVec<T>) -> T {
        let one = T::one();
        let near = one - self.distance(s, &self.goal_near).tanh();
        let far = T::lit(2.0) * (one - self.distance(s, &self.goal_far).tanh());
        near.max(far)
    }

    /// Exact zero-order-hold update of the double integrator.
    fn integrate(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        let dt = self.spec.dt;
        DVector::from_vec(vec![
            x[0] + x[1] * dt + T::lit(0.5) * a[0] * dt * dt,
            x[1] + a[0] * dt,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rk4;
    use crate::types::ActionVec;

    fn env() -> DoubleIntegrator<f64> {
        DoubleIntegrator::new(0.05).unwrap()
    }

    fn s(p: f64, v: f64) -> StateVec<f64> {
        StateVec::from_slice(&[p, v])
    }

    #[test]
    fn reset_is_origin() {
        assert_eq!(env().reset(0), s(0.0, 0.0));
    }

    #[test]
    fn full_force_step_from_rest() {
        let out = env().step(&s(0.0, 0.0), &ActionVec::from_slice(&[1.0]));
        assert!((out.s_next[0] - 0.00125).abs() < 1e-15);
        assert!((out.s_next[1] - 0.05).abs() < 1e-15);
        assert!(!out.done);
    }

    #[test]
    fn zero_action_at_origin_keeps_state_and_pays_near_goal_tail() {
        let e = env();
        let out = e.step(&s(0.0, 0.0), &ActionVec::from_slice(&[0.0]));
        assert_eq!(out.s_next, s(0.0, 0.0));
        let expected = (1.0 - 2.5_f64.tanh()).max(2.0 * (1.0 - 6.0_f64.tanh()));
        assert!((out.r - expected).abs() < 1e-15);
        assert!((out.r - 0.013386).abs() < 1e-5);
    }

    #[test]
    fn reward_at_goals() {
        let e = env();
        assert_eq!(e.reward(&s(6.0, 0.0)), 2.0);
        let at_near = e.reward(&s(-2.5, 0.0));
        // far goal is 8.5 away either way round the 20-long ring
        let expected = 1.0_f64.max(2.0 * (1.0 - 8.5_f64.tanh()));
        assert_eq!(at_near, expected);
        assert!((at_near - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reward_distance_wraps() {
        let e = env();
        // 9.9 is 3.9 from 6.0 directly; -9.9 is 4.1 away through the seam
        let direct = e.reward(&s(9.9, 0.0));
        let seam = e.reward(&s(-9.9, 0.0));
        assert!((direct - 2.0 * (1.0 - 3.9_f64.tanh())).abs() < 1e-12);
        assert!((seam - 2.0 * (1.0 - 4.1_f64.tanh())).abs() < 1e-12);
    }

    #[test]
    fn dynamics_matches_table() {
        let f = env().dynamics(&DVector::from_vec(vec![2.0, 1.0]), &DVector::from_vec(vec![0.5]));
        assert_eq!(f.as_slice(), &[1.0, 0.5]);
    }

    #[test]
    fn step_matches_closed_form_and_rk4() {
        let e = env();
        let x = DVector::from_vec(vec![1.0, -0.3]);
        let a = DVector::from_vec(vec![0.7]);
        let exact = e.integrate(&x, &a);
        let via_rk4 = rk4(|y| e.dynamics(y, &a), &x, 0.05);
        assert!((exact - via_rk4).amax() < 1e-10);
    }

    #[test]
    fn position_wraps_and_velocity_clamps() {
        let e = env();
        let out = e.step(&s(9.99, 2.5), &ActionVec::from_slice(&[1.0]));
        assert!(out.s_next[0] < -9.8);
        assert_eq!(out.s_next[1], 2.5);
        assert!(e.spec().contains(out.s_next.as_slice()));
    }

    #[test]
    fn action_is_clamped() {
        let e = env();
        let big = e.step(&s(0.0, 0.0), &ActionVec::from_slice(&[5.0]));
        let unit = e.step(&s(0.0, 0.0), &ActionVec::from_slice(&[1.0]));
        assert_eq!(big, unit);
    }
}
