use nalgebra::{DMatrix, DVector};

use super::{EnvSpec, Environment};
use crate::config::Config;
use crate::error::Result;
use crate::scalar::Real;
use crate::types::StateVec;

/// Continuous mountain car started at the valley floor `x = -pi/6`.
///
/// `f(x, v, a) = (v, power * a - gravity * cos(3x))`, one step per unit time.
/// Reaching `x >= goal` pays `goal_reward`; each step is charged
/// `effort_cost * |a|^2`.
#[derive(Clone, Debug)]
pub struct MountainCar<T: Real> {
    spec: EnvSpec<T>,
    power: T,
    gravity: T,
    goal: T,
    goal_reward: T,
    effort_cost: T,
}

impl<T: Real> MountainCar<T> {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let l = T::lit;
        let g = |k: &str, d: f64| cfg.f64_or(&format!("mountaincar.{k}"), d).map(l);
        Ok(Self {
            spec: EnvSpec::new(
                vec![g("min_position", -1.2)?, g("min_velocity", -0.07)?],
                vec![g("max_position", 0.6)?, g("max_velocity", 0.07)?],
                vec![l(-1.0)],
                vec![l(1.0)],
                g("dt", 1.0)?,
                vec![],
            )?,
            power: g("power", 0.0015)?,
            gravity: g("gravity", 0.0025)?,
            goal: g("goal_position", 0.45)?,
            goal_reward: g("goal_reward", 100.0)?,
            effort_cost: g("effort_cost", 0.1)?,
        })
    }

    pub fn gravity(&self) -> T {
        self.gravity
    }
}

impl<T: Real> Environment<T> for MountainCar<T> {
    fn id(&self) -> &'static str {
        "mountaincar"
    }

    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset(&self, _seed: u64) -> StateVec<T> {
        StateVec::from_vec(vec![-T::frac_pi_6(), T::zero()])
    }

    fn dynamics(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        let three = T::lit(3.0);
        DVector::from_vec(vec![
            x[1],
            self.power * a[0] - self.gravity * (three * x[0]).cos(),
        ])
    }

    fn analytic_jacobians(&self, x: &DVector<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
        let three = T::lit(3.0);
        let (z, o) = (T::zero(), T::one());
        let slope = three * self.gravity * (three * x[0]).sin();
        Some((
            DMatrix::from_row_slice(2, 2, &[z, o, slope, z]),
            DMatrix::from_row_slice(2, 1, &[z, self.power]),
        ))
    }

    fn reward(&self, s: &StateVec<T>) -> T {
        if self.is_goal(s) {
            self.goal_reward
        } else {
            T::zero()
        }
    }

    fn transition_reward(&self, a: &DVector<T>, s_next: &StateVec<T>) -> T {
        self.reward(s_next) - self.effort_cost * a.norm_squared()
    }

    fn is_goal(&self, s: &StateVec<T>) -> bool {
        s[0] >= self.goal
    }

    /// Clamps into the box; hitting the left wall stops the car.
    fn project(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = self.spec.project(x);
        if out[0] <= self.spec.state_lower[0] && out[1] < T::zero() {
            out[1] = T::zero();
        }
        out
    }
}
