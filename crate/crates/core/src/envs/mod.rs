//! Benchmark environments behind a uniform, stateless contract.
//!
//! An environment never stores the current state: callers pass it in and
//! receive the successor, so one instance can be shared between threads.

mod acrobot;
mod double_integrator;
mod mountain_car;
mod planar_arm;

use nalgebra::{DMatrix, DVector};

pub use acrobot::Acrobot;
pub use double_integrator::DoubleIntegrator;
pub use mountain_car::MountainCar;
pub use planar_arm::PlanarArm;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::scalar::{wrap_diff, wrap_into, Real};
use crate::types::{ActionVec, StateVec};

/// Ids accepted by [`make_env`].
pub const ENV_IDS: [&str; 4] = ["doubleint", "planararm", "acrobot", "mountaincar"];

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec<T: Real> {
    pub state_dim: usize,
    pub action_dim: usize,
    pub state_lower: StateVec<T>,
    pub state_upper: StateVec<T>,
    pub action_lower: ActionVec<T>,
    pub action_upper: ActionVec<T>,
    /// Seconds per environment step.
    pub dt: T,
    /// State indices with periodic topology over `[lower, upper)`.
    pub wrap_dims: Vec<usize>,
}

impl<T: Real> EnvSpec<T> {
    pub fn new(
        state_lower: Vec<T>,
        state_upper: Vec<T>,
        action_lower: Vec<T>,
        action_upper: Vec<T>,
        dt: T,
        wrap_dims: Vec<usize>,
    ) -> Result<Self> {
        if state_lower.len() != state_upper.len() {
            return Err(Error::Dimension {
                what: "state bounds",
                expected: state_lower.len(),
                got: state_upper.len(),
            });
        }
        if action_lower.len() != action_upper.len() {
            return Err(Error::Dimension {
                what: "action bounds",
                expected: action_lower.len(),
                got: action_upper.len(),
            });
        }
        let ordered = |lo: &[T], hi: &[T]| lo.iter().zip(hi).all(|(l, h)| l < h);
        if !ordered(&state_lower, &state_upper) || !ordered(&action_lower, &action_upper) {
            return Err(Error::Config("bounds must satisfy lower < upper".into()));
        }
        if dt <= T::zero() {
            return Err(Error::Config("dt must be positive".into()));
        }
        let d = state_lower.len();
        if wrap_dims.iter().any(|&i| i >= d) {
            return Err(Error::Config("wrap dimension out of range".into()));
        }
        Ok(Self {
            state_dim: d,
            action_dim: action_lower.len(),
            state_lower: StateVec::from_vec(state_lower),
            state_upper: StateVec::from_vec(state_upper),
            action_lower: ActionVec::from_vec(action_lower),
            action_upper: ActionVec::from_vec(action_upper),
            dt,
            wrap_dims,
        })
    }

    pub fn is_wrapped(&self, i: usize) -> bool {
        self.wrap_dims.contains(&i)
    }

    pub fn period(&self, i: usize) -> T {
        self.state_upper[i] - self.state_lower[i]
    }

    pub fn clamp_action(&self, a: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            a.len(),
            a.iter().enumerate().map(|(i, &v)| {
                v.clamp(self.action_lower[i], self.action_upper[i])
            }),
        )
    }

    /// Wraps periodic coordinates and clamps the rest into the state box.
    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(i, &v)| {
                let (lo, hi) = (self.state_lower[i], self.state_upper[i]);
                if self.is_wrapped(i) {
                    wrap_into(v, lo, hi)
                } else {
                    v.clamp(lo, hi)
                }
            }),
        )
    }

    /// `a - b`, with periodic coordinates folded to the shortest signed difference.
    pub fn difference(&self, a: &[T], b: &[T]) -> DVector<T> {
        DVector::from_iterator(
            a.len(),
            a.iter().zip(b).enumerate().map(|(i, (&x, &y))| {
                if self.is_wrapped(i) {
                    wrap_diff(x - y, self.period(i))
                } else {
                    x - y
                }
            }),
        )
    }

    pub fn contains(&self, s: &[T]) -> bool {
        s.len() == self.state_dim
            && s.iter().enumerate().all(|(i, &v)| {
                v >= self.state_lower[i]
                    && (v <= self.state_upper[i])
                    && v.is_finite_val()
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult<T: Real> {
    pub s_next: StateVec<T>,
    pub r: T,
    pub done: bool,
}

pub trait Environment<T: Real>: Send + Sync {
    fn id(&self) -> &'static str;

    fn spec(&self) -> &EnvSpec<T>;

    /// Deterministic initial state; the seed is accepted for interface symmetry.
    fn reset(&self, seed: u64) -> StateVec<T>;

    /// Continuous-time derivative `f(x, a)`.
    fn dynamics(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T>;

    /// Closed-form `(df/dx, df/da)` at `(x, 0)` when one exists.
    fn analytic_jacobians(&self, _x: &DVector<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
        None
    }

    fn reward(&self, s: &StateVec<T>) -> T;

    /// Reward credited for one step. Defaults to the state reward of `s_next`.
    fn transition_reward(&self, _a: &DVector<T>, s_next: &StateVec<T>) -> T {
        self.reward(s_next)
    }

    fn is_goal(&self, _s: &StateVec<T>) -> bool {
        false
    }

    /// One step of raw integration, before bounds are applied.
    fn integrate(&self, x: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        rk4(|x| self.dynamics(x, a), x, self.spec().dt)
    }

    /// Applies wrap/clamp rules to a freshly integrated state.
    fn project(&self, x: &DVector<T>) -> DVector<T> {
        self.spec().project(x)
    }

    fn step(&self, s: &StateVec<T>, a: &ActionVec<T>) -> StepResult<T> {
        let a = self.spec().clamp_action(a.as_vector());
        let raw = self.integrate(s.as_vector(), &a);
        let s_next = StateVec::from(self.project(&raw));
        let r = self.transition_reward(&a, &s_next);
        let done = self.is_goal(&s_next);
        StepResult { s_next, r, done }
    }
}

/// Classic fourth-order Runge-Kutta step of `x' = f(x)`.
pub fn rk4<T: Real, F>(f: F, x: &DVector<T>, dt: T) -> DVector<T>
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let half = dt * T::lit(0.5);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * half));
    let k3 = f(&(x + &k2 * half));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (dt / T::lit(6.0))
}

pub type BoxedEnv<T> = Box<dyn Environment<T>>;

/// Builds an environment by id, reading overrides from `cfg`.
pub fn make_env<T: Real>(id: &str, cfg: &Config) -> Result<BoxedEnv<T>> {
    Ok(match id {
        "doubleint" => Box::new(DoubleIntegrator::from_config(cfg)?),
        "planararm" => Box::new(PlanarArm::from_config(cfg)?),
        "acrobot" => Box::new(Acrobot::from_config(cfg)?),
        "mountaincar" => Box::new(MountainCar::from_config(cfg)?),
        other => return Err(Error::UnknownEnv(other.to_owned())),
    })
}
