//! Affine linearization `x' ~ A x + B a + c` around a target state and its
//! zero-order-hold discretization.
//!
//! Affine matrices carry the bias in an extra coordinate:
//!
//! ```text
//! A_aff = | A  c |      B_aff = | B |
//!         | 0  0 |              | 0 |
//! ```
//!
//! The bottom row of `A_aff` is zero in continuous time, so the trailing
//! coordinate of an affine state stays at 1 and `exp(A_aff dt)` ends in `(0, .., 0, 1)`.

use nalgebra::{DMatrix, DVector};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::StateVec;

/// Relative central-difference step for Jacobians.
pub const FD_REL_STEP: f64 = 1e-5;
/// Absolute floor on the difference step.
pub const FD_ABS_STEP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedDynamics<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// Affine residual `f(x_r, 0) - A x_r`.
    pub c: DVector<T>,
    pub a_affine: DMatrix<T>,
    pub b_affine: DMatrix<T>,
    pub linearization_point: StateVec<T>,
}

impl<T: Real> LinearizedDynamics<T> {
    /// Assembles the affine blocks from `(A, B, c)`.
    pub fn from_parts(a: DMatrix<T>, b: DMatrix<T>, c: DVector<T>, x_r: StateVec<T>) -> Self {
        let d = a.nrows();
        let m = b.ncols();
        let mut a_affine = DMatrix::zeros(d + 1, d + 1);
        a_affine.view_mut((0, 0), (d, d)).copy_from(&a);
        a_affine.view_mut((0, d), (d, 1)).copy_from(&c);
        let mut b_affine = DMatrix::zeros(d + 1, m);
        b_affine.view_mut((0, 0), (d, m)).copy_from(&b);
        Self {
            a,
            b,
            c,
            a_affine,
            b_affine,
            linearization_point: x_r,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `f(x_r, 0)`: the drift of the linear model at its own linearization point.
    pub fn drift_at_point(&self) -> DVector<T> {
        &self.a * self.linearization_point.as_vector() + &self.c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDynamics<T: Real> {
    pub g_affine: DMatrix<T>,
    pub h_affine: DMatrix<T>,
    pub dt: T,
}

impl<T: Real> DiscreteDynamics<T> {
    pub fn state_dim(&self) -> usize {
        self.g_affine.nrows() - 1
    }

    pub fn action_dim(&self) -> usize {
        self.h_affine.ncols()
    }

    /// One step of the affine model.
    pub fn predict(&self, x_affine: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.g_affine * x_affine + &self.h_affine * a
    }
}

/// Central-difference Jacobians of `f` at `(x, 0)`.
pub fn finite_difference_jacobians<T: Real>(
    env: &dyn Environment<T>,
    x: &DVector<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let spec = env.spec();
    let (d, m) = (spec.state_dim, spec.action_dim);
    let zero_a = DVector::zeros(m);
    let step = |v: T| {
        let rel = T::lit(FD_REL_STEP).max(T::epsilon().powf(T::lit(1.0 / 3.0)));
        (rel * v.abs()).max(T::lit(FD_ABS_STEP).max(rel * T::lit(1e-2)))
    };
    let two = T::lit(2.0);

    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = step(x[j]);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += h;
        lo[j] -= h;
        let col = (env.dynamics(&hi, &zero_a) - env.dynamics(&lo, &zero_a)) / (two * h);
        a.set_column(j, &col);
    }
    let mut b = DMatrix::zeros(d, m);
    for j in 0..m {
        let h = step(T::zero());
        let mut hi = zero_a.clone();
        let mut lo = zero_a.clone();
        hi[j] += h;
        lo[j] -= h;
        let col = (env.dynamics(x, &hi) - env.dynamics(x, &lo)) / (two * h);
        b.set_column(j, &col);
    }
    (a, b)
}

/// Linearizes `f` around `(x_r, a = 0)`.
///
/// Uses the environment's closed-form Jacobians when it provides them and
/// central differences otherwise.
pub fn linearize<T: Real>(
    env: &dyn Environment<T>,
    x_r: &StateVec<T>,
) -> Result<LinearizedDynamics<T>> {
    let spec = env.spec();
    if x_r.len() != spec.state_dim {
        return Err(Error::Dimension {
            what: "linearization point",
            expected: spec.state_dim,
            got: x_r.len(),
        });
    }
    let x = x_r.as_vector();
    let (a, b) = env
        .analytic_jacobians(x)
        .unwrap_or_else(|| finite_difference_jacobians(env, x));
    if !a.iter().chain(b.iter()).all(|v| v.is_finite_val()) {
        return Err(Error::NonFinite("dynamics Jacobian"));
    }
    let f0 = env.dynamics(x, &DVector::zeros(spec.action_dim));
    let c = f0 - &a * x;
    if !c.iter().all(|v| v.is_finite_val()) {
        return Err(Error::NonFinite("affine residual"));
    }
    Ok(LinearizedDynamics::from_parts(a, b, c, x_r.clone()))
}

/// Zero-order-hold discretization through the exponential of
/// `[[A_aff, B_aff], [0, 0]] * dt`.
pub fn discretize<T: Real>(lin: &LinearizedDynamics<T>, dt: T) -> Result<DiscreteDynamics<T>> {
    if dt <= T::zero() {
        return Err(Error::Config("discretization step must be positive".into()));
    }
    let n = lin.state_dim() + 1;
    let m = lin.action_dim();
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(&lin.a_affine * dt));
    big.view_mut((0, n), (n, m)).copy_from(&(&lin.b_affine * dt));
    let e = big.exp();
    let mut g_affine = e.view((0, 0), (n, n)).into_owned();
    let mut h_affine = e.view((0, n), (n, m)).into_owned();
    // the trailing row is exactly (0, .., 0, 1) / 0 in exact arithmetic
    g_affine.row_mut(n - 1).fill(T::zero());
    g_affine[(n - 1, n - 1)] = T::one();
    h_affine.row_mut(n - 1).fill(T::zero());
    Ok(DiscreteDynamics {
        g_affine,
        h_affine,
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::envs::{make_env, rk4, DoubleIntegrator, MountainCar};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(env: &dyn Environment<f64>, rng: &mut ChaCha8Rng) -> StateVec<f64> {
        let spec = env.spec();
        StateVec::from_vec(
            (0..spec.state_dim)
                .map(|i| rng.gen_range(spec.state_lower[i]..spec.state_upper[i]))
                .collect(),
        )
    }

    #[test]
    fn double_integrator_linearization_is_exact() {
        let env = DoubleIntegrator::<f64>::new(0.05).unwrap();
        let lin = linearize(&env, &StateVec::from_slice(&[3.0, -1.0])).unwrap();
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(lin.b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(lin.c.as_slice(), &[0.0, 0.0]);
        assert_eq!(lin.a_affine.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(lin.b_affine[(2, 0)], 0.0);
    }

    #[test]
    fn mountain_car_slope_term_at_valley_floor() {
        let env = MountainCar::<f64>::from_config(&Config::new()).unwrap();
        let x_r = env.reset(0);
        let lin = linearize(&env, &x_r).unwrap();
        assert!((lin.a[(1, 0)] - -0.0075).abs() < 1e-15);
        let (a_fd, _) = finite_difference_jacobians(&env, x_r.as_vector());
        assert!((a_fd[(1, 0)] - -0.0075).abs() < 1e-9);
        assert!((lin.c[1] - -lin.a[(1, 0)] * x_r[0]).abs() < 1e-15);
    }

    #[test]
    fn fd_matches_analytic_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in ["doubleint", "mountaincar"] {
            let env = make_env::<f64>(id, &Config::new()).unwrap();
            for _ in 0..20 {
                let x = random_state(env.as_ref(), &mut rng);
                let (a_an, b_an) = env.analytic_jacobians(x.as_vector()).unwrap();
                let (a_fd, b_fd) = finite_difference_jacobians(env.as_ref(), x.as_vector());
                assert!((a_an - a_fd).amax() < 1e-4, "{id}");
                assert!((b_an - b_fd).amax() < 1e-4, "{id}");
            }
        }
    }

    #[test]
    fn residual_identity_holds_for_every_env() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in crate::envs::ENV_IDS {
            let env = make_env::<f64>(id, &Config::new()).unwrap();
            for _ in 0..10 {
                let x = random_state(env.as_ref(), &mut rng);
                let lin = linearize(env.as_ref(), &x).unwrap();
                let f0 = env.dynamics(x.as_vector(), &DVector::zeros(env.spec().action_dim));
                assert!((lin.drift_at_point() - f0).amax() < 1e-9, "{id}");
            }
        }
    }

    #[test]
    fn acrobot_hanging_residual() {
        let env = make_env::<f64>("acrobot", &Config::new()).unwrap();
        let x_r = env.reset(0);
        let lin = linearize(env.as_ref(), &x_r).unwrap();
        let f0 = env.dynamics(x_r.as_vector(), &DVector::zeros(1));
        assert!((&lin.a * x_r.as_vector() + &lin.c - f0).amax() < 1e-12);
    }

    #[test]
    fn zoh_of_double_integrator() {
        let env = DoubleIntegrator::<f64>::new(0.05).unwrap();
        let lin = linearize(&env, &StateVec::from_slice(&[0.0, 0.0])).unwrap();
        let dd = discretize(&lin, 0.05).unwrap();
        let g = dd.g_affine.view((0, 0), (2, 2));
        assert!((g - DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0])).amax() < 1e-12);
        let h = dd.h_affine.view((0, 0), (2, 1));
        assert!((h - DMatrix::from_row_slice(2, 1, &[0.00125, 0.05])).amax() < 1e-12);
        assert_eq!(dd.g_affine.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        assert_eq!(dd.h_affine[(2, 0)], 0.0);
    }

    #[test]
    fn zoh_identity_case() {
        let lin = LinearizedDynamics::from_parts(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            StateVec::zeros(2),
        );
        let dd = discretize(&lin, 1.0).unwrap();
        assert!((dd.g_affine.view((0, 0), (2, 2)) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        assert!((dd.h_affine.view((0, 0), (2, 2)) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn zoh_rejects_nonpositive_step() {
        let lin = LinearizedDynamics::<f64>::from_parts(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            StateVec::zeros(1),
        );
        assert!(discretize(&lin, 0.0).is_err());
    }

    #[test]
    fn affine_bottom_row_for_nonlinear_envs() {
        for id in crate::envs::ENV_IDS {
            let env = make_env::<f64>(id, &Config::new()).unwrap();
            let lin = linearize(env.as_ref(), &env.reset(0)).unwrap();
            let dd = discretize(&lin, env.spec().dt).unwrap();
            let d = lin.state_dim();
            for j in 0..d {
                assert_eq!(dd.g_affine[(d, j)], 0.0);
            }
            assert_eq!(dd.g_affine[(d, d)], 1.0);
        }
    }

    #[test]
    fn one_step_model_matches_rk4_near_linearization_point() {
        for id in ["doubleint", "mountaincar"] {
            let env = make_env::<f64>(id, &Config::new()).unwrap();
            let x_r = match id {
                "doubleint" => StateVec::from_slice(&[1.0, 0.5]),
                _ => StateVec::from_slice(&[-0.3, 0.02]),
            };
            let dt = env.spec().dt;
            let lin = linearize(env.as_ref(), &x_r).unwrap();
            let dd = discretize(&lin, dt).unwrap();
            let zero = DVector::zeros(1);
            let mut xa = DVector::zeros(3);
            xa.rows_mut(0, 2).copy_from(x_r.as_vector());
            xa[2] = 1.0;
            let model = dd.predict(&xa, &zero);
            let truth = rk4(|y| env.dynamics(y, &zero), x_r.as_vector(), dt);
            let err = (model.rows(0, 2) - truth).amax();
            assert!(err < 10.0 * dt.powi(3), "{id}: {err}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let env = DoubleIntegrator::<f32>::new(0.05).unwrap();
        let lin = linearize(&env, &StateVec::from_slice(&[0.0, 0.0])).unwrap();
        let dd = discretize(&lin, 0.05).unwrap();
        assert!((dd.h_affine[(0, 0)] - 0.00125).abs() < 1e-7);
    }
}
