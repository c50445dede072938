//! Dense convex QP solver: `min 1/2 z'Pz + q'z  s.t.  Cz <= b`.
//!
//! Primal-dual interior point with Mehrotra predictor-corrector steps. Sized
//! for the small condensed MPC problems produced by steering (tens of
//! variables), where a dense Cholesky of the reduced Newton system is cheapest.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug)]
pub struct QpProblem<T: Real> {
    pub p: DMatrix<T>,
    pub q: DVector<T>,
    pub c: DMatrix<T>,
    pub b: DVector<T>,
}

#[derive(Clone, Debug)]
pub struct QpSolution<T: Real> {
    pub z: DVector<T>,
    /// Inequality multipliers, one per row of `C`.
    pub lambda: DVector<T>,
    pub iterations: usize,
}

impl<T: Real> QpProblem<T> {
    pub fn objective(&self, z: &DVector<T>) -> T {
        T::lit(0.5) * (z.transpose() * &self.p * z)[(0, 0)] + self.q.dot(z)
    }

    /// Largest violation of stationarity, primal feasibility, dual feasibility
    /// and complementary slackness.
    pub fn kkt_residual(&self, sol: &QpSolution<T>) -> T {
        let stationarity = (&self.p * &sol.z + &self.q + self.c.transpose() * &sol.lambda).amax();
        let slack = &self.b - &self.c * &sol.z;
        let primal = slack.iter().fold(T::zero(), |m, &s| m.max(-s));
        let dual = sol.lambda.iter().fold(T::zero(), |m, &l| m.max(-l));
        let comp = slack
            .iter()
            .zip(sol.lambda.iter())
            .fold(T::zero(), |m, (&s, &l)| m.max((s * l).abs()));
        stationarity.max(primal).max(dual).max(comp)
    }
}

fn tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(100.0))
}

/// Largest `alpha <= 1` keeping `v + alpha dv > 0`.
fn max_step<T: Real>(v: &DVector<T>, dv: &DVector<T>) -> T {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < T::zero())
        .fold(T::one(), |a, (&x, &d)| a.min(-x / d))
}

fn solve_reduced<T: Real>(k: DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    if let Some(ch) = k.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let n = k.nrows();
    let shift = T::lit(1e-12) * k.diagonal().amax().max(T::one());
    (k + DMatrix::identity(n, n) * shift)
        .cholesky()
        .map(|ch| ch.solve(rhs))
}

pub fn solve<T: Real>(qp: &QpProblem<T>) -> Result<QpSolution<T>> {
    let n = qp.p.nrows();
    let rows = qp.c.nrows();
    if qp.p.ncols() != n || qp.q.len() != n || qp.c.ncols() != n || qp.b.len() != rows {
        return Err(Error::Dimension {
            what: "quadratic program",
            expected: n,
            got: qp.q.len(),
        });
    }
    // equilibrate constraint rows; multipliers are mapped back afterwards
    let scale: DVector<T> = DVector::from_fn(rows, |i, _| {
        let r = qp.c.row(i).amax();
        if r > T::zero() {
            r
        } else {
            T::one()
        }
    });
    let scaled = QpProblem {
        p: qp.p.clone(),
        q: qp.q.clone(),
        c: DMatrix::from_fn(rows, n, |i, j| qp.c[(i, j)] / scale[i]),
        b: qp.b.component_div(&scale),
    };
    let mut sol = solve_equilibrated(&scaled)?;
    sol.lambda = sol.lambda.component_div(&scale);
    Ok(sol)
}

fn solve_equilibrated<T: Real>(qp: &QpProblem<T>) -> Result<QpSolution<T>> {
    let n = qp.p.nrows();
    let rows = qp.c.nrows();
    if rows == 0 {
        let z = solve_reduced(qp.p.clone(), &(-&qp.q))
            .ok_or_else(|| Error::Infeasible("unbounded objective".into()))?;
        return Ok(QpSolution {
            z,
            lambda: DVector::zeros(0),
            iterations: 0,
        });
    }

    let tol = tolerance::<T>();
    let one = T::one();
    let ct = qp.c.transpose();
    let c_norm = qp.c.amax();
    let p_norm = qp.p.amax();
    let p_tol = tol * (one + qp.b.amax());

    let rows_t = T::from_usize_lossy(rows);
    let step_frac = T::lit(0.99);

    // start from one affine-scaling step off (0, 1, 1), pushed back into the
    // interior; this puts the multipliers on the scale of the costs
    let mut z = DVector::zeros(n);
    let mut s = DVector::from_element(rows, one);
    let mut lambda = DVector::from_element(rows, one);
    {
        let r_d = &qp.p * &z + &qp.q + &ct * &lambda;
        let r_p = &qp.c * &z + &s - &qp.b;
        let mut k = qp.p.clone();
        k += &ct * &qp.c;
        let inner = &r_p - &s;
        let rhs = -&r_d - &ct * &inner;
        if let Some(dz) = solve_reduced(k, &rhs) {
            let dl = &qp.c * &dz + &inner;
            let ds = -(&s + &dl);
            z = dz;
            s = (&s + ds).map(|v| v.abs().max(one));
            lambda = (&lambda + dl).map(|v| v.abs().max(one));
        }
    }

    for iter in 0..MAX_ITERATIONS {
        let r_d = &qp.p * &z + &qp.q + &ct * &lambda;
        let r_p = &qp.c * &z + &s - &qp.b;
        let mu = s.dot(&lambda) / rows_t;
        // stationarity is held to an absolute bound, down to the rounding
        // floor of the terms that make it up
        let magnitude = qp.q.amax() + p_norm * z.amax() + c_norm * lambda.amax();
        let d_tol = tol.max(T::epsilon() * T::lit(64.0) * (one + magnitude));
        if r_d.amax() <= d_tol && r_p.amax() <= p_tol && s.component_mul(&lambda).amax() <= tol {
            return Ok(QpSolution {
                z,
                lambda,
                iterations: iter,
            });
        }
        if !(mu.is_finite_val() && r_d.amax().is_finite_val()) {
            break;
        }

        let w = lambda.component_div(&s);
        let mut k = qp.p.clone();
        let cw = DMatrix::from_fn(rows, n, |i, j| qp.c[(i, j)] * w[i]);
        k += &ct * &cw;

        let newton = |r_c: &DVector<T>| -> Option<(DVector<T>, DVector<T>, DVector<T>)> {
            let inner = &r_p - r_c.component_div(&lambda);
            let rhs = -&r_d - &ct * inner.component_mul(&w);
            let dz = solve_reduced(k.clone(), &rhs)?;
            let dl = (&qp.c * &dz + &inner).component_mul(&w);
            let ds = -(r_c + s.component_mul(&dl)).component_div(&lambda);
            Some((dz, ds, dl))
        };

        // predictor
        let r_c = s.component_mul(&lambda);
        let Some((_, ds_a, dl_a)) = newton(&r_c) else {
            break;
        };
        let alpha_a = max_step(&s, &ds_a).min(max_step(&lambda, &dl_a));
        let mu_a = (&s + &ds_a * alpha_a).dot(&(&lambda + &dl_a * alpha_a)) / rows_t;
        let sigma = (mu_a / mu).powi(3).min(one);

        // corrector
        let r_c = r_c + ds_a.component_mul(&dl_a) - DVector::from_element(rows, sigma * mu);
        let Some((dz, ds, dl)) = newton(&r_c) else {
            break;
        };
        let alpha = (step_frac * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(one);
        z += &dz * alpha;
        s += &ds * alpha;
        lambda += &dl * alpha;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
    })
}
