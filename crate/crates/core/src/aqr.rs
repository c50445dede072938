//! Affine quadratic regulator distance.
//!
//! For dynamics linearized at a target `x_r`, the cost of reaching `x_r`
//! from `x0` in time `T` is
//!
//! ```text
//! J(T) = T + 1/2 d(T)^T G(T)^{-1} d(T)
//! d(T) = e^{AT} (x0 - x_r) + int_0^T e^{A s} f(x_r, 0) ds
//! G(T) = int_0^T e^{A s} B R^{-1} B^T e^{A^T s} ds
//! ```
//!
//! `d` is where the unforced model drifts to (in coordinates centred at
//! `x_r`) and `G` is the weighted controllability Gramian, so the quadratic
//! term is the minimum control energy needed to cancel the drift. `J` is
//! minimized over a geometric grid of horizons in `(0, T_max]`.

use nalgebra::{DMatrix, DVector};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::lindyn::LinearizedDynamics;
use crate::planner::Tree;
use crate::scalar::Real;
use crate::types::StateVec;

/// Ratio between the longest and shortest candidate horizon.
pub const HORIZON_SPAN: f64 = 100.0;
/// Relative Tikhonov weight added to near-singular Gramians.
pub const GRAMIAN_REGULARIZATION: f64 = 1e-9;
/// Default control weight at full actuation; the metric itself ignores action bounds.
pub const EFFORT_WEIGHT: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AqrConfig<T: Real> {
    /// Control weight, symmetric positive definite.
    pub r: DMatrix<T>,
    pub t_max: T,
    pub t_grid: usize,
    /// RK4 steps per Gramian integration interval.
    pub ode_steps: usize,
}

impl<T: Real> AqrConfig<T> {
    pub fn new(r: DMatrix<T>, t_max: T, t_grid: usize, ode_steps: usize) -> Result<Self> {
        if !r.is_square() || r.nrows() == 0 {
            return Err(Error::Config("AQR control weight must be square".into()));
        }
        if (&r - r.transpose()).amax() > T::lit(1e-12) * r.amax().max(T::one()) {
            return Err(Error::Config("AQR control weight must be symmetric".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::Config("AQR control weight must be positive definite".into()));
        }
        if t_max <= T::zero() || !t_max.is_finite_val() {
            return Err(Error::Config("AQR horizon bound must be positive".into()));
        }
        if t_grid < 2 || ode_steps == 0 {
            return Err(Error::Config("AQR grid needs >= 2 horizons and >= 1 ODE step".into()));
        }
        Ok(Self {
            r,
            t_max,
            t_grid,
            ode_steps,
        })
    }

    /// Control weight `EFFORT_WEIGHT / u_max^2` per action, 32 horizons up to
    /// `10 * dt * h`, 64 RK4 steps.
    pub fn for_env(spec: &EnvSpec<T>, h: usize) -> Self {
        let m = spec.action_dim;
        let r = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                let u = spec.action_lower[i].abs().max(spec.action_upper[i].abs());
                T::lit(EFFORT_WEIGHT) / (u * u)
            } else {
                T::zero()
            }
        });
        Self {
            r,
            t_max: T::lit(10.0) * spec.dt * T::from_usize_lossy(h),
            t_grid: 32,
            ode_steps: 64,
        }
    }

    /// Geometric grid `T_max * span^(k/(n-1) - 1)`, ascending.
    pub fn horizons(&self) -> Vec<T> {
        let n = self.t_grid;
        let span = T::lit(HORIZON_SPAN);
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    self.t_max
                } else {
                    let e = T::from_usize_lossy(k) / T::from_usize_lossy(n - 1) - T::one();
                    self.t_max * span.powf(e)
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AqrResult<T: Real> {
    pub cost: T,
    pub horizon: T,
}

impl<T: Real> AqrResult<T> {
    pub fn is_reachable(&self) -> bool {
        self.cost.is_finite_val()
    }
}

fn control_injection<T: Real>(lin: &LinearizedDynamics<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("control weight not positive definite".into()))?;
    let rinv_bt = chol.solve(&lin.b.transpose());
    Ok(&lin.b * rinv_bt)
}

fn gramian_rhs<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>, g: &DMatrix<T>) -> DMatrix<T> {
    let ag = a * g;
    &ag + ag.transpose() + q
}

fn rk4_gramian<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>, g: &mut DMatrix<T>, span: T, steps: usize) {
    if steps == 0 || span <= T::zero() {
        return;
    }
    let h = span / T::from_usize_lossy(steps);
    let half = h * T::lit(0.5);
    let two = T::lit(2.0);
    for _ in 0..steps {
        let k1 = gramian_rhs(a, q, g);
        let k2 = gramian_rhs(a, q, &(&*g + &k1 * half));
        let k3 = gramian_rhs(a, q, &(&*g + &k2 * half));
        let k4 = gramian_rhs(a, q, &(&*g + &k3 * h));
        *g += (k1 + k2 * two + k3 * two + k4) * (h / T::lit(6.0));
    }
    // keep exact symmetry against rounding drift
    let sym = (&*g + g.transpose()) * T::lit(0.5);
    *g = sym;
}

/// Weighted controllability Gramian `G(T)`, integrated with `steps` RK4 steps
/// from `G(0) = 0`.
pub fn gramian<T: Real>(
    lin: &LinearizedDynamics<T>,
    r: &DMatrix<T>,
    t: T,
    steps: usize,
) -> Result<DMatrix<T>> {
    let q = control_injection(lin, r)?;
    let d = lin.state_dim();
    let mut g = DMatrix::zeros(d, d);
    rk4_gramian(&lin.a, &q, &mut g, t, steps);
    Ok(g)
}

/// `[e^{AT} | int_0^T e^{As} f0 ds]` from one exponential of the bordered matrix.
fn drift_map<T: Real>(a: &DMatrix<T>, forcing: &DVector<T>, t: T) -> DMatrix<T> {
    let d = a.nrows();
    let mut big = DMatrix::zeros(d + 1, d + 1);
    big.view_mut((0, 0), (d, d)).copy_from(&(a * t));
    big.view_mut((0, d), (d, 1)).copy_from(&(forcing * t));
    big.exp().rows(0, d).into_owned()
}

/// Free drift `e^{AT} x0_bar + int_0^T e^{A(T - tau)} f(x_r, 0) dtau`.
///
/// In coordinates centred at the linearization point the affine forcing is
/// `f(x_r, 0) = A x_r + c`.
pub fn drift<T: Real>(lin: &LinearizedDynamics<T>, x0_bar: &StateVec<T>, t: T) -> DVector<T> {
    let map = drift_map(&lin.a, &lin.drift_at_point(), t);
    let d = lin.state_dim();
    map.columns(0, d) * x0_bar.as_vector() + map.column(d)
}

/// Per-horizon precomputation for one target. Every tree node reuses it.
#[derive(Clone, Debug)]
pub struct AqrMetric<T: Real> {
    dim: usize,
    horizons: Vec<T>,
    /// For each horizon: `L^{-1} [e^{AT} | w]` (row-major, `dim x (dim+1)`),
    /// where `L L^T = G(T)`. `None` marks an unusable Gramian.
    weighted: Vec<Option<Vec<T>>>,
}

impl<T: Real> AqrMetric<T> {
    pub fn new(lin: &LinearizedDynamics<T>, cfg: &AqrConfig<T>) -> Result<Self> {
        let d = lin.state_dim();
        let q = control_injection(lin, &cfg.r)?;
        let forcing = lin.drift_at_point();
        let horizons = cfg.horizons();
        let mut g = DMatrix::zeros(d, d);
        let mut t_prev = T::zero();
        let mut weighted = Vec::with_capacity(horizons.len());
        for &t in &horizons {
            rk4_gramian(&lin.a, &q, &mut g, t - t_prev, cfg.ode_steps);
            t_prev = t;
            let map = drift_map(&lin.a, &forcing, t);
            weighted.push(factor_and_whiten(&g, &map));
        }
        Ok(Self {
            dim: d,
            horizons,
            weighted,
        })
    }

    pub fn horizons(&self) -> &[T] {
        &self.horizons
    }

    /// Cost from a state offset `x0 - x_r`.
    pub fn evaluate(&self, offset: &[T]) -> AqrResult<T> {
        self.evaluate_below(offset, T::infinity())
            .unwrap_or(AqrResult {
                cost: T::infinity(),
                horizon: self.horizons[self.horizons.len() - 1],
            })
    }

    /// Like [`evaluate`](Self::evaluate), but only reports a cost strictly
    /// below `bound`. Horizons and partial sums that cannot beat the bound
    /// are skipped, which makes nearest-node scans much cheaper.
    pub fn evaluate_below(&self, offset: &[T], bound: T) -> Option<AqrResult<T>> {
        let d = self.dim;
        let half = T::lit(0.5);
        let mut limit = bound;
        let mut best = None;
        'horizons: for (t, w) in self.horizons.iter().zip(&self.weighted) {
            if *t >= limit {
                break;
            }
            let Some(w) = w else { continue };
            let mut energy = T::zero();
            for row in w.chunks_exact(d + 1) {
                let mut acc = row[d];
                for (wi, xi) in row[..d].iter().zip(offset) {
                    acc += *wi * *xi;
                }
                energy += acc * acc;
                if *t + half * energy >= limit {
                    continue 'horizons;
                }
            }
            let cost = *t + half * energy;
            limit = cost;
            best = Some(AqrResult { cost, horizon: *t });
        }
        best
    }
}

fn factor_and_whiten<T: Real>(g: &DMatrix<T>, map: &DMatrix<T>) -> Option<Vec<T>> {
    let d = g.nrows();
    let trace = g.trace();
    if !trace.is_finite_val() || trace <= T::zero() {
        return None;
    }
    let well_conditioned = |l: &DMatrix<T>| {
        let diag: Vec<T> = (0..d).map(|i| l[(i, i)]).collect();
        let lo = diag.iter().copied().fold(T::infinity(), |a, b| a.min(b));
        let hi = diag.iter().copied().fold(T::zero(), |a, b| a.max(b));
        lo > T::zero() && lo * lo > T::lit(1e-14) * hi * hi
    };
    let chol = g
        .clone()
        .cholesky()
        .filter(|c| well_conditioned(&c.l()))
        .or_else(|| {
            let lambda = T::lit(GRAMIAN_REGULARIZATION) * trace / T::from_usize_lossy(d);
            let reg = g + DMatrix::identity(d, d) * lambda;
            reg.cholesky()
        })?;
    let l = chol.l();
    let whitened = l.solve_lower_triangular(map)?;
    if !whitened.iter().all(|v| v.is_finite_val()) {
        return None;
    }
    let mut out = Vec::with_capacity(d * (d + 1));
    for i in 0..d {
        out.extend(whitened.row(i).iter().copied());
    }
    Some(out)
}

/// AQR cost of steering from `x0` to `x_r` under `lin` (linearized at `x_r`).
pub fn aqr_distance<T: Real>(
    lin: &LinearizedDynamics<T>,
    x0: &StateVec<T>,
    x_r: &StateVec<T>,
    cfg: &AqrConfig<T>,
) -> Result<AqrResult<T>> {
    let metric = AqrMetric::new(lin, cfg)?;
    let offset = x0.as_vector() - x_r.as_vector();
    Ok(metric.evaluate(offset.as_slice()))
}

/// Index of the tree node with the smallest AQR cost to `x_r`.
///
/// Offsets along periodic dimensions take the short way round. Ties go to
/// the earliest inserted node.
pub fn nearest<T: Real>(
    tree: &Tree<T>,
    x_r: &StateVec<T>,
    lin: &LinearizedDynamics<T>,
    spec: &EnvSpec<T>,
    cfg: &AqrConfig<T>,
) -> Result<(usize, AqrResult<T>)> {
    let metric = AqrMetric::new(lin, cfg)?;
    Ok(nearest_with(tree, x_r, &metric, spec))
}

pub fn nearest_with<T: Real>(
    tree: &Tree<T>,
    x_r: &StateVec<T>,
    metric: &AqrMetric<T>,
    spec: &EnvSpec<T>,
) -> (usize, AqrResult<T>) {
    let target = x_r.as_slice();
    let mut offset = vec![T::zero(); target.len()];
    let mut best: Option<(usize, AqrResult<T>)> = None;
    for node in tree.nodes() {
        for (i, (o, (&x, &y))) in offset
            .iter_mut()
            .zip(node.state.as_slice().iter().zip(target))
            .enumerate()
        {
            *o = if spec.is_wrapped(i) {
                crate::scalar::wrap_diff(x - y, spec.period(i))
            } else {
                x - y
            };
        }
        let bound = best.map_or(T::infinity(), |(_, b): (usize, AqrResult<T>)| b.cost);
        if let Some(res) = metric.evaluate_below(&offset, bound) {
            best = Some((node.id, res));
        }
    }
    best.unwrap_or((
        0,
        AqrResult {
            cost: T::infinity(),
            horizon: metric.horizons[metric.horizons.len() - 1],
        },
    ))
}
