//! Shrinking-horizon linear MPC steering.
//!
//! From the current state the controller solves a QP over the remaining
//! `L` steps of the affine discrete model, applies the first action to the
//! real environment and repeats with `L - 1`. After `h` steps the target is
//! reached (up to model error) with whatever velocity the plan arrived at,
//! instead of being regulated to a standstill.
//!
//! The QP is condensed: predicted states are eliminated through the
//! dynamics, leaving only the actions (plus slack variables for state bounds
//! that would otherwise be violated) as decision variables.

use nalgebra::{DMatrix, DVector};

use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::lindyn::DiscreteDynamics;
use crate::qp::{self, QpProblem};
use crate::scalar::{wrap_diff, Real};
use crate::types::{ActionVec, StateVec, Trajectory, Transition};

/// Cost per unit of state-bound violation.
pub const SLACK_PENALTY: f64 = 1e6;
/// Minimum terminal-to-stage weight ratio.
pub const MIN_TERMINAL_RATIO: f64 = 100.0;
/// Slack above this marks a soft-infeasible plan.
pub const SLACK_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MpcWeights<T: Real> {
    /// Stage weight on the affine state, `(d+1) x (d+1)`.
    pub q: DMatrix<T>,
    /// Terminal weight, `(d+1) x (d+1)`.
    pub q_terminal: DMatrix<T>,
    /// Action weight, `m x m`.
    pub r: DMatrix<T>,
    pub h: usize,
}

impl<T: Real> MpcWeights<T> {
    pub fn new(q: DMatrix<T>, q_terminal: DMatrix<T>, r: DMatrix<T>, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("steering horizon must be at least 1".into()));
        }
        if q.shape() != q_terminal.shape() || !q.is_square() || !r.is_square() {
            return Err(Error::Config("MPC weight shapes disagree".into()));
        }
        let min_eig = |m: &DMatrix<T>| {
            let sym = (m + m.transpose()) * T::lit(0.5);
            sym.symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(T::infinity(), |a, b| a.min(b))
        };
        let tol = T::lit(-1e-12);
        if min_eig(&q) < tol {
            return Err(Error::Config("stage weight must be PSD".into()));
        }
        if min_eig(&(&q_terminal - &q * T::lit(MIN_TERMINAL_RATIO))) < tol {
            return Err(Error::Config("terminal weight must dominate the stage weight".into()));
        }
        if min_eig(&r) <= T::zero() {
            return Err(Error::Config("action weight must be positive definite".into()));
        }
        Ok(Self {
            q,
            q_terminal,
            r,
            h,
        })
    }

    /// `Q = 1e-3 I`, `Q_L = 1e3 I`, `R = 1e-2 I`, no weight on the affine coordinate.
    pub fn standard(d: usize, m: usize, h: usize) -> Self {
        let mut q = DMatrix::identity(d + 1, d + 1) * T::lit(1e-3);
        let mut q_terminal = DMatrix::identity(d + 1, d + 1) * T::lit(1e3);
        q[(d, d)] = T::zero();
        q_terminal[(d, d)] = T::zero();
        Self {
            q,
            q_terminal,
            r: DMatrix::identity(m, m) * T::lit(1e-2),
            h: h.max(1),
        }
    }
}

/// How state bounds enter the QP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateBounds {
    /// Violations allowed at [`SLACK_PENALTY`] per unit.
    Soft,
    /// Any needed violation is reported as [`Error::Infeasible`].
    Hard,
}

/// Box limits seen by the QP. `None` leaves a state coordinate unconstrained
/// (periodic coordinates, and the affine coordinate which is always 1).
#[derive(Clone, Debug)]
pub struct QpBounds<T: Real> {
    pub state: Vec<Option<(T, T)>>,
    pub action_lower: DVector<T>,
    pub action_upper: DVector<T>,
    pub mode: StateBounds,
}

impl<T: Real> QpBounds<T> {
    pub fn from_spec(spec: &EnvSpec<T>, mode: StateBounds) -> Self {
        let mut state: Vec<_> = (0..spec.state_dim)
            .map(|i| {
                (!spec.is_wrapped(i)).then(|| (spec.state_lower[i], spec.state_upper[i]))
            })
            .collect();
        state.push(None);
        Self {
            state,
            action_lower: spec.action_lower.as_vector().clone(),
            action_upper: spec.action_upper.as_vector().clone(),
            mode,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QpPlan<T: Real> {
    /// `a_0 .. a_{L-1}`.
    pub actions: Vec<DVector<T>>,
    /// Model-predicted affine states `x_1 .. x_L`.
    pub predicted: Vec<DVector<T>>,
    /// Objective value, excluding the constant `k = 0` stage term.
    pub objective: T,
    /// Largest slack used on any state bound.
    pub max_slack: T,
    /// KKT residual reported by the solver for the final QP.
    pub kkt_residual: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct BoundRow {
    step: usize,
    coord: usize,
    upper: bool,
}

/// Solves the `L`-step tracking QP from `x0` towards `x_r` (both affine).
pub fn solve_qp<T: Real>(
    x0: &DVector<T>,
    x_r: &DVector<T>,
    horizon: usize,
    dd: &DiscreteDynamics<T>,
    w: &MpcWeights<T>,
    bounds: &QpBounds<T>,
) -> Result<QpPlan<T>> {
    let n = dd.g_affine.nrows();
    let m = dd.action_dim();
    if horizon == 0 {
        return Err(Error::Config("QP horizon must be at least 1".into()));
    }
    for (what, got) in [("QP start", x0.len()), ("QP target", x_r.len()), ("QP weights", w.q.nrows())] {
        if got != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    let l = horizon;
    let nu = l * m;

    // free response and input-to-state map, stacked over k = 1..L
    let mut free = DVector::zeros(l * n);
    let mut gamma = DMatrix::zeros(l * n, nu);
    let mut x = x0.clone();
    for k in 0..l {
        x = &dd.g_affine * &x;
        free.rows_mut(k * n, n).copy_from(&x);
        if k > 0 {
            let prev = gamma.view(((k - 1) * n, 0), (n, k * m)).into_owned();
            gamma.view_mut((k * n, 0), (n, k * m)).copy_from(&(&dd.g_affine * prev));
        }
        gamma.view_mut((k * n, k * m), (n, m)).copy_from(&dd.h_affine);
    }

    // P = 2 (Gamma' Qbar Gamma + Rbar), q = 2 Gamma' Qbar (free - X_r)
    let mut qbar_gamma = DMatrix::zeros(l * n, nu);
    let mut qbar_err = DVector::zeros(l * n);
    for k in 0..l {
        let wk = if k + 1 == l { &w.q_terminal } else { &w.q };
        let rows = gamma.view((k * n, 0), (n, nu));
        qbar_gamma.view_mut((k * n, 0), (n, nu)).copy_from(&(wk * rows));
        let err = free.rows(k * n, n) - x_r;
        qbar_err.rows_mut(k * n, n).copy_from(&(wk * err));
    }
    let two = T::lit(2.0);
    let mut p_act = gamma.transpose() * &qbar_gamma * two;
    for k in 0..l {
        let mut blk = p_act.view_mut((k * m, k * m), (m, m));
        blk += &w.r * two;
    }
    let p_act = (&p_act + p_act.transpose()) * T::lit(0.5);
    let q_act = gamma.transpose() * &qbar_err * two;

    let mut active: Vec<BoundRow> = Vec::new();
    let viol_tol = T::lit(1e-9);
    let max_rounds = 2 * l * n + 1;
    for _ in 0..max_rounds {
        let (qp, rows) = assemble(&p_act, &q_act, &gamma, &free, bounds, &active, l, n, m);
        let sol = qp::solve(&qp)?;
        let kkt = qp.kkt_residual(&sol);
        let a = sol.z.rows(0, nu).into_owned();
        let xs = &free + &gamma * &a;

        let mut added = false;
        for k in 0..l {
            for (i, b) in bounds.state.iter().enumerate() {
                let Some((lo, hi)) = *b else { continue };
                let v = xs[k * n + i];
                for (upper, bad) in [(true, v > hi + viol_tol), (false, v < lo - viol_tol)] {
                    let row = BoundRow {
                        step: k,
                        coord: i,
                        upper,
                    };
                    if bad && !active.contains(&row) {
                        active.push(row);
                        added = true;
                    }
                }
            }
        }
        if added {
            continue;
        }

        let max_slack = sol
            .z
            .rows(nu, rows)
            .iter()
            .fold(T::zero(), |acc, &s| acc.max(s));
        if bounds.mode == StateBounds::Hard && max_slack > T::lit(SLACK_TOL) {
            return Err(Error::Infeasible(format!(
                "state bounds need a violation of {max_slack}"
            )));
        }
        let actions = (0..l).map(|k| a.rows(k * m, m).into_owned()).collect();
        let predicted = (0..l).map(|k| xs.rows(k * n, n).into_owned()).collect();
        let objective = T::lit(0.5) * (a.transpose() * &p_act * &a)[(0, 0)]
            + q_act.dot(&a)
            + (0..l)
                .map(|k| {
                    let wk = if k + 1 == l { &w.q_terminal } else { &w.q };
                    let err = free.rows(k * n, n) - x_r;
                    (err.transpose() * wk * err)[(0, 0)]
                })
                .fold(T::zero(), |acc, v| acc + v);
        return Ok(QpPlan {
            actions,
            predicted,
            objective,
            max_slack,
            kkt_residual: kkt,
        });
    }
    Err(Error::Infeasible("state-bound generation did not settle".into()))
}

#[allow(clippy::too_many_arguments)]
fn assemble<T: Real>(
    p_act: &DMatrix<T>,
    q_act: &DVector<T>,
    gamma: &DMatrix<T>,
    free: &DVector<T>,
    bounds: &QpBounds<T>,
    active: &[BoundRow],
    l: usize,
    n: usize,
    m: usize,
) -> (QpProblem<T>, usize) {
    let nu = l * m;
    let ns = active.len();
    let nz = nu + ns;
    let mut p = DMatrix::zeros(nz, nz);
    p.view_mut((0, 0), (nu, nu)).copy_from(p_act);
    let mut q = DVector::zeros(nz);
    q.rows_mut(0, nu).copy_from(q_act);
    for j in 0..ns {
        q[nu + j] = T::lit(SLACK_PENALTY);
    }

    let n_rows = 2 * nu + 2 * ns;
    let mut c = DMatrix::zeros(n_rows, nz);
    let mut b = DVector::zeros(n_rows);
    for j in 0..nu {
        c[(2 * j, j)] = T::one();
        b[2 * j] = bounds.action_upper[j % m];
        c[(2 * j + 1, j)] = -T::one();
        b[2 * j + 1] = -bounds.action_lower[j % m];
    }
    let base = 2 * nu;
    for (j, row) in active.iter().enumerate() {
        let (lo, hi) = bounds.state[row.coord].expect("only bounded coordinates are activated");
        let idx = row.step * n + row.coord;
        let sign = if row.upper { T::one() } else { -T::one() };
        for col in 0..nu {
            c[(base + 2 * j, col)] = sign * gamma[(idx, col)];
        }
        c[(base + 2 * j, nu + j)] = -T::one();
        b[base + 2 * j] = if row.upper { hi - free[idx] } else { free[idx] - lo };
        c[(base + 2 * j + 1, nu + j)] = -T::one();
    }
    (QpProblem { p, q, c, b }, ns)
}

#[derive(Clone, Debug)]
pub struct SteerOutcome<T: Real> {
    pub reached: StateVec<T>,
    pub trajectory: Trajectory<T>,
    /// Number of QPs that produced an executed action.
    pub feasible_steps: usize,
    /// Set when a QP failed (steering stopped early) or when reaching the
    /// target needed a state-bound violation in the plan.
    pub failed: bool,
}

/// Steers the environment from `v` towards `x_r` over `h` shrinking horizons.
///
/// `dd` is the discretized model linearized at `x_r`. Periodic coordinates
/// are tracked continuously from `v`, so the controller heads for the nearest
/// image of the target and never sees a jump when the real state wraps.
pub fn steer<T: Real>(
    env: &dyn Environment<T>,
    v: &StateVec<T>,
    x_r: &StateVec<T>,
    h: usize,
    dd: &DiscreteDynamics<T>,
    w: &MpcWeights<T>,
) -> SteerOutcome<T> {
    let spec = env.spec();
    let d = spec.state_dim;
    let bounds = QpBounds::from_spec(spec, StateBounds::Soft);
    let mut target = DVector::zeros(d + 1);
    target.rows_mut(0, d).copy_from(x_r.as_vector());
    target[d] = T::one();

    // offset of the model state from the real state on periodic coordinates
    let mut unwrap = DVector::<T>::zeros(d);
    for &i in &spec.wrap_dims {
        let dev = wrap_diff(v[i] - x_r[i], spec.period(i));
        unwrap[i] = x_r[i] + dev - v[i];
    }

    let mut s = v.clone();
    let mut trajectory = Trajectory::new();
    let mut failed = false;
    let mut feasible_steps = 0;
    for l in (1..=h).rev() {
        let mut x0 = DVector::zeros(d + 1);
        x0.rows_mut(0, d).copy_from(&(s.as_vector() + &unwrap));
        x0[d] = T::one();
        let plan = match solve_qp(&x0, &target, l, dd, w, &bounds) {
            Ok(plan) => plan,
            Err(_) => {
                failed = true;
                break;
            }
        };
        if plan.max_slack > T::lit(SLACK_TOL) {
            failed = true;
        }
        feasible_steps += 1;
        let a = ActionVec::from(spec.clamp_action(&plan.actions[0]));
        let out = env.step(&s, &a);
        for &i in &spec.wrap_dims {
            let moved = wrap_diff(out.s_next[i] - s[i], spec.period(i));
            unwrap[i] += s[i] + moved - out.s_next[i];
        }
        let t = Transition {
            s: s.clone(),
            a,
            r: out.r,
            s_next: out.s_next.clone(),
            done: out.done,
        };
        trajectory
            .push(t)
            .expect("steering chains each transition from the previous successor");
        s = out.s_next;
    }
    SteerOutcome {
        reached: s,
        trajectory,
        feasible_steps,
        failed,
    }
}
