//! Domain value types: states, actions, transitions, trajectories and the replay buffer.
//!
//! States come in two flavours. A plain [`StateVec`] holds the `d` physical
//! coordinates; an [`AffineStateVec`] appends a constant `1` so affine dynamics
//! `x' = G x + H a + g` can be written as a single matrix product.

use std::ops::Index;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on the trailing coordinate accepted by [`from_affine`].
pub const AFFINE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVec<T: Real>(DVector<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct AffineStateVec<T: Real>(DVector<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct ActionVec<T: Real>(DVector<T>);

macro_rules! vector_newtype {
    ($name:ident) => {
        impl<T: Real> $name<T> {
            pub fn from_vec(values: Vec<T>) -> Self {
                Self(DVector::from_vec(values))
            }

            pub fn from_slice(values: &[T]) -> Self {
                Self(DVector::from_column_slice(values))
            }

            pub fn zeros(n: usize) -> Self {
                Self(DVector::zeros(n))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[T] {
                self.0.as_slice()
            }

            pub fn as_vector(&self) -> &DVector<T> {
                &self.0
            }

            pub fn into_vector(self) -> DVector<T> {
                self.0
            }

            pub fn iter(&self) -> impl Iterator<Item = &T> {
                self.0.iter()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite_val())
            }

            /// Lossless for `f64`, widening for `f32`.
            pub fn to_f64_vec(&self) -> Vec<f64> {
                self.0.iter().map(|v| v.to_f64_lossy()).collect()
            }

            pub fn from_f64_slice(values: &[f64]) -> Self {
                Self(DVector::from_iterator(
                    values.len(),
                    values.iter().map(|&v| T::lit(v)),
                ))
            }
        }

        impl<T: Real> From<DVector<T>> for $name<T> {
            fn from(v: DVector<T>) -> Self {
                Self(v)
            }
        }

        impl<T: Real> Index<usize> for $name<T> {
            type Output = T;

            fn index(&self, i: usize) -> &T {
                &self.0[i]
            }
        }
    };
}

vector_newtype!(StateVec);
vector_newtype!(ActionVec);

impl<T: Real> AffineStateVec<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.0
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.as_slice()
    }

    /// Accepts any vector; validity of the trailing `1` is checked by [`from_affine`].
    pub fn from_raw(values: DVector<T>) -> Self {
        Self(values)
    }
}

impl<T: Real> Index<usize> for AffineStateVec<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// `[s; 1]`.
pub fn to_affine<T: Real>(s: &StateVec<T>) -> AffineStateVec<T> {
    let d = s.len();
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(&s.0);
    v[d] = T::one();
    AffineStateVec(v)
}

/// Drops the trailing coordinate, rejecting vectors whose last entry is not 1.
pub fn from_affine<T: Real>(x: &AffineStateVec<T>) -> Result<StateVec<T>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Dimension {
            what: "affine state",
            expected: 1,
            got: 0,
        });
    }
    let last = x.0[n - 1];
    if (last - T::one()).abs() > T::lit(AFFINE_TOL) || !last.is_finite_val() {
        return Err(Error::NotAffine {
            value: last.to_f64_lossy(),
        });
    }
    Ok(StateVec(x.0.rows(0, n - 1).into_owned()))
}

/// One environment interaction `(s, a, r, s', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T: Real> {
    pub s: StateVec<T>,
    pub a: ActionVec<T>,
    pub r: T,
    pub s_next: StateVec<T>,
    pub done: bool,
}

/// Ordered, contiguous list of transitions: each `s_next` is the following `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    transitions: Vec<Transition<T>>,
}

impl<T: Real> Default for Trajectory<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Trajectory<T> {
    pub fn new() -> Self {
        Self {
            transitions: Vec::new(),
        }
    }

    /// Builds a trajectory, checking contiguity.
    pub fn from_transitions(transitions: Vec<Transition<T>>) -> Result<Self> {
        for (k, pair) in transitions.windows(2).enumerate() {
            if pair[0].s_next != pair[1].s {
                return Err(Error::Discontiguous { index: k + 1 });
            }
        }
        Ok(Self { transitions })
    }

    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if let Some(last) = self.transitions.last() {
            if last.s_next != t.s {
                return Err(Error::Discontiguous {
                    index: self.transitions.len(),
                });
            }
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn first_state(&self) -> Option<&StateVec<T>> {
        self.transitions.first().map(|t| &t.s)
    }

    pub fn last_state(&self) -> Option<&StateVec<T>> {
        self.transitions.last().map(|t| &t.s_next)
    }

    pub fn into_transitions(self) -> Vec<Transition<T>> {
        self.transitions
    }
}

/// The fixed dataset `D` handed to offline learning.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T: Real> {
    pub env_id: String,
    pub seed: u64,
    transitions: Vec<Transition<T>>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(env_id: impl Into<String>, seed: u64) -> Self {
        Self {
            env_id: env_id.into(),
            seed,
            transitions: Vec::new(),
        }
    }

    /// Appends one transition, enforcing that dimensions agree with earlier ones.
    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if let Some(first) = self.transitions.first() {
            check_dim("state", first.s.len(), t.s.len())?;
            check_dim("next state", first.s.len(), t.s_next.len())?;
            check_dim("action", first.a.len(), t.a.len())?;
        } else {
            check_dim("next state", t.s.len(), t.s_next.len())?;
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn extend_from(&mut self, traj: &Trajectory<T>) -> Result<()> {
        for t in traj.transitions() {
            self.push(t.clone())?;
        }
        Ok(())
    }

    pub fn truncate(&mut self, n: usize) {
        self.transitions.truncate(n);
    }

    /// Number of environment interactions stored.
    pub fn interaction_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.transitions.first().map(|t| t.s.len())
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.transitions.first().map(|t| t.a.len())
    }

    /// Every visited state: each transition's `s`, plus the final `s_next`.
    pub fn visited_states(&self) -> Vec<StateVec<T>> {
        let mut out: Vec<_> = self.transitions.iter().map(|t| t.s.clone()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(last.s_next.clone());
        }
        out
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
