//! Planner-driven data collection for offline policy search.
//!
//! An AQR-RRT tree explores the state space of a benchmark environment: each
//! iteration samples a target state, picks the tree node that is cheapest to
//! steer from under an affine quadratic regulator metric, and steers toward
//! the target with a shrinking-horizon MPC. Every real environment step is
//! stored in a replay buffer, which is scored by bin coverage and written to
//! disk for a downstream learner.
//!
//! The numerical core is generic over the scalar type; `f64` and `f32`
//! aliases are provided at the crate root.

pub mod analysis;
pub mod aqr;
pub mod config;
pub mod datio;
pub mod envs;
pub mod error;
pub mod lindyn;
pub mod planner;
pub mod qp;
pub mod scalar;
pub mod steer;
pub mod types;

pub use analysis::{buffer_coverage, coverage, CoverageReport};
pub use aqr::{AqrConfig, AqrMetric, AqrResult};
pub use config::Config;
pub use datio::{read_buffer, serve_env, write_buffer, write_buffer_with_dims, BufferHeader, RewardStats};
pub use envs::{make_env, BoxedEnv, EnvSpec, Environment, StepResult, ENV_IDS};
pub use error::{Error, Result};
pub use lindyn::{discretize, linearize, DiscreteDynamics, LinearizedDynamics};
pub use planner::{explore, random_rollout, ExploreConfig, ExploreStats, Tree, TreeNode};
pub use scalar::Real;
pub use steer::{steer, MpcWeights, SteerOutcome};
pub use types::{ActionVec, AffineStateVec, ReplayBuffer, StateVec, Trajectory, Transition};

pub type StateVecF64 = StateVec<f64>;
pub type ActionVecF64 = ActionVec<f64>;
pub type TransitionF64 = Transition<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type ReplayBufferF64 = ReplayBuffer<f64>;
pub type EnvSpecF64 = EnvSpec<f64>;
pub type TreeF64 = Tree<f64>;
pub type ExploreConfigF64 = ExploreConfig<f64>;

pub type StateVecF32 = StateVec<f32>;
pub type ActionVecF32 = ActionVec<f32>;
pub type TransitionF32 = Transition<f32>;
pub type TrajectoryF32 = Trajectory<f32>;
pub type ReplayBufferF32 = ReplayBuffer<f32>;
pub type EnvSpecF32 = EnvSpec<f32>;
pub type TreeF32 = Tree<f32>;
pub type ExploreConfigF32 = ExploreConfig<f32>;
