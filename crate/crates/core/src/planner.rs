//! AQR-RRT tree growth and the exploration loop that fills the replay buffer.
//!
//! Each iteration samples a target uniformly from the state box, picks the
//! tree node with the lowest AQR cost to it, steers the real environment
//! from that node with shrinking-horizon MPC and stores the reached state as
//! a new node. Every executed transition goes into the buffer in order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aqr::{nearest_with, AqrConfig, AqrMetric};
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::lindyn::{discretize, linearize};
use crate::scalar::Real;
use crate::steer::{steer, MpcWeights};
use crate::types::{ActionVec, ReplayBuffer, StateVec, Trajectory, Transition};

/// Consecutive empty extensions tolerated before exploration gives up.
pub const MAX_STALLED_EXTENDS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode<T: Real> {
    pub id: usize,
    pub state: StateVec<T>,
    pub parent: Option<usize>,
    /// Transitions from the parent's state to this node's state.
    pub edge: Trajectory<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree<T: Real> {
    nodes: Vec<TreeNode<T>>,
}

impl<T: Real> Tree<T> {
    pub fn new(root: StateVec<T>) -> Self {
        Self {
            nodes: vec![TreeNode {
                id: 0,
                state: root,
                parent: None,
                edge: Trajectory::new(),
            }],
        }
    }

    pub fn nodes(&self) -> &[TreeNode<T>] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode<T> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a child reached through `edge`, which must start at the parent's
    /// state and be nonempty.
    pub fn insert(&mut self, parent: usize, edge: Trajectory<T>) -> Result<usize> {
        let parent_state = &self
            .nodes
            .get(parent)
            .ok_or_else(|| Error::Config(format!("no tree node {parent}")))?
            .state;
        let (Some(first), Some(last)) = (edge.first_state(), edge.last_state()) else {
            return Err(Error::Config("tree edges must be nonempty".into()));
        };
        if first != parent_state {
            return Err(Error::Discontiguous { index: 0 });
        }
        let id = self.nodes.len();
        let state = last.clone();
        self.nodes.push(TreeNode {
            id,
            state,
            parent: Some(parent),
            edge,
        });
        Ok(id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploreConfig<T: Real> {
    /// Total environment interactions to collect.
    pub budget: usize,
    pub h: usize,
    pub seed: u64,
    pub aqr: AqrConfig<T>,
    pub weights: MpcWeights<T>,
}

impl<T: Real> ExploreConfig<T> {
    /// Standard AQR and MPC settings for `spec` with horizon `h`.
    pub fn standard(spec: &EnvSpec<T>, budget: usize, h: usize, seed: u64) -> Self {
        Self {
            budget,
            h,
            seed,
            aqr: AqrConfig::for_env(spec, h),
            weights: MpcWeights::standard(spec.state_dim, spec.action_dim, h),
        }
    }
}

/// Uniform sample from the state box.
pub fn sample_state<T: Real, R: Rng + ?Sized>(rng: &mut R, spec: &EnvSpec<T>) -> StateVec<T> {
    StateVec::from_vec(
        (0..spec.state_dim)
            .map(|i| {
                let u: f64 = rng.gen();
                let lo = spec.state_lower[i];
                lo + T::lit(u) * (spec.state_upper[i] - lo)
            })
            .collect(),
    )
}

#[derive(Clone, Debug)]
pub struct Extension<T: Real> {
    pub node: usize,
    pub trajectory: Trajectory<T>,
    pub failed: bool,
}

/// One AQR-RRT extension towards `x_r`. Returns `None` when steering
/// executed no step, in which case the tree is unchanged.
pub fn extend_tree<T: Real>(
    env: &dyn Environment<T>,
    tree: &mut Tree<T>,
    x_r: &StateVec<T>,
    cfg: &ExploreConfig<T>,
) -> Result<Option<Extension<T>>> {
    let spec = env.spec();
    let lin = linearize(env, x_r)?;
    let metric = AqrMetric::new(&lin, &cfg.aqr)?;
    let (nearest, _) = nearest_with(tree, x_r, &metric, spec);
    let dd = discretize(&lin, spec.dt)?;
    let start = tree.node(nearest).state.clone();
    let outcome = steer(env, &start, x_r, cfg.h, &dd, &cfg.weights);
    if outcome.trajectory.is_empty() {
        return Ok(None);
    }
    let node = tree.insert(nearest, outcome.trajectory.clone())?;
    Ok(Some(Extension {
        node,
        trajectory: outcome.trajectory,
        failed: outcome.failed,
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub iterations: usize,
    pub failed_steers: usize,
    pub empty_extends: usize,
}

/// Grows the tree until the buffer holds `budget` transitions.
///
/// The final edge may overshoot the budget by less than `h`; the buffer is
/// truncated to exactly `budget` while the tree keeps the whole edge.
pub fn explore<T: Real>(
    env: &dyn Environment<T>,
    cfg: &ExploreConfig<T>,
) -> Result<(Tree<T>, ReplayBuffer<T>, ExploreStats)> {
    if cfg.h == 0 {
        return Err(Error::Config("steering horizon must be at least 1".into()));
    }
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tree = Tree::new(env.reset(cfg.seed));
    let mut buffer = ReplayBuffer::new(env.id(), cfg.seed);
    let mut stats = ExploreStats::default();
    let mut stalled = 0;
    while buffer.len() < cfg.budget {
        let x_r = sample_state(&mut rng, spec);
        stats.iterations += 1;
        match extend_tree(env, &mut tree, &x_r, cfg)? {
            Some(ext) => {
                stalled = 0;
                stats.failed_steers += usize::from(ext.failed);
                buffer.extend_from(&ext.trajectory)?;
            }
            None => {
                stats.empty_extends += 1;
                stalled += 1;
                if stalled >= MAX_STALLED_EXTENDS {
                    return Err(Error::Infeasible(format!(
                        "{stalled} consecutive extensions executed no step"
                    )));
                }
            }
        }
    }
    buffer.truncate(cfg.budget);
    Ok((tree, buffer, stats))
}

/// Episode length for [`random_rollout`] baselines.
pub const RANDOM_EPISODE_LEN: usize = 500;

/// Uniformly random actions in episodes of `episode_len` steps, resetting at
/// each episode boundary and whenever the goal is reached. This is the
/// undirected baseline that directed exploration is compared against.
pub fn random_rollout<T: Real>(
    env: &dyn Environment<T>,
    budget: usize,
    episode_len: usize,
    seed: u64,
) -> Result<ReplayBuffer<T>> {
    if episode_len == 0 {
        return Err(Error::Config("episode length must be at least 1".into()));
    }
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(env.id(), seed);
    let mut s = env.reset(seed);
    let mut t = 0;
    for _ in 0..budget {
        let a = ActionVec::from_vec(
            (0..spec.action_dim)
                .map(|i| {
                    let u: f64 = rng.gen();
                    let lo = spec.action_lower[i];
                    lo + T::lit(u) * (spec.action_upper[i] - lo)
                })
                .collect(),
        );
        let out = env.step(&s, &a);
        buffer.push(Transition {
            s: s.clone(),
            a,
            r: out.r,
            s_next: out.s_next.clone(),
            done: out.done,
        })?;
        t += 1;
        if out.done || t == episode_len {
            s = env.reset(seed);
            t = 0;
        } else {
            s = out.s_next;
        }
    }
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::envs::{make_env, DoubleIntegrator, MountainCar};
    use rand::RngCore;

    fn di() -> DoubleIntegrator<f64> {
        DoubleIntegrator::new(0.05).unwrap()
    }

    /// Always returns the midpoint of the unit interval.
    struct MidRng;

    impl RngCore for MidRng {
        fn next_u32(&mut self) -> u32 {
            1 << 31
        }
        fn next_u64(&mut self) -> u64 {
            1 << 63
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0x80);
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }

    #[test]
    fn sample_with_midpoint_rng() {
        let spec = EnvSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0], vec![1.0], 0.1, vec![])
            .unwrap();
        let s = sample_state(&mut MidRng, &spec);
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn samples_are_uniform_in_bounds() {
        let env = di();
        let spec = env.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let samples: Vec<_> = (0..n).map(|_| sample_state(&mut rng, spec)).collect();
        assert!(samples.iter().all(|s| spec.contains(s.as_slice())));
        for i in 0..2 {
            let (lo, hi) = (spec.state_lower[i], spec.state_upper[i]);
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
            let sigma = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn extend_adds_one_node_near_root() {
        let env = di();
        let cfg = ExploreConfig::standard(env.spec(), 100, 20, 0);
        let mut tree = Tree::new(env.reset(0));
        let ext = extend_tree(&env, &mut tree, &StateVec::from_slice(&[0.2, 0.1]), &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(tree.len(), 2);
        assert_eq!(ext.node, 1);
        assert!(ext.trajectory.len() <= 20);
        assert_eq!(tree.node(1).parent, Some(0));
        assert_eq!(Some(&tree.node(1).state), ext.trajectory.last_state());
    }

    #[test]
    fn second_extend_sees_first_node() {
        let env = di();
        let cfg = ExploreConfig::standard(env.spec(), 100, 20, 0);
        let mut tree = Tree::new(env.reset(0));
        let target = StateVec::from_slice(&[1.5, 0.0]);
        extend_tree(&env, &mut tree, &target, &cfg).unwrap().unwrap();
        let ext = extend_tree(&env, &mut tree, &target, &cfg).unwrap().unwrap();
        // the first new node is closer to the target than the root
        assert_eq!(tree.node(ext.node).parent, Some(1));
    }

    #[test]
    fn unreachable_target_stores_partial_node() {
        let env = MountainCar::<f64>::from_config(&Config::new()).unwrap();
        let cfg = ExploreConfig::standard(env.spec(), 100, 20, 0);
        // rolling into the left wall: no action keeps the position in bounds
        let mut tree = Tree::new(StateVec::from_slice(&[-1.19, -0.07]));
        let target = StateVec::from_slice(&[-1.0, 0.0]);
        let ext = extend_tree(&env, &mut tree, &target, &cfg).unwrap().unwrap();
        assert!(ext.failed);
        assert_eq!(tree.len(), 2);
        let reached = &tree.node(ext.node).state;
        assert!(env.spec().contains(reached.as_slice()));
        assert!(reached.as_vector() != target.as_vector());
    }

    #[test]
    fn zero_budget_keeps_only_root() {
        let env = di();
        let cfg = ExploreConfig::standard(env.spec(), 0, 20, 0);
        let (tree, buf, _) = explore(&env, &cfg).unwrap();
        assert_eq!(tree.len(), 1);
        assert!(buf.is_empty());
    }

    #[test]
    fn buffer_is_concatenated_edges() {
        let env = di();
        let cfg = ExploreConfig::standard(env.spec(), 1000, 20, 4);
        let (tree, buf, _) = explore(&env, &cfg).unwrap();
        assert_eq!(buf.len(), 1000);
        let all: Vec<_> = tree
            .nodes()
            .iter()
            .flat_map(|n| n.edge.transitions().iter().cloned())
            .collect();
        assert!(all.len() >= 1000 && all.len() < 1000 + cfg.h);
        assert_eq!(&all[..1000], buf.transitions());
        for n in tree.nodes().iter().skip(1) {
            assert!(n.parent.unwrap() < n.id);
            assert_eq!(n.edge.first_state(), Some(&tree.node(n.parent.unwrap()).state));
        }
    }

    #[test]
    fn buffer_transitions_replay_on_the_environment() {
        let env = make_env::<f64>("acrobot", &Config::new()).unwrap();
        let cfg = ExploreConfig::standard(env.spec(), 400, 20, 9);
        let (_, buf, _) = explore(env.as_ref(), &cfg).unwrap();
        for t in buf.transitions() {
            let out = env.step(&t.s, &t.a);
            assert_eq!(out.s_next, t.s_next);
            assert_eq!(out.r, t.r);
            assert_eq!(out.done, t.done);
        }
    }

    #[test]
    fn exploration_is_reproducible() {
        let env = make_env::<f64>("mountaincar", &Config::new()).unwrap();
        let cfg = ExploreConfig::standard(env.spec(), 500, 20, 3);
        let (_, a, _) = explore(env.as_ref(), &cfg).unwrap();
        let (_, b, _) = explore(env.as_ref(), &cfg).unwrap();
        assert_eq!(a, b);
        let other = ExploreConfig { seed: 4, ..cfg };
        let (_, c, _) = explore(env.as_ref(), &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_rollout_resets_between_episodes() {
        let env = di();
        let buf = random_rollout(&env, 250, 100, 0).unwrap();
        assert_eq!(buf.len(), 250);
        let t = buf.transitions();
        for k in [0, 100, 200] {
            assert_eq!(t[k].s, env.reset(0));
        }
        assert!(Trajectory::from_transitions(t[..100].to_vec()).is_ok());
        assert!(Trajectory::from_transitions(t[..101].to_vec()).is_err());
        let single = random_rollout(&env, 250, 250, 0).unwrap();
        assert!(Trajectory::from_transitions(single.transitions().to_vec()).is_ok());
        assert!(random_rollout(&env, 10, 0, 0).is_err());
    }
}
