use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_joint_action, EnvSpec, Environment, Observation, StepResult};
use crate::error::{Error, Result};

pub const STAY: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;
const N_ACTIONS: usize = 5;
/// Channels per window cell: target, other agent, outside the grid.
const CHANNELS: usize = 3;

pub const WIN_BONUS: f64 = 10.0;
pub const TARGET_REWARD: f64 = 1.0;
pub const STEP_COST: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct GatherConfig {
    pub grid_size: usize,
    pub view_radius: usize,
    pub n_agents: usize,
    /// Defaults to `n_agents`.
    pub n_targets: Option<usize>,
    pub episode_limit: usize,
}

impl Default for GatherConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            view_radius: 2,
            n_agents: 2,
            n_targets: None,
            episode_limit: 40,
        }
    }
}

/// Agents roam a square grid and must cover every target cell at once.
///
/// Shared reward per step: `-0.01`, `+1` the first time in an episode a
/// target becomes occupied, and `+10` (ending the episode as a win) once
/// all targets are occupied simultaneously. Agents may share a cell; moves
/// into a wall leave the agent in place.
#[derive(Clone, Debug)]
pub struct GatherGrid {
    cfg: GatherConfig,
    n_targets: usize,
    spec: EnvSpec,
    agents: Vec<(usize, usize)>,
    targets: Vec<(usize, usize)>,
    claimed: Vec<bool>,
    t: usize,
    done: bool,
}

impl GatherGrid {
    pub fn new(cfg: GatherConfig) -> Result<Self> {
        let n_targets = cfg.n_targets.unwrap_or(cfg.n_agents);
        if cfg.grid_size == 0 || cfg.n_agents == 0 || n_targets == 0 || cfg.episode_limit == 0 {
            return Err(Error::Config(format!("degenerate gather configuration {cfg:?}")));
        }
        if cfg.n_agents + n_targets > cfg.grid_size * cfg.grid_size {
            return Err(Error::Config("grid too small for agents plus targets".into()));
        }
        let window = 2 * cfg.view_radius + 1;
        let spec = EnvSpec {
            n_agents: cfg.n_agents,
            n_actions: N_ACTIONS,
            state_dim: 2 * cfg.n_agents + 4 * n_targets + 1,
            obs_dim: CHANNELS * window * window + 2,
            episode_limit: cfg.episode_limit,
            reward_range: (-STEP_COST, n_targets as f64 * TARGET_REWARD + WIN_BONUS - STEP_COST),
        };
        Ok(Self {
            agents: vec![(0, 0); cfg.n_agents],
            targets: vec![(0, 0); n_targets],
            claimed: vec![false; n_targets],
            cfg,
            n_targets,
            spec,
            t: 0,
            done: true,
        })
    }

    pub fn agents(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn targets(&self) -> &[(usize, usize)] {
        &self.targets
    }

    pub fn config(&self) -> &GatherConfig {
        &self.cfg
    }

    /// Places agents and targets directly. Positions must lie inside the grid.
    pub fn set_layout(&mut self, agents: Vec<(usize, usize)>, targets: Vec<(usize, usize)>) -> Observation {
        assert_eq!(agents.len(), self.cfg.n_agents);
        assert_eq!(targets.len(), self.n_targets);
        let g = self.cfg.grid_size;
        assert!(agents.iter().chain(&targets).all(|&(r, c)| r < g && c < g));
        self.agents = agents;
        self.targets = targets;
        self.claimed = self.occupied();
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn occupied(&self) -> Vec<bool> {
        self.targets
            .iter()
            .map(|t| self.agents.iter().any(|a| a == t))
            .collect()
    }

    fn norm(&self, v: usize) -> f64 {
        v as f64 / (self.cfg.grid_size.max(2) - 1) as f64
    }

    pub fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for &(r, c) in &self.agents {
            s.push(self.norm(r));
            s.push(self.norm(c));
        }
        for &(r, c) in &self.targets {
            s.push(self.norm(r));
            s.push(self.norm(c));
        }
        s.extend(self.occupied().iter().map(|&o| if o { 1.0 } else { 0.0 }));
        s.extend(self.claimed.iter().map(|&o| if o { 1.0 } else { 0.0 }));
        s.push(self.t as f64 / self.cfg.episode_limit as f64);
        s
    }

    /// Local window around `agent` (cell-major, three channels each) followed by its own position.
    pub fn agent_observation(&self, agent: usize) -> Vec<f64> {
        let r = self.cfg.view_radius as isize;
        let g = self.cfg.grid_size as isize;
        let (ar, ac) = self.agents[agent];
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        for dr in -r..=r {
            for dc in -r..=r {
                let (cr, cc) = (ar as isize + dr, ac as isize + dc);
                if cr < 0 || cc < 0 || cr >= g || cc >= g {
                    obs.extend_from_slice(&[0.0, 0.0, 1.0]);
                    continue;
                }
                let cell = (cr as usize, cc as usize);
                let target = self.targets.contains(&cell);
                let other = self
                    .agents
                    .iter()
                    .enumerate()
                    .any(|(j, &p)| j != agent && p == cell);
                obs.push(if target { 1.0 } else { 0.0 });
                obs.push(if other { 1.0 } else { 0.0 });
                obs.push(0.0);
            }
        }
        obs.push(self.norm(ar));
        obs.push(self.norm(ac));
        obs
    }

    fn observation(&self) -> Observation {
        Observation {
            state: self.state(),
            obs: (0..self.cfg.n_agents).map(|i| self.agent_observation(i)).collect(),
            avail: vec![vec![true; N_ACTIONS]; self.cfg.n_agents],
        }
    }

    fn moved(&self, (r, c): (usize, usize), action: usize) -> (usize, usize) {
        let last = self.cfg.grid_size - 1;
        match action {
            UP if r > 0 => (r - 1, c),
            DOWN if r < last => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            RIGHT if c < last => (r, c + 1),
            _ => (r, c),
        }
    }
}

impl Environment for GatherGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.cfg.grid_size;
        let cells = sample(&mut rng, g * g, self.n_targets + self.cfg.n_agents);
        let mut it = cells.iter().map(|k| (k / g, k % g));
        self.targets = it.by_ref().take(self.n_targets).collect();
        self.agents = it.collect();
        self.claimed = vec![false; self.n_targets];
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        check_joint_action(&self.observation().avail, joint_action)?;
        for (i, &a) in joint_action.iter().enumerate() {
            self.agents[i] = self.moved(self.agents[i], a);
        }
        self.t += 1;

        let occupied = self.occupied();
        let mut reward = -STEP_COST;
        for (claimed, &occ) in self.claimed.iter_mut().zip(&occupied) {
            if occ && !*claimed {
                *claimed = true;
                reward += TARGET_REWARD;
            }
        }
        let win = occupied.iter().all(|&o| o);
        if win {
            reward += WIN_BONUS;
        }
        let terminated = win;
        let truncated = !terminated && self.t >= self.cfg.episode_limit;
        self.done = terminated || truncated;
        Ok(StepResult {
            reward,
            terminated,
            truncated,
            next: self.observation(),
            win,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GatherGrid {
        GatherGrid::new(GatherConfig::default()).unwrap()
    }

    #[test]
    fn same_seed_same_layout() {
        let mut a = grid();
        let mut b = grid();
        assert_eq!(a.reset(0), b.reset(0));
        assert_eq!(a.agents(), b.agents());
        assert_eq!(a.targets(), b.targets());
        let o = a.reset(0);
        assert!(o.avail.iter().flatten().all(|&m| m));
        assert_eq!(o.state.len(), a.spec().state_dim);
        assert_eq!(o.obs[0].len(), a.spec().obs_dim);
    }

    #[test]
    fn covering_both_targets_wins() {
        let mut env = grid();
        env.set_layout(vec![(0, 1), (3, 3)], vec![(0, 0), (3, 4)]);
        let r = env.step(&[LEFT, RIGHT]).unwrap();
        assert!(r.win && r.terminated && !r.truncated);
        assert!((r.reward - (2.0 * TARGET_REWARD + WIN_BONUS - STEP_COST)).abs() < 1e-12);
    }

    #[test]
    fn first_occupation_rewarded_once() {
        let mut env = grid();
        env.set_layout(vec![(0, 1), (6, 6)], vec![(0, 0), (3, 3)]);
        let r1 = env.step(&[LEFT, STAY]).unwrap();
        assert!((r1.reward - (TARGET_REWARD - STEP_COST)).abs() < 1e-12);
        let r2 = env.step(&[RIGHT, STAY]).unwrap();
        let r3 = env.step(&[LEFT, STAY]).unwrap();
        assert!((r2.reward + STEP_COST).abs() < 1e-12);
        assert!((r3.reward + STEP_COST).abs() < 1e-12);
    }

    #[test]
    fn walls_are_no_ops_and_overlap_is_allowed() {
        let mut env = grid();
        env.set_layout(vec![(0, 0), (0, 1)], vec![(6, 6), (5, 5)]);
        env.step(&[UP, LEFT]).unwrap();
        assert_eq!(env.agents(), &[(0, 0), (0, 0)]);
    }

    #[test]
    fn truncates_at_episode_limit() {
        let mut env = GatherGrid::new(GatherConfig {
            episode_limit: 3,
            ..GatherConfig::default()
        })
        .unwrap();
        env.set_layout(vec![(0, 0), (0, 1)], vec![(6, 6), (5, 5)]);
        for k in 0..3 {
            let r = env.step(&[STAY, STAY]).unwrap();
            assert_eq!(r.truncated, k == 2);
            assert!(!r.terminated);
        }
        assert!(matches!(env.step(&[STAY, STAY]), Err(Error::EpisodeOver)));
    }

    #[test]
    fn window_matches_global_layout() {
        let mut env = grid();
        for seed in 0..20 {
            env.reset(seed);
            let radius = env.config().view_radius as isize;
            let g = env.config().grid_size as isize;
            for i in 0..2 {
                let obs = env.agent_observation(i);
                let (ar, ac) = env.agents()[i];
                let mut k = 0;
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (r, c) = (ar as isize + dr, ac as isize + dc);
                        let inside = r >= 0 && c >= 0 && r < g && c < g;
                        let cell = (r.max(0) as usize, c.max(0) as usize);
                        let target = inside && env.targets().contains(&cell);
                        let other = inside && env.agents()[1 - i] == cell;
                        assert_eq!(obs[k] == 1.0, target);
                        assert_eq!(obs[k + 1] == 1.0, other);
                        assert_eq!(obs[k + 2] == 1.0, !inside);
                        k += 3;
                    }
                }
            }
        }
    }

    #[test]
    fn identical_action_sequences_give_identical_trajectories() {
        let run = || {
            let mut env = grid();
            let mut out = vec![env.reset(11)];
            for t in 0..40 {
                let r = env.step(&[t % 5, (t * 3) % 5]).unwrap();
                out.push(r.next.clone());
                if r.terminated || r.truncated {
                    break;
                }
            }
            out
        };
        assert_eq!(run(), run());
    }
}
