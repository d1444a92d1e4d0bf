//! Episodic replay with zero padding and a validity mask.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::envs::{EnvSpec, Observation};
use crate::error::{Error, Result};

/// One complete trajectory.
///
/// `states`, `obs` and `avail` hold `len() + 1` entries: the final one is the
/// observation after the last action, used for bootstrapping.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub obs: Vec<Vec<Vec<f64>>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// True only on a final step that ended the episode for real (not by the step limit).
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn start(first: Observation) -> Self {
        Self {
            states: vec![first.state],
            obs: vec![first.obs],
            avail: vec![first.avail],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
        }
    }

    pub fn record(&mut self, actions: Vec<usize>, reward: f64, terminated: bool, next: Observation) {
        self.actions.push(actions);
        self.rewards.push(reward);
        self.terminated.push(terminated);
        self.states.push(next.state);
        self.obs.push(next.obs);
        self.avail.push(next.avail);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        let bad = |m: String| Err(Error::MalformedEpisode(m));
        let t = self.len();
        if t == 0 || t > spec.episode_limit {
            return bad(format!("length {t} outside 1..={}", spec.episode_limit));
        }
        if self.rewards.len() != t || self.terminated.len() != t {
            return bad("reward/termination arrays differ from action count".into());
        }
        if self.states.len() != t + 1 || self.obs.len() != t + 1 || self.avail.len() != t + 1 {
            return bad("state/observation arrays must have one entry more than actions".into());
        }
        if self.terminated[..t - 1].iter().any(|&d| d) {
            return bad("termination before the final step".into());
        }
        if !self.terminated[t - 1] && t != spec.episode_limit {
            return bad(format!("episode of length {t} neither terminated nor truncated"));
        }
        for s in &self.states {
            if s.len() != spec.state_dim {
                return bad(format!("state of length {}", s.len()));
            }
        }
        for (step, (obs, avail)) in self.obs.iter().zip(&self.avail).enumerate() {
            if obs.len() != spec.n_agents || avail.len() != spec.n_agents {
                return bad(format!("step {step}: wrong agent count"));
            }
            if obs.iter().any(|o| o.len() != spec.obs_dim) || avail.iter().any(|a| a.len() != spec.n_actions) {
                return bad(format!("step {step}: wrong observation or mask width"));
            }
        }
        for (step, joint) in self.actions.iter().enumerate() {
            if joint.len() != spec.n_agents {
                return bad(format!("step {step}: wrong joint action width"));
            }
            for (i, &a) in joint.iter().enumerate() {
                if a >= spec.n_actions || !self.avail[step][i][a] {
                    return bad(format!("step {step}: agent {i} took unavailable action {a}"));
                }
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return bad("non-finite reward".into());
        }
        Ok(())
    }
}

/// FIFO episode store.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    spec: EnvSpec,
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(spec: EnvSpec, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            spec,
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.validate(&self.spec)?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// Indices of a uniform draw: with replacement while the buffer holds fewer
    /// than `batch_size` episodes, without replacement afterwards.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let n = self.episodes.len();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(if n < batch_size {
            (0..batch_size).map(|_| rng.gen_range(0..n)).collect()
        } else {
            index::sample(rng, n, batch_size).into_vec()
        })
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<EpisodeBatch> {
        let picked: Vec<&Episode> = self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect();
        EpisodeBatch::from_episodes(&self.spec, &picked)
    }
}

/// `B` episodes padded to a common length `T`.
///
/// Per-step arrays are flattened time-major: entry `(t, b)` lives at
/// `t * B + b`, and per-agent entries `(t, b, i)` at `(t * B + b) * n + i`.
/// Padded steps carry zero observations, zero rewards, mask 0 and all-ones
/// availability (so a softmax over them stays defined).
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub n_agents: usize,
    pub n_actions: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub batch_size: usize,
    /// Padded number of transitions.
    pub max_len: usize,
    pub lengths: Vec<usize>,
    /// `(T + 1) * B` rows of `state_dim`.
    pub states: Vec<Vec<f64>>,
    /// `(T + 1) * B * n` rows of `obs_dim`.
    pub obs: Vec<Vec<f64>>,
    /// `(T + 1) * B * n` rows of `n_actions`.
    pub avail: Vec<Vec<bool>>,
    /// `T * B * n` actions (0 on padding).
    pub actions: Vec<usize>,
    /// `T * B` entries.
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub mask: Vec<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(spec: &EnvSpec, episodes: &[&Episode]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let max_len = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut batch = Self::padded(spec, episodes.len(), max_len);
        batch.lengths = episodes.iter().map(|e| e.len()).collect();
        let (bsz, n) = (episodes.len(), spec.n_agents);
        for (b, ep) in episodes.iter().enumerate() {
            for t in 0..=ep.len() {
                let row = t * bsz + b;
                batch.states[row] = ep.states[t].clone();
                for i in 0..n {
                    batch.obs[row * n + i] = ep.obs[t][i].clone();
                    batch.avail[row * n + i] = ep.avail[t][i].clone();
                }
                if t < ep.len() {
                    batch.rewards[row] = ep.rewards[t];
                    batch.terminated[row] = ep.terminated[t];
                    batch.mask[row] = 1.0;
                    for i in 0..n {
                        batch.actions[row * n + i] = ep.actions[t][i];
                    }
                }
            }
        }
        Ok(batch)
    }

    fn padded(spec: &EnvSpec, batch_size: usize, max_len: usize) -> Self {
        let (n, steps) = (spec.n_agents, max_len * batch_size);
        let obs_rows = (max_len + 1) * batch_size;
        Self {
            n_agents: n,
            n_actions: spec.n_actions,
            state_dim: spec.state_dim,
            obs_dim: spec.obs_dim,
            batch_size,
            max_len,
            lengths: vec![0; batch_size],
            states: vec![vec![0.0; spec.state_dim]; obs_rows],
            obs: vec![vec![0.0; spec.obs_dim]; obs_rows * n],
            avail: vec![vec![true; spec.n_actions]; obs_rows * n],
            actions: vec![0; steps * n],
            rewards: vec![0.0; steps],
            terminated: vec![false; steps],
            mask: vec![0.0; steps],
        }
    }

    /// Validity mask of episode `b` over the padded horizon.
    pub fn mask_row(&self, b: usize) -> Vec<f64> {
        (0..self.max_len).map(|t| self.mask[t * self.batch_size + b]).collect()
    }

    pub fn valid_steps(&self) -> f64 {
        self.mask.iter().sum()
    }

    /// Action taken by agent `i` of episode `b` at step `t - 1`, or `None` at `t = 0`.
    pub fn last_action(&self, t: usize, b: usize, i: usize) -> Option<usize> {
        (t > 0).then(|| self.actions[((t - 1) * self.batch_size + b) * self.n_agents + i])
    }

    /// Extends the horizon to `max_len` with padded steps.
    pub fn pad_to(&self, max_len: usize) -> Self {
        if max_len <= self.max_len {
            return self.clone();
        }
        let spec = EnvSpec {
            n_agents: self.n_agents,
            n_actions: self.n_actions,
            state_dim: self.state_dim,
            obs_dim: self.obs_dim,
            episode_limit: max_len,
            reward_range: (0.0, 0.0),
        };
        let mut out = Self::padded(&spec, self.batch_size, max_len);
        out.lengths = self.lengths.clone();
        let n = self.n_agents;
        let obs_rows = (self.max_len + 1) * self.batch_size;
        out.states[..obs_rows].clone_from_slice(&self.states);
        out.obs[..obs_rows * n].clone_from_slice(&self.obs);
        out.avail[..obs_rows * n].clone_from_slice(&self.avail);
        let steps = self.max_len * self.batch_size;
        out.actions[..steps * n].copy_from_slice(&self.actions);
        out.rewards[..steps].copy_from_slice(&self.rewards);
        out.terminated[..steps].copy_from_slice(&self.terminated);
        out.mask[..steps].copy_from_slice(&self.mask);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: 3,
            state_dim: 1,
            obs_dim: 2,
            episode_limit: 5,
            reward_range: (-1.0, 1.0),
        }
    }

    fn obs(v: f64) -> Observation {
        Observation {
            state: vec![v],
            obs: vec![vec![v, 0.0], vec![0.0, v]],
            avail: vec![vec![true; 3]; 2],
        }
    }

    fn episode(len: usize, tag: f64) -> Episode {
        let mut ep = Episode::start(obs(tag));
        for t in 0..len {
            let done = t + 1 == len && len < 5;
            ep.record(vec![t % 3, (t + 1) % 3], tag, done, obs(tag + t as f64 + 1.0));
        }
        ep
    }

    #[test]
    fn fifo_keeps_newest() {
        let mut spec = spec();
        spec.episode_limit = 5;
        let mut buf = ReplayBuffer::new(spec, 2).unwrap();
        assert!(buf.is_empty());
        buf.push(episode(1, 0.0)).unwrap();
        assert_eq!(buf.len(), 1);
        buf.push(episode(2, 1.0)).unwrap();
        buf.push(episode(5, 2.0)).unwrap();
        let tags: Vec<f64> = buf.episodes().map(|e| e.rewards[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0]);
    }

    #[test]
    fn malformed_episodes_are_rejected() {
        let mut buf = ReplayBuffer::new(spec(), 4).unwrap();
        let mut ep = episode(3, 0.0);
        ep.terminated[2] = false;
        assert!(matches!(buf.push(ep), Err(Error::MalformedEpisode(_))));
        let mut ep = episode(3, 0.0);
        ep.actions[0][1] = 7;
        assert!(buf.push(ep).is_err());
        let mut ep = episode(3, 0.0);
        ep.avail[1][0][ep.actions[1][0]] = false;
        assert!(buf.push(ep).is_err());
        assert!(buf.push(Episode::start(obs(0.0))).is_err());
    }

    #[test]
    fn empty_buffer_and_young_buffer_sampling() {
        let mut buf = ReplayBuffer::new(spec(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(4, &mut rng), Err(Error::EmptyBuffer)));
        buf.push(episode(2, 3.0)).unwrap();
        let batch = buf.sample(32, &mut rng).unwrap();
        assert_eq!(batch.batch_size, 32);
        assert!(batch.rewards[..32].iter().all(|&r| r == 3.0));
    }

    #[test]
    fn padding_layout_and_mask() {
        let (a, b) = (episode(3, 1.0), episode(5, 2.0));
        let batch = EpisodeBatch::from_episodes(&spec(), &[&a, &b]).unwrap();
        assert_eq!(batch.max_len, 5);
        assert_eq!(batch.mask_row(0), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(batch.mask_row(1), vec![1.0; 5]);
        assert_eq!(batch.valid_steps(), 8.0);
        // step t=4 of episode 0 is padding
        assert_eq!(batch.rewards[4 * 2], 0.0);
        assert!(batch.avail[(4 * 2) * 2].iter().all(|&x| x));
        // final bootstrap observation of episode 0 sits at t = 3
        assert_eq!(batch.states[3 * 2], vec![4.0]);
        assert!(batch.terminated[2 * 2]);
        assert_eq!(batch.last_action(0, 1, 0), None);
        assert_eq!(batch.last_action(2, 1, 1), Some(2));
    }

    #[test]
    fn pad_to_appends_neutral_steps() {
        let a = episode(2, 1.0);
        let batch = EpisodeBatch::from_episodes(&spec(), &[&a]).unwrap();
        let wide = batch.pad_to(4);
        assert_eq!(wide.max_len, 4);
        assert_eq!(wide.mask_row(0), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(wide.states[..3], batch.states[..]);
        assert_eq!(wide.pad_to(2), wide);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut spec = spec();
        spec.episode_limit = 1;
        let mut buf = ReplayBuffer::new(spec, 10).unwrap();
        for k in 0..10 {
            let mut ep = Episode::start(obs(0.0));
            ep.record(vec![0, 0], k as f64, true, obs(1.0));
            buf.push(ep).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for i in buf.sample_indices(1, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom: mean 9, sd sqrt(18)
        assert!(chi2 < 9.0 + 3.0 * 18f64.sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn without_replacement_once_full() {
        let mut buf = ReplayBuffer::new(spec(), 8).unwrap();
        for k in 0..8 {
            buf.push(episode(1, k as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = buf.sample_indices(8, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }
}
