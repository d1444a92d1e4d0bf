//! Cooperative Dec-POMDP environments with a single shared reward.

mod gather;
mod matrix;

pub use gather::{GatherConfig, GatherGrid, DOWN, LEFT, RIGHT, STAY, UP};
pub use matrix::{MatrixGame, CLIMB_PAYOFF};

use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub episode_limit: usize,
    pub reward_range: (f64, f64),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_agents,
            self.n_actions,
            self.state_dim,
            self.obs_dim,
            self.episode_limit,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("environment dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// What every agent and the centralized critic can see at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub avail: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub next: Observation,
    pub win: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;
}

/// Environment names accepted by [`make_env`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Matrix,
    Gather,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "matrix" => Ok(EnvKind::Matrix),
            "gather" => Ok(EnvKind::Gather),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Matrix => "matrix",
            EnvKind::Gather => "gather",
        }
    }
}

pub fn make_env(kind: EnvKind, gather: &GatherConfig) -> Result<Box<dyn Environment>> {
    Ok(match kind {
        EnvKind::Matrix => Box::new(MatrixGame::climb()),
        EnvKind::Gather => Box::new(GatherGrid::new(gather.clone())?),
    })
}

pub(crate) fn check_joint_action(avail: &[Vec<bool>], joint_action: &[usize]) -> Result<()> {
    if joint_action.len() != avail.len() {
        return Err(Error::Config(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            avail.len()
        )));
    }
    for (agent, (&action, mask)) in joint_action.iter().zip(avail).enumerate() {
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(Error::UnavailableAction { agent, action });
        }
    }
    Ok(())
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// All `n_actions ^ n_agents` joint actions in lexicographic order (agent 0 most significant).
pub fn enumerate_joint_actions(n_agents: usize, n_actions: usize, cap: u128) -> Result<JointActions> {
    let requested = (n_actions as u128)
        .checked_pow(n_agents as u32)
        .unwrap_or(u128::MAX);
    if requested > cap {
        return Err(Error::EnumerationCap { requested, cap });
    }
    Ok(JointActions {
        n_actions,
        next: (n_actions > 0).then(|| vec![0; n_agents]),
    })
}

pub struct JointActions {
    n_actions: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for JointActions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for slot in succ.iter_mut().rev() {
            *slot += 1;
            if *slot < self.n_actions {
                carried = false;
                break;
            }
            *slot = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_action_counts_and_order() {
        let all: Vec<_> = enumerate_joint_actions(2, 3, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[8], vec![2, 2]);

        let single: Vec<_> = enumerate_joint_actions(1, 4, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(single, vec![vec![0], vec![1], vec![2], vec![3]]);

        assert_eq!(enumerate_joint_actions(3, 2, DEFAULT_ENUMERATION_CAP).unwrap().count(), 8);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        assert!(matches!(
            enumerate_joint_actions(7, 10, DEFAULT_ENUMERATION_CAP),
            Err(Error::EnumerationCap { .. })
        ));
        assert!(enumerate_joint_actions(6, 10, DEFAULT_ENUMERATION_CAP).is_ok());
    }

    #[test]
    fn unknown_env_name_is_rejected() {
        assert!(EnvKind::parse("smac").is_err());
        assert_eq!(EnvKind::parse("gather").unwrap(), EnvKind::Gather);
    }
}
