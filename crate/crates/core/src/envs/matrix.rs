use super::{check_joint_action, EnvSpec, Environment, Observation, StepResult};
use crate::error::{Error, Result};

/// Climb-structured payoffs: rows are agent 0's action, columns agent 1's.
pub const CLIMB_PAYOFF: [[f64; 3]; 3] = [[11.0, -30.0, 0.0], [-30.0, 7.0, 6.0], [0.0, 0.0, 5.0]];

/// Stateless one-step two-player cooperative game.
///
/// The global state is the constant `[1.0]` and each agent observes its own
/// id as a one-hot vector. A step counts as a win when it earns the
/// largest payoff in the matrix.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    payoff: Vec<Vec<f64>>,
    spec: EnvSpec,
    best: f64,
    done: bool,
}

impl MatrixGame {
    pub fn climb() -> Self {
        Self::with_payoff(CLIMB_PAYOFF.iter().map(|r| r.to_vec()).collect())
    }

    /// Square two-player payoff matrix. Panics on an empty or ragged matrix.
    pub fn with_payoff(payoff: Vec<Vec<f64>>) -> Self {
        let n_actions = payoff.len();
        assert!(n_actions > 0 && payoff.iter().all(|r| r.len() == n_actions));
        let best = payoff.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = payoff.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        Self {
            spec: EnvSpec {
                n_agents: 2,
                n_actions,
                state_dim: 1,
                obs_dim: 2,
                episode_limit: 1,
                reward_range: (worst, best),
            },
            payoff,
            best,
            done: false,
        }
    }

    pub fn payoff(&self) -> &[Vec<f64>] {
        &self.payoff
    }

    fn observation(&self) -> Observation {
        Observation {
            state: vec![1.0],
            obs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            avail: vec![vec![true; self.spec.n_actions]; 2],
        }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.done = false;
        self.observation()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        check_joint_action(&self.observation().avail, joint_action)?;
        let reward = self.payoff[joint_action[0]][joint_action[1]];
        self.done = true;
        Ok(StepResult {
            reward,
            terminated: true,
            truncated: false,
            next: self.observation(),
            win: reward == self.best,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_constant_state_with_id_observations() {
        let mut env = MatrixGame::climb();
        let o = env.reset(0);
        assert_eq!(o.state, vec![1.0]);
        assert_eq!(o.obs, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(o.avail.iter().flatten().all(|&a| a));
    }

    #[test]
    fn payoffs_and_termination() {
        let mut env = MatrixGame::climb();
        env.reset(0);
        let r = env.step(&[0, 0]).unwrap();
        assert_eq!(r.reward, 11.0);
        assert!(r.terminated && r.win);
        assert!(matches!(env.step(&[0, 0]), Err(Error::EpisodeOver)));

        env.reset(1);
        let r = env.step(&[1, 0]).unwrap();
        assert_eq!(r.reward, -30.0);
        assert!(r.terminated && !r.win);
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let mut env = MatrixGame::climb();
        env.reset(0);
        assert!(matches!(
            env.step(&[0, 3]),
            Err(Error::UnavailableAction { agent: 1, action: 3 })
        ));
    }
}
