use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::Result;
use crate::nets::{argmax_available, Actor, CriticStack, RecurrentState};

/// Read-only parameters used to act during evaluation.
#[derive(Clone, Debug)]
pub enum Policy {
    /// A softmax actor (greedy = most probable action).
    Actor(Actor),
    /// Local q-networks of a value-based learner (greedy = largest q).
    Values(CriticStack),
}

/// Summary of one evaluation round.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    /// Training episode after which the round ran.
    pub episode: usize,
    pub n_episodes: usize,
    pub mean_return: f64,
    pub win_rate: f64,
    pub mean_length: f64,
    pub greedy: bool,
}

/// Plays one episode per seed. Returns are summed raw environment rewards.
///
/// Non-greedy evaluation samples actions with a generator seeded from the
/// episode seed, so repeated calls agree exactly.
pub fn evaluate(policy: &Policy, env: &mut dyn Environment, seeds: &[u64], greedy: bool, episode: usize) -> Result<EvalRecord> {
    let spec = env.spec().clone();
    let (mut total_return, mut wins, mut total_len) = (0.0, 0usize, 0usize);
    for &seed in seeds {
        let mut obs = env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net_spec, mut hidden) = match policy {
            Policy::Actor(a) => (a.spec, RecurrentState::zeros(&a.spec)),
            Policy::Values(c) => (c.agent, RecurrentState::zeros(&c.agent)),
        };
        let mut last = vec![None; spec.n_agents];
        loop {
            let inputs = net_spec.joint_inputs(&obs.obs, &last)?;
            let actions: Vec<usize> = match policy {
                Policy::Actor(a) => {
                    let (dists, next) = a.step(&inputs, &hidden, &obs.avail)?;
                    hidden = next;
                    dists
                        .iter()
                        .map(|d| if greedy { d.greedy() } else { d.sample(&mut rng) })
                        .collect()
                }
                Policy::Values(c) => {
                    let (q, next) = c.q_step(&inputs, &hidden)?;
                    hidden = next;
                    (0..spec.n_agents).map(|i| argmax_available(q.row(i), &obs.avail[i])).collect()
                }
            };
            let step = env.step(&actions)?;
            total_return += step.reward;
            total_len += 1;
            last = actions.into_iter().map(Some).collect();
            obs = step.next;
            if step.terminated || step.truncated {
                wins += usize::from(step.win);
                break;
            }
        }
    }
    let n = seeds.len().max(1) as f64;
    Ok(EvalRecord {
        episode,
        n_episodes: seeds.len(),
        mean_return: total_return / n,
        win_rate: wins as f64 / n,
        mean_length: total_len as f64 / n,
        greedy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::RmsPropConfig;
    use crate::envs::{MatrixGame, CLIMB_PAYOFF};
    use crate::nets::AgentNetSpec;

    fn matrix_actor(bias: [f64; 3]) -> Actor {
        let spec = AgentNetSpec {
            obs_dim: 2,
            n_actions: 3,
            n_agents: 2,
            hidden_dim: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut actor = Actor::new(spec, 0.0, RmsPropConfig::default(), &mut rng).unwrap();
        for i in 0..actor.params.len() {
            actor.params.value_mut(i).fill(0.0);
        }
        actor.params.get_mut("agent.fc2.b").unwrap().data_mut().copy_from_slice(&bias);
        actor
    }

    #[test]
    fn optimal_fixed_policy_wins_every_time() {
        let policy = Policy::Actor(matrix_actor([5.0, 0.0, 0.0]));
        let mut env = MatrixGame::climb();
        let seeds: Vec<u64> = (0..20).collect();
        let rec = evaluate(&policy, &mut env, &seeds, true, 100).unwrap();
        assert_eq!(rec.mean_return, 11.0);
        assert_eq!(rec.win_rate, 1.0);
        assert_eq!(rec.mean_length, 1.0);
        assert_eq!(evaluate(&policy, &mut env, &seeds, true, 100).unwrap(), rec);
    }

    #[test]
    fn uniform_policy_return_matches_payoff_mean() {
        let policy = Policy::Actor(matrix_actor([0.0; 3]));
        let mut env = MatrixGame::climb();
        let cells: Vec<f64> = CLIMB_PAYOFF.iter().flatten().copied().collect();
        let mean = cells.iter().sum::<f64>() / 9.0;
        let var = cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((mean + 3.444).abs() < 1e-3);
        let seeds: Vec<u64> = (0..1000).map(|k| 10_000 + k).collect();
        let rec = evaluate(&policy, &mut env, &seeds, false, 0).unwrap();
        let sigma = (var / 1000.0).sqrt();
        assert!((rec.mean_return - mean).abs() < 3.0 * sigma, "{} vs {mean}", rec.mean_return);
    }
}
