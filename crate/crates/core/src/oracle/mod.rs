//! Brute-force reference computations.
//!
//! Everything here evaluates the mixing head straight from its weight
//! matrices with plain loops and enumerates joint actions itself, so it never
//! runs through the graph code it is used to verify.

pub mod checks;

use rand::Rng;

use crate::autodiff::{ParamSet, Tensor};
use crate::envs::{EnvSpec, Environment, Observation};
use crate::error::{Error, Result};
use crate::nets::{CriticStack, MixerKind, MixingHead};
use crate::replay::{Episode, EpisodeBatch};

/// Limits and tolerances for the oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumerationBudget {
    pub max_joint_actions: u128,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub fd_rel_tol: f64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_joint_actions: 1_000_000,
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            fd_rel_tol: 1e-4,
        }
    }
}

fn entry<'a>(head: &'a MixingHead, name: &str) -> &'a Tensor {
    head.params
        .get(name)
        .unwrap_or_else(|| panic!("mixing head lacks `{name}`"))
}

/// `x^T W + b` for a single state, written out.
fn affine_row(state: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|c| b.get(0, c) + (0..w.rows()).map(|r| state[r] * w.get(r, c)).sum::<f64>())
        .collect()
}

/// Effective nonnegative per-agent weights `|k_i(s)|` of a linear head.
pub fn direct_weights(head: &MixingHead, state: &[f64]) -> Vec<f64> {
    affine_row(state, entry(head, "k.w"), entry(head, "k.b"))
        .into_iter()
        .map(f64::abs)
        .collect()
}

/// Effective entropy-channel weights `|k2_i(s)|` of a dual head.
pub fn direct_entropy_weights(head: &MixingHead, state: &[f64]) -> Vec<f64> {
    affine_row(state, entry(head, "k2.w"), entry(head, "k2.b"))
        .into_iter()
        .map(f64::abs)
        .collect()
}

/// State-dependent bias `b(s)`.
pub fn direct_bias(head: &MixingHead, state: &[f64]) -> f64 {
    affine_row(state, entry(head, "b.w"), entry(head, "b.b"))[0]
}

/// Joint value of per-agent values under a head, evaluated from the raw weights.
pub fn direct_mix(head: &MixingHead, state: &[f64], values: &[f64]) -> f64 {
    let bias = direct_bias(head, state);
    match head.layout.kind {
        MixerKind::Linear => {
            let k = direct_weights(head, state);
            k.iter().zip(values).map(|(k, v)| k * v).sum::<f64>() + bias
        }
        MixerKind::Stacked { width } => {
            let w1 = affine_row(state, entry(head, "w1.w"), entry(head, "w1.b"));
            let b1 = affine_row(state, entry(head, "b1.w"), entry(head, "b1.b"));
            let w2 = affine_row(state, entry(head, "w2.w"), entry(head, "w2.b"));
            let mut out = bias;
            for j in 0..width {
                let hidden = b1[j] + values.iter().enumerate().map(|(i, v)| w1[i * width + j].abs() * v).sum::<f64>();
                out += w2[j].abs() * hidden;
            }
            out
        }
    }
}

/// Calls `visit` on every joint action of agents with `sizes[i]` actions each.
fn for_each_joint(sizes: &[usize], budget: &EnumerationBudget, mut visit: impl FnMut(&[usize])) -> Result<()> {
    let requested = sizes.iter().fold(1u128, |acc, &s| acc.saturating_mul(s as u128));
    if requested > budget.max_joint_actions {
        return Err(Error::EnumerationCap {
            requested,
            cap: budget.max_joint_actions,
        });
    }
    if sizes.iter().any(|&s| s == 0) {
        return Ok(());
    }
    let mut joint = vec![0usize; sizes.len()];
    loop {
        visit(&joint);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            joint[k] += 1;
            if joint[k] < sizes[k] {
                break;
            }
            joint[k] = 0;
        }
    }
}

/// `sum_a prod_i pi^i(a^i) * Q_tot(s, [q^i(a^i)]_i)` by enumeration.
pub fn brute_expected_qtot(
    head: &MixingHead,
    state: &[f64],
    q: &[Vec<f64>],
    dists: &[Vec<f64>],
    budget: &EnumerationBudget,
) -> Result<f64> {
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let mut total = 0.0;
    for_each_joint(&sizes, budget, |a| {
        let p: f64 = a.iter().enumerate().map(|(i, &ai)| dists[i][ai]).product();
        if p > 0.0 {
            let values: Vec<f64> = a.iter().enumerate().map(|(i, &ai)| q[i][ai]).collect();
            total += p * direct_mix(head, state, &values);
        }
    })?;
    Ok(total)
}

/// `sum_a pi(a) [Q_tot(s, a) - alpha log pi(a)]` with `pi(a) = prod_i pi^i(a^i)`, by enumeration.
pub fn brute_soft_expected_qtot(
    head: &MixingHead,
    state: &[f64],
    q: &[Vec<f64>],
    dists: &[Vec<f64>],
    alpha: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let mut total = 0.0;
    for_each_joint(&sizes, budget, |a| {
        let p: f64 = a.iter().enumerate().map(|(i, &ai)| dists[i][ai]).product();
        if p > 0.0 {
            let values: Vec<f64> = a.iter().enumerate().map(|(i, &ai)| q[i][ai]).collect();
            total += p * (direct_mix(head, state, &values) - alpha * p.ln());
        }
    })?;
    Ok(total)
}

/// Enumerated per-agent soft mixing:
/// `sum_a pi(a) [sum_i |k_i| (q^i(a^i) - alpha log pi^i(a^i)) + b]`.
pub fn brute_pull_through(
    head: &MixingHead,
    state: &[f64],
    q: &[Vec<f64>],
    dists: &[Vec<f64>],
    alpha: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let k = direct_weights(head, state);
    let b = direct_bias(head, state);
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let mut total = 0.0;
    for_each_joint(&sizes, budget, |a| {
        let p: f64 = a.iter().enumerate().map(|(i, &ai)| dists[i][ai]).product();
        if p > 0.0 {
            let inner: f64 = a
                .iter()
                .enumerate()
                .map(|(i, &ai)| k[i] * (q[i][ai] - alpha * dists[i][ai].ln()))
                .sum();
            total += p * (inner + b);
        }
    })?;
    Ok(total)
}

/// Enumerated dual mixing:
/// `sum_a pi(a) [sum_i |k1_i| q^i(a^i) + b + alpha sum_i |k2_i| (-log pi^i(a^i))]`.
pub fn brute_dual(
    head: &MixingHead,
    state: &[f64],
    q: &[Vec<f64>],
    dists: &[Vec<f64>],
    alpha: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let k1 = direct_weights(head, state);
    let k2 = direct_entropy_weights(head, state);
    let b = direct_bias(head, state);
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let mut total = 0.0;
    for_each_joint(&sizes, budget, |a| {
        let p: f64 = a.iter().enumerate().map(|(i, &ai)| dists[i][ai]).product();
        if p > 0.0 {
            let inner: f64 = a
                .iter()
                .enumerate()
                .map(|(i, &ai)| k1[i] * q[i][ai] - alpha * k2[i] * dists[i][ai].ln())
                .sum();
            total += p * (inner + b);
        }
    })?;
    Ok(total)
}

/// Per-step inputs of one agent: observation and the previous action.
pub type AgentHistory = Vec<(Vec<f64>, Option<usize>)>;

/// Local q-vector at the end of `history`, stepping the network one input at a time.
pub fn local_q_at(critic: &CriticStack, agent: usize, history: &AgentHistory) -> Result<Vec<f64>> {
    let mut h = vec![0.0; critic.agent.hidden_dim];
    let mut q = Vec::new();
    for (obs, last) in history {
        let (qv, hv) = critic.agent_q_forward(agent, obs, *last, &h)?;
        q = qv;
        h = hv;
    }
    Ok(q)
}

/// `min_j sum_a' pi^i(a') Q_tot,j(s, (a', a^-i))`, evaluating every critic and
/// every alternative action directly.
pub fn brute_counterfactual_baseline(
    critics: &[CriticStack],
    state: &[f64],
    histories: &[AgentHistory],
    agent: usize,
    policy: &[f64],
    joint_action: &[usize],
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for critic in critics {
        let head = critic.head()?;
        let q: Vec<Vec<f64>> = (0..histories.len())
            .map(|i| local_q_at(critic, i, &histories[i]))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for (alt, &p) in policy.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let values: Vec<f64> = (0..q.len())
                .map(|k| if k == agent { q[k][alt] } else { q[k][joint_action[k]] })
                .collect();
            total += p * direct_mix(&head, state, &values);
        }
        best = best.min(total);
    }
    Ok(best)
}

/// Central differences `(f(p + eps e) - f(p - eps e)) / (2 eps)` for every scalar of `params`.
pub fn finite_difference_gradients(
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    eps: f64,
) -> Result<Vec<Tensor>> {
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for e in 0..params.len() {
        let mut g = Tensor::zeros(params.value(e).rows(), params.value(e).cols());
        for k in 0..params.value(e).len() {
            let orig = work.value(e).data()[k];
            work.value_mut(e).data_mut()[k] = orig + eps;
            let plus = f(&work)?;
            work.value_mut(e).data_mut()[k] = orig - eps;
            let minus = f(&work)?;
            work.value_mut(e).data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at entry {} index {k}", params.names()[e])));
            }
            g.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest per-entry relative error `|a - b| / max(|a|, |b|, floor)` in Euclidean norm.
pub fn gradient_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x.zip_map(y, |u, v| u - v).norm();
            diff / x.norm().max(y.norm()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Exhaustive argmax over the joint actions of a one-step game; ties keep the
/// lexicographically first joint action.
pub fn matrix_game_optimum(env: &mut dyn Environment) -> Result<(Vec<usize>, f64)> {
    let spec = env.spec().clone();
    let sizes = vec![spec.n_actions; spec.n_agents];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut failure = None;
    for_each_joint(&sizes, &EnumerationBudget::default(), |a| {
        env.reset(0);
        match env.step(a) {
            Ok(step) => {
                if best.as_ref().map_or(true, |(_, r)| step.reward > *r) {
                    best = Some((a.to_vec(), step.reward));
                }
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    best.ok_or_else(|| Error::Config("game has no joint actions".into()))
}

/// Random availability row with at least one legal action.
fn random_avail(n_actions: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut row: Vec<bool> = (0..n_actions).map(|_| rng.gen_bool(0.75)).collect();
    if !row.iter().any(|&a| a) {
        row[rng.gen_range(0..n_actions)] = true;
    }
    row
}

fn random_observation(spec: &EnvSpec, rng: &mut impl Rng) -> Observation {
    Observation {
        state: (0..spec.state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        obs: (0..spec.n_agents)
            .map(|_| (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        avail: (0..spec.n_agents).map(|_| random_avail(spec.n_actions, rng)).collect(),
    }
}

/// A synthetic valid episode of `len` steps with random content and masks.
pub fn random_episode(spec: &EnvSpec, len: usize, rng: &mut impl Rng) -> Episode {
    let mut current = random_observation(spec, rng);
    let mut ep = Episode::start(current.clone());
    for t in 0..len {
        let actions: Vec<usize> = current
            .avail
            .iter()
            .map(|mask| {
                let legal: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
                legal[rng.gen_range(0..legal.len())]
            })
            .collect();
        let last = t + 1 == len;
        let terminated = last && (len < spec.episode_limit || rng.gen_bool(0.5));
        let next = random_observation(spec, rng);
        ep.record(actions, rng.gen_range(-2.0..2.0), terminated, next.clone());
        current = next;
    }
    ep
}

/// A padded batch of random episodes with the given lengths.
pub fn random_batch(spec: &EnvSpec, lengths: &[usize], rng: &mut impl Rng) -> Result<EpisodeBatch> {
    let episodes: Vec<Episode> = lengths.iter().map(|&l| random_episode(spec, l, rng)).collect();
    for ep in &episodes {
        ep.validate(spec)?;
    }
    let refs: Vec<&Episode> = episodes.iter().collect();
    EpisodeBatch::from_episodes(spec, &refs)
}

/// Agent histories `(obs, last action)` of episode `b` up to and including step `t`.
pub fn batch_histories(batch: &EpisodeBatch, b: usize, t: usize) -> Vec<AgentHistory> {
    let (bsz, n) = (batch.batch_size, batch.n_agents);
    (0..n)
        .map(|i| {
            (0..=t)
                .map(|s| (batch.obs[(s * bsz + b) * n + i].clone(), batch.last_action(s, b, i)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::MatrixGame;
    use crate::nets::MixerLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_dists_pick_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = MixingHead::random(MixerLayout::linear(2, 2), &mut rng).unwrap();
        let s = [0.3, -0.4];
        let q = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]];
        let d = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let got = brute_expected_qtot(&head, &s, &q, &d, &EnumerationBudget::default()).unwrap();
        assert!((got - direct_mix(&head, &s, &[2.0, 4.0])).abs() < 1e-14);
    }

    #[test]
    fn vdn_uniform_gives_sum_of_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = MixingHead::random(MixerLayout::linear(2, 1), &mut rng).unwrap();
        head.set_identity().unwrap();
        let q = vec![vec![1.0, 2.0, 6.0], vec![0.0, 4.0]];
        let d = vec![vec![1.0 / 3.0; 3], vec![0.5; 2]];
        let got = brute_expected_qtot(&head, &[0.7], &q, &d, &EnumerationBudget::default()).unwrap();
        assert!((got - 5.0).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = MixingHead::random(MixerLayout::linear(3, 1), &mut rng).unwrap();
        let budget = EnumerationBudget {
            max_joint_actions: 26,
            ..Default::default()
        };
        let q = vec![vec![0.0; 3]; 3];
        let d = vec![vec![1.0 / 3.0; 3]; 3];
        assert!(matches!(
            brute_expected_qtot(&head, &[0.0], &q, &d, &budget),
            Err(Error::EnumerationCap { requested: 27, cap: 26 })
        ));
    }

    #[test]
    fn counterfactual_uniform_two_actions_averages() {
        // Q_tot values {1, 3} for the two alternatives of agent 0 under a VDN head.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = crate::nets::AgentNetSpec {
            obs_dim: 1,
            n_actions: 2,
            n_agents: 2,
            hidden_dim: 2,
        };
        let mut critic = CriticStack::new(
            spec,
            MixerLayout::linear(2, 1),
            0.0,
            crate::autodiff::RmsPropConfig::default(),
            &mut rng,
        )
        .unwrap();
        for i in 0..critic.params.len() {
            critic.params.value_mut(i).fill(0.0);
        }
        critic.params.get_mut("agent.fc2.b").unwrap().data_mut().copy_from_slice(&[1.0, 3.0]);
        critic.params.get_mut("mixer.k.b").unwrap().fill(1.0);
        let hist: Vec<AgentHistory> = vec![vec![(vec![0.0], None)]; 2];
        // other agent fixed at action 0 contributes q = 1; subtract it to leave {1, 3}
        let got = brute_counterfactual_baseline(&[critic], &[0.0], &hist, 0, &[0.5, 0.5], &[0, 0]).unwrap();
        assert!((got - 1.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let mut p = ParamSet::new(0.0, Default::default());
        p.insert("p", Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let g = finite_difference_gradients(|p| Ok(p.value(0).data().iter().map(|v| v * v).sum()), &p, 1e-4).unwrap();
        assert!((g[0].data()[0] - 2.0).abs() < 1e-9 && (g[0].data()[1] - 4.0).abs() < 1e-9);
        let g = finite_difference_gradients(|_| Ok(3.0), &p, 1e-4).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
        assert!(finite_difference_gradients(|_| Ok(f64::NAN), &p, 1e-4).is_err());
    }

    #[test]
    fn matrix_optimum_cases() {
        let mut env = MatrixGame::climb();
        assert_eq!(matrix_game_optimum(&mut env).unwrap(), (vec![0, 0], 11.0));
        let mut flat = MatrixGame::with_payoff(vec![vec![2.0; 3]; 3]);
        assert_eq!(matrix_game_optimum(&mut flat).unwrap(), (vec![0, 0], 2.0));
        let neg: Vec<Vec<f64>> = crate::envs::CLIMB_PAYOFF
            .iter()
            .map(|r| r.iter().map(|v| -v).collect())
            .collect();
        let mut negated = MatrixGame::with_payoff(neg);
        assert_eq!(matrix_game_optimum(&mut negated).unwrap(), (vec![0, 1], 30.0));
    }
}
