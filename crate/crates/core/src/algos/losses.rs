//! Batched losses over a padded episode batch.
//!
//! Per-agent rows are ordered `(t, b, i)` and per-step rows `(t, b)`, so a
//! `[rows * n, 1]` column of per-agent values reshapes directly into the
//! `[rows, n]` matrix the mixer consumes. Every loss averages over the valid
//! steps only; padded steps are multiplied by a zero mask.

use rand::Rng;

use crate::algos::EntropyMixing;
use crate::autodiff::{Axis, Bound, Graph, NodeId, ParamSet, Tensor};
use crate::error::{shape_err, Result};
use crate::nets::{
    entropy_rows, expected_soft_local_q, mask_tensor, masked_log, policy_probs, sample_categorical,
    soft_expectation, Actor, AgentNetIds, AgentNetSpec, CriticStack, MixerLayout, MixingHead, PolicyDist,
    AGENT_PREFIX, MIXER_PREFIX,
};
use crate::replay::EpisodeBatch;

/// A batch converted to the dense tensors the networks consume.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    pub n_agents: usize,
    pub n_actions: usize,
    pub batch_size: usize,
    pub max_len: usize,
    /// One `[B * n, input_dim]` block per timestep `0..=T`.
    pub inputs: Vec<Tensor>,
    /// `[(T + 1) * B * n, |A|]` availability as 0/1.
    pub avail: Tensor,
    /// Boolean view of `avail`, one entry per row.
    pub avail_rows: Vec<Vec<bool>>,
    /// Stored actions, `T * B * n` entries.
    pub actions: Vec<usize>,
    /// `[T * B * n, |A|]` one-hot of the stored actions.
    pub action_onehot: Tensor,
    /// `[T * B, state_dim]`.
    pub states: Tensor,
    /// `[T * B, state_dim]` states one step later.
    pub next_states: Tensor,
    /// `[T * B, 1]` columns.
    pub rewards: Tensor,
    pub not_done: Tensor,
    pub mask: Tensor,
    /// `[T * B * n, 1]`: the step mask repeated for every agent.
    pub agent_mask: Tensor,
    /// Number of valid steps.
    pub valid: f64,
}

fn one_hot(indices: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(indices.len(), width);
    for (r, &a) in indices.iter().enumerate() {
        t.set(r, a, 1.0);
    }
    t
}

impl BatchTensors {
    pub fn new(batch: &EpisodeBatch, spec: &AgentNetSpec) -> Result<Self> {
        if batch.n_agents != spec.n_agents || batch.n_actions != spec.n_actions || batch.obs_dim != spec.obs_dim {
            return shape_err("batch_tensors", "batch does not match the agent network");
        }
        let (bsz, n, t_max) = (batch.batch_size, batch.n_agents, batch.max_len);
        let steps = t_max * bsz;
        let mut inputs = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let mut rows = Vec::with_capacity(bsz * n);
            for b in 0..bsz {
                for i in 0..n {
                    let obs = &batch.obs[(t * bsz + b) * n + i];
                    rows.push(spec.input_row(i, obs, batch.last_action(t, b, i))?);
                }
            }
            inputs.push(Tensor::from_rows(&rows));
        }
        let column = |v: Vec<f64>| Tensor::column(v);
        Ok(Self {
            n_agents: n,
            n_actions: batch.n_actions,
            batch_size: bsz,
            max_len: t_max,
            inputs,
            avail: mask_tensor(&batch.avail),
            avail_rows: batch.avail.clone(),
            actions: batch.actions.clone(),
            action_onehot: one_hot(&batch.actions, batch.n_actions),
            states: Tensor::from_rows(&batch.states[..steps]),
            next_states: Tensor::from_rows(&batch.states[bsz..]),
            rewards: column(batch.rewards.clone()),
            not_done: column(batch.terminated.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect()),
            mask: column(batch.mask.clone()),
            agent_mask: column(batch.mask.iter().flat_map(|&m| std::iter::repeat(m).take(n)).collect()),
            valid: batch.valid_steps(),
        })
    }

    /// Number of per-agent rows for the `T` transition steps.
    pub fn agent_rows(&self) -> usize {
        self.max_len * self.batch_size * self.n_agents
    }

    /// Number of per-step rows.
    pub fn step_rows(&self) -> usize {
        self.max_len * self.batch_size
    }

    fn chosen_one_hot_rows(&self, rows: &Tensor) -> Vec<f64> {
        (0..self.agent_rows())
            .map(|r| rows.get(r, self.actions[r]))
            .collect()
    }
}

/// Loss value and gradients for every entry of the parameter set it was taken against.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

fn finish(g: &mut Graph, loss: NodeId, params: &ParamSet, bound: &Bound) -> Result<LossOutput> {
    let value = g.value(loss).item();
    g.backward(loss)?;
    let grads = (0..params.len()).map(|i| g.grad(bound.id(i))).collect();
    Ok(LossOutput { value, grads })
}

/// Runs the recurrent net over the first `steps` timesteps and stacks outputs `(t, b, i)`.
fn unroll(g: &mut Graph, ids: &AgentNetIds, bt: &BatchTensors, hidden_dim: usize, steps: usize) -> Result<NodeId> {
    let mut h = g.constant(Tensor::zeros(bt.batch_size * bt.n_agents, hidden_dim));
    let mut outs = Vec::with_capacity(steps);
    for input in &bt.inputs[..steps] {
        let x = g.constant(input.clone());
        let (out, h_new) = ids.step(g, x, h)?;
        outs.push(out);
        h = h_new;
    }
    g.concat(&outs, Axis::Rows)
}

/// Local q-values of a critic for every `(t, b, i)` with `t` in `0..=T`.
pub fn critic_q_values(critic: &CriticStack, bt: &BatchTensors) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = g.bind_frozen(&critic.params);
    let ids = AgentNetIds::resolve(&critic.params, &bound, AGENT_PREFIX)?;
    let q = unroll(&mut g, &ids, bt, critic.agent.hidden_dim, bt.max_len + 1)?;
    Ok(g.value(q).clone())
}

/// Current policy over every `(t, b, i)` with `t` in `0..=T`.
#[derive(Clone, Debug)]
pub struct PolicyTensors {
    pub probs: Tensor,
    pub log_probs: Tensor,
    /// `[rows, 1]` entropy per row.
    pub entropy: Tensor,
}

pub fn policy_tensors(actor: &Actor, bt: &BatchTensors) -> Result<PolicyTensors> {
    let mut g = Graph::new();
    let bound = g.bind_frozen(&actor.params);
    let ids = AgentNetIds::resolve(&actor.params, &bound, AGENT_PREFIX)?;
    let logits = unroll(&mut g, &ids, bt, actor.spec.hidden_dim, bt.max_len + 1)?;
    let (p, _) = policy_probs(&mut g, logits, bt.avail.clone())?;
    let logp = masked_log(&mut g, p, &bt.avail)?;
    let ent = entropy_rows(&mut g, p, logp)?;
    Ok(PolicyTensors {
        probs: g.value(p).clone(),
        log_probs: g.value(logp).clone(),
        entropy: g.value(ent).clone(),
    })
}

impl PolicyTensors {
    fn dist(&self, bt: &BatchTensors, row: usize) -> PolicyDist {
        PolicyDist {
            probs: self.probs.row(row).to_vec(),
            logits: Vec::new(),
            avail: bt.avail_rows[row].clone(),
        }
    }

    /// Mean entropy over valid `(t, b, i)`.
    pub fn mean_entropy(&self, bt: &BatchTensors) -> f64 {
        let total: f64 = (0..bt.agent_rows())
            .map(|r| self.entropy.get(r, 0) * bt.agent_mask.get(r, 0))
            .sum();
        total / (bt.valid * bt.n_agents as f64)
    }
}

/// Mixes `values` (`[rows, n]`) under `states` (`[rows, state_dim]`) without tracking gradients.
pub fn mix_rows(head: &MixingHead, states: &Tensor, values: &Tensor, entropy: Option<&Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = g.bind_frozen(&head.params);
    let ids = head.layout.resolve(&head.params, &bound, "")?;
    let s = g.constant(states.clone());
    let v = g.constant(values.clone());
    let out = match entropy {
        None => head.layout.forward(&mut g, &ids, s, v)?,
        Some(h) => {
            let h = g.constant(h.clone());
            head.layout.forward_dual(&mut g, &ids, s, v, h)?
        }
    };
    Ok(g.value(out).clone())
}

fn elementwise_min(parts: &[Tensor]) -> Tensor {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out = out.zip_map(p, f64::min);
    }
    out
}

/// `y = r + gamma * (1 - done) * min_j mix_j^targ(s', [E_pi[q_j^i - alpha log pi^i]]_i)` per `(t, b)`.
///
/// The result is a plain tensor, so it carries no gradient into anything.
pub fn soft_target_value(
    bt: &BatchTensors,
    targets: &[CriticStack],
    policy: &PolicyTensors,
    alpha: f64,
    gamma: f64,
    mixing: EntropyMixing,
) -> Result<Tensor> {
    let (n, step_rows) = (bt.n_agents, bt.step_rows());
    let offset = bt.batch_size * n;
    let mut per_critic = Vec::with_capacity(targets.len());
    for critic in targets {
        let q = critic_q_values(critic, bt)?;
        let mut slots = Tensor::zeros(step_rows, n);
        let mut ent = Tensor::zeros(step_rows, n);
        for r in 0..bt.agent_rows() {
            let row = r + offset;
            let dist = policy.dist(bt, row);
            let (step, i) = (r / n, r % n);
            match mixing {
                EntropyMixing::PullThrough => slots.set(step, i, expected_soft_local_q(q.row(row), &dist, alpha)),
                EntropyMixing::Dual => {
                    slots.set(step, i, expected_soft_local_q(q.row(row), &dist, 0.0));
                    ent.set(step, i, alpha * dist.entropy());
                }
            }
        }
        let head = critic.head()?;
        let entropy = (mixing == EntropyMixing::Dual).then_some(&ent);
        per_critic.push(mix_rows(&head, &bt.next_states, &slots, entropy)?);
    }
    let next = elementwise_min(&per_critic);
    Ok(Tensor::from_vec(
        step_rows,
        1,
        (0..step_rows)
            .map(|r| bt.rewards.get(r, 0) + gamma * bt.not_done.get(r, 0) * next.get(r, 0))
            .collect(),
    ))
}

/// Masked mean squared error between `targets` and `Q_tot` at the stored joint actions.
pub fn critic_loss(bt: &BatchTensors, critic: &CriticStack, targets: &Tensor) -> Result<LossOutput> {
    if targets.shape() != (bt.step_rows(), 1) {
        return shape_err("critic_loss", format!("targets {:?}", targets.shape()));
    }
    let mut g = Graph::new();
    let bound = g.bind(&critic.params);
    let ids = AgentNetIds::resolve(&critic.params, &bound, AGENT_PREFIX)?;
    let mixer = critic.mixer.resolve(&critic.params, &bound, MIXER_PREFIX)?;
    let q = unroll(&mut g, &ids, bt, critic.agent.hidden_dim, bt.max_len)?;
    let onehot = g.constant(bt.action_onehot.clone());
    let picked = g.mul(q, onehot)?;
    let chosen = g.sum(picked, Axis::Cols)?;
    let chosen = g.reshape(chosen, bt.step_rows(), bt.n_agents)?;
    let states = g.constant(bt.states.clone());
    let q_tot = critic.mixer.forward(&mut g, &mixer, states, chosen)?;
    let y = g.constant(targets.clone());
    let diff = g.sub(y, q_tot)?;
    let sq = g.mul(diff, diff)?;
    let mask = g.constant(bt.mask.clone());
    let masked = g.mul(sq, mask)?;
    let total = g.sum_all(masked)?;
    let loss = g.scale(total, 1.0 / bt.valid)?;
    finish(&mut g, loss, &critic.params, &bound)
}

/// Builds live policy nodes for the `T` transition steps: `(probs, log_probs)`.
fn live_policy(g: &mut Graph, actor: &Actor, bound: &Bound, bt: &BatchTensors) -> Result<(NodeId, NodeId)> {
    let ids = AgentNetIds::resolve(&actor.params, bound, AGENT_PREFIX)?;
    let logits = unroll(g, &ids, bt, actor.spec.hidden_dim, bt.max_len)?;
    let avail = slice_rows(&bt.avail, bt.agent_rows());
    let (p, _) = policy_probs(g, logits, avail.clone())?;
    let logp = masked_log(g, p, &avail)?;
    Ok((p, logp))
}

fn slice_rows(t: &Tensor, rows: usize) -> Tensor {
    Tensor::from_vec(rows, t.cols(), t.data()[..rows * t.cols()].to_vec())
}

/// `-mean_{valid (b,t)} min_j mix_j(s_t, [E_pi[q_j^i - alpha log pi^i]]_i)` with critics frozen.
///
/// `q_values[j]` holds the local q-values of `heads[j]`'s critic over the batch,
/// as returned by [`critic_q_values`].
pub fn actor_loss_msac(
    bt: &BatchTensors,
    actor: &Actor,
    heads: &[MixingHead],
    q_values: &[Tensor],
    alpha: f64,
    mixing: EntropyMixing,
) -> Result<LossOutput> {
    let mut g = Graph::new();
    let bound = g.bind(&actor.params);
    let (p, logp) = live_policy(&mut g, actor, &bound, bt)?;
    let states = g.constant(bt.states.clone());
    let (rows, n) = (bt.step_rows(), bt.n_agents);
    let mut values = Vec::with_capacity(heads.len());
    for (head, q) in heads.iter().zip(q_values) {
        let hb = g.bind_frozen(&head.params);
        let mixer = head.layout.resolve(&head.params, &hb, "")?;
        let q = g.constant(slice_rows(q, bt.agent_rows()));
        let v = match mixing {
            EntropyMixing::PullThrough => {
                let soft = soft_expectation(&mut g, p, q, logp, alpha)?;
                let soft = g.reshape(soft, rows, n)?;
                head.layout.forward(&mut g, &mixer, states, soft)?
            }
            EntropyMixing::Dual => {
                let eq = soft_expectation(&mut g, p, q, logp, 0.0)?;
                let eq = g.reshape(eq, rows, n)?;
                let h = entropy_rows(&mut g, p, logp)?;
                let h = g.scale(h, alpha)?;
                let h = g.reshape(h, rows, n)?;
                head.layout.forward_dual(&mut g, &mixer, states, eq, h)?
            }
        };
        values.push(v);
    }
    let mut v = values[0];
    for &other in &values[1..] {
        v = g.min2(v, other)?;
    }
    let mask = g.constant(bt.mask.clone());
    let masked = g.mul(v, mask)?;
    let total = g.sum_all(masked)?;
    let loss = g.scale(total, -1.0 / bt.valid)?;
    finish(&mut g, loss, &actor.params, &bound)
}

/// Stacks per-agent rows so row `(t, b, i)` holds the stored-action q-values of
/// every agent at `(t, b)`, with agent `i`'s slot replaced by `slot[(t, b, i)]`.
fn slot_matrix(bt: &BatchTensors, chosen: &[f64], slot: &[f64]) -> Tensor {
    let n = bt.n_agents;
    let mut out = Tensor::zeros(bt.agent_rows(), n);
    for r in 0..bt.agent_rows() {
        let (step, i) = (r / n, r % n);
        for k in 0..n {
            out.set(r, k, if k == i { slot[r] } else { chosen[step * n + k] });
        }
    }
    out
}

fn repeat_states(bt: &BatchTensors) -> Tensor {
    let s = bt.states.cols();
    let mut data = Vec::with_capacity(bt.agent_rows() * s);
    for r in 0..bt.step_rows() {
        for _ in 0..bt.n_agents {
            data.extend_from_slice(bt.states.row(r));
        }
    }
    Tensor::from_vec(bt.agent_rows(), s, data)
}

/// Counterfactual baselines `min_j mix_j(s, slot_i = E_pi[q_j^i], slot_-i = q_j^-i(a^-i))`,
/// one per `(t, b, i)`, as a `[T * B * n, 1]` column.
pub fn counterfactual_baselines(
    bt: &BatchTensors,
    heads: &[MixingHead],
    q_values: &[Tensor],
    policy: &PolicyTensors,
) -> Result<Tensor> {
    let states = repeat_states(bt);
    let mut per_critic = Vec::with_capacity(heads.len());
    for (head, q) in heads.iter().zip(q_values) {
        let chosen = bt.chosen_one_hot_rows(q);
        let expected: Vec<f64> = (0..bt.agent_rows())
            .map(|r| expected_soft_local_q(q.row(r), &policy.dist(bt, r), 0.0))
            .collect();
        per_critic.push(mix_rows(head, &states, &slot_matrix(bt, &chosen, &expected), None)?);
    }
    Ok(elementwise_min(&per_critic))
}

/// Sampled counterfactual actions and their advantages, rows `(t, b, i)`.
#[derive(Clone, Debug)]
pub struct Counterfactual {
    pub sampled: Vec<usize>,
    pub advantages: Tensor,
    pub baselines: Tensor,
}

/// `A^i = -alpha log pi^i(a~^i) + min_j Q_tot,j(s, (a~^i, a^-i)) - baseline^i`,
/// with `a~^i` drawn from the current policy and `a^-i` taken from the batch.
pub fn counterfactual_advantage(
    bt: &BatchTensors,
    heads: &[MixingHead],
    q_values: &[Tensor],
    policy: &PolicyTensors,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Counterfactual> {
    let rows = bt.agent_rows();
    let sampled: Vec<usize> = (0..rows)
        .map(|r| sample_categorical(policy.probs.row(r), &bt.avail_rows[r], rng))
        .collect();
    let states = repeat_states(bt);
    let mut q_tot = Vec::with_capacity(heads.len());
    for (head, q) in heads.iter().zip(q_values) {
        let chosen = bt.chosen_one_hot_rows(q);
        let slot: Vec<f64> = (0..rows).map(|r| q.get(r, sampled[r])).collect();
        q_tot.push(mix_rows(head, &states, &slot_matrix(bt, &chosen, &slot), None)?);
    }
    let q_tot = elementwise_min(&q_tot);
    let baselines = counterfactual_baselines(bt, heads, q_values, policy)?;
    let advantages = Tensor::from_vec(
        rows,
        1,
        (0..rows)
            .map(|r| {
                let entropy_term = if alpha == 0.0 { 0.0 } else { -alpha * policy.log_probs.get(r, sampled[r]) };
                entropy_term + q_tot.get(r, 0) - baselines.get(r, 0)
            })
            .collect(),
    );
    Ok(Counterfactual {
        sampled,
        advantages,
        baselines,
    })
}

/// `-mean_{i, valid (b,t)} log pi^i(a~^i) A^i` with the advantages held fixed.
pub fn actor_loss_mcsac(bt: &BatchTensors, actor: &Actor, sampled: &[usize], advantages: &Tensor) -> Result<LossOutput> {
    if sampled.len() != bt.agent_rows() || advantages.shape() != (bt.agent_rows(), 1) {
        return shape_err("actor_loss_mcsac", "advantages do not match the batch");
    }
    let mut g = Graph::new();
    let bound = g.bind(&actor.params);
    let (_, logp) = live_policy(&mut g, actor, &bound, bt)?;
    let onehot = g.constant(one_hot(sampled, bt.n_actions));
    let picked = g.mul(logp, onehot)?;
    let lp = g.sum(picked, Axis::Cols)?;
    let weights = g.constant(advantages.zip_map(&bt.agent_mask, |a, m| a * m));
    let weighted = g.mul(lp, weights)?;
    let total = g.sum_all(weighted)?;
    let loss = g.scale(total, -1.0 / (bt.valid * bt.n_agents as f64))?;
    finish(&mut g, loss, &actor.params, &bound)
}

/// `alpha * mean_{i, valid (b,t)} (H(pi^i) - H_target)` with `alpha = exp(log_alpha)`.
///
/// `log_alpha` must hold a single `1 x 1` entry; `entropy` is a per-row column
/// covering at least the `T` transition steps.
pub fn alpha_loss(bt: &BatchTensors, log_alpha: &ParamSet, entropy: &Tensor, target_entropy: f64) -> Result<LossOutput> {
    if log_alpha.len() != 1 || log_alpha.value(0).shape() != (1, 1) {
        return shape_err("alpha_loss", "log_alpha must be a single scalar entry");
    }
    let gap: f64 = (0..bt.agent_rows())
        .map(|r| (entropy.get(r, 0) - target_entropy) * bt.agent_mask.get(r, 0))
        .sum::<f64>()
        / (bt.valid * bt.n_agents as f64);
    let mut g = Graph::new();
    let bound = g.bind(log_alpha);
    let alpha = g.exp(bound.id(0))?;
    let loss = g.scale(alpha, gap)?;
    finish(&mut g, loss, log_alpha, &bound)
}

/// `y = r + gamma * (1 - done) * mix^targ(s', [max_a q_targ^i(a)]_i)`.
pub fn qmix_target(bt: &BatchTensors, target: &CriticStack, gamma: f64) -> Result<Tensor> {
    let q = critic_q_values(target, bt)?;
    let (n, offset) = (bt.n_agents, bt.batch_size * bt.n_agents);
    let mut best = Tensor::zeros(bt.step_rows(), n);
    for r in 0..bt.agent_rows() {
        let row = r + offset;
        let m = q
            .row(row)
            .iter()
            .zip(&bt.avail_rows[row])
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        best.set(r / n, r % n, m);
    }
    let next = mix_rows(&target.head()?, &bt.next_states, &best, None)?;
    Ok(Tensor::from_vec(
        bt.step_rows(),
        1,
        (0..bt.step_rows())
            .map(|r| bt.rewards.get(r, 0) + gamma * bt.not_done.get(r, 0) * next.get(r, 0))
            .collect(),
    ))
}

pub fn qmix_td_loss(bt: &BatchTensors, critic: &CriticStack, target: &CriticStack, gamma: f64) -> Result<LossOutput> {
    critic_loss(bt, critic, &qmix_target(bt, target, gamma)?)
}

/// Parameter-free check that a batch's layout fits a mixer.
pub fn check_mixer(bt: &BatchTensors, layout: &MixerLayout) -> Result<()> {
    if layout.n_agents != bt.n_agents || layout.state_dim != bt.states.cols() {
        return shape_err("mixer", "layout does not match the batch");
    }
    Ok(())
}
