//! Recurrent agent networks, clamp+softmax policies, and the hypernetwork mixing head.

mod agent;
pub mod checkpoint;
mod mixer;
mod policy;

pub use agent::{init_agent_net, AgentNetIds, AgentNetSpec, RecurrentState, DEFAULT_HIDDEN_DIM};
pub use mixer::{MixerIds, MixerKind, MixerLayout, MixingHead};
pub use policy::{
    argmax_available, entropy_rows, expected_soft_local_q, mask_tensor, masked_log, policy_probs,
    sample_categorical, soft_expectation, PolicyDist, LOGIT_MAX, LOGIT_MIN,
};

use rand::Rng;

use crate::autodiff::{Graph, ParamSet, RmsPropConfig, Tensor};
use crate::error::{shape_err, Error, Result};

pub const AGENT_PREFIX: &str = "agent.";
pub const MIXER_PREFIX: &str = "mixer.";

/// Decentralized actor: one parameter set shared by every agent.
#[derive(Clone, Debug)]
pub struct Actor {
    pub spec: AgentNetSpec,
    pub params: ParamSet,
}

impl Actor {
    pub fn new(spec: AgentNetSpec, learning_rate: f64, rms: RmsPropConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new(learning_rate, rms);
        init_agent_net(&mut params, AGENT_PREFIX, &spec, rng)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: AgentNetSpec, params: ParamSet) -> Result<Self> {
        let mut g = Graph::new();
        let bound = g.bind_frozen(&params);
        AgentNetIds::resolve(&params, &bound, AGENT_PREFIX)?;
        Ok(Self { spec, params })
    }

    /// Policy and next hidden state for every agent at one timestep.
    pub fn step(
        &self,
        inputs: &Tensor,
        hidden: &RecurrentState,
        avail: &[Vec<bool>],
    ) -> Result<(Vec<PolicyDist>, RecurrentState)> {
        let mut g = Graph::new();
        let bound = g.bind_frozen(&self.params);
        let ids = AgentNetIds::resolve(&self.params, &bound, AGENT_PREFIX)?;
        let x = g.constant(inputs.clone());
        let h = g.constant(hidden.h.clone());
        let (logits, h_new) = ids.step(&mut g, x, h)?;
        let raw = g.value(logits).clone();
        let dists = avail
            .iter()
            .enumerate()
            .map(|(i, mask)| PolicyDist::from_logits(raw.row(i), mask))
            .collect::<Result<Vec<_>>>()?;
        Ok((dists, RecurrentState { h: g.value(h_new).clone() }))
    }

    /// Single-agent view of [`Actor::step`].
    pub fn policy_forward(
        &self,
        agent_id: usize,
        obs: &[f64],
        last_action: Option<usize>,
        h: &[f64],
        avail: &[bool],
    ) -> Result<(PolicyDist, Vec<f64>)> {
        if h.len() != self.spec.hidden_dim {
            return shape_err("policy_forward", format!("hidden len {}", h.len()));
        }
        let input = Tensor::row_vector(self.spec.input_row(agent_id, obs, last_action)?);
        let hidden = RecurrentState {
            h: Tensor::row_vector(h.to_vec()),
        };
        let (mut dists, next) = self.step(&input, &hidden, &[avail.to_vec()])?;
        Ok((dists.remove(0), next.h.into_vec()))
    }
}

/// Local Q networks (shared across agents) plus the mixing head, in one parameter set.
#[derive(Clone, Debug)]
pub struct CriticStack {
    pub agent: AgentNetSpec,
    pub mixer: MixerLayout,
    pub params: ParamSet,
}

impl CriticStack {
    pub fn new(
        agent: AgentNetSpec,
        mixer: MixerLayout,
        learning_rate: f64,
        rms: RmsPropConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParamSet::new(learning_rate, rms);
        init_agent_net(&mut params, AGENT_PREFIX, &agent, rng)?;
        mixer.init(&mut params, MIXER_PREFIX, rng)?;
        Ok(Self { agent, mixer, params })
    }

    pub fn head(&self) -> Result<MixingHead> {
        MixingHead::extract(self.mixer, &self.params, MIXER_PREFIX)
    }

    /// Local q-values for every agent at one timestep: `(n_agents x n_actions, next hidden)`.
    pub fn q_step(&self, inputs: &Tensor, hidden: &RecurrentState) -> Result<(Tensor, RecurrentState)> {
        let mut g = Graph::new();
        let bound = g.bind_frozen(&self.params);
        let ids = AgentNetIds::resolve(&self.params, &bound, AGENT_PREFIX)?;
        let x = g.constant(inputs.clone());
        let h = g.constant(hidden.h.clone());
        let (q, h_new) = ids.step(&mut g, x, h)?;
        Ok((g.value(q).clone(), RecurrentState { h: g.value(h_new).clone() }))
    }

    /// `q^i(tau^i, .)` for one agent, and its next hidden vector.
    pub fn agent_q_forward(
        &self,
        agent_id: usize,
        obs: &[f64],
        last_action: Option<usize>,
        h: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if h.len() != self.agent.hidden_dim {
            return shape_err("agent_q_forward", format!("hidden len {}", h.len()));
        }
        let input = Tensor::row_vector(self.agent.input_row(agent_id, obs, last_action)?);
        let (q, next) = self.q_step(&input, &RecurrentState { h: Tensor::row_vector(h.to_vec()) })?;
        Ok((q.into_vec(), next.h.into_vec()))
    }

    pub fn mixing_forward(&self, state: &[f64], values: &[f64]) -> Result<f64> {
        self.head()?.mixing_forward(state, values)
    }
}

/// Online critics and their Polyak-averaged targets.
#[derive(Clone, Debug)]
pub struct Critics {
    pub online: Vec<CriticStack>,
    pub target: Vec<CriticStack>,
}

impl Critics {
    /// `count` independently initialized stacks; targets start as exact copies.
    pub fn new(
        count: usize,
        agent: AgentNetSpec,
        mixer: MixerLayout,
        learning_rate: f64,
        rms: RmsPropConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let online = (0..count)
            .map(|_| CriticStack::new(agent, mixer, learning_rate, rms, rng))
            .collect::<Result<Vec<_>>>()?;
        let target = online
            .iter()
            .map(|c| CriticStack {
                params: c.params.snapshot(),
                ..c.clone()
            })
            .collect();
        Ok(Self { online, target })
    }

    /// Polyak-averages every online stack into its own target.
    pub fn snapshot_targets(&mut self, smoothing: f64) -> Result<()> {
        if self.online.len() != self.target.len() {
            return Err(Error::ParamMismatch("online/target stack counts differ".into()));
        }
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.params.polyak_update(&o.params, smoothing)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> AgentNetSpec {
        AgentNetSpec {
            obs_dim: 3,
            n_actions: 4,
            n_agents: 2,
            hidden_dim: 5,
        }
    }

    #[test]
    fn zero_weights_give_final_bias_and_gru_of_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut critic = CriticStack::new(spec(), MixerLayout::linear(2, 1), 0.0, RmsPropConfig::default(), &mut rng).unwrap();
        for i in 0..critic.params.len() {
            critic.params.value_mut(i).fill(0.0);
        }
        critic.params.get_mut("agent.fc2.b").unwrap().data_mut().copy_from_slice(&[1.0, -2.0, 3.0, 0.5]);
        let (q, h) = critic.agent_q_forward(0, &[0.3, -0.2, 0.9], Some(1), &[0.0; 5]).unwrap();
        assert_eq!(q, vec![1.0, -2.0, 3.0, 0.5]);
        // z = sigmoid(0) = 0.5, n = tanh(0) = 0, h' = 0 + 0.5 * (0 - 0) = 0
        assert_eq!(h, vec![0.0; 5]);
    }

    #[test]
    fn agent_id_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = CriticStack::new(spec(), MixerLayout::linear(2, 1), 0.0, RmsPropConfig::default(), &mut rng).unwrap();
        let obs = [0.1, 0.2, 0.3];
        let (q0, _) = critic.agent_q_forward(0, &obs, None, &[0.0; 5]).unwrap();
        let (q1, _) = critic.agent_q_forward(1, &obs, None, &[0.0; 5]).unwrap();
        assert_ne!(q0, q1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Actor::new(spec(), 0.0, RmsPropConfig::default(), &mut rng).unwrap();
        assert!(actor.policy_forward(0, &[0.0; 2], None, &[0.0; 5], &[true; 4]).is_err());
        assert!(actor.policy_forward(0, &[0.0; 3], None, &[0.0; 4], &[true; 4]).is_err());
        assert!(actor.policy_forward(0, &[0.0; 3], None, &[0.0; 5], &[false; 4]).is_err());
    }

    #[test]
    fn actor_parameter_count_depends_on_agents_only_through_id_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let count = |n: usize, rng: &mut ChaCha8Rng| {
            Actor::new(AgentNetSpec { n_agents: n, ..spec() }, 0.0, RmsPropConfig::default(), rng)
                .unwrap()
                .params
                .num_scalars()
        };
        let c2 = count(2, &mut rng);
        let c5 = count(5, &mut rng);
        assert_eq!(c5 - c2, 3 * spec().hidden_dim);
    }

    #[test]
    fn snapshot_targets_copy_contract_and_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut critics = Critics::new(2, spec(), MixerLayout::linear(2, 1), 0.0, RmsPropConfig::default(), &mut rng).unwrap();
        // Move stack 0 away from its target only.
        for i in 0..critics.online[0].params.len() {
            critics.online[0].params.value_mut(i).data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
        let target1_before = critics.target[1].params.clone();
        let d0 = critics.target[0].params.distance(&critics.online[0].params).unwrap();
        for _ in 0..3 {
            critics.snapshot_targets(0.1).unwrap();
        }
        let d3 = critics.target[0].params.distance(&critics.online[0].params).unwrap();
        assert!((d3 / d0 - 0.9f64.powi(3)).abs() < 1e-12);
        assert!(critics.target[1].params.distance(&target1_before).unwrap() < 1e-12);

        critics.snapshot_targets(1.0).unwrap();
        assert_eq!(critics.target[0].params.distance(&critics.online[0].params).unwrap(), 0.0);
    }

    #[test]
    fn identity_mixer_sums_and_zero_values_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = MixingHead::random(MixerLayout::linear(3, 2), &mut rng).unwrap();
        let s = [0.4, -1.3];
        let v0 = head.mixing_forward(&s, &[0.0; 3]).unwrap();
        let bias = head.params.get("b.w").unwrap().data().iter().zip(s).map(|(w, x)| w * x).sum::<f64>()
            + head.params.get("b.b").unwrap().item();
        assert!((v0 - bias).abs() < 1e-14);
        head.set_identity().unwrap();
        assert!((head.mixing_forward(&s, &[1.0, 2.0, -4.0]).unwrap() + 1.0).abs() < 1e-14);
    }
}
