use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::algos::losses::{
    actor_loss_mcsac, actor_loss_msac, alpha_loss, counterfactual_advantage, critic_loss, critic_q_values,
    policy_tensors, qmix_td_loss, soft_target_value, BatchTensors, LossOutput,
};
use crate::algos::schedule::{epsilon_schedule, mcac_behavior_policy, standardize_reward, RewardStats};
use crate::algos::{Behavior, EntropyMixing, TrainConfig, Wiring};
use crate::autodiff::{ParamSet, Tensor};
use crate::envs::{make_env, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::harness::{eval_seeds, evaluate, stream_rng, EvalRecord, Policy, Stream};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::{
    argmax_available, Actor, AgentNetSpec, Critics, MixerLayout, MixingHead, RecurrentState,
};
use crate::replay::{Episode, ReplayBuffer};

/// Consecutive non-finite updates tolerated before a run is aborted.
pub const MAX_NONFINITE_STREAK: usize = 3;

/// One row of training output.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    /// 1-based training episode index.
    pub episode: usize,
    /// Environment steps taken by training so far.
    pub env_steps: u64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub policy_entropy: Option<f64>,
    pub eval: Option<EvalRecord>,
}

#[derive(Clone, Debug, Default)]
struct UpdateStats {
    critic_loss: Option<f64>,
    actor_loss: Option<f64>,
    alpha: Option<f64>,
    policy_entropy: Option<f64>,
}

struct Rngs {
    env: ChaCha8Rng,
    action: ChaCha8Rng,
    replay: ChaCha8Rng,
    advantage: ChaCha8Rng,
}

pub struct Trainer {
    cfg: TrainConfig,
    wiring: Wiring,
    env: Box<dyn Environment>,
    env_spec: EnvSpec,
    agent_spec: AgentNetSpec,
    mixer: MixerLayout,
    pub actor: Option<Actor>,
    pub critics: Critics,
    /// Single `1 x 1` entry `log_alpha` for the soft variants.
    pub log_alpha: Option<ParamSet>,
    buffer: ReplayBuffer,
    reward_stats: RewardStats,
    rngs: Rngs,
    episodes_done: usize,
    env_steps: u64,
    nonfinite_streak: usize,
    target_entropy: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(cfg.env, &cfg.gather)?;
        let env_spec = env.spec().clone();
        env_spec.validate()?;
        let wiring = cfg.algo.wiring();
        let agent_spec = AgentNetSpec {
            obs_dim: env_spec.obs_dim,
            n_actions: env_spec.n_actions,
            n_agents: env_spec.n_agents,
            hidden_dim: cfg.hidden_dim,
        };
        let mixer = MixerLayout {
            kind: cfg.mixer,
            dual: wiring.soft && cfg.entropy_mixing == EntropyMixing::Dual,
            n_agents: env_spec.n_agents,
            state_dim: env_spec.state_dim,
        };
        let mut init = stream_rng(cfg.seed, Stream::Init);
        let rms = cfg.rms();
        let uses_actor = wiring.behavior != Behavior::EpsilonGreedy;
        let actor = if uses_actor {
            Some(Actor::new(agent_spec, cfg.learning_rate, rms, &mut init)?)
        } else {
            None
        };
        let n_critics = if wiring.twin_critics { 2 } else { 1 };
        let critics = Critics::new(n_critics, agent_spec, mixer, cfg.learning_rate, rms, &mut init)?;
        let log_alpha = if wiring.soft {
            let mut p = ParamSet::new(cfg.learning_rate, rms);
            p.insert("log_alpha", Tensor::scalar(cfg.init_log_alpha))?;
            Some(p)
        } else {
            None
        };
        let buffer = ReplayBuffer::new(env_spec.clone(), cfg.buffer_capacity())?;
        let rngs = Rngs {
            env: stream_rng(cfg.seed, Stream::Env),
            action: stream_rng(cfg.seed, Stream::Action),
            replay: stream_rng(cfg.seed, Stream::Replay),
            advantage: stream_rng(cfg.seed, Stream::Advantage),
        };
        let target_entropy = cfg.target_entropy.value(env_spec.n_actions);
        Ok(Self {
            cfg,
            wiring,
            env,
            env_spec,
            agent_spec,
            mixer,
            actor,
            critics,
            log_alpha,
            buffer,
            reward_stats: RewardStats::default(),
            rngs,
            episodes_done: 0,
            env_steps: 0,
            nonfinite_streak: 0,
            target_entropy,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn wiring(&self) -> Wiring {
        self.wiring
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env_spec
    }

    pub fn agent_spec(&self) -> AgentNetSpec {
        self.agent_spec
    }

    pub fn mixer_layout(&self) -> MixerLayout {
        self.mixer
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// Temperature used in the losses: `exp(log_alpha)` for the soft variants, 0 otherwise.
    pub fn alpha(&self) -> f64 {
        self.log_alpha.as_ref().map_or(0.0, |p| p.value(0).item().exp())
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_schedule(self.episodes_done, self.cfg.eps_start, self.cfg.eps_end, self.cfg.eps_anneal)
    }

    /// Read-only snapshot of the acting parameters.
    pub fn policy(&self) -> Policy {
        match &self.actor {
            Some(actor) => Policy::Actor(actor.clone()),
            None => Policy::Values(self.critics.online[0].clone()),
        }
    }

    fn select_actions(
        &mut self,
        inputs: &Tensor,
        hidden: &RecurrentState,
        avail: &[Vec<bool>],
        epsilon: f64,
    ) -> Result<(Vec<usize>, RecurrentState)> {
        let rng = &mut self.rngs.action;
        match self.wiring.behavior {
            Behavior::Policy | Behavior::EpsilonBoundedPolicy => {
                let actor = self.actor.as_ref().expect("policy behavior needs an actor");
                let (dists, next) = actor.step(inputs, hidden, avail)?;
                let actions = dists
                    .iter()
                    .map(|d| {
                        if self.wiring.behavior == Behavior::Policy {
                            d.sample(rng)
                        } else {
                            mcac_behavior_policy(d, epsilon).sample(rng)
                        }
                    })
                    .collect();
                Ok((actions, next))
            }
            Behavior::EpsilonGreedy => {
                let (q, next) = self.critics.online[0].q_step(inputs, hidden)?;
                let actions = avail
                    .iter()
                    .enumerate()
                    .map(|(i, mask)| {
                        if rng.gen::<f64>() < epsilon {
                            let legal: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
                            legal[rng.gen_range(0..legal.len())]
                        } else {
                            argmax_available(q.row(i), mask)
                        }
                    })
                    .collect();
                Ok((actions, next))
            }
        }
    }

    /// Plays one training episode with the behavior policy.
    pub fn collect_episode(&mut self) -> Result<Episode> {
        let seed = self.rngs.env.gen();
        let first = self.env.reset(seed);
        let mut episode = Episode::start(first.clone());
        let mut current = first;
        let mut hidden = RecurrentState::zeros(&self.agent_spec);
        let mut last = vec![None; self.env_spec.n_agents];
        let epsilon = self.epsilon();
        loop {
            let inputs = self.agent_spec.joint_inputs(&current.obs, &last)?;
            let (actions, next_hidden) = self.select_actions(&inputs, &hidden, &current.avail, epsilon)?;
            hidden = next_hidden;
            let step = self.env.step(&actions)?;
            self.env_steps += 1;
            let reward = standardize_reward(
                &mut self.reward_stats,
                step.reward,
                self.cfg.reward_standardize,
                self.cfg.reward_scale,
            );
            last = actions.iter().map(|&a| Some(a)).collect();
            let done = step.terminated || step.truncated;
            episode.record(actions, reward, step.terminated, step.next.clone());
            current = step.next;
            if done {
                return Ok(episode);
            }
        }
    }

    fn apply(params: &mut ParamSet, out: LossOutput) -> Result<()> {
        params.set_grads(out.grads)?;
        params.step()
    }

    fn check(name: &str, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{name} loss = {value}")))
        }
    }

    fn update(&mut self) -> Result<UpdateStats> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rngs.replay)?;
        let bt = BatchTensors::new(&batch, &self.agent_spec)?;
        if self.wiring.behavior == Behavior::EpsilonGreedy {
            let out = qmix_td_loss(&bt, &self.critics.online[0], &self.critics.target[0], self.cfg.gamma)?;
            Self::check("td", out.value)?;
            let value = out.value;
            Self::apply(&mut self.critics.online[0].params, out)?;
            self.critics.snapshot_targets(self.cfg.smoothing)?;
            return Ok(UpdateStats {
                critic_loss: Some(value),
                ..UpdateStats::default()
            });
        }

        let alpha = self.alpha();
        let mixing = self.cfg.entropy_mixing;
        let actor = self.actor.as_ref().expect("actor-critic variant");
        let policy = policy_tensors(actor, &bt)?;
        let targets = soft_target_value(&bt, &self.critics.target, &policy, alpha, self.cfg.gamma, mixing)?;

        let outs = self
            .critics
            .online
            .iter()
            .map(|c| critic_loss(&bt, c, &targets))
            .collect::<Result<Vec<_>>>()?;
        for out in &outs {
            Self::check("critic", out.value)?;
        }
        let critic_value = outs.iter().map(|o| o.value).sum::<f64>() / outs.len() as f64;
        for (critic, out) in self.critics.online.iter_mut().zip(outs) {
            Self::apply(&mut critic.params, out)?;
        }

        let judges = if self.cfg.actor_uses_target_critics {
            &self.critics.target
        } else {
            &self.critics.online
        };
        let heads = judges.iter().map(|c| c.head()).collect::<Result<Vec<MixingHead>>>()?;
        let q_values = judges
            .iter()
            .map(|c| critic_q_values(c, &bt))
            .collect::<Result<Vec<_>>>()?;
        let actor = self.actor.as_ref().expect("actor-critic variant");
        let actor_out = if self.wiring.counterfactual {
            let cf = counterfactual_advantage(&bt, &heads, &q_values, &policy, alpha, &mut self.rngs.advantage)?;
            actor_loss_mcsac(&bt, actor, &cf.sampled, &cf.advantages)?
        } else {
            actor_loss_msac(&bt, actor, &heads, &q_values, alpha, mixing)?
        };
        Self::check("actor", actor_out.value)?;
        let actor_value = actor_out.value;
        Self::apply(&mut self.actor.as_mut().expect("actor").params, actor_out)?;

        let mut alpha_now = None;
        if let Some(log_alpha) = self.log_alpha.as_mut() {
            let out = alpha_loss(&bt, log_alpha, &policy.entropy, self.target_entropy)?;
            Self::check("alpha", out.value)?;
            Self::apply(log_alpha, out)?;
            alpha_now = Some(log_alpha.value(0).item().exp());
        }
        self.critics.snapshot_targets(self.cfg.smoothing)?;
        Ok(UpdateStats {
            critic_loss: Some(critic_value),
            actor_loss: Some(actor_value),
            alpha: alpha_now,
            policy_entropy: Some(policy.mean_entropy(&bt)),
        })
    }

    /// Collects an episode, stores it, performs one update, and evaluates on schedule.
    pub fn train_episode(&mut self) -> Result<EpisodeMetrics> {
        let episode = self.collect_episode()?;
        self.buffer.push(episode)?;
        self.episodes_done += 1;
        let stats = match self.update() {
            Ok(stats) => {
                self.nonfinite_streak = 0;
                stats
            }
            Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient { .. })) => {
                self.nonfinite_streak += 1;
                warn!("episode {}: update skipped: {e}", self.episodes_done);
                if self.nonfinite_streak >= MAX_NONFINITE_STREAK {
                    return Err(Error::Diverged(self.nonfinite_streak));
                }
                UpdateStats::default()
            }
            Err(e) => return Err(e),
        };
        let eval = if self.cfg.eval_period > 0 && self.episodes_done % self.cfg.eval_period == 0 {
            Some(self.evaluate_now()?)
        } else {
            None
        };
        Ok(EpisodeMetrics {
            episode: self.episodes_done,
            env_steps: self.env_steps,
            critic_loss: stats.critic_loss,
            actor_loss: stats.actor_loss,
            alpha: stats.alpha,
            policy_entropy: stats.policy_entropy,
            eval,
        })
    }

    /// Greedy evaluation on a fresh environment instance; training state is untouched.
    pub fn evaluate_now(&self) -> Result<EvalRecord> {
        let round = (self.episodes_done / self.cfg.eval_period.max(1)) as u64;
        let seeds = eval_seeds(self.cfg.seed, round, self.cfg.eval_episodes);
        let mut env = make_env(self.cfg.env, &self.cfg.gather)?;
        evaluate(&self.policy(), env.as_mut(), &seeds, true, self.episodes_done)
    }

    /// Trains for the configured number of episodes, handing each record to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&EpisodeMetrics) -> Result<()>) -> Result<()> {
        while self.episodes_done < self.cfg.episodes {
            let record = self.train_episode()?;
            sink(&record)?;
        }
        Ok(())
    }

    /// Parameters plus the resolved configuration as metadata.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut sections = Vec::new();
        if let Some(actor) = &self.actor {
            sections.push(("actor".to_string(), actor.params.clone()));
        }
        for (j, c) in self.critics.online.iter().enumerate() {
            sections.push((format!("critic{}", j + 1), c.params.clone()));
        }
        for (j, c) in self.critics.target.iter().enumerate() {
            sections.push((format!("target{}", j + 1), c.params.clone()));
        }
        if let Some(la) = &self.log_alpha {
            sections.push(("log_alpha".to_string(), la.clone()));
        }
        Checkpoint {
            meta: self.cfg.entries(),
            sections,
        }
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in &ckpt.meta {
            cfg.set(k, v)?;
        }
        let mut trainer = Self::new(cfg)?;
        let copy = |dst: &mut ParamSet, name: &str| -> Result<()> {
            let src = ckpt.section(name)?;
            dst.polyak_update(src, 1.0)
        };
        if let Some(actor) = trainer.actor.as_mut() {
            copy(&mut actor.params, "actor")?;
        }
        for (j, c) in trainer.critics.online.iter_mut().enumerate() {
            copy(&mut c.params, &format!("critic{}", j + 1))?;
        }
        for (j, c) in trainer.critics.target.iter_mut().enumerate() {
            copy(&mut c.params, &format!("target{}", j + 1))?;
        }
        if let Some(la) = trainer.log_alpha.as_mut() {
            copy(la, "log_alpha")?;
        }
        Ok(trainer)
    }
}

/// Runs a full training loop and returns the trainer with every per-episode record.
pub fn train(cfg: TrainConfig) -> Result<(Trainer, Vec<EpisodeMetrics>)> {
    let mut trainer = Trainer::new(cfg)?;
    let mut records = Vec::new();
    trainer.run(|r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((trainer, records))
}
