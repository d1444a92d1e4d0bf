use std::fmt;
use std::str::FromStr;

use crate::autodiff::RmsPropConfig;
use crate::envs::{EnvKind, GatherConfig};
use crate::error::{Error, Result};
use crate::nets::{MixerKind, DEFAULT_HIDDEN_DIM};

pub const OFF_POLICY_BUFFER: usize = 5000;
pub const ON_POLICY_BUFFER: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Msac,
    Mcsac,
    Mcac,
    Qmix,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Msac, Variant::Mcsac, Variant::Mcac, Variant::Qmix];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Msac => "msac",
            Variant::Mcsac => "mcsac",
            Variant::Mcac => "mcac",
            Variant::Qmix => "qmix",
        }
    }

    /// How the trainer is assembled for this variant.
    pub fn wiring(self) -> Wiring {
        match self {
            Variant::Msac => Wiring {
                off_policy: true,
                default_buffer: OFF_POLICY_BUFFER,
                counterfactual: false,
                soft: true,
                twin_critics: true,
                behavior: Behavior::Policy,
            },
            Variant::Mcsac => Wiring {
                off_policy: true,
                default_buffer: OFF_POLICY_BUFFER,
                counterfactual: true,
                soft: true,
                twin_critics: true,
                behavior: Behavior::Policy,
            },
            Variant::Mcac => Wiring {
                off_policy: false,
                default_buffer: ON_POLICY_BUFFER,
                counterfactual: true,
                soft: false,
                twin_critics: true,
                behavior: Behavior::EpsilonBoundedPolicy,
            },
            Variant::Qmix => Wiring {
                off_policy: true,
                default_buffer: OFF_POLICY_BUFFER,
                counterfactual: false,
                soft: false,
                twin_critics: false,
                behavior: Behavior::EpsilonGreedy,
            },
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}` (expected msac, mcsac, mcac or qmix)")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    /// Sample from the current softmax policy.
    Policy,
    /// Sample from `(1 - eps) * pi + eps / |A|`.
    EpsilonBoundedPolicy,
    /// Uniform with probability `eps`, otherwise argmax of the local q-values.
    EpsilonGreedy,
}

/// Structural facts about a trainer, used to dispatch updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    pub off_policy: bool,
    pub default_buffer: usize,
    pub counterfactual: bool,
    /// Whether entropy terms (and the temperature) appear in the losses.
    pub soft: bool,
    pub twin_critics: bool,
    pub behavior: Behavior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropyMixing {
    /// Per-agent entropy folded into the per-agent slot of the mixer.
    PullThrough,
    /// A second weight head mixes the entropies, sharing the bias.
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetEntropy {
    /// `-|A|`.
    NegActions,
    /// `0.98 * ln |A|`.
    ScaledLog,
    Fixed(f64),
}

impl TargetEntropy {
    pub fn value(self, n_actions: usize) -> f64 {
        match self {
            TargetEntropy::NegActions => -(n_actions as f64),
            TargetEntropy::ScaledLog => 0.98 * (n_actions as f64).ln(),
            TargetEntropy::Fixed(v) => v,
        }
    }
}

/// Every tunable of a run. Keys accepted by [`TrainConfig::set`] match field names.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algo: Variant,
    pub env: EnvKind,
    pub seed: u64,
    pub episodes: usize,
    pub learning_rate: f64,
    pub smoothing: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Replay capacity in episodes; `None` uses the variant default.
    pub buffer_size: Option<usize>,
    pub hidden_dim: usize,
    pub mixer: MixerKind,
    pub entropy_mixing: EntropyMixing,
    pub target_entropy: TargetEntropy,
    pub init_log_alpha: f64,
    pub actor_uses_target_critics: bool,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal: usize,
    pub reward_standardize: bool,
    pub reward_scale: f64,
    pub eval_period: usize,
    pub eval_episodes: usize,
    pub rms_rho: f64,
    pub rms_eps: f64,
    pub gather: GatherConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Variant::Msac,
            env: EnvKind::Matrix,
            seed: 0,
            episodes: 1000,
            learning_rate: 5e-4,
            smoothing: 0.005,
            gamma: 0.99,
            batch_size: 32,
            buffer_size: None,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            mixer: MixerKind::Linear,
            entropy_mixing: EntropyMixing::PullThrough,
            target_entropy: TargetEntropy::NegActions,
            init_log_alpha: 0.0,
            actor_uses_target_critics: false,
            eps_start: 0.5,
            eps_end: 0.02,
            eps_anneal: 20_000,
            reward_standardize: true,
            reward_scale: 10.0,
            eval_period: 100,
            eval_episodes: 20,
            rms_rho: 0.99,
            rms_eps: 1e-5,
            gather: GatherConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 30] = [
        "algo",
        "env",
        "seed",
        "episodes",
        "learning_rate",
        "smoothing",
        "gamma",
        "batch_size",
        "buffer_size",
        "hidden_dim",
        "mixer",
        "mixer_width",
        "entropy_mixing",
        "target_entropy",
        "init_log_alpha",
        "actor_uses_target_critics",
        "eps_start",
        "eps_end",
        "eps_anneal",
        "reward_standardize",
        "reward_scale",
        "eval_period",
        "eval_episodes",
        "rms_rho",
        "rms_eps",
        "grid_size",
        "view_radius",
        "n_agents",
        "n_targets",
        "episode_limit",
    ];

    pub fn rms(&self) -> RmsPropConfig {
        RmsPropConfig {
            rho: self.rms_rho,
            eps: self.rms_eps,
        }
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_size.unwrap_or(self.algo.wiring().default_buffer)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "algo" => self.algo = v.parse()?,
            "env" => self.env = EnvKind::parse(v)?,
            "seed" => self.seed = parse(key, v)?,
            "episodes" => self.episodes = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "smoothing" => self.smoothing = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "buffer_size" => {
                self.buffer_size = if v == "default" { None } else { Some(parse(key, v)?) };
            }
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "mixer" => {
                self.mixer = match v {
                    "linear" => MixerKind::Linear,
                    "stacked" => MixerKind::Stacked {
                        width: match self.mixer {
                            MixerKind::Stacked { width } => width,
                            MixerKind::Linear => 64,
                        },
                    },
                    _ => return Err(Error::Config(format!("unknown mixer `{v}`"))),
                }
            }
            "mixer_width" => {
                let width = parse(key, v)?;
                self.mixer = MixerKind::Stacked { width };
            }
            "entropy_mixing" => {
                self.entropy_mixing = match v {
                    "pull_through" => EntropyMixing::PullThrough,
                    "dual" => EntropyMixing::Dual,
                    _ => return Err(Error::Config(format!("unknown entropy mixing `{v}`"))),
                }
            }
            "target_entropy" => {
                self.target_entropy = match v {
                    "neg_actions" => TargetEntropy::NegActions,
                    "scaled_log" => TargetEntropy::ScaledLog,
                    _ => TargetEntropy::Fixed(parse(key, v)?),
                }
            }
            "init_log_alpha" => self.init_log_alpha = parse(key, v)?,
            "actor_uses_target_critics" => self.actor_uses_target_critics = parse_bool(key, v)?,
            "eps_start" => self.eps_start = parse(key, v)?,
            "eps_end" => self.eps_end = parse(key, v)?,
            "eps_anneal" => self.eps_anneal = parse(key, v)?,
            "reward_standardize" => self.reward_standardize = parse_bool(key, v)?,
            "reward_scale" => self.reward_scale = parse(key, v)?,
            "eval_period" => self.eval_period = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "rms_rho" => self.rms_rho = parse(key, v)?,
            "rms_eps" => self.rms_eps = parse(key, v)?,
            "grid_size" => self.gather.grid_size = parse(key, v)?,
            "view_radius" => self.gather.view_radius = parse(key, v)?,
            "n_agents" => self.gather.n_agents = parse(key, v)?,
            "n_targets" => {
                self.gather.n_targets = if v == "default" { None } else { Some(parse(key, v)?) };
            }
            "episode_limit" => self.gather.episode_limit = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text of a key's current value; `set(key, &get(key))` is the identity.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "algo" => self.algo.name().to_string(),
            "env" => self.env.name().to_string(),
            "seed" => self.seed.to_string(),
            "episodes" => self.episodes.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "smoothing" => self.smoothing.to_string(),
            "gamma" => self.gamma.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "buffer_size" => self.buffer_size.map_or("default".into(), |b| b.to_string()),
            "hidden_dim" => self.hidden_dim.to_string(),
            "mixer" => match self.mixer {
                MixerKind::Linear => "linear".into(),
                MixerKind::Stacked { .. } => "stacked".into(),
            },
            "mixer_width" => match self.mixer {
                MixerKind::Linear => "none".into(),
                MixerKind::Stacked { width } => width.to_string(),
            },
            "entropy_mixing" => match self.entropy_mixing {
                EntropyMixing::PullThrough => "pull_through".into(),
                EntropyMixing::Dual => "dual".into(),
            },
            "target_entropy" => match self.target_entropy {
                TargetEntropy::NegActions => "neg_actions".into(),
                TargetEntropy::ScaledLog => "scaled_log".into(),
                TargetEntropy::Fixed(v) => v.to_string(),
            },
            "init_log_alpha" => self.init_log_alpha.to_string(),
            "actor_uses_target_critics" => self.actor_uses_target_critics.to_string(),
            "eps_start" => self.eps_start.to_string(),
            "eps_end" => self.eps_end.to_string(),
            "eps_anneal" => self.eps_anneal.to_string(),
            "reward_standardize" => self.reward_standardize.to_string(),
            "reward_scale" => self.reward_scale.to_string(),
            "eval_period" => self.eval_period.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "rms_rho" => self.rms_rho.to_string(),
            "rms_eps" => self.rms_eps.to_string(),
            "grid_size" => self.gather.grid_size.to_string(),
            "view_radius" => self.gather.view_radius.to_string(),
            "n_agents" => self.gather.n_agents.to_string(),
            "n_targets" => self.gather.n_targets.map_or("default".into(), |n| n.to_string()),
            "episode_limit" => self.gather.episode_limit.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        })
    }

    /// All keys with their values, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .filter(|k| !(**k == "mixer_width" && self.mixer == MixerKind::Linear))
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return fail("smoothing must lie in (0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.buffer_capacity() == 0 {
            return fail("batch_size, hidden_dim and buffer_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return fail("epsilon endpoints must lie in [0, 1]");
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be positive");
        }
        if let MixerKind::Stacked { width: 0 } = self.mixer {
            return fail("mixer_width must be positive");
        }
        if self.entropy_mixing == EntropyMixing::Dual && self.mixer != MixerKind::Linear {
            return fail("dual entropy mixing requires the linear mixer");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_table() {
        let rows: Vec<_> = [Variant::Msac, Variant::Mcsac, Variant::Mcac]
            .iter()
            .map(|v| {
                let w = v.wiring();
                (w.default_buffer, w.counterfactual, w.soft)
            })
            .collect();
        assert_eq!(rows, vec![(5000, false, true), (5000, true, true), (32, true, false)]);
    }

    #[test]
    fn every_key_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.set("mixer", "stacked").unwrap();
        cfg.set("buffer_size", "77").unwrap();
        cfg.set("target_entropy", "-1.5").unwrap();
        for key in TrainConfig::KEYS {
            let text = cfg.get(key).unwrap();
            let mut other = cfg.clone();
            other.set(key, &text).unwrap();
            assert_eq!(other, cfg, "{key}");
        }
    }

    #[test]
    fn unknown_key_and_bad_values() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("gama", "0.9").is_err());
        assert!(cfg.set("gamma", "abc").is_err());
        assert!(cfg.set("algo", "ppo").is_err());
        cfg.set("gamma", "1.0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn buffer_default_follows_variant() {
        let mut cfg = TrainConfig::default();
        cfg.set("algo", "mcac").unwrap();
        assert_eq!(cfg.buffer_capacity(), 32);
        cfg.set("buffer_size", "100").unwrap();
        assert_eq!(cfg.buffer_capacity(), 100);
    }
}
