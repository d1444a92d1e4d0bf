//! Oracle suites shared by the `check` command and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    batch_histories, brute_counterfactual_baseline, brute_dual, brute_expected_qtot, brute_pull_through,
    brute_soft_expected_qtot, direct_bias, direct_entropy_weights, direct_weights,
    finite_difference_gradients, gradient_relative_error, matrix_game_optimum, random_batch, EnumerationBudget,
};
use crate::algos::losses::{
    actor_loss_mcsac, actor_loss_msac, alpha_loss, counterfactual_advantage, counterfactual_baselines, critic_loss,
    critic_q_values, policy_tensors, qmix_td_loss, soft_target_value, BatchTensors,
};
use crate::algos::{
    epsilon_schedule, EntropyMixing, RewardStats, TrainConfig, Trainer, Variant,
};
use crate::autodiff::{ParamSet, RmsPropConfig, Tensor};
use crate::envs::{EnvSpec, MatrixGame};
use crate::error::Result;
use crate::nets::{
    expected_soft_local_q, Actor, AgentNetSpec, CriticStack, MixerKind, MixerLayout, MixingHead, PolicyDist,
};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

fn random_dist(n_actions: usize, rng: &mut impl Rng) -> PolicyDist {
    let logits: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(-4.0..4.0)).collect();
    PolicyDist::from_logits(&logits, &vec![true; n_actions]).expect("all actions available")
}

fn random_instance(rng: &mut impl Rng, layout: MixerLayout) -> Result<(MixingHead, Vec<f64>, Vec<Vec<f64>>, Vec<PolicyDist>)> {
    let head = MixingHead::random(layout, rng)?;
    let n_actions = rng.gen_range(2..=5);
    let state = (0..layout.state_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let q = (0..layout.n_agents)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let dists = (0..layout.n_agents).map(|_| random_dist(n_actions, rng)).collect();
    Ok((head, state, q, dists))
}

fn random_layout(rng: &mut impl Rng, dual: bool) -> MixerLayout {
    MixerLayout {
        dual,
        ..MixerLayout::linear(rng.gen_range(2..=3), rng.gen_range(1..=4))
    }
}

/// Mixing of per-agent expectations equals the enumerated expectation of the mixed value.
pub fn expectation_identity(instances: usize, seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = EnumerationBudget::default();
        let mut worst: f64 = 0.0;
        for k in 0..instances {
            let mut layout = random_layout(&mut rng, false);
            if k % 4 == 3 {
                layout.kind = MixerKind::Stacked { width: 8 };
            }
            let (head, state, q, dists) = random_instance(&mut rng, layout)?;
            let slots: Vec<f64> = q.iter().zip(&dists).map(|(q, d)| expected_soft_local_q(q, d, 0.0)).collect();
            let analytic = head.mixing_forward(&state, &slots)?;
            let probs: Vec<Vec<f64>> = dists.iter().map(|d| d.probs.clone()).collect();
            let enumerated = brute_expected_qtot(&head, &state, &q, &probs, &budget)?;
            worst = worst.max((analytic - enumerated).abs() / (1.0 + enumerated.abs()));
        }
        Ok((worst <= budget.rel_tol, format!("{instances} instances, worst scaled error {worst:.3e}")))
    };
    CheckReport::from_result("expectation identity", run())
}

/// Pull-through and dual-head closed forms against enumeration, and the weight-scaled entropy gap.
pub fn entropy_identities(instances: usize, seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = EnumerationBudget::default();
        let tol = 1e-9;
        let mut worst: f64 = 0.0;
        let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        for _ in 0..instances {
            let alpha = rng.gen_range(0.0..2.0);
            let layout = random_layout(&mut rng, true);
            let (head, state, q, dists) = random_instance(&mut rng, layout)?;
            let probs: Vec<Vec<f64>> = dists.iter().map(|d| d.probs.clone()).collect();
            let k = direct_weights(&head, &state);
            let k2 = direct_entropy_weights(&head, &state);
            let b = direct_bias(&head, &state);
            let eq: Vec<f64> = q.iter().zip(&probs).map(|(q, p)| q.iter().zip(p).map(|(q, p)| q * p).sum()).collect();
            let ent: Vec<f64> = probs.iter().map(|p| -p.iter().map(|p| p * p.ln()).sum::<f64>()).collect();
            let kq: f64 = k.iter().zip(&eq).map(|(k, e)| k * e).sum();

            // implemented pull-through vs its closed form vs its direct summation
            let slots: Vec<f64> = q.iter().zip(&dists).map(|(q, d)| expected_soft_local_q(q, d, alpha)).collect();
            let pull = head.mixing_forward(&state, &slots)?;
            let pull_closed = kq + b + alpha * k.iter().zip(&ent).map(|(k, h)| k * h).sum::<f64>();
            track(pull, pull_closed);
            track(brute_pull_through(&head, &state, &q, &probs, alpha, &budget)?, pull_closed);

            // joint soft value vs its closed form with the unweighted joint entropy
            let joint = brute_soft_expected_qtot(&head, &state, &q, &probs, alpha, &budget)?;
            let joint_closed = kq + b + alpha * ent.iter().sum::<f64>();
            track(joint, joint_closed);

            // the gap is exactly alpha * sum_i (|k_i| - 1) H_i
            let gap = alpha * k.iter().zip(&ent).map(|(k, h)| (k - 1.0) * h).sum::<f64>();
            track(pull - joint, gap);

            // dual heads
            let scaled: Vec<f64> = ent.iter().map(|h| alpha * h).collect();
            let dual = head.mixing_forward_dual(&state, &eq, &scaled)?;
            let dual_closed = kq + b + alpha * k2.iter().zip(&ent).map(|(k, h)| k * h).sum::<f64>();
            track(dual, dual_closed);
            track(brute_dual(&head, &state, &q, &probs, alpha, &budget)?, dual_closed);
        }
        Ok((worst <= tol, format!("{instances} instances, worst scaled error {worst:.3e}")))
    };
    CheckReport::from_result("entropy pull-through and dual mixing", run())
}

/// The small fixed problem used by the gradient and padding checks.
pub struct LossFixture {
    pub spec: AgentNetSpec,
    pub env: EnvSpec,
    pub batch: crate::replay::EpisodeBatch,
    pub actor: Actor,
    pub online: Vec<CriticStack>,
    pub target: Vec<CriticStack>,
    pub alpha: f64,
}

impl LossFixture {
    /// Two agents, three actions, horizon 4, two episodes (one shorter and terminated).
    pub fn new(seed: u64, mixer: MixerKind, dual: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = EnvSpec {
            n_agents: 2,
            n_actions: 3,
            state_dim: 3,
            obs_dim: 4,
            episode_limit: 4,
            reward_range: (-2.0, 2.0),
        };
        let spec = AgentNetSpec {
            obs_dim: env.obs_dim,
            n_actions: env.n_actions,
            n_agents: env.n_agents,
            hidden_dim: 5,
        };
        let layout = MixerLayout {
            kind: mixer,
            dual,
            n_agents: 2,
            state_dim: env.state_dim,
        };
        let batch = random_batch(&env, &[4, 3], &mut rng)?;
        let rms = RmsPropConfig::default();
        let actor = Actor::new(spec, 1e-3, rms, &mut rng)?;
        let mut online = Vec::new();
        let mut target = Vec::new();
        for _ in 0..2 {
            online.push(CriticStack::new(spec, layout, 1e-3, rms, &mut rng)?);
            target.push(CriticStack::new(spec, layout, 1e-3, rms, &mut rng)?);
        }
        Ok(Self {
            spec,
            env,
            batch,
            actor,
            online,
            target,
            alpha: 0.3,
        })
    }

    pub fn tensors(&self) -> Result<BatchTensors> {
        BatchTensors::new(&self.batch, &self.spec)
    }
}

fn with_params(critic: &CriticStack, p: &ParamSet) -> CriticStack {
    CriticStack {
        params: p.clone(),
        ..critic.clone()
    }
}

fn with_actor_params(actor: &Actor, p: &ParamSet) -> Actor {
    Actor {
        params: p.clone(),
        ..actor.clone()
    }
}

/// Reverse-mode gradients of every loss against central finite differences.
pub fn gradient_oracle(seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let tol = EnumerationBudget::default().fd_rel_tol;
        let eps = 1e-4;
        let floor = 1e-8;
        let mut lines = Vec::new();
        let mut ok = true;
        let mut record = |name: &str, err: f64| {
            ok &= err < tol;
            lines.push(format!("{name} {err:.2e}"));
        };
        for (label, mixer, mixing) in [
            ("", MixerKind::Linear, EntropyMixing::PullThrough),
            (" dual", MixerKind::Linear, EntropyMixing::Dual),
            (" stacked", MixerKind::Stacked { width: 4 }, EntropyMixing::PullThrough),
        ] {
            let fx = LossFixture::new(seed, mixer, mixing == EntropyMixing::Dual)?;
            let bt = fx.tensors()?;
            let policy = policy_tensors(&fx.actor, &bt)?;
            let y = soft_target_value(&bt, &fx.target, &policy, fx.alpha, 0.99, mixing)?;

            let critic = &fx.online[0];
            let out = critic_loss(&bt, critic, &y)?;
            let fd = finite_difference_gradients(|p| Ok(critic_loss(&bt, &with_params(critic, p), &y)?.value), &critic.params, eps)?;
            record(&format!("critic{label}"), gradient_relative_error(&out.grads, &fd, floor));

            let heads = fx.online.iter().map(|c| c.head()).collect::<Result<Vec<_>>>()?;
            let q = fx.online.iter().map(|c| critic_q_values(c, &bt)).collect::<Result<Vec<_>>>()?;
            let out = actor_loss_msac(&bt, &fx.actor, &heads, &q, fx.alpha, mixing)?;
            let fd = finite_difference_gradients(
                |p| Ok(actor_loss_msac(&bt, &with_actor_params(&fx.actor, p), &heads, &q, fx.alpha, mixing)?.value),
                &fx.actor.params,
                eps,
            )?;
            record(&format!("actor{label}"), gradient_relative_error(&out.grads, &fd, floor));

            if mixing == EntropyMixing::PullThrough && mixer == MixerKind::Linear {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let cf = counterfactual_advantage(&bt, &heads, &q, &policy, fx.alpha, &mut rng)?;
                let out = actor_loss_mcsac(&bt, &fx.actor, &cf.sampled, &cf.advantages)?;
                let fd = finite_difference_gradients(
                    |p| Ok(actor_loss_mcsac(&bt, &with_actor_params(&fx.actor, p), &cf.sampled, &cf.advantages)?.value),
                    &fx.actor.params,
                    eps,
                )?;
                record("counterfactual actor", gradient_relative_error(&out.grads, &fd, floor));

                let mut log_alpha = ParamSet::new(1e-3, RmsPropConfig::default());
                log_alpha.insert("log_alpha", Tensor::scalar(0.4))?;
                let out = alpha_loss(&bt, &log_alpha, &policy.entropy, -3.0)?;
                let fd = finite_difference_gradients(|p| Ok(alpha_loss(&bt, p, &policy.entropy, -3.0)?.value), &log_alpha, eps)?;
                record("alpha", gradient_relative_error(&out.grads, &fd, floor));

                let out = qmix_td_loss(&bt, critic, &fx.target[0], 0.99)?;
                let fd = finite_difference_gradients(
                    |p| Ok(qmix_td_loss(&bt, &with_params(critic, p), &fx.target[0], 0.99)?.value),
                    &critic.params,
                    eps,
                )?;
                record("td", gradient_relative_error(&out.grads, &fd, floor));
            }
        }
        Ok((ok, lines.join(", ")))
    };
    CheckReport::from_result("gradient oracle", run())
}

/// Batched counterfactual baselines against direct per-history evaluation.
pub fn counterfactual_baseline(instances: usize, seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut compared = 0usize;
        for k in 0..instances {
            let fx = LossFixture::new(seed.wrapping_add(k as u64 * 7919), MixerKind::Linear, false)?;
            let bt = fx.tensors()?;
            let policy = policy_tensors(&fx.actor, &bt)?;
            let heads = fx.online.iter().map(|c| c.head()).collect::<Result<Vec<_>>>()?;
            let q = fx.online.iter().map(|c| critic_q_values(c, &bt)).collect::<Result<Vec<_>>>()?;
            let batched = counterfactual_baselines(&bt, &heads, &q, &policy)?;
            // one random valid (t, b, i) per instance
            let b = rng.gen_range(0..fx.batch.batch_size);
            let t = rng.gen_range(0..fx.batch.lengths[b]);
            let i = rng.gen_range(0..fx.batch.n_agents);
            let (bsz, n) = (fx.batch.batch_size, fx.batch.n_agents);
            let row = (t * bsz + b) * n + i;
            let joint: Vec<usize> = (0..n).map(|a| fx.batch.actions[(t * bsz + b) * n + a]).collect();
            let histories = batch_histories(&fx.batch, b, t);
            let oracle = brute_counterfactual_baseline(
                &fx.online,
                &fx.batch.states[t * bsz + b],
                &histories,
                i,
                policy.probs.row(row),
                &joint,
            )?;
            worst = worst.max((batched.get(row, 0) - oracle).abs());
            compared += 1;
        }
        Ok((worst <= 1e-6, format!("{compared} instances, worst abs error {worst:.3e}")))
    };
    CheckReport::from_result("counterfactual baseline", run())
}

/// Raising any per-agent value never lowers the joint value.
pub fn monotonicity(instances: usize, seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0usize;
        for k in 0..instances {
            let mut layout = random_layout(&mut rng, false);
            if k % 2 == 1 {
                layout.kind = MixerKind::Stacked { width: 6 };
            }
            let head = MixingHead::random(layout, &mut rng)?;
            let state: Vec<f64> = (0..layout.state_dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..layout.n_agents).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let i = rng.gen_range(0..layout.n_agents);
            let delta = rng.gen_range(1e-3..5.0);
            let mut bumped = v.clone();
            bumped[i] += delta;
            if head.mixing_forward(&state, &bumped)? < head.mixing_forward(&state, &v)? {
                violations += 1;
            }
        }
        Ok((violations == 0, format!("{instances} probes, {violations} violations")))
    };
    CheckReport::from_result("monotonicity", run())
}

fn alpha_step_sign(bt: &BatchTensors, entropy: &Tensor, target: f64) -> Result<f64> {
    let mut log_alpha = ParamSet::new(5e-4, RmsPropConfig::default());
    log_alpha.insert("log_alpha", Tensor::scalar(0.0))?;
    let out = alpha_loss(bt, &log_alpha, entropy, target)?;
    log_alpha.set_grads(out.grads)?;
    log_alpha.step()?;
    Ok((log_alpha.value(0).item().exp() - 1.0).signum())
}

/// Temperature update direction and positivity.
pub fn alpha_dynamics(seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let fx = LossFixture::new(seed, MixerKind::Linear, false)?;
        let bt = fx.tensors()?;
        let policy = policy_tensors(&fx.actor, &bt)?;
        let mean_h = policy.mean_entropy(&bt);
        let mut ok = true;
        let mut notes = Vec::new();
        for target in [-3.0, 0.0, mean_h - 0.05, mean_h + 0.05, 3.0f64.ln() + 1.0] {
            let sign = alpha_step_sign(&bt, &policy.entropy, target)?;
            let expected = (target - mean_h).signum();
            ok &= sign == expected;
            notes.push(format!("target {target:.3}: step sign {sign}"));
        }
        // At the target the gradient vanishes.
        let mut log_alpha = ParamSet::new(5e-4, RmsPropConfig::default());
        log_alpha.insert("log_alpha", Tensor::scalar(0.0))?;
        let flat = Tensor::filled(policy.entropy.rows(), 1, 1.25);
        let out = alpha_loss(&bt, &log_alpha, &flat, 1.25)?;
        ok &= out.grads[0].item() == 0.0;

        // Positivity over a short run.
        let mut cfg = TrainConfig {
            episodes: 60,
            seed,
            hidden_dim: 8,
            eval_period: 0,
            ..TrainConfig::default()
        };
        cfg.init_log_alpha = -2.0;
        let (_, records) = crate::algos::train(cfg)?;
        let min_alpha = records.iter().filter_map(|r| r.alpha).fold(f64::INFINITY, f64::min);
        ok &= min_alpha > 0.0 && records.iter().all(|r| r.alpha.is_some());
        notes.push(format!("min alpha over run {min_alpha:.3e}"));
        Ok((ok, notes.join("; ")))
    };
    CheckReport::from_result("alpha dynamics", run())
}

/// Trainer assembly for each variant.
pub fn variant_wiring() -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let mut rows = Vec::new();
        for variant in [Variant::Msac, Variant::Mcsac, Variant::Mcac] {
            let cfg = TrainConfig {
                algo: variant,
                hidden_dim: 4,
                ..TrainConfig::default()
            };
            let trainer = Trainer::new(cfg)?;
            let w = trainer.wiring();
            let soft_present = trainer.log_alpha.is_some() && trainer.alpha() > 0.0;
            rows.push((variant, trainer.buffer().capacity(), w.counterfactual, w.soft, soft_present, w.off_policy));
        }
        let want = [
            (Variant::Msac, 5000, false, true, true, true),
            (Variant::Mcsac, 5000, true, true, true, true),
            (Variant::Mcac, 32, true, false, false, false),
        ];
        let ok = rows == want;
        let detail = rows
            .iter()
            .map(|(v, buf, cf, soft, _, _)| format!("{v}: buffer {buf}, counterfactual {cf}, soft {soft}"))
            .collect::<Vec<_>>()
            .join("; ");
        Ok((ok, detail))
    };
    CheckReport::from_result("variant wiring", run())
}

/// Linear epsilon anneal with exact endpoints.
pub fn epsilon_endpoints() -> CheckReport {
    let n = 20_000;
    let mut ok = epsilon_schedule(0, 0.5, 0.02, n) == 0.5
        && epsilon_schedule(n, 0.5, 0.02, n) == 0.02
        && epsilon_schedule(3 * n, 0.5, 0.02, n) == 0.02;
    for e in [1, 777, n / 2, n - 1] {
        let want = 0.5 + (0.02 - 0.5) * e as f64 / n as f64;
        ok &= epsilon_schedule(e, 0.5, 0.02, n) == want;
    }
    ok &= (epsilon_schedule(n / 2, 0.5, 0.02, n) - 0.26).abs() < 1e-15;
    CheckReport::new("epsilon schedule", ok, format!("anneal over {n} episodes"))
}

/// Running standardization is centred and maps the mean to exactly zero.
pub fn reward_standardization(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = RewardStats::default();
    let count = 100_000;
    let mut sum = 0.0;
    let mut early = 0.0;
    for k in 0..count {
        let r: f64 = rng.gen_range(-3.0..7.0) + if rng.gen_bool(0.1) { 20.0 } else { 0.0 };
        sum += stats.standardize(r, 10.0);
        if k + 1 == 1000 {
            early = sum / 1000.0;
        }
    }
    let mean = sum / count as f64;
    let mut exact = RewardStats::default();
    exact.standardize(2.0, 10.0);
    exact.standardize(4.0, 10.0);
    let at_mean = exact.standardize(3.0, 10.0);
    let ok = mean.abs() < 0.15 && at_mean == 0.0;
    CheckReport::new(
        "reward standardization",
        ok,
        format!("running mean after 1e3: {early:.4}, after 1e5: {mean:.4}; r = mean gives {at_mean}"),
    )
}

/// Appending padded steps changes no loss value.
pub fn padding_neutrality(seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let fx = LossFixture::new(seed, MixerKind::Linear, false)?;
        let mut values = Vec::new();
        for batch in [fx.batch.clone(), fx.batch.pad_to(fx.batch.max_len + 3)] {
            let bt = BatchTensors::new(&batch, &fx.spec)?;
            let policy = policy_tensors(&fx.actor, &bt)?;
            let y = soft_target_value(&bt, &fx.target, &policy, fx.alpha, 0.99, EntropyMixing::PullThrough)?;
            let heads = fx.online.iter().map(|c| c.head()).collect::<Result<Vec<_>>>()?;
            let q = fx.online.iter().map(|c| critic_q_values(c, &bt)).collect::<Result<Vec<_>>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cf = counterfactual_advantage(&bt, &heads, &q, &policy, fx.alpha, &mut rng)?;
            let mut log_alpha = ParamSet::new(1e-3, RmsPropConfig::default());
            log_alpha.insert("log_alpha", Tensor::scalar(0.0))?;
            values.push(vec![
                critic_loss(&bt, &fx.online[0], &y)?.value,
                actor_loss_msac(&bt, &fx.actor, &heads, &q, fx.alpha, EntropyMixing::PullThrough)?.value,
                actor_loss_mcsac(&bt, &fx.actor, &cf.sampled, &cf.advantages)?.value,
                alpha_loss(&bt, &log_alpha, &policy.entropy, -3.0)?.value,
                qmix_td_loss(&bt, &fx.online[0], &fx.target[0], 0.99)?.value,
            ]);
        }
        let worst = values[0]
            .iter()
            .zip(&values[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((worst <= 1e-12, format!("worst change {worst:.3e}")))
    };
    CheckReport::from_result("padding neutrality", run())
}

/// Target parameters shift the critic loss; the target value itself carries no graph.
pub fn target_stop(seed: u64) -> CheckReport {
    let run = || -> Result<(bool, String)> {
        let fx = LossFixture::new(seed, MixerKind::Linear, false)?;
        let bt = fx.tensors()?;
        let policy = policy_tensors(&fx.actor, &bt)?;
        let y = soft_target_value(&bt, &fx.target, &policy, fx.alpha, 0.99, EntropyMixing::PullThrough)?;
        let before = critic_loss(&bt, &fx.online[0], &y)?.value;
        let mut moved = fx.target.clone();
        for stack in moved.iter_mut() {
            for i in 0..stack.params.len() {
                stack.params.value_mut(i).data_mut().iter_mut().for_each(|v| *v += 0.05);
            }
        }
        let y2 = soft_target_value(&bt, &moved, &policy, fx.alpha, 0.99, EntropyMixing::PullThrough)?;
        let after = critic_loss(&bt, &fx.online[0], &y2)?.value;
        let out = critic_loss(&bt, &fx.online[0], &y)?;
        let ok = before != after && out.grads.len() == fx.online[0].params.len();
        Ok((ok, format!("critic loss {before:.6} -> {after:.6} after moving a target")))
    };
    CheckReport::from_result("target stop", run())
}

/// The enumerated matrix-game optimum.
pub fn matrix_optimum() -> CheckReport {
    let r = matrix_game_optimum(&mut MatrixGame::climb()).map(|(a, v)| (a == vec![0, 0] && v == 11.0, format!("{a:?} -> {v}")));
    CheckReport::from_result("matrix game optimum", r)
}

/// Every suite that finishes in a few seconds.
pub fn run_all(instances: usize, seed: u64) -> Vec<CheckReport> {
    vec![
        expectation_identity(instances, seed),
        entropy_identities(instances, seed),
        gradient_oracle(seed),
        counterfactual_baseline(instances.min(200).max(1), seed),
        monotonicity(instances.max(1000), seed),
        alpha_dynamics(seed),
        variant_wiring(),
        epsilon_endpoints(),
        reward_standardization(seed),
        padding_neutrality(seed),
        target_stop(seed),
        matrix_optimum(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for report in run_all(50, 11) {
            assert!(report.passed, "{}: {}", report.name, report.detail);
        }
    }

    use crate::oracle::direct_mix;

    #[test]
    fn direct_mix_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [MixerKind::Linear, MixerKind::Stacked { width: 3 }] {
            let layout = MixerLayout {
                kind,
                ..MixerLayout::linear(3, 2)
            };
            let head = MixingHead::random(layout, &mut rng).unwrap();
            let (s, v) = ([0.2, -1.1], [1.0, -2.0, 0.5]);
            assert!((head.mixing_forward(&s, &v).unwrap() - direct_mix(&head, &s, &v)).abs() < 1e-12);
        }
    }
}
