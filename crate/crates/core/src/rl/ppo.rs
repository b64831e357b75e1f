//! Rollout collection, generalized advantage estimation and the clipped
//! surrogate update.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::optim::{clip_global_norm, Adam};
use super::policy::Policy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub minibatch_size: usize,
    pub num_steps: usize,
    /// Entropy coefficient `c1`.
    pub ent_coef: f64,
    /// Value-loss coefficient `c2`.
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

/// Partial `[*.ppo]` table; unset keys keep the agent's own defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PpoPatch {
    learning_rate: Option<f64>,
    gamma: Option<f64>,
    minibatch_size: Option<usize>,
    num_steps: Option<usize>,
    ent_coef: Option<f64>,
    vf_coef: Option<f64>,
    max_grad_norm: Option<f64>,
    clip_eps: Option<f64>,
    gae_lambda: Option<f64>,
    epochs: Option<usize>,
    hidden: Option<Vec<usize>>,
    init_log_std: Option<f64>,
}

pub fn deserialize_drl<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<PpoConfig, D::Error> {
    Ok(PpoConfig::drl_default().patched(PpoPatch::deserialize(d)?))
}

pub fn deserialize_switch<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<PpoConfig, D::Error> {
    Ok(PpoConfig::switch_default().patched(PpoPatch::deserialize(d)?))
}

impl PpoConfig {
    /// Continuous joint-space agent defaults.
    pub fn drl_default() -> Self {
        PpoConfig {
            learning_rate: 3e-4,
            gamma: 0.99,
            minibatch_size: 64,
            num_steps: 2048,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            clip_eps: 0.2,
            gae_lambda: 0.95,
            epochs: 10,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }

    /// Discrete switching agent defaults.
    pub fn switch_default() -> Self {
        PpoConfig {
            learning_rate: 1e-3,
            gamma: 0.96,
            minibatch_size: 32,
            num_steps: 200,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            clip_eps: 0.2,
            gae_lambda: 0.95,
            epochs: 10,
            hidden: vec![64, 64],
            init_log_std: 0.0,
        }
    }

    fn patched(mut self, p: PpoPatch) -> Self {
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = p.$f { self.$f = v; })* };
        }
        apply!(learning_rate, gamma, minibatch_size, num_steps, ent_coef, vf_coef, max_grad_norm, clip_eps, gae_lambda, epochs, hidden, init_log_std);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.num_steps {
            return bad("minibatch_size must be in 1..=num_steps");
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return bad("learning_rate and epochs must be positive");
        }
        Ok(())
    }
}

/// One transition as produced by an environment.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Episode ended in a terminal state (no bootstrap).
    pub terminal: bool,
    /// Episode cut by a step budget (bootstrap from `obs`).
    pub truncated: bool,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Step;
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: Vec<bool>,
    /// Episode boundary after this step (terminal or truncated).
    pub ends: Vec<bool>,
    /// Value estimate of the state after a truncated step.
    pub bootstrap: Vec<f64>,
    /// Value of the state following the final step when the episode is still running.
    pub last_value: f64,
    pub episode_returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Actor and critic with their optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: Policy,
    pub value: Mlp,
    opt_net: Adam,
    opt_extra: Adam,
    opt_value: Adam,
}

impl Agent {
    pub fn new(policy: Policy, value: Mlp, lr: f64) -> Self {
        let opt_net = Adam::new(policy.net.num_params(), lr);
        let opt_extra = Adam::new(policy.extra_params().len(), lr);
        let opt_value = Adam::new(value.num_params(), lr);
        Agent {
            policy,
            value,
            opt_net,
            opt_extra,
            opt_value,
        }
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs).map(|v| v[0]).unwrap_or(0.0)
    }
}

/// Persistent environment cursor so consecutive rollouts continue episodes.
#[derive(Debug, Clone, Default)]
pub struct Cursor {
    obs: Option<Vec<f64>>,
    ep_return: f64,
}

pub fn collect_rollout<E: Env>(env: &mut E, agent: &Agent, steps: usize, cursor: &mut Cursor, rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let mut r = Rollout::default();
    let mut obs = match cursor.obs.take() {
        Some(o) => o,
        None => {
            cursor.ep_return = 0.0;
            env.reset(rng)
        }
    };
    for _ in 0..steps {
        let (action, lp) = agent.policy.act(&obs, rng)?;
        let v = agent.value_of(&obs);
        let st = env.step(&action, rng);
        cursor.ep_return += st.reward;
        r.obs.push(obs);
        r.actions.push(action);
        r.logp.push(lp);
        r.rewards.push(st.reward);
        r.values.push(v);
        r.terminal.push(st.terminal);
        let end = st.terminal || st.truncated;
        r.ends.push(end);
        r.bootstrap.push(if st.truncated && !st.terminal { agent.value_of(&st.obs) } else { 0.0 });
        if end {
            r.episode_returns.push(cursor.ep_return);
            cursor.ep_return = 0.0;
            obs = env.reset(rng);
        } else {
            obs = st.obs;
        }
    }
    r.last_value = agent.value_of(&obs);
    cursor.obs = Some(obs);
    Ok(r)
}

/// Generalized advantage estimates and discounted returns.
pub fn gae(r: &Rollout, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if r.terminal[t] {
            0.0
        } else if r.ends[t] {
            r.bootstrap[t]
        } else if t + 1 < n {
            r.values[t + 1]
        } else {
            r.last_value
        };
        let delta = r.rewards[t] + gamma * next_value - r.values[t];
        let carry = if r.ends[t] { 0.0 } else { next_adv };
        next_adv = delta + gamma * lambda * carry;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(&r.values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub aborted: bool,
}

/// Mean completed-episode return, or the mean step reward when no episode ended.
pub fn mean_reward(r: &Rollout) -> f64 {
    if !r.episode_returns.is_empty() {
        r.episode_returns.iter().sum::<f64>() / r.episode_returns.len() as f64
    } else if !r.rewards.is_empty() {
        r.rewards.iter().sum::<f64>() / r.rewards.len() as f64
    } else {
        0.0
    }
}

/// Gradient buffers for the policy network, head parameters and critic.
#[derive(Debug, Clone)]
pub struct Grads {
    pub net: Vec<f64>,
    pub extra: Vec<f64>,
    pub value: Vec<f64>,
}

impl Grads {
    pub fn zeros(agent: &Agent) -> Self {
        Grads {
            net: vec![0.0; agent.policy.net.num_params()],
            extra: vec![0.0; agent.policy.extra_params().len()],
            value: vec![0.0; agent.value.num_params()],
        }
    }

    fn clear(&mut self) {
        for b in [&mut self.net, &mut self.extra, &mut self.value] {
            b.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.net.iter().chain(&self.extra).chain(&self.value).all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    seen: usize,
    clipped: usize,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
}

/// Accumulates the gradient of `−surr − c1·H + c2·(V − R)²` averaged over
/// `chunk`; returns the loss.
#[allow(clippy::too_many_arguments)]
fn minibatch_grads(agent: &Agent, batch: &Rollout, adv: &[f64], ret: &[f64], chunk: &[usize], cfg: &PpoConfig, g: &mut Grads, acc: &mut Tally) -> f64 {
    let scale = 1.0 / chunk.len() as f64;
    let out_dim = agent.policy.net.output_dim();
    let mut loss = 0.0;
    for &i in chunk {
        let (Ok(pc), Ok(vc)) = (agent.policy.net.forward_cached(&batch.obs[i]), agent.value.forward_cached(&batch.obs[i])) else {
            return f64::NAN;
        };
        let out = pc.output();
        let lp = agent.policy.log_prob_from_output(out, &batch.actions[i]);
        let ratio = (lp - batch.logp[i]).exp();
        let a = adv[i];
        let surr = (ratio * a).min(ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a);
        let active = if a >= 0.0 { ratio < 1.0 + cfg.clip_eps } else { ratio > 1.0 - cfg.clip_eps };
        if (ratio - 1.0).abs() > cfg.clip_eps {
            acc.clipped += 1;
        }
        acc.seen += 1;
        let ent = agent.policy.entropy_from_output(out);
        acc.kl += (ratio - 1.0) - (lp - batch.logp[i]);
        acc.policy_loss += -surr;
        acc.entropy += ent;

        let c_logp = if active { -a * ratio * scale } else { 0.0 };
        let mut go = vec![0.0; out_dim];
        agent
            .policy
            .head_grad(out, &batch.actions[i], c_logp, -cfg.ent_coef * scale, &mut go, &mut g.extra);
        agent.policy.net.backward(&pc, &go, &mut g.net);

        let verr = vc.output()[0] - ret[i];
        acc.value_loss += verr * verr;
        agent.value.backward(&vc, &[2.0 * cfg.vf_coef * verr * scale], &mut g.value);
        loss += (-surr - cfg.ent_coef * ent + cfg.vf_coef * verr * verr) * scale;
    }
    loss
}

pub fn ppo_update(agent: &mut Agent, batch: &Rollout, cfg: &PpoConfig, rng: &mut ChaCha8Rng) -> UpdateStats {
    let n = batch.len();
    let mut stats = UpdateStats {
        mean_reward: mean_reward(batch),
        ..Default::default()
    };
    if n == 0 {
        return stats;
    }
    let (mut adv, ret) = gae(batch, cfg.gamma, cfg.gae_lambda);
    if n > 1 {
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt() + 1e-8;
        for a in adv.iter_mut() {
            *a = (*a - mean) / std;
        }
    }

    for opt in [&mut agent.opt_net, &mut agent.opt_extra, &mut agent.opt_value] {
        opt.lr = cfg.learning_rate;
    }
    let snapshot = agent.clone();
    let mut idx: Vec<usize> = (0..n).collect();
    let mb = cfg.minibatch_size.min(n);
    let mut acc = Tally::default();
    let mut g = Grads::zeros(agent);

    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            g.clear();
            let loss = minibatch_grads(agent, batch, &adv, &ret, chunk, cfg, &mut g, &mut acc);
            if !loss.is_finite() || !g.is_finite() {
                log::error!("non-finite loss in policy update; keeping previous parameters");
                *agent = snapshot;
                stats.aborted = true;
                return stats;
            }
            clip_global_norm(&mut [&mut g.net, &mut g.extra, &mut g.value], cfg.max_grad_norm);
            agent.opt_net.step(agent.policy.net.params_mut(), &g.net);
            if !g.extra.is_empty() {
                let Agent { policy, opt_extra, .. } = agent;
                opt_extra.step(policy.extra_params_mut(), &g.extra);
            }
            agent.opt_value.step(agent.value.params_mut(), &g.value);
        }
    }
    let seen_f = acc.seen.max(1) as f64;
    stats.policy_loss = acc.policy_loss / seen_f;
    stats.value_loss = acc.value_loss / seen_f;
    stats.entropy = acc.entropy / seen_f;
    stats.clip_frac = acc.clipped as f64 / seen_f;
    stats.approx_kl = acc.kl / seen_f;
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// Mean return of the greedy policy on held evaluation episodes, when measured.
    pub eval_reward: Option<f64>,
}

pub fn write_stats_csv(path: &std::path::Path, rows: &[StatsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse("stats csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("stats csv", e.to_string()))?;
    crate::error::write_bytes(path, &bytes)
}
