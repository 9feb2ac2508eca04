//! Two-phase off-policy actor-critic training.
//!
//! A twin-critic deterministic policy gradient (delayed actor updates,
//! clipped target-policy smoothing, soft target networks) drives both the
//! reward phase and the constraint phase. The actor is region-enforced and
//! its extra biases are recomputed after every actor update; the critics are
//! plain networks. The constraint phase single-steps from the buffer
//! vertices and stores only repulsion-violating experiences with penalty
//! rewards, per the training process the certificate needs.

mod optim;
mod replay;

pub use optim::Adam;
pub use replay::{Experience, ReplayBuffer};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::envs::{Env, ResetMode};
use crate::geometry::{is_safe, Buffer};
use crate::net::{Activation, Gradients, Mlp};
use crate::police::{enforce_region, fuse, AffineRegion, PoliceState};
use crate::verifier::{self, VerificationReport, WidthCheck};
use crate::{Error, Result};

/// Start-state distribution for reward-phase episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardReset {
    /// Environment nominal start.
    Nominal,
    /// Uniform over the full state box.
    Uniform,
    /// Uniform over the strictly safe states.
    UniformSafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub exploration_noise: f64,
    /// Per-step probability of a uniformly random action during the reward
    /// phase (helps cross value ridges the Gaussian noise cannot).
    pub random_action_prob: f64,
    /// Lookahead of the replay targets: experiences store n-step discounted
    /// reward sums and bootstrap from the n-th successor.
    pub nstep: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub policy_delay: usize,
    pub tau: f64,
    pub reward_threshold: f64,
    pub reward_window: usize,
    pub constraint_penalty: f64,
    /// Reward penalty when the raw actor output leaves the action set.
    pub admissibility_penalty: f64,
    /// Weight of the actor-loss boundary regularizer.
    pub admissibility_weight: f64,
    /// Inward margin (fraction of the half-range) of the regularizer box,
    /// so raw outputs settle strictly inside the action set.
    pub admissibility_margin: f64,
    pub curriculum_stages: usize,
    pub vertex_reset_fraction: f64,
    pub episode_len: usize,
    pub max_episodes: usize,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub constraint_updates_per_vertex: usize,
    pub max_constraint_sweeps: usize,
    pub coverage_samples: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub critic_hidden: Vec<usize>,
    pub standard_reset: StandardReset,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 128,
            replay_capacity: 200_000,
            exploration_noise: 0.15,
            random_action_prob: 0.05,
            nstep: 1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            tau: 0.005,
            reward_threshold: 0.0,
            reward_window: 10,
            constraint_penalty: 10.0,
            admissibility_penalty: 10.0,
            admissibility_weight: 1e4,
            admissibility_margin: 0.03,
            curriculum_stages: 10,
            vertex_reset_fraction: 0.1,
            episode_len: 100,
            max_episodes: 2000,
            warmup_steps: 1000,
            updates_per_step: 1,
            constraint_updates_per_vertex: 4,
            max_constraint_sweeps: 100,
            coverage_samples: 100,
            eval_episodes: 5,
            checkpoint_every: 0,
            critic_hidden: vec![64, 64],
            standard_reset: StandardReset::UniformSafe,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1], got {}", self.discount)));
        }
        if self.actor_lr < 0.0 || self.critic_lr < 0.0 {
            return Err(Error::Config("learning rates cannot be negative".into()));
        }
        if !(0.0..=1.0).contains(&self.vertex_reset_fraction) {
            return Err(Error::Config("vertex reset fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.episode_len == 0 || self.reward_window == 0 {
            return Err(Error::Config("batch size, episode length and reward window must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if self.policy_delay == 0 || self.curriculum_stages == 0 {
            return Err(Error::Config("policy delay and curriculum stages must be positive".into()));
        }
        Ok(())
    }
}

/// The trained policy network plus its optional enforced region state.
#[derive(Debug, Clone)]
pub struct Actor {
    pub net: Mlp,
    pub police: Option<PoliceState>,
}

impl Actor {
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        crate::police::forward(&self.net, self.police.as_ref(), s)
    }

    /// Recompute the extra biases for the current weights (no-op for
    /// unconstrained actors).
    pub fn refresh(&mut self, region: &AffineRegion) -> Result<()> {
        if self.police.is_some() {
            self.police = Some(enforce_region(&self.net, region)?);
        }
        Ok(())
    }

    /// Hidden-layer biases with the extra biases folded in.
    fn effective_biases(&self) -> Vec<Vec<f64>> {
        let mut biases = self.net.biases.clone();
        if let Some(p) = &self.police {
            for (b, e) in biases.iter_mut().zip(&p.extra_biases) {
                for (bj, ej) in b.iter_mut().zip(e) {
                    *bj += ej;
                }
            }
        }
        biases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Standard,
    Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub phase: Phase,
    pub ret: f64,
    pub vertex_fraction: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub converged: bool,
    pub episodes: usize,
    pub mean_return: f64,
    pub experiences_added: usize,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Deployment network: extra biases folded into the standard biases.
    pub fused: Mlp,
    pub police: Option<PoliceState>,
    pub report: VerificationReport,
    /// Repulsion holds, the pattern is valid, and every vertex action is
    /// admissible.
    pub certified: bool,
    pub converged: bool,
    /// Raw vertex actions lie inside the action set.
    pub admissible: bool,
    /// The fused network still pins one activation pattern over the buffer.
    pub pattern_ok: bool,
    pub metrics: Vec<MetricsRow>,
}

/// Twin critics with their target copies and the target actor.
struct Td3 {
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    actor_target: Mlp,
    adam_q1: Adam,
    adam_q2: Adam,
    adam_actor: Adam,
    updates: usize,
}

/// Mean critic value of the actor's actions over a batch of states, and its
/// gradient with respect to the actor parameters.
pub fn actor_objective_gradient(
    actor_net: &Mlp,
    police: Option<&PoliceState>,
    critic: &Mlp,
    states: &[Vec<f64>],
) -> Result<(Gradients, f64)> {
    let b = states.len() as f64;
    let mut grads = Gradients::zeros_like(actor_net);
    let mut objective = 0.0;
    let extras = police.map(|p| p.extra_biases.as_slice());
    for s in states {
        let trace = actor_net.forward_traced(extras, s)?;
        let mut x = s.clone();
        x.extend_from_slice(trace.output());
        let (q, dx) = {
            let trace_q = critic.forward_traced(None, &x)?;
            let (_, dx) = critic.gradient_traced(&trace_q, &[1.0 / b])?;
            (trace_q.output()[0], dx)
        };
        objective += q / b;
        let upstream = &dx[s.len()..];
        let (g, _) = actor_net.gradient_traced(&trace, upstream)?;
        grads.add_assign(&g);
    }
    Ok((grads, objective))
}

/// Gradient of the mean squared action-box excess of the raw actor outputs:
/// the differentiable counterpart of the admissibility reward penalty, which
/// an off-policy critic cannot propagate back to the raw action by itself.
pub fn admissibility_gradient(
    actor_net: &Mlp,
    police: Option<&PoliceState>,
    action_box: &crate::geometry::AxisBox,
    weight: f64,
    states: &[Vec<f64>],
) -> Result<(Gradients, f64)> {
    let b = states.len() as f64;
    let mut grads = Gradients::zeros_like(actor_net);
    let mut penalty = 0.0;
    let extras = police.map(|p| p.extra_biases.as_slice());
    for s in states {
        let trace = actor_net.forward_traced(extras, s)?;
        let out = trace.output();
        let mut upstream = vec![0.0; out.len()];
        let mut any = false;
        for (j, aj) in out.iter().enumerate() {
            let over = (aj - action_box.upper[j]).max(0.0);
            let under = (action_box.lower[j] - aj).max(0.0);
            penalty += weight * (over * over + under * under) / b;
            if over > 0.0 || under > 0.0 {
                upstream[j] = 2.0 * weight * (over - under) / b;
                any = true;
            }
        }
        if any {
            let (g, _) = actor_net.gradient_traced(&trace, &upstream)?;
            grads.add_assign(&g);
        }
    }
    Ok((grads, penalty))
}

fn polyak(target: &mut Mlp, weights: &[crate::linalg::Matrix], biases: &[Vec<f64>], tau: f64) {
    for (tw, sw) in target.weights.iter_mut().zip(weights) {
        for (t, s) in tw.as_mut_slice().iter_mut().zip(sw.as_slice()) {
            *t += tau * (s - *t);
        }
    }
    for (tb, sb) in target.biases.iter_mut().zip(biases) {
        for (t, s) in tb.iter_mut().zip(sb) {
            *t += tau * (s - *t);
        }
    }
}

/// Region grown linearly from the buffer centroid toward the full vertex
/// set; stage 0 is the centroid alone.
pub fn curriculum_region(buffer: &Buffer, stage: usize, stages: usize) -> Result<AffineRegion> {
    let full = AffineRegion::new(buffer.vertices.clone())?;
    if stage >= stages {
        return Ok(full);
    }
    let centroid = full.centroid();
    if stage == 0 {
        return AffineRegion::new(vec![centroid]);
    }
    let scale = stage as f64 / stages as f64;
    let vertices = buffer
        .vertices
        .iter()
        .map(|v| {
            centroid
                .iter()
                .zip(v)
                .map(|(c, vi)| c + scale * (vi - c))
                .collect()
        })
        .collect();
    AffineRegion::new(vertices)
}

pub struct Trainer<'a> {
    env: &'a mut dyn Env,
    buffer: Buffer,
    epsilon: f64,
    config: TrainConfig,
    pub actor: Actor,
    td3: Td3,
    replay: ReplayBuffer,
    rng_env: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    pub metrics: Vec<MetricsRow>,
    episodes: usize,
    global_steps: usize,
    stage: usize,
    region: AffineRegion,
    out_dir: Option<PathBuf>,
    /// Episodes that started inside the enforced region.
    pub in_buffer_starts: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        env: &'a mut dyn Env,
        buffer: Buffer,
        epsilon: f64,
        actor_dims: &[usize],
        activation: Activation,
        config: TrainConfig,
        policed: bool,
        out_dir: Option<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        let n = env.spec().state_dim();
        let m = env.spec().action_dim();
        if actor_dims.first() != Some(&n) || actor_dims.last() != Some(&m) {
            return Err(Error::Config(format!(
                "actor dims {actor_dims:?} do not match env dims ({n} -> {m})"
            )));
        }
        if buffer.dim() != n {
            return Err(Error::Config("buffer dimension does not match the environment".into()));
        }
        let seed = config.seed;
        let net = Mlp::init(actor_dims, activation, seed)?;
        let stages = config.curriculum_stages;
        let stage = if policed { 0 } else { stages };
        let region = curriculum_region(&buffer, stage, stages)?;
        let police = if policed { Some(enforce_region(&net, &region)?) } else { None };
        let actor = Actor { net, police };

        let mut critic_dims = vec![n + m];
        critic_dims.extend_from_slice(&config.critic_hidden);
        critic_dims.push(1);
        let q1 = Mlp::init(&critic_dims, activation, seed.wrapping_add(1))?;
        let q2 = Mlp::init(&critic_dims, activation, seed.wrapping_add(2))?;
        let mut actor_target = actor.net.clone();
        actor_target.biases = actor.effective_biases();
        let td3 = Td3 {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            adam_q1: Adam::new(&q1, config.critic_lr),
            adam_q2: Adam::new(&q2, config.critic_lr),
            adam_actor: Adam::new(&actor.net, config.actor_lr),
            q1,
            q2,
            actor_target,
            updates: 0,
        };
        Ok(Self {
            env,
            buffer,
            epsilon,
            replay: ReplayBuffer::new(config.replay_capacity),
            rng_env: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed_0001)),
            rng_noise: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed_0002)),
            rng_replay: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed_0003)),
            config,
            actor,
            td3,
            metrics: Vec::new(),
            episodes: 0,
            global_steps: 0,
            stage,
            region,
            out_dir,
            in_buffer_starts: 0,
        })
    }

    pub fn episodes_run(&self) -> usize {
        self.episodes
    }

    pub fn current_region(&self) -> &AffineRegion {
        &self.region
    }

    pub fn push_experience(&mut self, e: Experience) {
        self.replay.push(e);
    }

    /// First critic's value at a raw `[state, action]` input.
    pub fn critic_value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.td3.q1.forward(x)?[0])
    }

    fn clip_to_actions(&self, a: &[f64]) -> Vec<f64> {
        self.env.spec().action_box.clamp(a)
    }

    fn action_admissible(&self, raw: &[f64]) -> bool {
        self.env.spec().action_box.contains(raw, 1e-12)
    }

    /// One twin-critic update; every `policy_delay`-th call also updates the
    /// actor (recomputing its extra biases) and the target networks.
    pub fn td_update(&mut self) -> Result<(f64, Option<f64>)> {
        let batch: Vec<Experience> = self
            .replay
            .sample(self.config.batch_size, &mut self.rng_replay)
            .into_iter()
            .cloned()
            .collect();
        if batch.is_empty() {
            return Ok((0.0, None));
        }
        let b = batch.len() as f64;
        let m = self.env.spec().action_dim();
        let action_box = self.env.spec().action_box.clone();
        let noise = Normal::new(0.0, self.config.target_noise).expect("valid noise sigma");

        let mut targets = Vec::with_capacity(batch.len());
        for e in &batch {
            let mut a_next = self.td3.actor_target.forward(&e.s_next)?;
            for aj in a_next.iter_mut().take(m) {
                let n: f64 = noise.sample(&mut self.rng_noise);
                *aj += n.clamp(-self.config.target_noise_clip, self.config.target_noise_clip);
            }
            let a_next = action_box.clamp(&a_next);
            let mut x = e.s_next.clone();
            x.extend_from_slice(&a_next);
            let q = self.td3.q1_target.forward(&x)?[0].min(self.td3.q2_target.forward(&x)?[0]);
            let cont = if e.done { 0.0 } else { 1.0 };
            let boot = self.config.discount.powi(e.steps.max(1) as i32);
            targets.push(e.reward + boot * cont * q);
        }

        let mut critic_loss = 0.0;
        for which in 0..2 {
            let (qnet, adam) = if which == 0 {
                (&mut self.td3.q1, &mut self.td3.adam_q1)
            } else {
                (&mut self.td3.q2, &mut self.td3.adam_q2)
            };
            let mut grads = Gradients::zeros_like(qnet);
            let mut loss = 0.0;
            for (e, y) in batch.iter().zip(&targets) {
                let mut x = e.s.clone();
                x.extend_from_slice(&e.a);
                let trace = qnet.forward_traced(None, &x)?;
                let pred = trace.output()[0];
                loss += (pred - y) * (pred - y) / b;
                let (g, _) = qnet.gradient_traced(&trace, &[2.0 * (pred - y) / b])?;
                grads.add_assign(&g);
            }
            adam.step(qnet, &grads);
            if which == 0 {
                critic_loss = loss;
            }
        }

        self.td3.updates += 1;
        let mut actor_loss = None;
        if self.td3.updates % self.config.policy_delay == 0 {
            let states: Vec<Vec<f64>> = batch.iter().map(|e| e.s.clone()).collect();
            let (mut grads, objective) = actor_objective_gradient(
                &self.actor.net,
                self.actor.police.as_ref(),
                &self.td3.q1,
                &states,
            )?;
            grads.scale(-1.0);
            let mut shrunk = action_box.clone();
            for j in 0..shrunk.dim() {
                let inset = 0.5
                    * self.config.admissibility_margin
                    * (shrunk.upper[j] - shrunk.lower[j]);
                shrunk.lower[j] += inset;
                shrunk.upper[j] -= inset;
            }
            let (box_grads, _) = admissibility_gradient(
                &self.actor.net,
                self.actor.police.as_ref(),
                &shrunk,
                self.config.admissibility_weight,
                &states,
            )?;
            grads.add_assign(&box_grads);
            self.td3.adam_actor.step(&mut self.actor.net, &grads);
            self.actor.refresh(&self.region)?;
            actor_loss = Some(-objective);

            let tau = self.config.tau;
            let effective = self.actor.effective_biases();
            polyak(&mut self.td3.actor_target, &self.actor.net.weights, &effective, tau);
            polyak(&mut self.td3.q1_target, &self.td3.q1.weights, &self.td3.q1.biases, tau);
            polyak(&mut self.td3.q2_target, &self.td3.q2.weights, &self.td3.q2.biases, tau);
        }
        Ok((critic_loss, actor_loss))
    }

    /// Fraction of full-buffer vertices currently satisfying the discrete
    /// repulsion condition under the raw plant dynamics.
    pub fn vertex_fraction(&self) -> Result<f64> {
        let c = &self.buffer.constraint;
        let mut good = 0usize;
        for v in &self.buffer.vertices {
            let a = self.clip_to_actions(&self.actor.act(v)?);
            let s_next = self.env.dynamics(v, &a);
            let margin = c.value(&s_next) - c.value(v) + 2.0 * self.epsilon * self.env.spec().dt;
            if margin <= 0.0 {
                good += 1;
            }
        }
        Ok(good as f64 / self.buffer.vertices.len() as f64)
    }

    fn coverage(&self, seed: u64) -> Result<f64> {
        if self.config.coverage_samples == 0 {
            return Ok(f64::NAN);
        }
        let actor = &self.actor;
        let action_box = self.env.spec().action_box.clone();
        let env: &dyn Env = self.env;
        verifier::coverage_scan(
            |s| Ok(action_box.clamp(&actor.act(s)?)),
            |s, a| Ok(env.dynamics(s, a)),
            &self.buffer,
            self.epsilon,
            env.spec().dt,
            self.config.coverage_samples,
            seed,
        )
    }

    fn record(&mut self, phase: Phase, ret: f64) -> Result<()> {
        let vf = self.vertex_fraction()?;
        let cov = self.coverage(self.config.seed ^ ((self.episodes as u64) << 1))?;
        self.metrics.push(MetricsRow { episode: self.episodes, phase, ret, vertex_fraction: vf, coverage: cov });
        if self.config.checkpoint_every > 0
            && self.episodes % self.config.checkpoint_every == 0
        {
            if let Some(dir) = self.out_dir.clone() {
                let ckpt = Checkpoint::from_net(&self.actor.net, self.actor.police.as_ref());
                ckpt.save(&dir.join(format!("checkpoint_ep{}.json", self.episodes)))?;
            }
        }
        Ok(())
    }

    fn standard_reset_state(&mut self) -> Result<Vec<f64>> {
        match self.config.standard_reset {
            StandardReset::Nominal => self.env.reset(ResetMode::Nominal, None, &mut self.rng_env),
            StandardReset::Uniform => self.env.reset(ResetMode::Uniform, None, &mut self.rng_env),
            StandardReset::UniformSafe => {
                let spec = self.env.spec().clone();
                for _ in 0..10_000 {
                    let s = self.env.reset(ResetMode::Uniform, None, &mut self.rng_env)?;
                    if is_safe(&spec.constraint, &spec.state_box, &s) {
                        return Ok(s);
                    }
                }
                Err(Error::Env("could not sample a safe start state".into()))
            }
        }
    }

    /// One training episode; returns the (penalty-adjusted) return.
    fn run_episode(&mut self) -> Result<f64> {
        // One in `1/vertex_reset_fraction` episodes starts inside the
        // current enforced region.
        let in_buffer = self.rng_env.random::<f64>() < self.config.vertex_reset_fraction;
        let mut s = if in_buffer {
            self.in_buffer_starts += 1;
            let s = self.region.sample_convex(&mut self.rng_env);
            self.env.set_state(&s)?;
            s
        } else {
            self.standard_reset_state()?
        };
        let mut trajectory: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64, bool)> =
            Vec::with_capacity(self.config.episode_len);
        let noise = Normal::new(0.0, self.config.exploration_noise).expect("valid sigma");
        let action_box = self.env.spec().action_box.clone();
        let m = action_box.dim();
        let mut ret = 0.0;
        for _ in 0..self.config.episode_len {
            let warmup = self.global_steps < self.config.warmup_steps;
            let explore =
                warmup || self.rng_noise.random::<f64>() < self.config.random_action_prob;
            let raw = self.actor.act(&s)?;
            let a = if explore {
                action_box.sample(&mut self.rng_noise)
            } else {
                let mut a = raw.clone();
                for aj in a.iter_mut().take(m) {
                    *aj += noise.sample(&mut self.rng_noise);
                }
                a
            };
            let executed = action_box.clamp(&a);
            let result = self.env.step(&executed);
            let mut reward = result.reward;
            // Penalize inadmissible raw policy outputs on the steps the
            // policy actually produced the stored action.
            if !explore && !self.action_admissible(&raw) {
                reward -= self.config.admissibility_penalty;
            }
            // The pre-clip action is stored so the critic can attribute the
            // admissibility penalty to the action that caused it.
            trajectory.push((s.clone(), a, result.s_next.clone(), reward, result.done));
            ret += reward;
            self.global_steps += 1;
            if self.global_steps >= self.config.warmup_steps
                && self.replay.len() >= self.config.batch_size
            {
                for _ in 0..self.config.updates_per_step {
                    self.td_update()?;
                }
            }
            s = result.s_next;
            if result.done {
                break;
            }
        }
        self.push_nstep(&trajectory);
        Ok(ret)
    }

    /// Aggregate an episode into n-step replay experiences.
    fn push_nstep(&mut self, trajectory: &[(Vec<f64>, Vec<f64>, Vec<f64>, f64, bool)]) {
        let n = self.config.nstep.max(1);
        let gamma = self.config.discount;
        for t in 0..trajectory.len() {
            let span = n.min(trajectory.len() - t);
            let mut reward = 0.0;
            let mut steps = 0;
            let mut done = false;
            for k in 0..span {
                let (_, _, _, r, d) = &trajectory[t + k];
                reward += gamma.powi(k as i32) * r;
                steps = k + 1;
                if *d {
                    done = true;
                    break;
                }
            }
            let (s, a, _, _, _) = &trajectory[t];
            let (_, _, s_next, _, _) = &trajectory[t + steps - 1];
            self.replay.push(Experience {
                s: s.clone(),
                a: a.clone(),
                s_next: s_next.clone(),
                reward,
                done,
                steps,
            });
        }
    }

    /// Reward phase: episodes until the windowed mean return reaches the
    /// threshold or the global episode budget runs out.
    pub fn standard_phase(&mut self) -> Result<PhaseReport> {
        let window = self.config.reward_window;
        let mut returns: Vec<f64> = Vec::new();
        loop {
            if self.episodes >= self.config.max_episodes {
                let mean = mean_tail(&returns, window);
                return Ok(PhaseReport {
                    converged: false,
                    episodes: returns.len(),
                    mean_return: mean,
                    experiences_added: 0,
                    sweeps: 0,
                });
            }
            let ret = self.run_episode()?;
            self.episodes += 1;
            returns.push(ret);
            self.record(Phase::Standard, ret)?;
            if returns.len() >= window {
                let mean = mean_tail(&returns, window);
                if mean >= self.config.reward_threshold {
                    return Ok(PhaseReport {
                        converged: true,
                        episodes: returns.len(),
                        mean_return: mean,
                        experiences_added: 0,
                        sweeps: 0,
                    });
                }
            }
        }
    }

    /// Constraint phase: sweep the buffer vertices with single-step
    /// rollouts; store only repulsion-violating experiences with penalty
    /// rewards and update until every vertex satisfies the condition.
    pub fn constraint_phase(&mut self) -> Result<PhaseReport> {
        let dt = self.env.spec().dt;
        let mut experiences_added = 0usize;
        for sweep in 0..self.config.max_constraint_sweeps {
            if self.episodes >= self.config.max_episodes {
                return Ok(PhaseReport {
                    converged: false,
                    episodes: sweep,
                    mean_return: 0.0,
                    experiences_added,
                    sweeps: sweep,
                });
            }
            let mut all_pass = true;
            let mut sweep_penalty = 0.0;
            for i in 0..self.buffer.vertices.len() {
                let v = self.buffer.vertices[i].clone();
                let raw = self.actor.act(&v)?;
                let a = self.clip_to_actions(&raw);
                let probe = self.env.dynamics(&v, &a);
                let c = &self.buffer.constraint;
                let margin = c.value(&probe) - c.value(&v) + 2.0 * self.epsilon * dt;
                if margin <= 0.0 {
                    continue;
                }
                all_pass = false;
                self.env.set_state(&v)?;
                let result = self.env.step(&a);
                let penalty_reward = -(self.config.constraint_penalty + margin);
                sweep_penalty += penalty_reward;
                self.replay.push(Experience::single(
                    v,
                    raw,
                    result.s_next,
                    penalty_reward,
                    result.done,
                ));
                experiences_added += 1;
                for _ in 0..self.config.constraint_updates_per_vertex {
                    self.td_update()?;
                }
            }
            self.episodes += 1;
            self.record(Phase::Constraint, sweep_penalty)?;
            if all_pass {
                return Ok(PhaseReport {
                    converged: true,
                    episodes: sweep + 1,
                    mean_return: 0.0,
                    experiences_added,
                    sweeps: sweep + 1,
                });
            }
        }
        Ok(PhaseReport {
            converged: false,
            episodes: self.config.max_constraint_sweeps,
            mean_return: 0.0,
            experiences_added,
            sweeps: self.config.max_constraint_sweeps,
        })
    }

    /// Greedy evaluation episodes (no exploration, no learning).
    fn eval_mean_return(&mut self) -> Result<f64> {
        let episodes = self.config.eval_episodes.max(1);
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut s = self.standard_reset_state()?;
            for _ in 0..self.config.episode_len {
                let a = self.clip_to_actions(&self.actor.act(&s)?);
                let result = self.env.step(&a);
                total += result.reward;
                s = result.s_next;
                if result.done {
                    break;
                }
            }
        }
        Ok(total / episodes as f64)
    }

    fn advance_curriculum(&mut self) -> Result<bool> {
        if self.stage >= self.config.curriculum_stages {
            return Ok(false);
        }
        self.stage += 1;
        self.region = curriculum_region(&self.buffer, self.stage, self.config.curriculum_stages)?;
        self.actor.refresh(&self.region)?;
        Ok(true)
    }

    /// Full alternating loop: reward phase, curriculum growth, constraint
    /// phase, and a final joint re-check of reward and repulsion.
    pub fn train(&mut self) -> Result<bool> {
        loop {
            let std_report = self.standard_phase()?;
            if !std_report.converged {
                return Ok(false);
            }
            if self.actor.police.is_some() && self.advance_curriculum()? {
                continue;
            }
            let c_report = self.constraint_phase()?;
            if !c_report.converged {
                if self.episodes >= self.config.max_episodes {
                    return Ok(false);
                }
                continue;
            }
            let reward_ok = self.eval_mean_return()? >= self.config.reward_threshold;
            let vertices_ok = self.vertex_fraction()? >= 1.0;
            if reward_ok && vertices_ok {
                return Ok(true);
            }
            if self.episodes >= self.config.max_episodes {
                return Ok(false);
            }
        }
    }

    /// Final certificate and fused deployment network.
    pub fn finish(mut self, converged: bool) -> Result<TrainResult> {
        let full_region = curriculum_region(&self.buffer, self.config.curriculum_stages, self.config.curriculum_stages)?;
        // A fresh enforcement on the full buffer before fusing.
        if self.actor.police.is_some() {
            self.actor.refresh(&full_region)?;
        }
        let (fused, fused_police) = match &self.actor.police {
            Some(p) => {
                let (f, cleared) = fuse(&self.actor.net, p);
                (f, Some(cleared))
            }
            None => (self.actor.net.clone(), None),
        };

        let action_box = self.env.spec().action_box.clone();
        let env: &dyn Env = self.env;
        let dt = env.spec().dt;
        let mut admissible = true;
        let report = verifier::check_discrete_repulsion(
            |s| {
                let raw = fused.forward(s)?;
                if !action_box.contains(&raw, 1e-9) {
                    admissible = false;
                }
                Ok(action_box.clamp(&raw))
            },
            |s, a| Ok(env.dynamics(s, a)),
            &self.buffer,
            self.epsilon,
            dt,
        )?;
        let report = match env.projection_step_bound(&self.buffer.constraint) {
            Some(bound) => report.with_width_check(WidthCheck::new(bound, self.buffer.radius, true)),
            None => report,
        };

        // The certificate also needs the affine property on the fused net.
        let pattern_ok = match &fused_police {
            Some(p) => crate::police::validate_police(&fused, p).is_ok(),
            None => crate::police::derive_police(
                &fused,
                fused.layer_dims[1..fused.layer_dims.len() - 1]
                    .iter()
                    .map(|&d| vec![0.0; d])
                    .collect(),
                full_region,
            )
            .is_ok(),
        };
        let certified = report.pass && pattern_ok && admissible;
        Ok(TrainResult {
            fused,
            police: fused_police,
            report,
            certified,
            converged,
            admissible,
            pattern_ok,
            metrics: self.metrics,
        })
    }
}

fn mean_tail(values: &[f64], window: usize) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let tail = &values[values.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Metrics file: one row per episode.
pub fn save_metrics(rows: &[MetricsRow], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("episode,return,vertex_satisfaction_fraction,coverage,phase\n");
    for r in rows {
        let phase = match r.phase {
            Phase::Standard => "standard",
            Phase::Constraint => "constraint",
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.episode, r.ret, r.vertex_fraction, r.coverage, phase
        ));
    }
    crate::write_atomic(path, out.as_bytes())
}
