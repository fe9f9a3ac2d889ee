//! Perception + latent policy trained end-to-end with single-step PPO on
//! clutter-free template scenes.

use std::f64::consts::PI;

use clutterbridge_numcore::{Adam, Batch, Checkpoint, Gradients, Net, ParamSet, Tensor};
use clutterbridge_sim::{render, sample_scene, score, DomainKind, Image, SceneSpec, Task, Trajectory};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::arch;
use crate::error::{CoreError, Result};
use crate::nets;
use crate::rng::stream;
use crate::trajgen::{TrajVae, LATENT_DIM};

pub const LOG_STD: &str = "log_std";

/// Stacks images into a network batch.
pub fn image_batch<'a, I: IntoIterator<Item = &'a Image>>(images: I) -> Result<Batch> {
    Ok(Batch::from_samples(Image::shape().to_vec(), images.into_iter().map(Image::data))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

/// Perception net, policy net and a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub perception: Net,
    pub policy: Net,
    pub std: ParamSet,
}

impl Agent {
    pub fn new(seed: u64, init_log_std: f64) -> Result<Agent> {
        let mut rng = stream(seed, "agent-init");
        let perception = arch::perception(&mut rng)?;
        let policy = arch::policy(arch::FEATURE_DIM, &mut rng)?;
        Agent::from_nets(perception, policy, vec![init_log_std; LATENT_DIM])
    }

    pub fn from_nets(perception: Net, policy: Net, log_std: Vec<f64>) -> Result<Agent> {
        if perception.output_len() != policy.input_shape().iter().product::<usize>() {
            return Err(CoreError::Invalid(format!(
                "perception emits {} features but policy expects {:?}",
                perception.output_len(),
                policy.input_shape()
            )));
        }
        let mut std = ParamSet::new();
        std.insert(LOG_STD, Tensor::from_f64(vec![LATENT_DIM], &log_std)?)?;
        Ok(Agent {
            perception,
            policy,
            std,
        })
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.std.get(LOG_STD).unwrap().to_f64()
    }

    /// Exploration standard deviation, optionally floored.
    pub fn sigma(&self, floor: Option<f64>) -> Vec<f64> {
        self.log_std()
            .iter()
            .map(|l| {
                let s = l.exp();
                floor.map_or(s, |f| s.max(f))
            })
            .collect()
    }

    pub fn features(&self, images: &Batch) -> Result<Batch> {
        Ok(self.perception.forward_batch(images)?)
    }

    /// Latent means for a batch of images.
    pub fn mean_latents(&self, images: &Batch) -> Result<Vec<Vec<f64>>> {
        let mu = self.policy.forward_batch(&self.features(images)?)?;
        Ok(mu.rows().map(<[f64]>::to_vec).collect())
    }

    /// Chooses a latent for one image and decodes it.
    pub fn act<R: Rng>(
        &self,
        vae: &TrajVae,
        image: &Image,
        mode: ActMode,
        floor: Option<f64>,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Trajectory)> {
        let mu = self.mean_latents(&image_batch([image])?)?.remove(0);
        let z = match mode {
            ActMode::Mean => mu,
            ActMode::Sample => sample_gaussian(&mu, &self.sigma(floor), rng),
        };
        let traj = vae.decode(&z)?;
        Ok((z, traj))
    }

    /// Deployment tensors: `perception.*`, `policy.*` and `policy.log_std`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut t = nets::export("perception", &self.perception);
        t.extend(nets::export("policy", &self.policy));
        t.push((format!("policy.{LOG_STD}"), self.std.get(LOG_STD).unwrap().clone()));
        Checkpoint::new(t)
    }

    /// Restores an agent whose perception head matches `perception_template`.
    pub fn from_checkpoint_with(ckpt: &Checkpoint, perception_template: &Net) -> Result<Agent> {
        let perception = nets::restore(perception_template, ckpt, "perception")?;
        let mut rng = stream(0, "policy-template");
        let template = arch::policy(perception.output_len(), &mut rng)?;
        let policy = nets::restore(&template, ckpt, "policy")?;
        let log_std = ckpt
            .get(&format!("policy.{LOG_STD}"))
            .ok_or_else(|| CoreError::Format("checkpoint lacks policy.log_std".into()))?
            .to_f64();
        Agent::from_nets(perception, policy, log_std)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Agent> {
        let template = if ckpt.get("perception.l7.w").is_some() {
            arch::perception(&mut stream(0, "perception-template"))?
        } else {
            arch::keypoint_perception(&mut stream(0, "perception-template"))?
        };
        Agent::from_checkpoint_with(ckpt, &template)
    }

    pub fn param_hash(&self) -> String {
        crate::hash_str(&format!(
            "{}{}{}",
            self.perception.params().content_hash(),
            self.policy.params().content_hash(),
            self.std.content_hash()
        ))
    }
}

fn sample_gaussian<R: Rng>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(rng);
            m + s * e
        })
        .collect()
}

/// Diagonal-Gaussian log density.
pub fn log_prob(z: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    z.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((z, m), s)| -0.5 * ((z - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln())
        .sum()
}

/// Single-step episodes gathered under one policy snapshot.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub scenes: Vec<SceneSpec>,
    pub images: Batch,
    pub latents: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

/// Samples `n` template scenes, acts on each, and scores the outcome.
pub fn collect_episodes(
    agent: &Agent,
    vae: &TrajVae,
    task: Task,
    n: usize,
    floor: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeBatch> {
    let sigma = agent.sigma(floor);
    collect_with(agent, vae, task, n, floor, rng, |_, mu, rng| sample_gaussian(mu, &sigma, rng))
}

/// Like [`collect_episodes`] but with the latent chosen by `pick`, which sees
/// the scene and the policy mean. Log-probabilities stay those of the policy.
pub fn collect_with<F>(
    agent: &Agent,
    vae: &TrajVae,
    task: Task,
    n: usize,
    floor: Option<f64>,
    rng: &mut ChaCha8Rng,
    mut pick: F,
) -> Result<EpisodeBatch>
where
    F: FnMut(&SceneSpec, &[f64], &mut ChaCha8Rng) -> Vec<f64>,
{
    if n == 0 {
        return Err(CoreError::Invalid("episode batch size must be at least 1".into()));
    }
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        scenes.push(sample_scene(task, DomainKind::SourcePlain, None, rng.gen())?);
    }
    let rendered: Vec<Image> = scenes.iter().map(render).collect();
    let images = image_batch(&rendered)?;
    let means = agent.mean_latents(&images)?;
    let sigma = agent.sigma(floor);
    let mut latents = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    for (scene, mu) in scenes.iter().zip(&means) {
        let z = pick(scene, mu, rng);
        log_probs.push(log_prob(&z, mu, &sigma));
        latents.push(z);
    }
    let trajs = vae.decode_batch(&latents)?;
    let rewards = trajs
        .iter()
        .zip(&scenes)
        .map(|(t, s)| Ok(score(t, s)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EpisodeBatch {
        scenes,
        images,
        latents,
        rewards,
        log_probs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub iterations: usize,
    pub batch: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub lr: f64,
    pub lr_std: f64,
    pub init_log_std: f64,
    /// Lower bound on the exploration standard deviation; `None` disables it.
    pub sigma_floor: Option<f64>,
    pub eval_scenes: usize,
    pub eval_every: usize,
    /// Required mean-mode success on fresh scenes after training.
    pub target: f64,
    /// Stop once this many consecutive evaluations reach `stop_at`. The
    /// snapshot with the best evaluation score is returned either way.
    pub early_stop: Option<usize>,
    pub stop_at: f64,
    pub task: Task,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            iterations: 800,
            batch: 64,
            minibatch: 32,
            epochs: 4,
            clip: 0.2,
            lr: 3e-4,
            lr_std: 1e-3,
            init_log_std: 0.0,
            sigma_floor: Some(0.05),
            eval_scenes: 200,
            eval_every: 5,
            target: 0.9,
            early_stop: Some(3),
            stop_at: 0.95,
            task: Task::Picking,
        }
    }
}

/// Adam state for the three parameter groups of an [`Agent`].
#[derive(Debug, Clone)]
pub struct AgentOptim {
    pub perception: Adam,
    pub policy: Adam,
    pub std: Adam,
}

impl AgentOptim {
    pub fn new(lr: f64, lr_std: f64) -> Self {
        AgentOptim {
            perception: Adam::new(lr),
            policy: Adam::new(lr),
            std: Adam::new(lr_std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoStats {
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub max_perception_grad: f64,
}

/// Gradients of the clipped surrogate loss on a subset of a batch.
pub struct PpoGrads {
    pub perception: Gradients,
    pub policy: Gradients,
    pub std: Gradients,
    pub surrogate: f64,
    pub clipped: usize,
}

/// Loss `-mean min(ρA, clip(ρ)A)` and its gradients for the listed episodes.
pub fn ppo_gradients(
    agent: &Agent,
    batch: &EpisodeBatch,
    advantages: &[f64],
    idx: &[usize],
    clip: f64,
    floor: Option<f64>,
) -> Result<PpoGrads> {
    let m = idx.len();
    let images = batch.images.select(idx);
    let (feat, p_trace) = agent.perception.forward_trace(&images)?;
    let (mu, pi_trace) = agent.policy.forward_trace(&feat)?;
    let log_std = agent.log_std();
    let sigma = agent.sigma(floor);
    let mut d_mu = vec![0.0; m * LATENT_DIM];
    let mut d_log_std = vec![0.0; LATENT_DIM];
    let mut surrogate = 0.0;
    let mut clipped = 0;
    for (j, &i) in idx.iter().enumerate() {
        let z = &batch.latents[i];
        let mu_i = mu.sample(j);
        let ratio = (log_prob(z, mu_i, &sigma) - batch.log_probs[i]).exp();
        let a = advantages[i];
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        surrogate += (ratio * a).min(clipped_ratio * a);
        let active = (a > 0.0 && ratio < 1.0 + clip) || (a < 0.0 && ratio > 1.0 - clip);
        if !active {
            if a != 0.0 {
                clipped += 1;
            }
            continue;
        }
        // dL/dlogp for L = -ρA/m
        let g = -a * ratio / m as f64;
        for d in 0..LATENT_DIM {
            let s2 = sigma[d] * sigma[d];
            d_mu[j * LATENT_DIM + d] = g * (z[d] - mu_i[d]) / s2;
            let floored = floor.is_some_and(|f| log_std[d].exp() < f);
            if !floored {
                d_log_std[d] += g * ((z[d] - mu_i[d]).powi(2) / s2 - 1.0);
            }
        }
    }
    let (g_pi, d_feat) = agent.policy.backward_trace(&pi_trace, &Batch::new(m, vec![LATENT_DIM], d_mu)?)?;
    let (g_p, _) = agent.perception.backward_trace(&p_trace, &d_feat)?;
    let mut g_std = Gradients::zeros_like(&agent.std);
    g_std.insert(LOG_STD, d_log_std);
    Ok(PpoGrads {
        perception: g_p,
        policy: g_pi,
        std: g_std,
        surrogate: -surrogate / m as f64,
        clipped,
    })
}

/// Mean-reward baseline advantages.
pub fn advantages(rewards: &[f64]) -> Vec<f64> {
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    rewards.iter().map(|r| r - mean).collect()
}

/// Several epochs of clipped-surrogate minibatch updates on one batch.
pub fn ppo_update(
    agent: &mut Agent,
    opt: &mut AgentOptim,
    batch: &EpisodeBatch,
    cfg: &RlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(CoreError::Invalid("empty episode batch".into()));
    }
    let adv = advantages(&batch.rewards);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut updates = 0;
    let mut clipped = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch.max(1)) {
            let g = ppo_gradients(agent, batch, &adv, idx, cfg.clip, cfg.sigma_floor)?;
            if !g.surrogate.is_finite() {
                return Err(CoreError::NonFiniteLoss {
                    component: "ppo surrogate",
                    step: updates,
                });
            }
            stats.max_perception_grad = stats.max_perception_grad.max(g.perception.max_abs());
            stats.surrogate += g.surrogate;
            clipped += g.clipped;
            opt.perception.step(agent.perception.params_mut(), &g.perception)?;
            opt.policy.step(agent.policy.params_mut(), &g.policy)?;
            opt.std.step(&mut agent.std, &g.std)?;
            updates += 1;
        }
    }
    stats.surrogate /= updates as f64;
    stats.clip_fraction = clipped as f64 / (cfg.epochs * batch.len()) as f64;
    Ok(stats)
}

/// Fixed evaluation scenes with their rendered images.
pub struct EvalSet {
    pub scenes: Vec<SceneSpec>,
    pub images: Batch,
}

impl EvalSet {
    pub fn new(task: Task, domain: DomainKind, object: Option<u16>, n: usize, rng: &mut ChaCha8Rng) -> Result<EvalSet> {
        let mut scenes = Vec::with_capacity(n);
        for _ in 0..n {
            scenes.push(sample_scene(task, domain, object, rng.gen())?);
        }
        let rendered: Vec<Image> = scenes.iter().map(render).collect();
        Ok(EvalSet {
            images: image_batch(&rendered)?,
            scenes,
        })
    }

    /// Per-scene scores of the agent's mean action.
    pub fn scores(&self, agent: &Agent, vae: &TrajVae) -> Result<Vec<f64>> {
        let trajs = vae.decode_batch(&agent.mean_latents(&self.images)?)?;
        trajs
            .iter()
            .zip(&self.scenes)
            .map(|(t, s)| Ok(score(t, s)?))
            .collect()
    }

    pub fn mean_score(&self, agent: &Agent, vae: &TrajVae) -> Result<f64> {
        let s = self.scores(agent, vae)?;
        Ok(s.iter().sum::<f64>() / s.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_mode_eval: f64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iteration,mean_reward,mean_mode_eval\n");
    for p in curve {
        s.push_str(&format!("{},{:.6},{:.6}\n", p.iteration, p.mean_reward, p.mean_mode_eval));
    }
    s
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    /// Mean-mode success on scenes never seen during training.
    pub final_eval: f64,
    pub warnings: Vec<String>,
}

/// Standard deviation below which an unfloored policy counts as collapsed.
pub const COLLAPSE_SIGMA: f64 = 1e-3;

/// Trains a fresh agent on clutter-free template scenes.
pub fn train_policy(vae: &TrajVae, cfg: &RlConfig, seed: u64) -> Result<PolicyRun> {
    let agent = Agent::new(seed, cfg.init_log_std)?;
    train_policy_from(agent, vae, cfg, seed)
}

pub fn train_policy_from(mut agent: Agent, vae: &TrajVae, cfg: &RlConfig, seed: u64) -> Result<PolicyRun> {
    if cfg.batch == 0 {
        return Err(CoreError::Invalid("batch must be at least 1".into()));
    }
    let mut rng = stream(seed, "rl-episodes");
    let mut update_rng = stream(seed, "rl-updates");
    let eval = EvalSet::new(cfg.task, DomainKind::SourcePlain, None, cfg.eval_scenes, &mut stream(seed, "rl-eval"))?;
    let mut opt = AgentOptim::new(cfg.lr, cfg.lr_std);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut warnings = Vec::new();
    let mut last_eval = 0.0;
    let mut streak = 0;
    let mut best = f64::NEG_INFINITY;
    let mut best_agent = agent.clone();
    for it in 0..cfg.iterations {
        let batch = collect_episodes(&agent, vae, cfg.task, cfg.batch, cfg.sigma_floor, &mut rng)?;
        ppo_update(&mut agent, &mut opt, &batch, cfg, &mut update_rng)?;
        let evaluated = (it + 1) % cfg.eval_every.max(1) == 0 || it + 1 == cfg.iterations;
        if evaluated {
            last_eval = eval.mean_score(&agent, vae)?;
            if last_eval > best {
                best = last_eval;
                best_agent = agent.clone();
            }
        }
        curve.push(CurvePoint {
            iteration: it,
            mean_reward: batch.mean_reward(),
            mean_mode_eval: last_eval,
        });
        log::debug!("rl iteration {it}: reward {:.3} eval {last_eval:.3}", batch.mean_reward());
        if cfg.sigma_floor.is_none()
            && warnings.is_empty()
            && best < cfg.stop_at
            && agent.sigma(None).iter().any(|s| *s < COLLAPSE_SIGMA)
        {
            let w = format!(
                "premature collapse: exploration std fell below {COLLAPSE_SIGMA} at iteration {it} \
                 while evaluation success was {last_eval:.3}"
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        if let (Some(patience), true) = (cfg.early_stop, evaluated) {
            streak = if last_eval >= cfg.stop_at { streak + 1 } else { 0 };
            if streak >= patience {
                break;
            }
        }
    }
    let fresh = EvalSet::new(cfg.task, DomainKind::SourcePlain, None, cfg.eval_scenes, &mut stream(seed, "rl-final"))?;
    let agent = best_agent;
    let final_eval = fresh.mean_score(&agent, vae)?;
    if final_eval < cfg.target {
        return Err(CoreError::NotConverged {
            threshold: cfg.target,
            achieved: final_eval,
            curve,
        });
    }
    Ok(PolicyRun {
        agent,
        curve,
        final_eval,
        warnings,
    })
}
