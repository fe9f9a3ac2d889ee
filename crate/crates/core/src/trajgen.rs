//! Variational autoencoder over whole motor trajectories. Its decoder turns
//! a low-dimensional latent into a full trajectory, so a policy only has to
//! choose one latent per episode.

use std::f64::consts::PI;
use std::path::Path;

use clutterbridge_numcore::{mse, Adam, Batch, Checkpoint, Net, NetBuilder, Tensor};
use clutterbridge_sim::{straight_trajectory, Trajectory, ACTION_DIM, HORIZON, MAX_STEP, START};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::binio::{write_atomic, Reader};
use crate::error::{CoreError, Result};
use crate::nets;
use crate::rng::stream;

pub const LATENT_DIM: usize = 3;
pub const TRAJ_LEN: usize = HORIZON * ACTION_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta_kl: f64,
    /// Fraction of epochs over which the KL weight ramps linearly from 0.
    pub warmup_frac: f64,
    pub holdout_frac: f64,
    pub hidden: usize,
    pub min_demos: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 150,
            batch: 64,
            lr: 1e-3,
            beta_kl: 1e-3,
            warmup_frac: 0.2,
            holdout_frac: 0.1,
            hidden: 128,
            min_demos: 500,
        }
    }
}

/// Demonstration corpus used to fit the VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoCorpus {
    pub trajectories: Vec<Trajectory>,
}

const DEMO_GOAL_X: (f64, f64) = (0.05, 0.95);
const DEMO_GOAL_Y: (f64, f64) = (0.1, 1.0);
/// Largest lateral deviation of a demonstration path from the straight line.
pub const DEMO_BULGE: f64 = 0.1;

/// Straight path to `goal` bent sideways by a half-sine of amplitude `bulge`
/// (perpendicular to the path); the end point is unchanged.
pub fn bent_trajectory(goal: [f64; 2], bulge: f64) -> Result<Trajectory> {
    let base = straight_trajectory(goal)?;
    let (dx, dy) = (goal[0] - START[0], goal[1] - START[1]);
    let len = dx.hypot(dy).max(1e-12);
    let normal = [-dy / len, dx / len];
    let offset = |t: usize| bulge * (PI * t as f64 / HORIZON as f64).sin();
    let steps = base
        .steps()
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let d = offset(t + 1) - offset(t);
            [s[0] + d * normal[0], s[1] + d * normal[1]]
        })
        .collect();
    Ok(Trajectory::new(steps)?)
}

impl DemoCorpus {
    /// `n` scripted demonstrations to uniformly drawn goals with random
    /// path bends and per-step Gaussian noise.
    pub fn generate(n: usize, noise: f64, seed: u64) -> Result<DemoCorpus> {
        let mut rng = stream(seed, "demos");
        let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| CoreError::Invalid(e.to_string()))?;
        let mut trajectories = Vec::with_capacity(n);
        for _ in 0..n {
            let goal = [rng.gen_range(DEMO_GOAL_X.0..DEMO_GOAL_X.1), rng.gen_range(DEMO_GOAL_Y.0..DEMO_GOAL_Y.1)];
            let bulge = rng.gen_range(-DEMO_BULGE..DEMO_BULGE);
            let clean = bent_trajectory(goal, bulge)?;
            let steps = clean
                .steps()
                .iter()
                .map(|s| [s[0] + normal.sample(&mut rng), s[1] + normal.sample(&mut rng)])
                .collect();
            trajectories.push(Trajectory::new(steps)?);
        }
        Ok(DemoCorpus { trajectories })
    }

    /// `u32 count, u32 T, u32 M`, then `count·T·M` little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.trajectories.len() * TRAJ_LEN * 4);
        out.extend((self.trajectories.len() as u32).to_le_bytes());
        out.extend((HORIZON as u32).to_le_bytes());
        out.extend((ACTION_DIM as u32).to_le_bytes());
        for t in &self.trajectories {
            for v in t.to_flat() {
                out.extend((v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DemoCorpus> {
        let mut r = Reader::new(bytes);
        let count = r.u32()? as usize;
        let (t, m) = (r.u32()? as usize, r.u32()? as usize);
        if t != HORIZON || m != ACTION_DIM {
            return Err(CoreError::Format(format!("demo corpus has T={t}, M={m}")));
        }
        let mut trajectories = Vec::with_capacity(count);
        for _ in 0..count {
            let mut flat = Vec::with_capacity(TRAJ_LEN);
            for _ in 0..TRAJ_LEN {
                flat.push(r.f32()? as f64);
            }
            trajectories.push(Trajectory::from_flat(&flat)?);
        }
        r.finish()?;
        Ok(DemoCorpus { trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<DemoCorpus> {
        DemoCorpus::from_bytes(&std::fs::read(path)?)
    }
}

/// `KL(N(μ, exp(logvar)) ‖ N(0, I))` for one sample.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

fn normalize(t: &Trajectory) -> Vec<f64> {
    t.to_flat().into_iter().map(|v| v / MAX_STEP).collect()
}

/// Trained trajectory VAE. Instances are only produced frozen, and no method
/// changes their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajVae {
    encoder: Net,
    decoder: Net,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-element reconstruction MSE (workspace units) on the held-out split.
    pub holdout_mse: f64,
    pub holdout: Vec<Trajectory>,
}

fn build_nets(hidden: usize, rng: &mut ChaCha8Rng) -> Result<(Net, Net)> {
    let encoder = NetBuilder::new(&[TRAJ_LEN])
        .dense(hidden)
        .relu()
        .dense(hidden)
        .relu()
        .dense(2 * LATENT_DIM)
        .build(rng)?;
    let decoder = NetBuilder::new(&[LATENT_DIM])
        .dense(hidden)
        .relu()
        .dense(hidden)
        .relu()
        .dense(TRAJ_LEN)
        .build(rng)?;
    Ok((encoder, decoder))
}

/// Fits the VAE on `demos` (after holding out `cfg.holdout_frac`) and returns
/// the frozen model with its training report.
pub fn train_vae(demos: &[Trajectory], cfg: &VaeConfig, seed: u64) -> Result<(TrajVae, VaeReport)> {
    if demos.len() < cfg.min_demos.max(1) {
        return Err(CoreError::Invalid(format!(
            "need at least {} demonstrations, got {}",
            cfg.min_demos.max(1),
            demos.len()
        )));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(CoreError::Invalid("epochs and batch must be positive".into()));
    }
    let mut rng = stream(seed, "vae");
    let (mut encoder, mut decoder) = build_nets(cfg.hidden, &mut rng)?;
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((demos.len() as f64 * cfg.holdout_frac).round() as usize).min(demos.len() - 1);
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train: Vec<Vec<f64>> = train_idx.iter().map(|&i| normalize(&demos[i])).collect();
    let holdout: Vec<Trajectory> = hold_idx.iter().map(|&i| demos[i].clone()).collect();

    let mut opt_e = Adam::new(cfg.lr);
    let mut opt_d = Adam::new(cfg.lr);
    let warmup = (cfg.epochs as f64 * cfg.warmup_frac).max(0.0);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let beta = if warmup > 0.0 {
            cfg.beta_kl * ((epoch as f64 + 1.0) / warmup).min(1.0)
        } else {
            cfg.beta_kl
        };
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(cfg.batch) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let loss = vae_step(&mut encoder, &mut decoder, &mut opt_e, &mut opt_d, &rows, beta, &mut rng);
            match loss {
                Ok(l) if l.is_finite() => total += l,
                _ => {
                    return Err(CoreError::Diverged {
                        epoch,
                        last_finite: epoch.checked_sub(1),
                    })
                }
            }
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("vae epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    let vae = TrajVae {
        encoder,
        decoder,
        frozen: true,
    };
    let holdout_mse = if holdout.is_empty() {
        0.0
    } else {
        vae.reconstruction_mse(&holdout)?
    };
    Ok((
        vae,
        VaeReport {
            epoch_losses,
            holdout_mse,
            holdout,
        },
    ))
}

fn vae_step(
    encoder: &mut Net,
    decoder: &mut Net,
    opt_e: &mut Adam,
    opt_d: &mut Adam,
    rows: &[Vec<f64>],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = rows.len();
    let x = Batch::from_rows(rows)?;
    let (enc_out, enc_trace) = encoder.forward_trace(&x)?;
    let mut z = Vec::with_capacity(n * LATENT_DIM);
    let mut eps = Vec::with_capacity(n * LATENT_DIM);
    let mut kl = 0.0;
    for row in enc_out.rows() {
        let (mu, lv) = row.split_at(LATENT_DIM);
        kl += kl_divergence(mu, lv);
        for d in 0..LATENT_DIM {
            let e: f64 = StandardNormal.sample(rng);
            eps.push(e);
            z.push(mu[d] + (0.5 * lv[d]).exp() * e);
        }
    }
    kl /= n as f64;
    let zb = Batch::new(n, vec![LATENT_DIM], z)?;
    let (recon, dec_trace) = decoder.forward_trace(&zb)?;
    let (rec_loss, grad) = mse(recon.data(), x.data())?;
    let (g_dec, dz) = decoder.backward_trace(&dec_trace, &Batch::new(n, vec![TRAJ_LEN], grad)?)?;
    let mut d_enc = vec![0.0; n * 2 * LATENT_DIM];
    for (i, row) in enc_out.rows().enumerate() {
        let (mu, lv) = row.split_at(LATENT_DIM);
        for d in 0..LATENT_DIM {
            let g = dz.sample(i)[d];
            let e = eps[i * LATENT_DIM + d];
            d_enc[i * 2 * LATENT_DIM + d] = g + beta * mu[d] / n as f64;
            d_enc[i * 2 * LATENT_DIM + LATENT_DIM + d] =
                g * e * 0.5 * (0.5 * lv[d]).exp() + beta * 0.5 * (lv[d].exp() - 1.0) / n as f64;
        }
    }
    let (g_enc, _) = encoder.backward_trace(&enc_trace, &Batch::new(n, vec![2 * LATENT_DIM], d_enc)?)?;
    opt_e.step(encoder.params_mut(), &g_enc)?;
    opt_d.step(decoder.params_mut(), &g_dec)?;
    Ok(rec_loss + beta * kl)
}

impl TrajVae {
    pub fn latent_dim(&self) -> usize {
        LATENT_DIM
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn encoder(&self) -> &Net {
        &self.encoder
    }

    pub fn decoder(&self) -> &Net {
        &self.decoder
    }

    /// Posterior mean and standard deviation of a trajectory.
    pub fn encode(&self, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Batch::new(1, vec![TRAJ_LEN], normalize(traj))?;
        let out = self.encoder.forward_batch(&x)?;
        let (mu, lv) = out.sample(0).split_at(LATENT_DIM);
        Ok((mu.to_vec(), lv.iter().map(|v| (0.5 * v).exp()).collect()))
    }

    /// Decodes one latent; steps are clamped to the per-step bound.
    pub fn decode(&self, z: &[f64]) -> Result<Trajectory> {
        Ok(self.decode_batch(&[z.to_vec()])?.pop().unwrap())
    }

    pub fn decode_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
        if !self.frozen {
            return Err(CoreError::Invalid("decoder used before the model was frozen".into()));
        }
        if zs.iter().any(|z| z.len() != LATENT_DIM) {
            return Err(CoreError::Invalid(format!("latent must have {LATENT_DIM} entries")));
        }
        if zs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Invalid("non-finite latent".into()));
        }
        let out = self.decoder.forward_batch(&Batch::from_rows(zs)?)?;
        out.rows()
            .map(|r| {
                let raw: Vec<f64> = r.iter().map(|v| v * MAX_STEP).collect();
                Ok(Trajectory::from_flat(&raw)?)
            })
            .collect()
    }

    /// Mean per-element squared error of decode(encode-mean(t)) against t.
    pub fn reconstruction_mse(&self, trajs: &[Trajectory]) -> Result<f64> {
        let mut mus = Vec::with_capacity(trajs.len());
        for t in trajs {
            mus.push(self.encode(t)?.0);
        }
        let recon = self.decode_batch(&mus)?;
        let mut total = 0.0;
        for (a, b) in trajs.iter().zip(&recon) {
            total += a
                .to_flat()
                .iter()
                .zip(b.to_flat())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>();
        }
        Ok(total / (trajs.len() * TRAJ_LEN) as f64)
    }

    /// Hash over encoder and decoder parameters.
    pub fn param_hash(&self) -> String {
        let mut s = self.encoder.params().content_hash();
        s.push_str(&self.decoder.params().content_hash());
        crate::hash_str(&s)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut t = nets::export("encoder", &self.encoder);
        t.extend(nets::export("decoder", &self.decoder));
        Checkpoint::new(t)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TrajVae> {
        let hidden = ckpt
            .get("decoder.l0.w")
            .map(|t: &Tensor| t.shape()[0])
            .ok_or_else(|| CoreError::Format("checkpoint lacks decoder weights".into()))?;
        let mut rng = stream(0, "vae-template");
        let (e, d) = build_nets(hidden, &mut rng)?;
        Ok(TrajVae {
            encoder: nets::restore(&e, ckpt, "encoder")?,
            decoder: nets::restore(&d, ckpt, "decoder")?,
            frozen: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clutterbridge_sim::execute;

    #[test]
    fn kl_zero_only_at_standard_normal() {
        assert_eq!(kl_divergence(&[0.0; 3], &[0.0; 3]), 0.0);
        assert!(kl_divergence(&[0.1, 0.0, 0.0], &[0.0; 3]) > 0.0);
        assert!(kl_divergence(&[0.0; 3], &[0.2, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn bent_path_keeps_end_point() {
        let t = bent_trajectory([0.3, 0.7], 0.08).unwrap();
        let end = execute(&t);
        assert!((end[0] - 0.3).abs() < 1e-12 && (end[1] - 0.7).abs() < 1e-12);
        assert_ne!(t, straight_trajectory([0.3, 0.7]).unwrap());
    }

    #[test]
    fn corpus_roundtrip() {
        let c = DemoCorpus::generate(5, 0.003, 1).unwrap();
        let back = DemoCorpus::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.trajectories.len(), 5);
        for (a, b) in c.trajectories.iter().zip(&back.trajectories) {
            for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
                assert_eq!(*x as f32, y as f32);
            }
        }
        let bytes = c.to_bytes();
        assert!(matches!(
            DemoCorpus::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CoreError::Truncated { .. })
        ));
    }

    #[test]
    fn too_few_demos_rejected() {
        let c = DemoCorpus::generate(10, 0.0, 1).unwrap();
        assert!(train_vae(&c.trajectories, &VaeConfig::default(), 0).is_err());
    }

    #[test]
    fn memorizes_single_trajectory_without_kl() {
        let c = DemoCorpus::generate(1, 0.0, 3).unwrap();
        let cfg = VaeConfig {
            epochs: 3000,
            batch: 1,
            beta_kl: 0.0,
            holdout_frac: 0.0,
            min_demos: 1,
            hidden: 32,
            ..VaeConfig::default()
        };
        let (vae, report) = train_vae(&c.trajectories, &cfg, 0).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        let mse = vae.reconstruction_mse(&c.trajectories).unwrap();
        assert!(mse < 1e-6, "{mse}");
    }
}
