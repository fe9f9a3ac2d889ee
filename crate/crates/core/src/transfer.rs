//! Adversarial transfer of the template-trained perception to task objects
//! in clutter. Each step combines a task regression loss on source pairs, a
//! weak-label classification loss on target images, and a discriminator game
//! that aligns source and target features.

use std::fmt;
use std::str::FromStr;

use clutterbridge_numcore::{bce_mean, mse, Adam, Batch, Gradients, Net, Trace};
use clutterbridge_sim::Image;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::arch;
use crate::datasets::{BalancedSampler, DatasetBundle, CLUTTER_ONLY};
use crate::error::{CoreError, Result};
use crate::policy::{image_batch, Agent};
use crate::rng::stream;
use crate::trajgen::LATENT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    Adda,
    AddaExtraInfo,
    Gplac,
    GplacExtraInfo,
}

impl Variant {
    /// Table column order.
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Adda,
        Variant::AddaExtraInfo,
        Variant::Gplac,
        Variant::GplacExtraInfo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::Adda => "ADDA",
            Variant::AddaExtraInfo => "ADDA_EXTRAINFO",
            Variant::Gplac => "GPLAC",
            Variant::GplacExtraInfo => "GPLAC_EXTRAINFO",
        }
    }

    /// Default loss weights: which terms the variant trains with.
    pub fn weights(self) -> LossWeights {
        match self {
            Variant::Full => LossWeights::new(1.0, 1.0, 1.0),
            Variant::Adda | Variant::AddaExtraInfo => LossWeights::new(1.0, 0.0, 1.0),
            Variant::Gplac | Variant::GplacExtraInfo => LossWeights::new(1.0, 1.0, 0.0),
        }
    }

    /// Whether source scenes include clutter around the template.
    pub fn uses_extrainfo(self) -> bool {
        matches!(self, Variant::AddaExtraInfo | Variant::GplacExtraInfo)
    }

    /// Whether the perception head ends in keypoint (spatial softmax) features.
    pub fn keypoint_head(self) -> bool {
        matches!(self, Variant::Gplac | Variant::GplacExtraInfo)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                CoreError::Invalid(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub task: f64,
    pub classifier: f64,
    pub discriminator: f64,
}

impl LossWeights {
    pub fn new(task: f64, classifier: f64, discriminator: f64) -> Self {
        LossWeights {
            task,
            classifier,
            discriminator,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.task, self.classifier, self.discriminator]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(CoreError::Invalid("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_p: f64,
    pub lr_pi: f64,
    pub lr_d: f64,
    pub lr_c: f64,
    pub d_steps: usize,
    pub weights: LossWeights,
    /// Fraction of target images held out from training.
    pub holdout_frac: f64,
    /// Hash parameters around each isolated update and count violations.
    pub verify_isolation: bool,
}

impl TransferConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TransferConfig {
            weights: variant.weights(),
            ..TransferConfig::default()
        }
    }
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            steps: 2000,
            batch: 32,
            lr_p: 1e-3,
            lr_pi: 1e-3,
            lr_d: 1e-3,
            lr_c: 1e-3,
            d_steps: 1,
            weights: LossWeights::new(1.0, 1.0, 1.0),
            holdout_frac: 0.1,
            verify_isolation: false,
        }
    }
}

/// Training-only heads: discriminator and weak-label classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxNets {
    pub discriminator: Net,
    pub classifier: Net,
}

impl AuxNets {
    pub fn new(feature_dim: usize, rng: &mut ChaCha8Rng) -> Result<AuxNets> {
        Ok(AuxNets {
            discriminator: arch::logit_head(feature_dim, 2, rng)?,
            classifier: arch::logit_head(feature_dim, 2, rng)?,
        })
    }
}

/// Perception, policy and auxiliary heads for a variant, initialised from
/// the RL-trained agent. Returns notices for any reinitialised layer.
pub fn build_variant_nets(variant: Variant, rl: &Agent, seed: u64) -> Result<(Agent, AuxNets, Vec<String>)> {
    let mut rng = stream(seed, &format!("variant-{}", variant.name()));
    let mut notices = Vec::new();
    let agent = if variant.keypoint_head() {
        let mut perception = arch::keypoint_perception(&mut rng)?;
        copy_matching(rl.perception.params(), &mut perception, "perception", &mut notices)?;
        let mut policy = arch::policy(perception.output_len(), &mut rng)?;
        copy_matching(rl.policy.params(), &mut policy, "policy", &mut notices)?;
        Agent::from_nets(perception, policy, rl.log_std())?
    } else {
        rl.clone()
    };
    for n in &notices {
        log::info!("{}: {n}", variant.name());
    }
    let aux = AuxNets::new(agent.perception.output_len(), &mut rng)?;
    Ok((agent, aux, notices))
}

fn copy_matching(
    from: &clutterbridge_numcore::ParamSet,
    to: &mut Net,
    label: &str,
    notices: &mut Vec<String>,
) -> Result<()> {
    let names: Vec<String> = to.params().names().cloned().collect();
    for name in names {
        let dst = to.params_mut().get_mut(&name).unwrap();
        match from.get(&name) {
            Some(src) if src.shape() == dst.shape() => *dst = src.clone(),
            _ => notices.push(format!("{label}.{name} reinitialised (shape differs from checkpoint)")),
        }
    }
    Ok(())
}

/// One logged transfer step. Components a variant does not train are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub l_task: Option<f64>,
    pub l_c: Option<f64>,
    pub l_d_disc: Option<f64>,
    pub l_d_gen: Option<f64>,
    pub d_acc: Option<f64>,
    /// `λ_task·l_task + λ_c·l_c + λ_D·l_d_gen` over the logged terms.
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferLog {
    pub rows: Vec<LogRow>,
    pub isolation_violations: usize,
}

impl TransferLog {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
        let mut s = String::from("step,l_task,l_c,l_d_disc,l_d_gen,d_acc,total\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.9}\n",
                r.step,
                f(r.l_task),
                f(r.l_c),
                f(r.l_d_disc),
                f(r.l_d_gen),
                f(r.d_acc),
                r.total
            ));
        }
        s
    }
}

/// Gradients of one loss term for the networks it touches.
pub struct TermGrads {
    pub loss: f64,
    pub perception: Option<Gradients>,
    pub head: Gradients,
}

/// Task regression: `mean ‖μ_π(P(x)) − z*‖²` over the batch and latent dims.
pub fn task_loss_step(agent: &Agent, images: &Batch, z_star: &[Vec<f64>]) -> Result<TermGrads> {
    if images.n() == 0 {
        return Err(CoreError::Invalid("empty source batch".into()));
    }
    let (feat, p_trace) = agent.perception.forward_trace(images)?;
    let (mu, pi_trace) = agent.policy.forward_trace(&feat)?;
    let target: Vec<f64> = z_star.iter().flatten().copied().collect();
    let (loss, g) = mse(mu.data(), &target)?;
    let (g_pi, d_feat) = agent.policy.backward_trace(&pi_trace, &Batch::new(images.n(), vec![LATENT_DIM], g)?)?;
    let (g_p, _) = agent.perception.backward_trace(&p_trace, &d_feat)?;
    Ok(TermGrads {
        loss,
        perception: Some(g_p),
        head: g_pi,
    })
}

fn head_bce(head: &Net, feat: &Batch, labels: &[f64]) -> Result<(f64, Gradients, Batch, Vec<f64>)> {
    let (logits, trace) = head.forward_trace(feat)?;
    let (loss, g) = bce_mean(logits.data(), labels)?;
    let (g_head, d_feat) = head.backward_trace(&trace, &Batch::new(feat.n(), vec![1], g)?)?;
    Ok((loss, g_head, d_feat, logits.into_data()))
}

/// Weak-label classification: `mean BCE(C(P(x)), label)` with label 1 for
/// clutter-only images. Gradients reach P and C.
pub fn classifier_step(agent: &Agent, classifier: &Net, images: &Batch, labels: &[f64]) -> Result<TermGrads> {
    if images.n() == 0 {
        return Err(CoreError::Invalid("empty target batch".into()));
    }
    let (feat, p_trace) = agent.perception.forward_trace(images)?;
    let (loss, g_c, d_feat, _) = head_bce(classifier, &feat, labels)?;
    let (g_p, _) = agent.perception.backward_trace(&p_trace, &d_feat)?;
    Ok(TermGrads {
        loss,
        perception: Some(g_p),
        head: g_c,
    })
}

/// Discriminator loss on fixed features: source labelled 1, target 0.
/// Returns the loss, D's gradients and its accuracy before the update.
pub fn discriminator_step(discriminator: &Net, source_feat: &Batch, target_feat: &Batch) -> Result<(TermGrads, f64)> {
    if source_feat.n() == 0 || target_feat.n() == 0 {
        return Err(CoreError::Invalid("empty discriminator batch".into()));
    }
    let (ls, gs, _, logit_s) = head_bce(discriminator, source_feat, &vec![1.0; source_feat.n()])?;
    let (lt, mut gt, _, logit_t) = head_bce(discriminator, target_feat, &vec![0.0; target_feat.n()])?;
    gt.add_scaled(&gs, 1.0)?;
    let correct = logit_s.iter().filter(|&&l| l > 0.0).count() + logit_t.iter().filter(|&&l| l <= 0.0).count();
    let acc = correct as f64 / (logit_s.len() + logit_t.len()) as f64;
    Ok((
        TermGrads {
            loss: ls + lt,
            perception: None,
            head: gt,
        },
        acc,
    ))
}

/// Non-saturating generator loss `mean BCE(D(P(x_t)), 1)`; only P receives
/// gradients, through a recorded perception pass.
pub fn adversarial_p_step(agent: &Agent, discriminator: &Net, target_feat: &Batch, p_trace: &Trace) -> Result<TermGrads> {
    if target_feat.n() == 0 {
        return Err(CoreError::Invalid("empty target batch".into()));
    }
    let (loss, _, d_feat, _) = head_bce(discriminator, target_feat, &vec![1.0; target_feat.n()])?;
    let (g_p, _) = agent.perception.backward_trace(p_trace, &d_feat)?;
    Ok(TermGrads {
        loss,
        perception: Some(g_p),
        head: Gradients::zeros_like(discriminator.params()),
    })
}

/// Pre-rendered training data for one transfer run.
pub struct TransferData {
    pub source_images: Vec<Image>,
    pub z_star: Vec<Vec<f64>>,
    pub target_images: Vec<Image>,
    pub target_labels: Vec<u8>,
    pub holdout_images: Vec<Image>,
    pub holdout_labels: Vec<u8>,
}

impl TransferData {
    /// Renders the bundle and splits off a seeded holdout of target images.
    pub fn from_bundle(bundle: &DatasetBundle, holdout_frac: f64, seed: u64) -> Result<TransferData> {
        bundle.validate()?;
        let mut order: Vec<usize> = (0..bundle.target.len()).collect();
        order.shuffle(&mut stream(seed, "target-holdout"));
        let n_hold = (bundle.target.len() as f64 * holdout_frac).round() as usize;
        let (hold, train) = order.split_at(n_hold);
        let pick = |idx: &[usize]| -> (Vec<Image>, Vec<u8>) {
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            (
                sorted.iter().map(|&i| bundle.target[i].image()).collect(),
                sorted.iter().map(|&i| bundle.target[i].label).collect(),
            )
        };
        let (target_images, target_labels) = pick(train);
        let (holdout_images, holdout_labels) = pick(hold);
        Ok(TransferData {
            source_images: bundle.source.iter().map(|s| s.image()).collect(),
            z_star: bundle.source.iter().map(|s| s.z_star_f64()).collect(),
            target_images,
            target_labels,
            holdout_images,
            holdout_labels,
        })
    }
}

fn gather(images: &[Image], idx: &[usize]) -> Result<Batch> {
    image_batch(idx.iter().map(|&i| &images[i]))
}

fn sample_idx(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    (0..k).map(|_| rng.gen_range(0..n)).collect()
}

/// Result of a transfer run.
pub struct TransferOutcome {
    pub agent: Agent,
    pub aux: AuxNets,
    pub log: TransferLog,
}

/// Per-component RNG streams, so masking a loss term never changes the
/// batches drawn for the others.
struct Streams {
    source: ChaCha8Rng,
    target: ChaCha8Rng,
    adversarial: ChaCha8Rng,
}

/// Runs the combined objective for `cfg.steps` steps.
pub fn transfer_train(
    data: &TransferData,
    mut agent: Agent,
    mut aux: AuxNets,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<TransferOutcome> {
    cfg.weights.validate()?;
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(CoreError::Invalid("steps and batch must be positive".into()));
    }
    if data.source_images.is_empty() {
        return Err(CoreError::Invalid("no source samples".into()));
    }
    let w = cfg.weights;
    let use_c = w.classifier > 0.0;
    let use_d = w.discriminator > 0.0;
    let sampler = if use_c || use_d {
        Some(BalancedSampler::new(&data.target_labels)?)
    } else {
        None
    };
    let mut rngs = Streams {
        source: stream(seed, "transfer-source"),
        target: stream(seed, "transfer-target"),
        adversarial: stream(seed, "transfer-adversarial"),
    };
    let mut opt_p = Adam::new(cfg.lr_p);
    let mut opt_pi = Adam::new(cfg.lr_pi);
    let mut opt_c = Adam::new(cfg.lr_c);
    let mut opt_d = Adam::new(cfg.lr_d);
    let mut log = TransferLog::default();
    for step in 0..cfg.steps {
        let mut row = LogRow {
            step,
            l_task: None,
            l_c: None,
            l_d_disc: None,
            l_d_gen: None,
            d_acc: None,
            total: 0.0,
        };
        let mut g_p = Gradients::zeros_like(agent.perception.params());
        let mut g_pi = Gradients::zeros_like(agent.policy.params());
        let src_idx = sample_idx(data.source_images.len(), cfg.batch, &mut rngs.source);
        let src_images = gather(&data.source_images, &src_idx)?;
        if w.task > 0.0 {
            let z: Vec<Vec<f64>> = src_idx.iter().map(|&i| data.z_star[i].clone()).collect();
            let t = task_loss_step(&agent, &src_images, &z)?;
            check(t.loss, "task", step)?;
            g_p.add_scaled(t.perception.as_ref().unwrap(), w.task)?;
            g_pi.add_scaled(&t.head, w.task)?;
            row.l_task = Some(t.loss);
            row.total += w.task * t.loss;
        }
        let mut g_c = None;
        if use_c {
            let idx = sampler.as_ref().unwrap().sample(cfg.batch, &mut rngs.target);
            let labels: Vec<f64> = idx.iter().map(|&i| data.target_labels[i] as f64).collect();
            let t = classifier_step(&agent, &aux.classifier, &gather(&data.target_images, &idx)?, &labels)?;
            check(t.loss, "classifier", step)?;
            g_p.add_scaled(t.perception.as_ref().unwrap(), w.classifier)?;
            let mut gc = t.head;
            gc.scale(w.classifier);
            g_c = Some(gc);
            row.l_c = Some(t.loss);
            row.total += w.classifier * t.loss;
        }
        if use_d {
            let idx = sampler.as_ref().unwrap().sample_objects(cfg.batch, &mut rngs.adversarial);
            let tgt_images = gather(&data.target_images, &idx)?;
            let src_feat = agent.features(&src_images)?;
            let (tgt_feat, tgt_trace) = agent.perception.forward_trace(&tgt_images)?;
            let before = cfg.verify_isolation.then(|| (agent.param_hash(), aux.classifier.params().content_hash()));
            for _ in 0..cfg.d_steps.max(1) {
                let (t, acc) = discriminator_step(&aux.discriminator, &src_feat, &tgt_feat)?;
                check(t.loss, "discriminator", step)?;
                opt_d.step(aux.discriminator.params_mut(), &t.head)?;
                row.l_d_disc = Some(t.loss);
                row.d_acc = Some(acc);
            }
            if let Some((a, c)) = &before {
                if *a != agent.param_hash() || *c != aux.classifier.params().content_hash() {
                    log.isolation_violations += 1;
                }
            }
            let d_hash = cfg.verify_isolation.then(|| aux.discriminator.params().content_hash());
            let t = adversarial_p_step(&agent, &aux.discriminator, &tgt_feat, &tgt_trace)?;
            check(t.loss, "adversarial", step)?;
            if let Some(h) = d_hash {
                if h != aux.discriminator.params().content_hash() {
                    log.isolation_violations += 1;
                }
            }
            g_p.add_scaled(t.perception.as_ref().unwrap(), w.discriminator)?;
            row.l_d_gen = Some(t.loss);
            row.total += w.discriminator * t.loss;
        }
        check(row.total, "total", step)?;
        opt_p.step(agent.perception.params_mut(), &g_p)?;
        opt_pi.step(agent.policy.params_mut(), &g_pi)?;
        if let Some(gc) = g_c {
            opt_c.step(aux.classifier.params_mut(), &gc)?;
        }
        log.rows.push(row);
    }
    Ok(TransferOutcome { agent, aux, log })
}

fn check(v: f64, component: &'static str, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CoreError::NonFiniteLoss { component, step })
    }
}

/// Plain supervised regression of P and π on the source pairs, drawing the
/// same source batches as [`transfer_train`] under the same seed.
pub fn supervised_reference(data: &TransferData, mut agent: Agent, cfg: &TransferConfig, seed: u64) -> Result<(Agent, Vec<f64>)> {
    let mut rng = stream(seed, "transfer-source");
    let mut opt_p = Adam::new(cfg.lr_p);
    let mut opt_pi = Adam::new(cfg.lr_pi);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx = sample_idx(data.source_images.len(), cfg.batch, &mut rng);
        let z: Vec<Vec<f64>> = idx.iter().map(|&i| data.z_star[i].clone()).collect();
        let t = task_loss_step(&agent, &gather(&data.source_images, &idx)?, &z)?;
        opt_p.step(agent.perception.params_mut(), t.perception.as_ref().unwrap())?;
        opt_pi.step(agent.policy.params_mut(), &t.head)?;
        losses.push(t.loss);
    }
    Ok((agent, losses))
}

/// Accuracy of `C(P(x))` against weak labels (logit > 0 predicts clutter-only).
pub fn classifier_accuracy(agent: &Agent, classifier: &Net, images: &[Image], labels: &[u8]) -> Result<f64> {
    if images.is_empty() {
        return Err(CoreError::Invalid("no images to classify".into()));
    }
    let mut correct = 0;
    for (chunk, lab) in images.chunks(128).zip(labels.chunks(128)) {
        let logits = classifier.forward_batch(&agent.features(&image_batch(chunk)?)?)?;
        for (l, &y) in logits.data().iter().zip(lab) {
            if (*l > 0.0) == (y == CLUTTER_ONLY) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
