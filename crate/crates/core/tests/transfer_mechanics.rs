use clutterbridge::arch;
use clutterbridge::policy::{image_batch, Agent};
use clutterbridge::rng::stream;
use clutterbridge::transfer::*;
use clutterbridge_numcore::{Batch, Tensor};
use clutterbridge_sim::{render, sample_scene, DomainKind, Image, Task};
use rand::Rng;
use rand_distr::StandardNormal;

fn images(domain: DomainKind, object: Option<u16>, n: usize, seed: u64) -> Vec<Image> {
    (0..n)
        .map(|i| render(&sample_scene(Task::Picking, domain, object, seed * 1000 + i as u64).unwrap()))
        .collect()
}

fn tiny_data(seed: u64) -> TransferData {
    let source_images = images(DomainKind::SourcePlain, None, 24, seed);
    let mut rng = stream(seed, "z");
    let z_star = (0..24).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut target_images = images(DomainKind::Target, Some(3), 12, seed + 1);
    target_images.extend(images(DomainKind::Target, None, 12, seed + 2));
    let target_labels = [vec![0u8; 12], vec![1u8; 12]].concat();
    TransferData {
        source_images,
        z_star,
        target_images,
        target_labels,
        holdout_images: vec![],
        holdout_labels: vec![],
    }
}

fn small_cfg(weights: LossWeights, steps: usize) -> TransferConfig {
    TransferConfig {
        steps,
        batch: 8,
        weights,
        verify_isolation: true,
        ..TransferConfig::default()
    }
}

/// Policy whose output is the constant `out`.
fn constant_policy_agent(out: [f32; 3]) -> Agent {
    let mut agent = Agent::new(1, 0.0).unwrap();
    let p = agent.policy.params_mut();
    let w = p.get_mut("l4.w").unwrap();
    *w = Tensor::zeros(w.shape().to_vec());
    *p.get_mut("l4.b").unwrap() = Tensor::new(vec![3], out.to_vec()).unwrap();
    agent
}

#[test]
fn task_loss_is_mean_over_latent_dims() {
    let agent = constant_policy_agent([1.0, 0.0, 0.0]);
    let x = image_batch(&images(DomainKind::SourcePlain, None, 1, 3)).unwrap();
    let t = task_loss_step(&agent, &x, &[vec![0.0; 3]]).unwrap();
    assert!((t.loss - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn exact_targets_give_zero_loss_and_gradients() {
    let agent = constant_policy_agent([0.25, -0.5, 0.75]);
    let x = image_batch(&images(DomainKind::SourcePlain, None, 4, 4)).unwrap();
    let t = task_loss_step(&agent, &x, &vec![vec![0.25, -0.5, 0.75]; 4]).unwrap();
    assert!(t.loss.abs() < 1e-12);
    assert_eq!(t.head.max_abs(), 0.0);
    assert_eq!(t.perception.unwrap().max_abs(), 0.0);
}

#[test]
fn task_loss_decreases_on_frozen_batch() {
    let data = tiny_data(5);
    let mut agent = Agent::new(2, 0.0).unwrap();
    let x = image_batch(&data.source_images).unwrap();
    let mut opt_p = clutterbridge_numcore::Adam::new(1e-3);
    let mut opt_pi = clutterbridge_numcore::Adam::new(1e-3);
    let mut losses = vec![];
    for _ in 0..50 {
        let t = task_loss_step(&agent, &x, &data.z_star).unwrap();
        opt_p.step(agent.perception.params_mut(), t.perception.as_ref().unwrap()).unwrap();
        opt_pi.step(agent.policy.params_mut(), &t.head).unwrap();
        losses.push(t.loss);
    }
    assert!(losses[49] < 0.5 * losses[0], "{} -> {}", losses[0], losses[49]);
}

#[test]
fn empty_batches_rejected() {
    let agent = Agent::new(0, 0.0).unwrap();
    let empty = Batch::zeros(0, Image::shape().to_vec());
    assert!(task_loss_step(&agent, &empty, &[]).is_err());
    let aux = AuxNets::new(64, &mut stream(0, "aux")).unwrap();
    assert!(classifier_step(&agent, &aux.classifier, &empty, &[]).is_err());
    let f = Batch::zeros(0, vec![64]);
    let g = Batch::zeros(2, vec![64]);
    assert!(discriminator_step(&aux.discriminator, &f, &g).is_err());
    assert!(discriminator_step(&aux.discriminator, &g, &f).is_err());
}

#[test]
fn confident_correct_classifier_has_near_zero_loss() {
    let agent = Agent::new(0, 0.0).unwrap();
    let mut c = arch::logit_head(64, 2, &mut stream(0, "c")).unwrap();
    let w = c.params_mut().get_mut("l4.w").unwrap();
    *w = Tensor::zeros(w.shape().to_vec());
    *c.params_mut().get_mut("l4.b").unwrap() = Tensor::new(vec![1], vec![30.0]).unwrap();
    let x = image_batch(&images(DomainKind::Target, None, 4, 6)).unwrap();
    let t = classifier_step(&agent, &c, &x, &[1.0; 4]).unwrap();
    assert!(t.loss < 1e-12, "{}", t.loss);
}

#[test]
fn untrained_classifier_is_near_chance() {
    let data = tiny_data(7);
    let agent = Agent::new(3, 0.0).unwrap();
    let aux = AuxNets::new(64, &mut stream(3, "aux")).unwrap();
    let x = image_batch(&data.target_images).unwrap();
    let labels: Vec<f64> = data.target_labels.iter().map(|&l| l as f64).collect();
    let t = classifier_step(&agent, &aux.classifier, &x, &labels).unwrap();
    assert!((t.loss - 2f64.ln()).abs() < 0.1, "{}", t.loss);
}

fn blob(center: f64, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Batch {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..8).map(|_| center + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    Batch::from_rows(&rows).unwrap()
}

fn train_discriminator(separation: f64, steps: usize) -> Vec<f64> {
    let mut rng = stream(11, "features");
    let mut d = arch::logit_head(8, 2, &mut rng).unwrap();
    let mut opt = clutterbridge_numcore::Adam::new(2e-4);
    let mut accs = vec![];
    for _ in 0..steps {
        let s = blob(0.0, 32, &mut rng);
        let t = blob(separation, 32, &mut rng);
        let (g, acc) = discriminator_step(&d, &s, &t).unwrap();
        opt.step(d.params_mut(), &g.head).unwrap();
        accs.push(acc);
    }
    accs
}

#[test]
fn discriminator_learns_separable_features() {
    let accs = train_discriminator(2.0, 500);
    assert!(accs[480..].iter().all(|&a| a >= 0.99), "{:?}", &accs[480..]);
}

#[test]
fn discriminator_stays_at_chance_on_identical_distributions() {
    let accs = train_discriminator(0.0, 300);
    let mean = accs[100..].iter().sum::<f64>() / 200.0;
    assert!((mean - 0.5).abs() <= 0.1, "{mean}");
}

#[test]
fn flat_discriminator_gives_no_perception_gradient() {
    let agent = Agent::new(0, 0.0).unwrap();
    let mut d = arch::logit_head(64, 2, &mut stream(0, "d")).unwrap();
    let names: Vec<String> = d.params().names().cloned().collect();
    for n in names {
        let t = d.params_mut().get_mut(&n).unwrap();
        *t = Tensor::zeros(t.shape().to_vec());
    }
    let x = image_batch(&images(DomainKind::Target, Some(2), 4, 8)).unwrap();
    let (f, trace) = agent.perception.forward_trace(&x).unwrap();
    let before = d.params().content_hash();
    let t = adversarial_p_step(&agent, &d, &f, &trace).unwrap();
    assert_eq!(t.perception.unwrap().max_abs(), 0.0);
    assert!((t.loss - 2f64.ln()).abs() < 1e-12);
    assert_eq!(d.params().content_hash(), before);
}

#[test]
fn variant_masks_control_logged_components() {
    let data = tiny_data(9);
    for (variant, has_c, has_d) in [
        (Variant::Full, true, true),
        (Variant::Adda, false, true),
        (Variant::Gplac, true, false),
    ] {
        let rl = Agent::new(4, 0.0).unwrap();
        let (agent, aux, _) = build_variant_nets(variant, &rl, 4).unwrap();
        let cfg = small_cfg(variant.weights(), 4);
        let out = transfer_train(&data, agent, aux, &cfg, 4).unwrap();
        assert_eq!(out.log.rows.len(), 4);
        for r in &out.log.rows {
            assert!(r.l_task.is_some());
            assert_eq!(r.l_c.is_some(), has_c, "{variant}");
            assert_eq!(r.l_d_disc.is_some(), has_d, "{variant}");
            assert_eq!(r.l_d_gen.is_some(), has_d, "{variant}");
        }
        assert_eq!(out.log.isolation_violations, 0);
    }
}

#[test]
fn logged_total_is_weighted_sum() {
    let data = tiny_data(10);
    let rl = Agent::new(5, 0.0).unwrap();
    let (agent, aux, _) = build_variant_nets(Variant::Full, &rl, 5).unwrap();
    let w = LossWeights::new(0.7, 1.3, 0.4);
    let out = transfer_train(&data, agent, aux, &small_cfg(w, 5), 5).unwrap();
    for r in &out.log.rows {
        let sum = w.task * r.l_task.unwrap() + w.classifier * r.l_c.unwrap() + w.discriminator * r.l_d_gen.unwrap();
        assert!((r.total - sum).abs() <= 1e-6);
    }
    let csv = out.log.to_csv();
    assert!(csv.starts_with("step,l_task,l_c,l_d_disc,l_d_gen,d_acc,total\n0,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn zero_auxiliary_weights_match_plain_regression() {
    let data = tiny_data(12);
    let rl = Agent::new(6, 0.0).unwrap();
    let cfg = small_cfg(LossWeights::new(1.0, 0.0, 0.0), 6);
    let (agent, aux, _) = build_variant_nets(Variant::Full, &rl, 6).unwrap();
    let out = transfer_train(&data, agent, aux, &cfg, 6).unwrap();
    let (reference, losses) = supervised_reference(&data, rl.clone(), &cfg, 6).unwrap();
    for (r, l) in out.log.rows.iter().zip(&losses) {
        assert!((r.l_task.unwrap() - l).abs() <= 1e-5);
    }
    assert_eq!(out.agent.param_hash(), reference.param_hash());
}

#[test]
fn feature_dims_per_variant() {
    let rl = Agent::new(7, 0.0).unwrap();
    let (full, aux, notes) = build_variant_nets(Variant::Full, &rl, 7).unwrap();
    assert_eq!(full.perception.output_len(), 64);
    assert_eq!(aux.discriminator.input_shape(), &[64]);
    assert!(notes.is_empty());
    assert_eq!(full.param_hash(), rl.param_hash());
    let (gplac, aux, notes) = build_variant_nets(Variant::GplacExtraInfo, &rl, 7).unwrap();
    assert_eq!(gplac.perception.output_len(), 32);
    assert_eq!(aux.classifier.input_shape(), &[32]);
    assert_eq!(notes, ["policy.l0.w reinitialised (shape differs from checkpoint)"]);
    for name in ["l0.w", "l2.w", "l4.w"] {
        assert_eq!(gplac.perception.params().get(name), rl.perception.params().get(name));
    }
    for name in ["l2.w", "l2.b", "l4.w", "l4.b"] {
        assert_eq!(gplac.policy.params().get(name), rl.policy.params().get(name));
    }
}

#[test]
fn deployment_checkpoint_excludes_auxiliary_nets() {
    let data = tiny_data(13);
    let rl = Agent::new(8, 0.0).unwrap();
    let (agent, aux, _) = build_variant_nets(Variant::Full, &rl, 8).unwrap();
    let out = transfer_train(&data, agent, aux, &small_cfg(LossWeights::new(1.0, 1.0, 1.0), 2), 8).unwrap();
    let ckpt = out.agent.to_checkpoint();
    assert!(ckpt
        .names()
        .all(|n| n.starts_with("perception.") || n.starts_with("policy.")));
    let restored = Agent::from_checkpoint(&ckpt).unwrap();
    assert_eq!(restored.param_hash(), out.agent.param_hash());
}

#[test]
fn negative_weights_and_zero_steps_rejected() {
    let data = tiny_data(14);
    let rl = Agent::new(9, 0.0).unwrap();
    let (agent, aux, _) = build_variant_nets(Variant::Full, &rl, 9).unwrap();
    let bad = small_cfg(LossWeights::new(1.0, -1.0, 1.0), 2);
    assert!(transfer_train(&data, agent.clone(), aux.clone(), &bad, 9).is_err());
    let zero = small_cfg(LossWeights::new(1.0, 1.0, 1.0), 0);
    assert!(transfer_train(&data, agent, aux, &zero, 9).is_err());
}

#[test]
fn variant_names_roundtrip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    let err = "DANN".parse::<Variant>().unwrap_err().to_string();
    assert!(err.contains("FULL") && err.contains("GPLAC_EXTRAINFO"), "{err}");
}
