use std::sync::OnceLock;

use clutterbridge::policy::*;
use clutterbridge::rng::stream;
use clutterbridge::trajgen::{train_vae, DemoCorpus, TrajVae, VaeConfig};
use clutterbridge::CoreError;
use clutterbridge_sim::{oracle_trajectory, render, sample_scene, DomainKind, Task};

fn vae() -> &'static TrajVae {
    static VAE: OnceLock<TrajVae> = OnceLock::new();
    VAE.get_or_init(|| {
        let demos = DemoCorpus::generate(2000, 0.003, 1).unwrap();
        train_vae(&demos.trajectories, &VaeConfig::default(), 1).unwrap().0
    })
}

fn short_cfg(iterations: usize) -> RlConfig {
    RlConfig {
        iterations,
        batch: 16,
        minibatch: 8,
        eval_scenes: 8,
        eval_every: 1,
        early_stop: None,
        target: 0.0,
        ..RlConfig::default()
    }
}

fn batch(agent: &Agent, n: usize, seed: u64) -> EpisodeBatch {
    collect_episodes(agent, vae(), Task::Picking, n, Some(0.05), &mut stream(seed, "ep")).unwrap()
}

#[test]
fn mean_action_is_deterministic_and_finite_untrained() {
    let agent = Agent::new(3, 0.0).unwrap();
    let img = render(&sample_scene(Task::Picking, DomainKind::SourcePlain, None, 5).unwrap());
    let mut rng = stream(0, "a");
    let (z1, t1) = agent.act(vae(), &img, ActMode::Mean, None, &mut rng).unwrap();
    let (z2, t2) = agent.act(vae(), &img, ActMode::Mean, None, &mut rng).unwrap();
    assert_eq!(z1, z2);
    assert_eq!(t1, t2);
    assert!(z1.iter().all(|v| v.is_finite()));
}

#[test]
fn tiny_sigma_samples_approach_the_mean() {
    let agent = Agent::new(3, -20.0).unwrap();
    let img = render(&sample_scene(Task::Picking, DomainKind::SourcePlain, None, 6).unwrap());
    let mut rng = stream(0, "b");
    let (mean, _) = agent.act(vae(), &img, ActMode::Mean, None, &mut rng).unwrap();
    let (z, _) = agent.act(vae(), &img, ActMode::Sample, None, &mut rng).unwrap();
    for (a, b) in mean.iter().zip(&z) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn episodes_require_positive_count_and_repeat_under_seed() {
    let agent = Agent::new(4, 0.0).unwrap();
    let mut rng = stream(1, "ep");
    assert!(collect_episodes(&agent, vae(), Task::Picking, 0, None, &mut rng).is_err());
    let a = batch(&agent, 8, 2);
    let b = batch(&agent, 8, 2);
    assert_eq!(a.latents, b.latents);
    assert_eq!(a.rewards, b.rewards);
    assert!(a.rewards.iter().all(|r| (0.0..=1.0).contains(r)));
}

#[test]
fn oracle_latents_are_reproduced_through_the_vae() {
    let agent = Agent::new(5, 0.0).unwrap();
    let v = vae();
    let b = collect_with(&agent, v, Task::Picking, 32, None, &mut stream(3, "ep"), |scene, _, rng| {
        let traj = oracle_trajectory(scene, 0.0, rng).unwrap();
        v.encode(&traj).unwrap().0
    })
    .unwrap();
    assert!(b.rewards.iter().all(|&r| r >= 0.5), "{:?}", b.rewards);
    assert!(b.mean_reward() >= 0.95, "{:?}", b.rewards);
}

#[test]
fn zero_advantages_leave_parameters_unchanged() {
    let mut agent = Agent::new(6, 0.0).unwrap();
    let mut b = batch(&agent, 16, 4);
    b.rewards = vec![0.5; 16];
    let before = agent.param_hash();
    let mut opt = AgentOptim::new(1e-3, 1e-3);
    ppo_update(&mut agent, &mut opt, &b, &short_cfg(1), &mut stream(0, "u")).unwrap();
    assert_eq!(agent.param_hash(), before);
}

#[test]
fn reward_shift_leaves_update_unchanged() {
    let agent = Agent::new(7, 0.0).unwrap();
    let b = batch(&agent, 16, 5);
    let mut shifted = b.clone();
    shifted.rewards.iter_mut().for_each(|r| *r += 3.25);
    let run = |b: &EpisodeBatch| {
        let mut a = agent.clone();
        let mut opt = AgentOptim::new(1e-3, 1e-3);
        ppo_update(&mut a, &mut opt, b, &short_cfg(1), &mut stream(9, "u")).unwrap();
        a
    };
    let (x, y) = (run(&b), run(&shifted));
    for (net_x, net_y) in [(&x.perception, &y.perception), (&x.policy, &y.policy)] {
        for ((_, tx), (_, ty)) in net_x.params().iter().zip(net_y.params().iter()) {
            for (p, q) in tx.data().iter().zip(ty.data()) {
                assert!((p - q).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn positive_advantage_raises_log_prob() {
    let mut agent = Agent::new(8, 0.0).unwrap();
    let mut b = batch(&agent, 2, 6);
    b.rewards = vec![1.0, 0.0];
    let sigma = agent.sigma(Some(0.05));
    let mu_before = agent.mean_latents(&b.images).unwrap();
    let lp_before = log_prob(&b.latents[0], &mu_before[0], &sigma);
    let mut opt = AgentOptim::new(1e-4, 0.0);
    let cfg = RlConfig {
        epochs: 1,
        minibatch: 2,
        ..short_cfg(1)
    };
    ppo_update(&mut agent, &mut opt, &b, &cfg, &mut stream(0, "u")).unwrap();
    let mu_after = agent.mean_latents(&b.images).unwrap();
    assert!(log_prob(&b.latents[0], &mu_after[0], &sigma) > lp_before);
}

#[test]
fn first_epoch_ratio_is_one() {
    let agent = Agent::new(9, 0.0).unwrap();
    let b = batch(&agent, 16, 7);
    let adv = advantages(&b.rewards);
    let idx: Vec<usize> = (0..8).collect();
    let g = ppo_gradients(&agent, &b, &adv, &idx, 0.2, Some(0.05)).unwrap();
    let expected = -idx.iter().map(|&i| adv[i]).sum::<f64>() / idx.len() as f64;
    assert!((g.surrogate - expected).abs() < 1e-12);
    assert_eq!(g.clipped, 0);
}

#[test]
fn perception_receives_gradient() {
    let agent = Agent::new(10, 0.0).unwrap();
    let mut b = batch(&agent, 16, 8);
    for (i, r) in b.rewards.iter_mut().enumerate() {
        *r = (i % 2) as f64;
    }
    let adv = advantages(&b.rewards);
    let idx: Vec<usize> = (0..16).collect();
    let g = ppo_gradients(&agent, &b, &adv, &idx, 0.2, Some(0.05)).unwrap();
    assert!(g.perception.max_abs() > 0.0);
}

#[test]
fn training_is_deterministic_and_curve_bounded() {
    let cfg = short_cfg(3);
    let a = train_policy(vae(), &cfg, 11).unwrap();
    let b = train_policy(vae(), &cfg, 11).unwrap();
    assert_eq!(a.agent.param_hash(), b.agent.param_hash());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 3);
    for p in &a.curve {
        assert!((0.0..=1.0).contains(&p.mean_reward) && (0.0..=1.0).contains(&p.mean_mode_eval));
    }
    let csv = curve_csv(&a.curve);
    assert!(csv.starts_with("iteration,mean_reward,mean_mode_eval\n0,"));
}

#[test]
fn unmet_threshold_reports_curve() {
    let cfg = RlConfig {
        target: 1.01,
        ..short_cfg(2)
    };
    match train_policy(vae(), &cfg, 12) {
        Err(CoreError::NotConverged { curve, threshold, .. }) => {
            assert_eq!(curve.len(), 2);
            assert_eq!(threshold, 1.01);
        }
        other => panic!("expected NotConverged, got {:?}", other.map(|r| r.final_eval)),
    }
}

#[test]
fn unfloored_collapse_is_flagged() {
    let cfg = RlConfig {
        sigma_floor: None,
        init_log_std: -8.0,
        ..short_cfg(2)
    };
    let run = train_policy(vae(), &cfg, 13).unwrap();
    assert_eq!(run.warnings.len(), 1);
    assert!(run.warnings[0].contains("premature collapse"));
}

#[test]
fn floored_run_has_no_collapse_warning() {
    let cfg = RlConfig {
        init_log_std: -8.0,
        ..short_cfg(2)
    };
    assert!(train_policy(vae(), &cfg, 13).unwrap().warnings.is_empty());
}
