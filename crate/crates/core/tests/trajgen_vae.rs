use std::sync::OnceLock;

use clutterbridge::trajgen::*;
use clutterbridge_numcore::Checkpoint;
use clutterbridge_sim::{execute, Trajectory};
use proptest::prelude::*;

fn trained() -> &'static (TrajVae, VaeReport) {
    static VAE: OnceLock<(TrajVae, VaeReport)> = OnceLock::new();
    VAE.get_or_init(|| {
        let demos = DemoCorpus::generate(2000, 0.003, 7).unwrap();
        train_vae(&demos.trajectories, &VaeConfig::default(), 7).unwrap()
    })
}

#[test]
fn held_out_reconstruction_is_accurate() {
    let (vae, report) = trained();
    assert!(report.holdout_mse <= 2e-4, "held-out mse {}", report.holdout_mse);
    assert_eq!(report.holdout.len(), 200);
    assert!((vae.reconstruction_mse(&report.holdout).unwrap() - report.holdout_mse).abs() < 1e-12);
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
}

#[test]
fn decoded_end_points_track_the_demonstrated_goal() {
    let (vae, report) = trained();
    let errors: Vec<f64> = report
        .holdout
        .iter()
        .map(|t| {
            let (mu, _) = vae.encode(t).unwrap();
            let a = execute(t);
            let b = execute(&vae.decode(&mu).unwrap());
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = sorted[sorted.len() * 95 / 100];
    // Per-step demo noise of 0.003 alone moves the end point by about 0.017.
    assert!(mean < 0.035, "mean end-point error {mean}");
    assert!(p95 < 0.06, "95th percentile end-point error {p95}");
}

#[test]
fn decode_is_deterministic_and_frozen() {
    let (vae, _) = trained();
    assert!(vae.is_frozen());
    let before = vae.param_hash();
    let z = [0.3, -1.2, 0.7];
    let a = vae.decode(&z).unwrap();
    let b = vae.decode(&z).unwrap();
    assert_eq!(a, b);
    let batch = vae.decode_batch(&[z.to_vec(), vec![0.0; 3]]).unwrap();
    assert_eq!(batch[0], a);
    assert_eq!(vae.param_hash(), before);
}

#[test]
fn checkpoint_roundtrip_preserves_decoder() {
    let (vae, _) = trained();
    let bytes = vae.to_checkpoint().to_bytes();
    let back = TrajVae::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert!(back.is_frozen());
    assert_eq!(back.param_hash(), vae.param_hash());
    assert_eq!(back.decode(&[0.1, 0.2, 0.3]).unwrap(), vae.decode(&[0.1, 0.2, 0.3]).unwrap());
}

#[test]
fn latent_dimension_is_three() {
    assert_eq!(trained().0.latent_dim(), LATENT_DIM);
    assert!(trained().0.decode(&[0.0; 2]).is_err());
}

#[test]
fn demo_generation_repeats_under_seed() {
    let a = DemoCorpus::generate(20, 0.003, 1).unwrap();
    let b = DemoCorpus::generate(20, 0.003, 1).unwrap();
    let c = DemoCorpus::generate(20, 0.003, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 3), lv in prop::collection::vec(-4.0f64..4.0, 3)) {
        prop_assert!(kl_divergence(&mu, &lv) >= 0.0);
    }

    #[test]
    fn bent_demos_end_at_their_goal(x in 0.05f64..0.95, y in 0.1f64..1.0, bulge in -0.1f64..0.1) {
        let t: Trajectory = bent_trajectory([x, y], bulge).unwrap();
        let end = execute(&t);
        prop_assert!((end[0] - x).abs() < 1e-9 && (end[1] - y).abs() < 1e-9);
    }
}
