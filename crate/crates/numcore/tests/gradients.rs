use clutterbridge_numcore::{
    bce_with_logits, check_gradients, check_input_gradients, mse, Adam, Batch, Gradients, Layer,
    LossKind, Net, NetBuilder, ParamSet, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: u64 = 100;
const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, shape: &[usize]) -> Batch {
    let len: usize = shape.iter().product::<usize>() * n;
    Batch::new(n, shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Smallest |activation| entering any relu layer.
fn min_relu_margin(net: &Net, x: &Batch) -> f64 {
    let mut margin = f64::INFINITY;
    for (i, l) in net.layers().iter().enumerate() {
        if *l != Layer::Relu {
            continue;
        }
        let mut params = ParamSet::new();
        for (name, t) in net.params().iter() {
            let layer: usize = name[1..name.find('.').unwrap()].parse().unwrap();
            if layer < i {
                params.insert(name.clone(), t.clone()).unwrap();
            }
        }
        let prefix = Net::from_parts(net.input_shape().to_vec(), net.layers()[..i].to_vec(), params).unwrap();
        let z = prefix.forward_batch(x).unwrap();
        margin = margin.min(z.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
    }
    margin
}

/// Draws (params, input) pairs whose relu inputs stay at least 1e-3 from the kink.
fn run_draws(build: impl Fn(&mut ChaCha8Rng) -> Net, n: usize, loss: impl Fn(&Net, &mut ChaCha8Rng) -> LossKind) -> (f64, f64) {
    let mut worst_p = 0.0f64;
    let mut worst_x = 0.0f64;
    for seed in 0..DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, x) = loop {
            let net = build(&mut rng);
            let x = random_batch(&mut rng, n, net.input_shape());
            if min_relu_margin(&net, &x) >= 1e-3 {
                break (net, x);
            }
        };
        let l = loss(&net, &mut rng);
        worst_p = worst_p.max(check_gradients(&net, &x, &l, H).unwrap());
        worst_x = worst_x.max(check_input_gradients(&net, &x, &l, H).unwrap());
    }
    (worst_p, worst_x)
}

fn mse_target(net: &Net, rng: &mut ChaCha8Rng, n: usize) -> LossKind {
    LossKind::Mse((0..n * net.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn dense_layer_matches_finite_differences() {
    let (p, x) = run_draws(|r| NetBuilder::new(&[4]).dense(3).build(r).unwrap(), 3, |net, r| mse_target(net, r, 3));
    assert!(p <= 1e-6 && x <= 1e-6, "linear net errors {p} {x}");
}

#[test]
fn conv_layer_matches_finite_differences() {
    let (p, x) = run_draws(
        |r| NetBuilder::new(&[2, 5, 5]).conv(3, 3, 2, 1).flatten().build(r).unwrap(),
        2,
        |net, r| mse_target(net, r, 2),
    );
    assert!(p <= TOL && x <= TOL, "conv errors {p} {x}");
}

#[test]
fn relu_stack_matches_finite_differences() {
    let (p, x) = run_draws(
        |r| NetBuilder::new(&[1, 6, 6]).conv(2, 3, 1, 1).relu().flatten().dense(5).relu().dense(2).build(r).unwrap(),
        2,
        |net, r| mse_target(net, r, 2),
    );
    assert!(p <= TOL && x <= TOL, "conv+relu errors {p} {x}");
}

#[test]
fn spatial_softmax_matches_finite_differences() {
    let (p, x) = run_draws(
        |r| NetBuilder::new(&[2, 5, 4]).conv(3, 3, 1, 1).spatial_softmax().flatten().dense(1).build(r).unwrap(),
        4,
        |_, r| LossKind::BceWithLogits((0..4).map(|_| r.gen_range(0..2) as f64).collect()),
    );
    assert!(p <= TOL && x <= TOL, "spatial softmax errors {p} {x}");
}

#[test]
fn large_net_is_subsampled_and_accurate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = NetBuilder::new(&[3, 12, 12]).conv(4, 3, 2, 1).relu().conv(4, 3, 2, 1).relu().flatten().dense(32).build(&mut rng).unwrap();
    assert!(net.params().num_values() > 1000);
    let x = loop {
        let x = random_batch(&mut rng, 2, net.input_shape());
        if min_relu_margin(&net, &x) >= 1e-3 {
            break x;
        }
    };
    let err = check_gradients(&net, &x, &mse_target(&net, &mut rng, 2), H).unwrap();
    assert!(err <= TOL, "{err}");
}

#[test]
fn zero_loss_surface_reports_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = NetBuilder::new(&[2]).dense(2).build(&mut rng).unwrap();
    net.params_mut().insert("l0.w", Tensor::zeros(vec![2, 2])).unwrap();
    let x = random_batch(&mut rng, 3, &[2]);
    let err = check_gradients(&net, &x, &LossKind::Mse(vec![0.0; 6]), H).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn forward_backward_are_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = NetBuilder::new(&[3, 16, 16]).conv(4, 3, 2, 1).relu().flatten().dense(3).build(&mut rng).unwrap();
    let x = random_batch(&mut rng, 4, net.input_shape());
    let up = random_batch(&mut rng, 4, net.output_shape());
    let run = || {
        let (y, tr) = net.forward_trace(&x).unwrap();
        let (g, dx) = net.backward_trace(&tr, &up).unwrap();
        (y, g, dx)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn mse_nonnegative(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20)) {
        let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (l, _) = mse(&p, &t).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(mse(&p, &p).unwrap().0, 0.0);
    }

    #[test]
    fn bce_nonnegative(x in -60.0f64..60.0, y in 0u8..2) {
        let (l, _) = bce_with_logits(x, y as f64).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn spatial_softmax_bounded_and_shift_invariant(
        vals in prop::collection::vec(-5.0f32..5.0, 2 * 4 * 6),
        shift in -3.0f32..3.0,
    ) {
        let net = NetBuilder::new(&[2, 4, 6]).spatial_softmax().build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a = net.forward(&Tensor::new(vec![2, 4, 6], vals.clone()).unwrap()).unwrap();
        let shifted: Vec<f32> = vals.iter().map(|v| v + shift).collect();
        let b = net.forward(&Tensor::new(vec![2, 4, 6], shifted).unwrap()).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((-1.0..=1.0).contains(u));
            prop_assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_zero_grads_identity(vals in prop::collection::vec(-3.0f32..3.0, 1..10), lr in 1e-4f64..1.0) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![vals.len()], vals.clone()).unwrap()).unwrap();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        Adam::new(lr).step(&mut p, &g).unwrap();
        prop_assert_eq!(p, before);
    }
}
