//! Central finite-difference validation of [`Net`] backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::Batch;
use crate::error::{NumError, Result};
use crate::loss::{bce_mean, mse};
use crate::net::{Net, Weights};

/// Loss applied to the network output during a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Mean squared error against a target of the full output batch size.
    Mse(Vec<f64>),
    /// Mean BCE-with-logits; the net must emit one logit per sample.
    BceWithLogits(Vec<f64>),
}

impl LossKind {
    fn eval(&self, out: &Batch) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::Mse(t) => mse(out.data(), t),
            LossKind::BceWithLogits(labels) => bce_mean(out.data(), labels),
        }
    }
}

/// Nets with more parameters than this are probed on a random subsample.
pub const FULL_PROBE_LIMIT: usize = 1000;
pub const SUBSAMPLE_PROBES: usize = 256;

fn rel_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / scale
}

fn loss_at(net: &Net, w: &Weights, x: &Batch, loss: &LossKind) -> Result<f64> {
    let out = net.run(w, x, None)?;
    let (l, _) = loss.eval(&out)?;
    if !l.is_finite() {
        return Err(NumError::NonFinite {
            context: "loss during finite-difference probe".into(),
        });
    }
    Ok(l)
}

/// Maximum relative error between backprop parameter gradients and central
/// differences with step `h`. Every parameter is probed for small nets,
/// otherwise a seeded random subsample of [`SUBSAMPLE_PROBES`] values.
pub fn check_gradients(net: &Net, x: &Batch, loss: &LossKind, h: f64) -> Result<f64> {
    let w = net.weights();
    let (out, trace) = net.forward_trace_with(&w, x)?;
    let (_, upstream) = loss.eval(&out)?;
    let upstream = Batch::new(out.n(), out.sample_shape().to_vec(), upstream)?;
    let (grads, _) = net.backward_trace_with(&w, &trace, &upstream)?;

    let mut probes: Vec<(String, usize)> = Vec::new();
    for (name, t) in net.params().iter() {
        for i in 0..t.len() {
            probes.push((name.clone(), i));
        }
    }
    if probes.len() > FULL_PROBE_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let keep = sample(&mut rng, probes.len(), SUBSAMPLE_PROBES).into_vec();
        probes = keep.into_iter().map(|i| probes[i].clone()).collect();
    }

    let mut worst = 0.0f64;
    for (name, i) in probes {
        let (layer, is_weight) = net.param_location(&name).expect("parameter names follow lN.w/lN.b");
        let mut wp = w.clone();
        let mut wm = w.clone();
        {
            let (a, b) = wp.layers[layer].as_mut().unwrap();
            if is_weight { a[i] += h } else { b[i] += h }
            let (a, b) = wm.layers[layer].as_mut().unwrap();
            if is_weight { a[i] -= h } else { b[i] -= h }
        }
        let numeric = (loss_at(net, &wp, x, loss)? - loss_at(net, &wm, x, loss)?) / (2.0 * h);
        let analytic = grads.get(&name).unwrap()[i];
        worst = worst.max(rel_error(analytic, numeric));
    }
    Ok(worst)
}

/// Same as [`check_gradients`] but for the gradient with respect to the input.
pub fn check_input_gradients(net: &Net, x: &Batch, loss: &LossKind, h: f64) -> Result<f64> {
    let w = net.weights();
    let (out, trace) = net.forward_trace_with(&w, x)?;
    let (_, upstream) = loss.eval(&out)?;
    let upstream = Batch::new(out.n(), out.sample_shape().to_vec(), upstream)?;
    let (_, dx) = net.backward_trace_with(&w, &trace, &upstream)?;
    let mut worst = 0.0f64;
    for i in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (loss_at(net, &w, &xp, loss)? - loss_at(net, &w, &xm, loss)?) / (2.0 * h);
        worst = worst.max(rel_error(dx.data()[i], numeric));
    }
    Ok(worst)
}
