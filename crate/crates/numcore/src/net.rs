use rand::Rng;

use crate::batch::Batch;
use crate::error::{NumError, Result};
use crate::gemm::gemm;
use crate::tensor::{Gradients, ParamSet, Tensor};

/// One stage of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    /// 2-D convolution over a `C×H×W` input with zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Fully connected layer over a rank-1 input.
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// Per-channel softmax over pixels followed by the expected `(x, y)`
    /// coordinate in `[-1, 1]²`: `C×H×W → C×2`.
    SpatialSoftmax,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::SpatialSoftmax => "spatial_softmax",
            Layer::Flatten => "flatten",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(NumError::InvalidNet(msg));
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return bad(format!(
                        "conv2d expects [{in_channels}, H, W], got {input:?}"
                    ));
                }
                if kernel == 0 || stride == 0 {
                    return bad("conv2d kernel and stride must be positive".into());
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel || w < kernel {
                    return bad(format!("conv2d kernel {kernel} larger than input {input:?}"));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            Layer::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return bad(format!("dense expects [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::SpatialSoftmax => {
                if input.len() != 3 || input[1] == 0 || input[2] == 0 {
                    return bad(format!("spatial_softmax expects [C, H, W], got {input:?}"));
                }
                Ok(vec![input[0], 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            Layer::Dense { inputs, outputs } => (inputs, outputs),
            _ => (0, 0),
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.w")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.b")
}

/// Builds a [`Net`] by chaining layers onto an input shape.
#[derive(Debug, Clone)]
pub struct NetBuilder {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl NetBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        NetBuilder {
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
        }
    }

    fn current_shape(&self) -> Vec<usize> {
        let mut s = self.input_shape.clone();
        for l in &self.layers {
            match l.output_shape(&s) {
                Ok(next) => s = next,
                Err(_) => return Vec::new(),
            }
        }
        s
    }

    pub fn conv(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let in_channels = self.current_shape().first().copied().unwrap_or(0);
        self.layers.push(Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        let shape = self.current_shape();
        let inputs = if shape.len() == 1 { shape[0] } else { 0 };
        self.layers.push(Layer::Dense { inputs, outputs });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn spatial_softmax(mut self) -> Self {
        self.layers.push(Layer::SpatialSoftmax);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(Layer::Flatten);
        self
    }

    /// Initialises weights from `Uniform(±√(6/(fan_in+fan_out)))`, biases at zero.
    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> Result<Net> {
        let mut params = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((ws, bs)) = layer.param_shapes() {
                let (fan_in, fan_out) = layer.fans();
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let n: usize = ws.iter().product();
                let w: Vec<f32> = (0..n)
                    .map(|_| rng.gen_range(-limit..=limit) as f32)
                    .collect();
                params.insert(weight_name(i), Tensor::new(ws, w)?)?;
                params.insert(bias_name(i), Tensor::zeros(bs))?;
            }
        }
        Net::from_parts(self.input_shape, self.layers, params)
    }
}

/// Feed-forward network: a layer list plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
    params: ParamSet,
}

/// Per-layer `f64` copies of weights and biases used during computation.
#[derive(Debug, Clone)]
pub(crate) struct Weights {
    pub(crate) layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

enum Aux {
    None,
    Cols(Vec<f64>),
    Probs(Vec<f64>),
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    n: usize,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.n
    }
}

impl Net {
    /// Assembles a network from explicit parts, validating shape chaining and
    /// that `params` holds exactly the tensors the layers need.
    pub fn from_parts(input_shape: Vec<usize>, layers: Vec<Layer>, params: ParamSet) -> Result<Net> {
        let mut shapes = vec![input_shape.clone()];
        for l in &layers {
            let next = l.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        let mut expected = 0;
        for (i, l) in layers.iter().enumerate() {
            if let Some((ws, bs)) = l.param_shapes() {
                for (name, shape) in [(weight_name(i), ws), (bias_name(i), bs)] {
                    let t = params
                        .get(&name)
                        .ok_or_else(|| NumError::UnknownParam(name.clone()))?;
                    if t.shape() != shape.as_slice() {
                        return Err(NumError::ShapeMismatch {
                            expected: shape,
                            actual: t.shape().to_vec(),
                        });
                    }
                    expected += 1;
                }
            }
        }
        if expected != params.len() {
            return Err(NumError::InvalidNet(format!(
                "parameter set has {} tensors, layers need {expected}",
                params.len()
            )));
        }
        Ok(Net {
            input_shape,
            layers,
            shapes,
            params,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn weights(&self) -> Weights {
        Weights {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.has_params().then(|| {
                        (
                            self.params.get(&weight_name(i)).unwrap().to_f64(),
                            self.params.get(&bias_name(i)).unwrap().to_f64(),
                        )
                    })
                })
                .collect(),
        }
    }

    pub(crate) fn param_location(&self, name: &str) -> Option<(usize, bool)> {
        let (layer, kind) = name.strip_prefix('l')?.split_once('.')?;
        let idx: usize = layer.parse().ok()?;
        match kind {
            "w" => Some((idx, true)),
            "b" => Some((idx, false)),
            _ => None,
        }
    }

    fn check_input(&self, x: &Batch) -> Result<()> {
        if x.sample_shape() != self.input_shape.as_slice() {
            return Err(NumError::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: x.sample_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass on a single sample (shape == input shape) or a batch
    /// (leading batch dimension).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let single = x.shape() == self.input_shape.as_slice();
        let b = Batch::from_tensor(x, &self.input_shape)?;
        let out = self.forward_batch(&b)?;
        if single {
            Tensor::from_f64(self.output_shape().to_vec(), out.data())
        } else {
            out.to_tensor()
        }
    }

    pub fn forward_batch(&self, x: &Batch) -> Result<Batch> {
        self.check_input(x)?;
        self.run(&self.weights(), x, None)
    }

    pub fn forward_trace(&self, x: &Batch) -> Result<(Batch, Trace)> {
        self.check_input(x)?;
        self.forward_trace_with(&self.weights(), x)
    }

    pub(crate) fn forward_trace_with(&self, w: &Weights, x: &Batch) -> Result<(Batch, Trace)> {
        let mut trace = Trace {
            n: x.n(),
            inputs: Vec::with_capacity(self.layers.len()),
            aux: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(w, x, Some(&mut trace))?;
        Ok((out, trace))
    }

    pub(crate) fn run(&self, w: &Weights, x: &Batch, mut trace: Option<&mut Trace>) -> Result<Batch> {
        let n = x.n();
        let mut cur = x.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let out_len: usize = out_shape.iter().product();
            let mut out = vec![0.0; n * out_len];
            let mut aux = Aux::None;
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (wt, bias) = w.layers[i].as_ref().unwrap();
                    let geo = ConvGeom {
                        c: in_channels,
                        h: in_shape[1],
                        w: in_shape[2],
                        k: kernel,
                        stride,
                        pad: padding,
                        ho: out_shape[1],
                        wo: out_shape[2],
                    };
                    let kk = geo.col_rows();
                    let hw = geo.ho * geo.wo;
                    let in_len = in_channels * geo.h * geo.w;
                    let mut cols = vec![0.0; n * kk * hw];
                    for s in 0..n {
                        let col = &mut cols[s * kk * hw..(s + 1) * kk * hw];
                        im2col(&cur[s * in_len..(s + 1) * in_len], &geo, col, hw, 0);
                        let o = &mut out[s * out_len..(s + 1) * out_len];
                        for (oc, row) in o.chunks_mut(hw).enumerate() {
                            row.iter_mut().for_each(|v| *v = bias[oc]);
                        }
                        gemm(out_channels, kk, hw, wt, false, col, false, o, 1.0);
                    }
                    if trace.is_some() {
                        aux = Aux::Cols(cols);
                    }
                }
                Layer::Dense { inputs, outputs } => {
                    let (wt, bias) = w.layers[i].as_ref().unwrap();
                    for row in out.chunks_mut(outputs) {
                        row.copy_from_slice(bias);
                    }
                    gemm(n, inputs, outputs, &cur, false, wt, true, &mut out, 1.0);
                }
                Layer::Relu => {
                    for (o, &v) in out.iter_mut().zip(&cur) {
                        *o = if v > 0.0 { v } else { 0.0 };
                    }
                }
                Layer::SpatialSoftmax => {
                    let (h, wd) = (in_shape[1], in_shape[2]);
                    let xs = coords(wd);
                    let ys = coords(h);
                    let mut probs = vec![0.0; cur.len()];
                    for (ch, (a, p)) in cur.chunks(h * wd).zip(probs.chunks_mut(h * wd)).enumerate() {
                        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for (pi, &ai) in p.iter_mut().zip(a) {
                            *pi = (ai - m).exp();
                            z += *pi;
                        }
                        p.iter_mut().for_each(|v| *v /= z);
                        let ex = paired_expectation(&xs, &column_marginal(p, h, wd));
                        let ey = paired_expectation(&ys, &row_marginal(p, h, wd));
                        // `ch` counts channels across the whole batch.
                        out[ch * 2] = ex;
                        out[ch * 2 + 1] = ey;
                    }
                    if trace.is_some() {
                        aux = Aux::Probs(probs);
                    }
                }
                Layer::Flatten => out.copy_from_slice(&cur),
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFinite {
                    context: format!("forward of layer {i} ({})", layer.kind()),
                });
            }
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut cur, out));
                t.aux.push(aux);
            } else {
                cur = out;
            }
        }
        Batch::new(n, self.output_shape().to_vec(), cur)
    }

    /// Backpropagates `upstream` (dL/d output) through a recorded forward pass.
    /// Returns parameter gradients (summed over the batch) and dL/d input.
    pub fn backward_trace(&self, trace: &Trace, upstream: &Batch) -> Result<(Gradients, Batch)> {
        self.backward_trace_with(&self.weights(), trace, upstream)
    }

    pub(crate) fn backward_trace_with(
        &self,
        w: &Weights,
        trace: &Trace,
        upstream: &Batch,
    ) -> Result<(Gradients, Batch)> {
        if upstream.sample_shape() != self.output_shape() || upstream.n() != trace.n {
            let mut expected = vec![trace.n];
            expected.extend_from_slice(self.output_shape());
            let mut actual = vec![upstream.n()];
            actual.extend_from_slice(upstream.sample_shape());
            return Err(NumError::ShapeMismatch { expected, actual });
        }
        let n = trace.n;
        let mut grads = Gradients::default();
        let mut g = upstream.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let in_len: usize = in_shape.iter().product();
            let out_len: usize = out_shape.iter().product();
            let input = &trace.inputs[i];
            let mut dx = vec![0.0; n * in_len];
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (wt, _) = w.layers[i].as_ref().unwrap();
                    let Aux::Cols(cols) = &trace.aux[i] else {
                        unreachable!("conv trace without columns")
                    };
                    let geo = ConvGeom {
                        c: in_channels,
                        h: in_shape[1],
                        w: in_shape[2],
                        k: kernel,
                        stride,
                        pad: padding,
                        ho: out_shape[1],
                        wo: out_shape[2],
                    };
                    let kk = geo.col_rows();
                    let hw = geo.ho * geo.wo;
                    let mut dw = vec![0.0; out_channels * kk];
                    let mut db = vec![0.0; out_channels];
                    let mut dcol = vec![0.0; kk * hw];
                    for s in 0..n {
                        let go = &g[s * out_len..(s + 1) * out_len];
                        let col = &cols[s * kk * hw..(s + 1) * kk * hw];
                        gemm(out_channels, hw, kk, go, false, col, true, &mut dw, 1.0);
                        for (oc, row) in go.chunks(hw).enumerate() {
                            db[oc] += row.iter().sum::<f64>();
                        }
                        gemm(kk, out_channels, hw, wt, true, go, false, &mut dcol, 0.0);
                        col2im(&dcol, &geo, &mut dx[s * in_len..(s + 1) * in_len], hw, 0);
                    }
                    grads.insert(weight_name(i), dw);
                    grads.insert(bias_name(i), db);
                }
                Layer::Dense { inputs, outputs } => {
                    let (wt, _) = w.layers[i].as_ref().unwrap();
                    let mut dw = vec![0.0; outputs * inputs];
                    gemm(outputs, n, inputs, &g, true, input, false, &mut dw, 0.0);
                    let mut db = vec![0.0; outputs];
                    for row in g.chunks(outputs) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    gemm(n, outputs, inputs, &g, false, wt, false, &mut dx, 0.0);
                    grads.insert(weight_name(i), dw);
                    grads.insert(bias_name(i), db);
                }
                Layer::Relu => {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(&g).zip(input) {
                        *d = if xv > 0.0 { gv } else { 0.0 };
                    }
                }
                Layer::SpatialSoftmax => {
                    let (h, wd) = (in_shape[1], in_shape[2]);
                    let Aux::Probs(probs) = &trace.aux[i] else {
                        unreachable!("spatial softmax trace without probabilities")
                    };
                    let xs = coords(wd);
                    let ys = coords(h);
                    for (ch, (p, d)) in probs.chunks(h * wd).zip(dx.chunks_mut(h * wd)).enumerate() {
                        let (gx, gy) = (g[ch * 2], g[ch * 2 + 1]);
                        let (mut ex, mut ey) = (0.0, 0.0);
                        for r in 0..h {
                            for c in 0..wd {
                                ex += p[r * wd + c] * xs[c];
                                ey += p[r * wd + c] * ys[r];
                            }
                        }
                        for r in 0..h {
                            for c in 0..wd {
                                let k = r * wd + c;
                                d[k] = p[k] * ((xs[c] - ex) * gx + (ys[r] - ey) * gy);
                            }
                        }
                    }
                }
                Layer::Flatten => dx.copy_from_slice(&g),
            }
            if dx.iter().any(|v| !v.is_finite())
                || [weight_name(i), bias_name(i)]
                    .iter()
                    .filter_map(|k| grads.get(k))
                    .any(|gr| gr.iter().any(|v| !v.is_finite()))
            {
                return Err(NumError::NonFinite {
                    context: format!("gradient of layer {i} ({})", layer.kind()),
                });
            }
            g = dx;
        }
        let dinput = Batch::new(n, self.input_shape.clone(), g)?;
        Ok((grads, dinput))
    }

    /// Gradient of `<upstream, forward(x)>` with respect to every parameter.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<Gradients> {
        let xb = Batch::from_tensor(x, &self.input_shape)?;
        let ub = Batch::from_tensor(upstream, self.output_shape())?;
        let (_, trace) = self.forward_trace(&xb)?;
        Ok(self.backward_trace(&trace, &ub)?.0)
    }
}

/// Pixel-centre coordinates normalised to `[-1, 1]`, exactly antisymmetric
/// about the centre.
fn coords(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut c: Vec<f64> = (0..n)
        .map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64)
        .collect();
    for j in 0..n / 2 {
        c[n - 1 - j] = -c[j];
    }
    if n % 2 == 1 {
        c[n / 2] = 0.0;
    }
    c
}

fn column_marginal(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut m = vec![0.0; w];
    for r in 0..h {
        for (mc, v) in m.iter_mut().zip(&p[r * w..(r + 1) * w]) {
            *mc += v;
        }
    }
    m
}

fn row_marginal(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h).map(|r| p[r * w..(r + 1) * w].iter().sum()).collect()
}

/// `Σ c_j m_j` summed over mirrored pairs, so symmetric mass gives exactly 0.
fn paired_expectation(c: &[f64], m: &[f64]) -> f64 {
    let n = c.len();
    (0..n / 2).map(|j| c[j] * (m[j] - m[n - 1 - j])).sum()
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Writes one sample's patches into `col`, whose rows have length `stride`,
/// starting at column `offset`.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64], stride: usize, offset: usize) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * stride + offset;
                let dst = &mut col[row..row + hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64], stride: usize, offset: usize) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * stride + offset;
                let src = &col[row..row + hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn empty_net_is_identity() {
        let net = NetBuilder::new(&[3]).build(&mut rng()).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn dense_identity_weights() {
        let mut net = NetBuilder::new(&[2]).dense(2).build(&mut rng()).unwrap();
        net.params_mut()
            .insert("l0.w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let x = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn conv_all_ones_sums_to_nine() {
        let mut net = NetBuilder::new(&[1, 3, 3]).conv(1, 3, 1, 0).build(&mut rng()).unwrap();
        net.params_mut()
            .insert("l0.w", Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap())
            .unwrap();
        let out = net.forward(&Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_padding_and_stride_shapes() {
        let net = NetBuilder::new(&[3, 48, 48])
            .conv(8, 5, 2, 2)
            .relu()
            .conv(16, 3, 2, 1)
            .relu()
            .conv(16, 3, 2, 1)
            .flatten()
            .dense(64)
            .build(&mut rng())
            .unwrap();
        assert_eq!(net.output_shape(), &[64]);
        assert_eq!(net.shapes[1], vec![8, 24, 24]);
        assert_eq!(net.shapes[5], vec![16, 6, 6]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let net = NetBuilder::new(&[3]).dense(2).build(&mut rng()).unwrap();
        let err = net.forward(&Tensor::zeros(vec![4])).unwrap_err();
        assert_eq!(
            err,
            NumError::ShapeMismatch {
                expected: vec![3],
                actual: vec![4]
            }
        );
    }

    #[test]
    fn dense_grad_is_outer_product() {
        let net = NetBuilder::new(&[3]).dense(2).build(&mut rng()).unwrap();
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = net.backward(&x, &Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.get("l0.w").unwrap(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g.get("l0.b").unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = NetBuilder::new(&[1, 6, 6])
            .conv(2, 3, 1, 1)
            .relu()
            .flatten()
            .dense(3)
            .build(&mut rng())
            .unwrap();
        let x = Tensor::new(vec![1, 6, 6], (0..36).map(|i| i as f32 / 36.0).collect()).unwrap();
        let g = net.backward(&x, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn spatial_softmax_cases() {
        let net = NetBuilder::new(&[1, 5, 5]).spatial_softmax().build(&mut rng()).unwrap();
        let mut center = vec![-50.0f32; 25];
        center[12] = 50.0;
        let out = net.forward(&Tensor::new(vec![1, 5, 5], center).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
        let out = net.forward(&Tensor::new(vec![1, 5, 5], vec![0.3; 25]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
        let mut corner = vec![-50.0f32; 25];
        corner[0] = 50.0;
        let out = net.forward(&Tensor::new(vec![1, 5, 5], corner).unwrap()).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-6 && (out.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn from_parts_rejects_missing_params() {
        let net = NetBuilder::new(&[2]).dense(2).build(&mut rng()).unwrap();
        let mut p = net.params().clone();
        p = {
            let mut q = ParamSet::new();
            q.insert("l0.w", p.get("l0.w").unwrap().clone()).unwrap();
            q
        };
        assert!(Net::from_parts(vec![2], net.layers().to_vec(), p).is_err());
    }
}
