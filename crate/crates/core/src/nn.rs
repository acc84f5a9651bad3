//! Small feed-forward networks trained by full-batch gradient descent.
//!
//! Tensors are flat `Vec<f64>` in channel-major (`c, h, w`) order. The
//! activation follows every dense or convolutional layer except the final
//! parametric one, so the network output is an unbounded scalar.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, population_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    /// Valid (unpadded) stride-1 convolution producing `channels` maps.
    Conv2D { kh: usize, kw: usize, channels: usize },
    /// Non-overlapping max pooling; trailing rows/columns are dropped.
    Pool { ph: usize, pw: usize },
    Flatten,
}

impl LayerSpec {
    fn has_params(self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2D { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
    /// Logistic sigmoid.
    Logit,
    /// No nonlinearity; the whole net is then linear.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logit => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activated value `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Logit => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::ReLU),
            "tanh" => Ok(Activation::Tanh),
            "logit" | "sigmoid" => Ok(Activation::Logit),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub activation: Activation,
    pub seed: u64,
}

impl NetSpec {
    /// Dense chain through the given widths, e.g. `[16, 32, 1]`.
    pub fn dense(widths: &[usize], activation: Activation, seed: u64) -> Self {
        Self {
            input: Shape::Flat(widths.first().copied().unwrap_or(0)),
            layers: widths
                .windows(2)
                .map(|w| LayerSpec::Dense { input: w[0], output: w[1] })
                .collect(),
            activation,
            seed,
        }
    }

    /// Ten dense layers mapping a 16-vector to a scalar.
    pub fn deep10(activation: Activation, seed: u64) -> Self {
        Self::dense(&[16, 32, 32, 24, 24, 16, 16, 8, 8, 4, 1], activation, seed)
    }

    /// One hidden layer over the four monthly moments.
    pub fn shallow(activation: Activation, seed: u64) -> Self {
        Self::dense(&[4, 8, 1], activation, seed)
    }

    /// Conv 3x3x8, pool 2x2, conv 3x3x16, pool 2x2, flatten, two dense
    /// layers. Needs at least a 10x10 image.
    pub fn cnn7(h: usize, w: usize, hidden: usize, activation: Activation, seed: u64) -> Result<Self> {
        let mut spec = Self {
            input: Shape::Image { c: 1, h, w },
            layers: vec![
                LayerSpec::Conv2D { kh: 3, kw: 3, channels: 8 },
                LayerSpec::Pool { ph: 2, pw: 2 },
                LayerSpec::Conv2D { kh: 3, kw: 3, channels: 16 },
                LayerSpec::Pool { ph: 2, pw: 2 },
                LayerSpec::Flatten,
            ],
            activation,
            seed,
        };
        let flat = spec.shapes()?.last().copied().map_or(0, Shape::size);
        spec.layers.push(LayerSpec::Dense { input: flat, output: hidden });
        spec.layers.push(LayerSpec::Dense { input: hidden, output: 1 });
        Ok(spec)
    }

    /// Output shape of every layer; errors name the 1-based layer index.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input;
        if cur.size() == 0 {
            return Err(Error::Layer { index: 0, message: "empty input".into() });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let index = i + 1;
            let err = |message: String| Error::Layer { index, message };
            cur = match (*layer, cur) {
                (LayerSpec::Dense { input, output }, Shape::Flat(n)) => {
                    if input != n {
                        return Err(err(format!("dense expects {input} inputs, previous layer gives {n}")));
                    }
                    if output == 0 {
                        return Err(err("dense layer with zero outputs".into()));
                    }
                    Shape::Flat(output)
                }
                (LayerSpec::Dense { .. }, Shape::Image { .. }) => {
                    return Err(err("dense layer applied to an image; add Flatten".into()))
                }
                (LayerSpec::Conv2D { kh, kw, channels }, Shape::Image { h, w, .. }) => {
                    if kh == 0 || kw == 0 || channels == 0 || kh > h || kw > w {
                        return Err(err(format!("{kh}x{kw} kernel does not fit a {h}x{w} map")));
                    }
                    Shape::Image { c: channels, h: h - kh + 1, w: w - kw + 1 }
                }
                (LayerSpec::Pool { ph, pw }, Shape::Image { c, h, w }) => {
                    if ph == 0 || pw == 0 || ph > h || pw > w {
                        return Err(err(format!("{ph}x{pw} pool does not fit a {h}x{w} map")));
                    }
                    Shape::Image { c, h: h / ph, w: w / pw }
                }
                (LayerSpec::Conv2D { .. } | LayerSpec::Pool { .. }, Shape::Flat(_)) => {
                    return Err(err("spatial layer applied to a flat vector".into()))
                }
                (LayerSpec::Flatten, s) => Shape::Flat(s.size()),
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Layer { index: 0, message: "no layers".into() });
        }
        let shapes = self.shapes()?;
        if shapes.last() != Some(&Shape::Flat(1)) {
            return Err(Error::Layer {
                index: self.layers.len(),
                message: "network output must be a scalar".into(),
            });
        }
        Ok(())
    }

    fn last_param_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.has_params())
    }
}

/// Weights and biases of one layer; empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Dense: `out x in` row-major. Conv: `[out_c][in_c][kh][kw]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub spec: NetSpec,
    pub weights: Vec<LayerParams>,
    pub loss_curve: Vec<f64>,
}

pub fn init_net(spec: &NetSpec) -> Result<TrainedNet> {
    spec.validate()?;
    let shapes = spec.shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = if i == 0 { spec.input } else { shapes[i - 1] };
        let (n_w, n_b, fan_in) = match (*layer, in_shape) {
            (LayerSpec::Dense { input, output }, _) => (input * output, output, input),
            (LayerSpec::Conv2D { kh, kw, channels }, Shape::Image { c, .. }) => {
                (channels * c * kh * kw, channels, c * kh * kw)
            }
            _ => (0, 0, 1),
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..n_w).map(|_| rng.random_range(-bound..bound)).collect();
        weights.push(LayerParams { w, b: vec![0.0; n_b] });
    }
    Ok(TrainedNet {
        spec: spec.clone(),
        weights,
        loss_curve: Vec::new(),
    })
}

/// Per-layer intermediate values kept for the backward pass.
struct Trace {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    values: Vec<Vec<f64>>,
    /// Argmax positions for pool layers.
    argmax: Vec<Vec<usize>>,
}

impl TrainedNet {
    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|p| p.w.len() + p.b.len()).sum()
    }

    fn activated(&self, i: usize) -> bool {
        self.spec.layers[i].has_params() && Some(i) != self.spec.last_param_layer()
    }

    fn in_shape(&self, shapes: &[Shape], i: usize) -> Shape {
        if i == 0 {
            self.spec.input
        } else {
            shapes[i - 1]
        }
    }

    fn forward(&self, input: &[f64], shapes: &[Shape]) -> Trace {
        let mut values = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut argmax = vec![Vec::new(); self.spec.layers.len()];
        values.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &values[i];
            let p = &self.weights[i];
            let mut y = match (*layer, self.in_shape(shapes, i)) {
                (LayerSpec::Dense { input, output }, _) => (0..output)
                    .map(|o| {
                        let row = &p.w[o * input..(o + 1) * input];
                        p.b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect(),
                (LayerSpec::Conv2D { kh, kw, channels }, Shape::Image { c, h, w }) => {
                    conv_forward(x, &p.w, &p.b, c, h, w, kh, kw, channels)
                }
                (LayerSpec::Pool { ph, pw }, Shape::Image { c, h, w }) => {
                    let (y, idx) = pool_forward(x, c, h, w, ph, pw);
                    argmax[i] = idx;
                    y
                }
                _ => x.clone(),
            };
            if self.activated(i) {
                let act = self.spec.activation;
                y.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            values.push(y);
        }
        Trace { values, argmax }
    }

    /// Gradient of `0.5 * dscale * y^2`-style losses: `dout` is dL/dy at the
    /// output. Gradients are added into `grads`.
    fn backward(&self, trace: &Trace, shapes: &[Shape], dout: f64, grads: &mut [LayerParams]) {
        let mut delta = vec![dout];
        for i in (0..self.spec.layers.len()).rev() {
            if self.activated(i) {
                let act = self.spec.activation;
                for (d, y) in delta.iter_mut().zip(&trace.values[i + 1]) {
                    *d *= act.derivative(*y);
                }
            }
            let x = &trace.values[i];
            let p = &self.weights[i];
            let g = &mut grads[i];
            delta = match (self.spec.layers[i], self.in_shape(shapes, i)) {
                (LayerSpec::Dense { input, output }, _) => {
                    let mut dx = vec![0.0; input];
                    for o in 0..output {
                        let d = delta[o];
                        g.b[o] += d;
                        let row = o * input;
                        for j in 0..input {
                            g.w[row + j] += d * x[j];
                            dx[j] += d * p.w[row + j];
                        }
                    }
                    dx
                }
                (LayerSpec::Conv2D { kh, kw, channels }, Shape::Image { c, h, w }) => {
                    conv_backward(x, &p.w, &delta, g, c, h, w, kh, kw, channels)
                }
                (LayerSpec::Pool { .. }, in_shape) => {
                    let mut dx = vec![0.0; in_shape.size()];
                    for (d, &k) in delta.iter().zip(&trace.argmax[i]) {
                        dx[k] += d;
                    }
                    dx
                }
                _ => delta,
            };
        }
    }

    fn zero_grads(&self) -> Vec<LayerParams> {
        self.weights
            .iter()
            .map(|p| LayerParams {
                w: vec![0.0; p.w.len()],
                b: vec![0.0; p.b.len()],
            })
            .collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input.size() {
            return Err(Error::shape(format!(
                "input of length {} for a net expecting {}",
                input.len(),
                self.spec.input.size()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        let shapes = self.spec.shapes()?;
        Ok(self.forward(input, &shapes).values.last().expect("output")[0])
    }

    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let shapes = self.spec.shapes()?;
        inputs
            .iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(self.forward(x, &shapes).values.last().expect("output")[0])
            })
            .collect()
    }

    /// Mean squared error and its gradient over a batch.
    fn loss_and_grad(&self, inputs: &[Vec<f64>], targets: &[f64], shapes: &[Shape]) -> (f64, Vec<LayerParams>) {
        let mut grads = self.zero_grads();
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let trace = self.forward(x, shapes);
            let y = trace.values.last().expect("output")[0];
            let e = y - t;
            loss += e * e;
            self.backward(&trace, shapes, 2.0 * e / n, &mut grads);
        }
        (loss / n, grads)
    }

    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        let preds = self.predict_batch(inputs)?;
        Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len().max(1) as f64)
    }

    /// Flat view of all parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flat_map(|p| p.w.iter().chain(&p.b).copied())
            .collect()
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for p in &mut self.weights {
            if k < p.w.len() {
                return &mut p.w[k];
            }
            k -= p.w.len();
            if k < p.b.len() {
                return &mut p.b[k];
            }
            k -= p.b.len();
        }
        panic!("parameter index out of range")
    }

    /// ReLU on/off pattern and pool argmaxes for one input.
    fn kink_pattern(&self, input: &[f64], shapes: &[Shape]) -> (Vec<bool>, Vec<usize>) {
        let trace = self.forward(input, shapes);
        let mut mask = Vec::new();
        if self.spec.activation == Activation::ReLU {
            for i in 0..self.spec.layers.len() {
                if self.activated(i) {
                    mask.extend(trace.values[i + 1].iter().map(|&v| v > 0.0));
                }
            }
        }
        (mask, trace.argmax.concat())
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    wd: usize,
    kh: usize,
    kw: usize,
    oc: usize,
) -> Vec<f64> {
    let oh = h - kh + 1;
    let ow = wd - kw + 1;
    let mut y = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for r in 0..oh {
            for s in 0..ow {
                let mut acc = b[o];
                for ic in 0..c {
                    for i in 0..kh {
                        let xrow = (ic * h + r + i) * wd + s;
                        let wrow = ((o * c + ic) * kh + i) * kw;
                        for j in 0..kw {
                            acc += w[wrow + j] * x[xrow + j];
                        }
                    }
                }
                y[(o * oh + r) * ow + s] = acc;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    delta: &[f64],
    g: &mut LayerParams,
    c: usize,
    h: usize,
    wd: usize,
    kh: usize,
    kw: usize,
    oc: usize,
) -> Vec<f64> {
    let oh = h - kh + 1;
    let ow = wd - kw + 1;
    let mut dx = vec![0.0; c * h * wd];
    for o in 0..oc {
        for r in 0..oh {
            for s in 0..ow {
                let d = delta[(o * oh + r) * ow + s];
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                for ic in 0..c {
                    for i in 0..kh {
                        let xrow = (ic * h + r + i) * wd + s;
                        let wrow = ((o * c + ic) * kh + i) * kw;
                        for j in 0..kw {
                            g.w[wrow + j] += d * x[xrow + j];
                            dx[xrow + j] += d * w[wrow + j];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], c: usize, h: usize, w: usize, ph: usize, pw: usize) -> (Vec<f64>, Vec<usize>) {
    let oh = h / ph;
    let ow = w / pw;
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for s in 0..ow {
                let mut best = (ch * h + r * ph) * w + s * pw;
                for i in 0..ph {
                    for j in 0..pw {
                        let k = (ch * h + r * ph + i) * w + s * pw + j;
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx)
}

/// Full-batch gradient descent on mean squared error. `loss_curve[r]` is
/// the loss before update `r`.
pub fn train(
    net: &TrainedNet,
    inputs: &[Vec<f64>],
    targets: &[f64],
    rounds: usize,
    learning_rate: f64,
) -> Result<TrainedNet> {
    if rounds == 0 {
        return Err(Error::invalid("training needs at least one round"));
    }
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    for x in inputs {
        net.check_input(x)?;
    }
    let shapes = net.spec.shapes()?;
    let mut out = net.clone();
    out.loss_curve.clear();
    for round in 0..rounds {
        let (loss, grads) = out.loss_and_grad(inputs, targets, &shapes);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(round));
        }
        out.loss_curve.push(loss);
        for (p, g) in out.weights.iter_mut().zip(&grads) {
            p.w.iter_mut().zip(&g.w).for_each(|(w, d)| *w -= learning_rate * d);
            p.b.iter_mut().zip(&g.b).for_each(|(b, d)| *b -= learning_rate * d);
        }
    }
    if out.flat_params().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(rounds));
    }
    Ok(out)
}

/// Analytic gradient of the single-sample loss `(y - target)^2`, flattened
/// in [`TrainedNet::flat_params`] order.
pub fn gradient(net: &TrainedNet, input: &[f64], target: f64) -> Result<Vec<f64>> {
    net.check_input(input)?;
    let shapes = net.spec.shapes()?;
    let (_, grads) = net.loss_and_grad(&[input.to_vec()], &[target], &shapes);
    Ok(grads
        .iter()
        .flat_map(|p| p.w.iter().chain(&p.b).copied())
        .collect())
}

/// Relative-error floor used by [`grad_check`] so that gradients that are
/// zero up to rounding do not inflate the ratio.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between analytic and central-difference
/// gradients. Parameters whose perturbation flips a ReLU or moves a pool
/// argmax are skipped.
pub fn grad_check(net: &TrainedNet, input: &[f64], target: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let analytic = gradient(net, input, target)?;
    let shapes = net.spec.shapes()?;
    let base_pattern = net.kink_pattern(input, &shapes);
    let loss = |n: &TrainedNet| {
        let y = n.forward(input, &shapes).values.last().expect("output")[0];
        (y - target).powi(2)
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + epsilon;
        let up = loss(&probe);
        let up_pattern = probe.kink_pattern(input, &shapes);
        *probe.param_mut(k) = orig - epsilon;
        let down = loss(&probe);
        let down_pattern = probe.kink_pattern(input, &shapes);
        *probe.param_mut(k) = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            continue;
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Affine standardization fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub sd: f64,
}

impl Scaler {
    /// Zero-variance data gets unit scale.
    pub fn fit(xs: &[f64]) -> Self {
        let sd = population_variance(xs).sqrt();
        Self {
            mean: mean(xs),
            sd: if sd > 0.0 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// One scaler per input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub columns: Vec<Scaler>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        Self {
            columns: (0..width)
                .map(|j| Scaler::fit(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
                .collect(),
        }
    }

    /// A single scaler shared by every coordinate (for images, where pixels
    /// are exchangeable).
    pub fn fit_pooled(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let all: Vec<f64> = rows.iter().flatten().copied().collect();
        Self {
            columns: vec![Scaler::fit(&all); width],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.columns).map(|(x, s)| s.forward(*x)).collect()
    }
}

pub fn write_loss_csv<W: Write>(net: &TrainedNet, mut w: W) -> Result<()> {
    writeln!(w, "round,mse")?;
    for (r, l) in net.loss_curve.iter().enumerate() {
        writeln!(w, "{r},{l}")?;
    }
    Ok(())
}
