//! Fixed small convolutional digit classifier with hand-written backpropagation.
//!
//! Architecture (28×28×1 input, valid convolutions, stride 1):
//!
//! ```text
//! conv 8×3×3 + ReLU -> maxpool 2×2 -> conv 16×3×3 + ReLU -> maxpool 2×2 -> dense 400->10 -> softmax
//! ```
//!
//! The loss is cross-entropy on the softmax output. Its gradient at the logits
//! is `softmax - onehot`, which is exactly the gradient of the logit-level
//! formulation `logsumexp(z) - z_y`, so attacks may treat either as the
//! objective.

mod io;
mod train;

pub use io::{load_params, read_params, save_params, write_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use train::{accuracy, train, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{format_shape, Image, Label, ProbVector, NUM_CLASSES};

pub const INPUT_HEIGHT: usize = 28;
pub const INPUT_WIDTH: usize = 28;
pub const INPUT_CHANNELS: usize = 1;

const K: usize = 3;
const C1: usize = 8;
const C2: usize = 16;
const H1: usize = INPUT_HEIGHT - K + 1; // 26
const W1: usize = INPUT_WIDTH - K + 1;
const PH1: usize = H1 / 2; // 13
const PW1: usize = W1 / 2;
const H2: usize = PH1 - K + 1; // 11
const W2: usize = PW1 - K + 1;
const PH2: usize = H2 / 2; // 5
const PW2: usize = W2 / 2;
const DENSE_IN: usize = C2 * PH2 * PW2; // 400

/// Probability floor used by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// The trainable tensors of the reference architecture, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTensor {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    DenseWeight,
    DenseBias,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 6] = [
        ParamTensor::Conv1Weight,
        ParamTensor::Conv1Bias,
        ParamTensor::Conv2Weight,
        ParamTensor::Conv2Bias,
        ParamTensor::DenseWeight,
        ParamTensor::DenseBias,
    ];

    pub fn shape(self) -> &'static [usize] {
        match self {
            ParamTensor::Conv1Weight => &[C1, INPUT_CHANNELS, K, K],
            ParamTensor::Conv1Bias => &[C1],
            ParamTensor::Conv2Weight => &[C2, C1, K, K],
            ParamTensor::Conv2Bias => &[C2],
            ParamTensor::DenseWeight => &[NUM_CLASSES, DENSE_IN],
            ParamTensor::DenseBias => &[NUM_CLASSES],
        }
    }

    pub fn len(self) -> usize {
        self.shape().iter().product()
    }

    fn index(self) -> usize {
        self as usize
    }

    /// `(fan_in, fan_out)` used by the uniform Glorot initializer.
    fn fans(self) -> (usize, usize) {
        match self {
            ParamTensor::Conv1Weight => (INPUT_CHANNELS * K * K, C1 * K * K),
            ParamTensor::Conv2Weight => (C1 * K * K, C2 * K * K),
            ParamTensor::DenseWeight => (DENSE_IN, NUM_CLASSES),
            _ => (0, 0),
        }
    }
}

/// Bookkeeping carried alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMetadata {
    pub epochs_trained: u32,
    pub test_accuracy: Option<f64>,
}

/// All weights and biases of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    tensors: [Vec<f64>; 6],
    pub metadata: TrainingMetadata,
}

/// `∂loss/∂pixel` for every pixel of the image it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    shape: (usize, usize, usize),
    values: Vec<f64>,
}

impl InputGradient {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cross-entropy of `probs` against `label`, with the probability floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy(probs: &ProbVector, label: Label) -> f64 {
    let p = probs.prob(label).max(PROB_FLOOR);
    // -ln(1) would print as -0
    (-p.ln()).max(0.0)
}

impl ClassifierParams {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = ParamTensor::ALL.map(|t| {
            let (fan_in, fan_out) = t.fans();
            if fan_in == 0 {
                return vec![0.0; t.len()];
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..t.len()).map(|_| rng.random_range(-limit..limit)).collect()
        });
        Self {
            tensors,
            metadata: TrainingMetadata::default(),
        }
    }

    /// Builds params from tensors given in [`ParamTensor::ALL`] order.
    pub fn from_tensors(tensors: Vec<Vec<f64>>, metadata: TrainingMetadata) -> Result<Self> {
        if tensors.len() != ParamTensor::ALL.len() {
            return Err(Error::shape(
                format!("{} tensors", ParamTensor::ALL.len()),
                format!("{} tensors", tensors.len()),
            ));
        }
        for (t, values) in ParamTensor::ALL.iter().zip(&tensors) {
            if values.len() != t.len() {
                return Err(Error::shape(
                    format!("{t:?} with {} values", t.len()),
                    format!("{} values", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidImage(format!("{t:?} contains non-finite values")));
            }
        }
        let tensors: [Vec<f64>; 6] = tensors.try_into().expect("length checked");
        Ok(Self { tensors, metadata })
    }

    pub fn tensor(&self, which: ParamTensor) -> &[f64] {
        &self.tensors[which.index()]
    }

    pub fn tensor_mut(&mut self, which: ParamTensor) -> &mut [f64] {
        &mut self.tensors[which.index()]
    }

    pub fn logits(&self, x: &Image) -> Result<[f64; NUM_CLASSES]> {
        check_input(x)?;
        Ok(self.forward(x.data()).logits)
    }

    pub fn forward_probs(&self, x: &Image) -> Result<ProbVector> {
        Ok(ProbVector::softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &Image) -> Result<Label> {
        Ok(self.forward_probs(x)?.argmax())
    }

    pub fn loss(&self, x: &Image, y: Label) -> Result<f64> {
        Ok(cross_entropy(&self.forward_probs(x)?, y))
    }

    pub fn input_gradient(&self, x: &Image, y: Label) -> Result<InputGradient> {
        Ok(self.probs_and_input_gradient(x, y)?.1)
    }

    /// Which linear piece of the network `x` falls in: per pooled unit, the
    /// winning pre-activation index, or `u32::MAX` where the ReLU clips it.
    /// Inputs with equal patterns share one smooth region of the loss.
    pub fn activation_pattern(&self, x: &Image) -> Result<Vec<u32>> {
        check_input(x)?;
        let act = self.forward(x.data());
        let mark = |p: &[f64], arg: &[u32]| -> Vec<u32> {
            p.iter().zip(arg).map(|(&v, &i)| if v > 0.0 { i } else { u32::MAX }).collect()
        };
        let mut out = mark(&act.p1, &act.arg1);
        out.extend(mark(&act.p2, &act.arg2));
        Ok(out)
    }

    /// Class probabilities at `x` together with the input gradient of the
    /// loss for label `y`, sharing one forward pass.
    pub fn probs_and_input_gradient(&self, x: &Image, y: Label) -> Result<(ProbVector, InputGradient)> {
        check_input(x)?;
        let act = self.forward(x.data());
        let probs = ProbVector::softmax(&act.logits);
        let dlogits = softmax_minus_onehot(&probs, y);
        let values = self
            .backward(x.data(), &act, &dlogits, None)
            .expect("input gradient requested");
        Ok((
            probs,
            InputGradient {
                shape: x.shape(),
                values,
            },
        ))
    }

    fn forward(&self, input: &[f64]) -> Activations {
        let z1 = conv_valid(
            input,
            INPUT_CHANNELS,
            INPUT_HEIGHT,
            INPUT_WIDTH,
            self.tensor(ParamTensor::Conv1Weight),
            self.tensor(ParamTensor::Conv1Bias),
            C1,
        );
        let (p1, arg1) = relu_maxpool(&z1, C1, H1, W1);
        let z2 = conv_valid(
            &p1,
            C1,
            PH1,
            PW1,
            self.tensor(ParamTensor::Conv2Weight),
            self.tensor(ParamTensor::Conv2Bias),
            C2,
        );
        let (p2, arg2) = relu_maxpool(&z2, C2, H2, W2);

        let dense_w = self.tensor(ParamTensor::DenseWeight);
        let dense_b = self.tensor(ParamTensor::DenseBias);
        let mut logits = [0.0; NUM_CLASSES];
        for (k, logit) in logits.iter_mut().enumerate() {
            let row = &dense_w[k * DENSE_IN..(k + 1) * DENSE_IN];
            *logit = dense_b[k] + dot(row, &p2);
        }
        Activations {
            p1,
            arg1,
            p2,
            arg2,
            logits,
        }
    }

    /// Backpropagates `dlogits`. Accumulates parameter gradients into `grads`
    /// when given; returns the input gradient only when `grads` is `None`.
    fn backward(
        &self,
        input: &[f64],
        act: &Activations,
        dlogits: &[f64; NUM_CLASSES],
        mut grads: Option<&mut [Vec<f64>; 6]>,
    ) -> Option<Vec<f64>> {
        let dense_w = self.tensor(ParamTensor::DenseWeight);
        let mut dp2 = vec![0.0; DENSE_IN];
        for (k, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &dense_w[k * DENSE_IN..(k + 1) * DENSE_IN];
            axpy(g, row, &mut dp2);
        }
        if let Some(grads) = grads.as_deref_mut() {
            for (k, &g) in dlogits.iter().enumerate() {
                grads[ParamTensor::DenseBias.index()][k] += g;
                let row = &mut grads[ParamTensor::DenseWeight.index()][k * DENSE_IN..(k + 1) * DENSE_IN];
                axpy(g, &act.p2, row);
            }
        }

        let dz2 = unpool(&dp2, &act.p2, &act.arg2, C2 * H2 * W2);
        if let Some(grads) = grads.as_deref_mut() {
            let (dw, db) = weight_and_bias(grads, ParamTensor::Conv2Weight);
            conv_weight_grad(
                &act.p1,
                C1,
                PH1,
                PW1,
                &dz2,
                C2,
                dw,
                db,
            );
        }
        let dp1 = conv_input_grad(&dz2, C2, self.tensor(ParamTensor::Conv2Weight), C1, PH1, PW1);
        let dz1 = unpool(&dp1, &act.p1, &act.arg1, C1 * H1 * W1);
        match grads {
            Some(grads) => {
                let (dw, db) = weight_and_bias(grads, ParamTensor::Conv1Weight);
                conv_weight_grad(
                    input,
                    INPUT_CHANNELS,
                    INPUT_HEIGHT,
                    INPUT_WIDTH,
                    &dz1,
                    C1,
                    dw,
                    db,
                );
                None
            }
            None => Some(conv_input_grad(
                &dz1,
                C1,
                self.tensor(ParamTensor::Conv1Weight),
                INPUT_CHANNELS,
                INPUT_HEIGHT,
                INPUT_WIDTH,
            )),
        }
    }

    fn zero_grads() -> [Vec<f64>; 6] {
        ParamTensor::ALL.map(|t| vec![0.0; t.len()])
    }
}

/// Gradient buffers for a weight tensor and the bias stored right after it.
fn weight_and_bias(grads: &mut [Vec<f64>; 6], weight: ParamTensor) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = grads.split_at_mut(weight.index() + 1);
    (&mut head[weight.index()], &mut tail[0])
}

struct Activations {
    p1: Vec<f64>,
    arg1: Vec<u32>,
    p2: Vec<f64>,
    arg2: Vec<u32>,
    logits: [f64; NUM_CLASSES],
}

fn check_input(x: &Image) -> Result<()> {
    let expected = (INPUT_HEIGHT, INPUT_WIDTH, INPUT_CHANNELS);
    if x.shape() != expected {
        return Err(Error::shape(format_shape(expected), format_shape(x.shape())));
    }
    Ok(())
}

fn softmax_minus_onehot(probs: &ProbVector, y: Label) -> [f64; NUM_CLASSES] {
    let mut d = *probs.probs();
    d[y.index()] -= 1.0;
    d
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid 3×3 cross-correlation, CHW layout.
fn conv_valid(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
) -> Vec<f64> {
    let (out_h, out_w) = (in_h - K + 1, in_w - K + 1);
    let mut out = vec![0.0; out_c * out_h * out_w];
    for f in 0..out_c {
        let plane = &mut out[f * out_h * out_w..(f + 1) * out_h * out_w];
        plane.fill(bias[f]);
        for c in 0..in_c {
            let src = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
            for u in 0..K {
                for v in 0..K {
                    let w = weight[((f * in_c + c) * K + u) * K + v];
                    for i in 0..out_h {
                        let row = &src[(i + u) * in_w + v..(i + u) * in_w + v + out_w];
                        axpy(w, row, &mut plane[i * out_w..(i + 1) * out_w]);
                    }
                }
            }
        }
    }
    out
}

/// Adds `Σ dout ⊗ input` into the weight gradient and `Σ dout` into the bias gradient.
#[allow(clippy::too_many_arguments)]
fn conv_weight_grad(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    dout: &[f64],
    out_c: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) {
    let (out_h, out_w) = (in_h - K + 1, in_w - K + 1);
    for f in 0..out_c {
        let plane = &dout[f * out_h * out_w..(f + 1) * out_h * out_w];
        dbias[f] += plane.iter().sum::<f64>();
        for c in 0..in_c {
            let src = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
            for u in 0..K {
                for v in 0..K {
                    let mut acc = 0.0;
                    for i in 0..out_h {
                        let row = &src[(i + u) * in_w + v..(i + u) * in_w + v + out_w];
                        acc += dot(&plane[i * out_w..(i + 1) * out_w], row);
                    }
                    dweight[((f * in_c + c) * K + u) * K + v] += acc;
                }
            }
        }
    }
}

fn conv_input_grad(
    dout: &[f64],
    out_c: usize,
    weight: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
) -> Vec<f64> {
    let (out_h, out_w) = (in_h - K + 1, in_w - K + 1);
    let mut dinput = vec![0.0; in_c * in_h * in_w];
    for f in 0..out_c {
        let plane = &dout[f * out_h * out_w..(f + 1) * out_h * out_w];
        for c in 0..in_c {
            let dst = &mut dinput[c * in_h * in_w..(c + 1) * in_h * in_w];
            for u in 0..K {
                for v in 0..K {
                    let w = weight[((f * in_c + c) * K + u) * K + v];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..out_h {
                        let row = &mut dst[(i + u) * in_w + v..(i + u) * in_w + v + out_w];
                        axpy(w, &plane[i * out_w..(i + 1) * out_w], row);
                    }
                }
            }
        }
    }
    dinput
}

/// ReLU followed by 2×2/2 max-pooling (trailing odd row/column dropped).
/// Returns pooled values and, per pooled cell, the flat index of the winning
/// pre-activation (first maximum in scan order).
fn relu_maxpool(z: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    let mut arg = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let base = c * h * w;
        for i in 0..ph {
            for j in 0..pw {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if z[idx] > z[best] {
                        best = idx;
                    }
                }
                // relu(max) == max(relu)
                out.push(z[best].max(0.0));
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the winning positions; cells whose pooled
/// value was clipped by the ReLU receive nothing.
fn unpool(dpooled: &[f64], pooled: &[f64], arg: &[u32], len: usize) -> Vec<f64> {
    let mut dz = vec![0.0; len];
    for ((&g, &p), &idx) in dpooled.iter().zip(pooled).zip(arg) {
        if p > 0.0 {
            dz[idx as usize] += g;
        }
    }
    dz
}
