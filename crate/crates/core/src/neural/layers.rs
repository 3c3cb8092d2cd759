use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use super::NeuralError;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const STANDARDIZE_EPS: f64 = 1e-6;

/// Architecture-level description of one layer.
///
/// Convolutions are 3x3, stride 1, zero padding 1; pooling is 2x2 max with
/// stride 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Per-sample zero mean, unit variance over all input values.
    Standardize,
    Conv2d { in_channels: usize, out_channels: usize },
    MaxPool2d,
    /// 2x2 mean with stride 2.
    AvgPool2d,
    Flatten,
    Dense { inputs: usize, outputs: usize },
    Relu,
    Sigmoid,
    BatchNorm { features: usize },
    Dropout { rate: f64 },
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NeuralError> {
        let bad = |what: &str| {
            Err(NeuralError::Shape(format!(
                "{what} cannot take input shape {input:?}"
            )))
        };
        match self {
            LayerSpec::Standardize
            | LayerSpec::Relu
            | LayerSpec::Sigmoid
            | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => match input {
                [c, h, w] if c == in_channels => Ok(vec![*out_channels, *h, *w]),
                _ => bad("conv2d"),
            },
            LayerSpec::MaxPool2d | LayerSpec::AvgPool2d => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => bad("pool2d"),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if n == inputs => Ok(vec![*outputs]),
                _ => bad("dense"),
            },
            LayerSpec::BatchNorm { features } => match input {
                [n] if n == features => Ok(vec![*n]),
                _ => bad("batch_norm"),
            },
        }
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => out_channels * in_channels * 9 + out_channels,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::BatchNorm { features } => 2 * features,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        match self {
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => Err(
                NeuralError::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")),
            ),
            LayerSpec::Conv2d {
                in_channels: 0, ..
            }
            | LayerSpec::Conv2d {
                out_channels: 0, ..
            }
            | LayerSpec::Dense { inputs: 0, .. }
            | LayerSpec::Dense { outputs: 0, .. }
            | LayerSpec::BatchNorm { features: 0 } => Err(NeuralError::InvalidConfig(format!(
                "zero-sized layer {self:?}"
            ))),
            _ => Ok(()),
        }
    }
}

/// One parameter array with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Whether the L1/L2 penalty applies (dense weights only).
    pub regularized: bool,
}

impl Param {
    fn new(value: Vec<f64>, regularized: bool) -> Self {
        let grad = vec![0.0; value.len()];
        Param {
            value,
            grad,
            regularized,
        }
    }
}

fn he_normal(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    cin: usize,
    cout: usize,
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    cols: Vec<f64>,
    in_shape: [usize; 3],
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for oy in 0..h {
                    let dst = &mut cols[row + oy * w..row + oy * w + w];
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[ci * hw + iy as usize * w..][..w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * w..row + oy * w + w];
                    let dst = &mut dx[ci * hw + iy as usize * w..][..w];
                    match kx {
                        0 => {
                            for i in 1..w {
                                dst[i - 1] += src[i];
                            }
                        }
                        1 => {
                            for i in 0..w {
                                dst[i] += src[i];
                            }
                        }
                        _ => {
                            for i in 0..w - 1 {
                                dst[i + 1] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            cin,
            cout,
            weight: Param::new(he_normal(cout * cin * 9, cin * 9, rng), false),
            bias: Param::new(vec![0.0; cout], false),
            cols: Vec::new(),
            in_shape: [0; 3],
        }
    }

    fn run(&self, x: &Tensor, keep: Option<&mut Vec<f64>>) -> Result<Tensor, NeuralError> {
        let (b, c, h, w) = match x.shape[..] {
            [b, c, h, w] if c == self.cin => (b, c, h, w),
            _ => {
                return Err(NeuralError::Shape(format!(
                    "conv2d expects [batch, {}, h, w], got {:?}",
                    self.cin, x.shape
                )))
            }
        };
        let hw = h * w;
        let k = c * 9;
        let per = k * hw;
        let mut out = Tensor::zeros(vec![b, self.cout, h, w]);
        // with a cache every sample keeps its columns; otherwise one buffer is reused
        let mut scratch = Vec::new();
        let (cols_all, stride) = match keep {
            Some(v) => {
                v.resize(per * b, 0.0);
                (v, per)
            }
            None => {
                scratch.resize(per, 0.0);
                (&mut scratch, 0)
            }
        };
        for i in 0..b {
            let cols = &mut cols_all[i * stride..i * stride + per];
            im2col(x.row(i), c, h, w, cols);
            let y = &mut out.data[i * self.cout * hw..(i + 1) * self.cout * hw];
            for (o, bias) in self.bias.value.iter().enumerate() {
                y[o * hw..(o + 1) * hw].fill(*bias);
            }
            gemm(self.cout, k, hw, &self.weight.value, (k, 1), cols, (hw, 1), 1.0, y);
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need_input: bool, params: bool) -> Option<Tensor> {
        let [c, h, w] = self.in_shape;
        let b = grad.batch();
        let hw = h * w;
        let k = c * 9;
        let per = k * hw;
        let mut dx = need_input.then(|| Tensor::zeros(vec![b, c, h, w]));
        let mut dcols = vec![0.0; if need_input { per } else { 0 }];
        for i in 0..b {
            let dy = &grad.data[i * self.cout * hw..(i + 1) * self.cout * hw];
            let cols = &self.cols[i * per..(i + 1) * per];
            if params {
                // dW += dY * cols^T
                gemm(self.cout, hw, k, dy, (hw, 1), cols, (1, hw), 1.0, &mut self.weight.grad);
                for o in 0..self.cout {
                    self.bias.grad[o] += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                // dcols = W^T * dY
                gemm(k, self.cout, hw, &self.weight.value, (1, k), dy, (hw, 1), 0.0, &mut dcols);
                col2im(&dcols, c, h, w, &mut dx.data[i * c * hw..(i + 1) * c * hw]);
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    inputs: usize,
    outputs: usize,
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    input: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Param::new(he_normal(inputs * outputs, inputs, rng), true),
            bias: Param::new(vec![0.0; outputs], false),
            input: Vec::new(),
        }
    }

    fn run(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        if x.shape.len() != 2 || x.shape[1] != self.inputs {
            return Err(NeuralError::Shape(format!(
                "dense expects [batch, {}], got {:?}",
                self.inputs, x.shape
            )));
        }
        let b = x.batch();
        let mut out = Tensor::zeros(vec![b, self.outputs]);
        for i in 0..b {
            out.data[i * self.outputs..(i + 1) * self.outputs].copy_from_slice(&self.bias.value);
        }
        // y = x W^T + b
        gemm(
            b,
            self.inputs,
            self.outputs,
            &x.data,
            (self.inputs, 1),
            &self.weight.value,
            (1, self.inputs),
            1.0,
            &mut out.data,
        );
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need_input: bool, params: bool) -> Option<Tensor> {
        let b = grad.batch();
        if params {
            gemm(
                self.outputs,
                b,
                self.inputs,
                &grad.data,
                (1, self.outputs),
                &self.input,
                (self.inputs, 1),
                1.0,
                &mut self.weight.grad,
            );
            for i in 0..b {
                for o in 0..self.outputs {
                    self.bias.grad[o] += grad.data[i * self.outputs + o];
                }
            }
        }
        need_input.then(|| {
            let mut dx = Tensor::zeros(vec![b, self.inputs]);
            gemm(
                b,
                self.outputs,
                self.inputs,
                &grad.data,
                (self.outputs, 1),
                &self.weight.value,
                (self.inputs, 1),
                0.0,
                &mut dx.data,
            );
            dx
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    features: usize,
    pub(crate) gamma: Param,
    pub(crate) beta: Param,
    pub(crate) running_mean: Vec<f64>,
    pub(crate) running_var: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    fn new(features: usize) -> Self {
        BatchNorm {
            features,
            gamma: Param::new(vec![1.0; features], false),
            beta: Param::new(vec![0.0; features], false),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_stats: false,
        }
    }

    fn check(&self, x: &Tensor) -> Result<(), NeuralError> {
        if x.shape.len() != 2 || x.shape[1] != self.features {
            return Err(NeuralError::Shape(format!(
                "batch_norm expects [batch, {}], got {:?}",
                self.features, x.shape
            )));
        }
        Ok(())
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        self.check(x)?;
        let f = self.features;
        let mut out = x.clone();
        for (j, v) in out.data.iter_mut().enumerate() {
            let c = j % f;
            let inv = 1.0 / (self.running_var[c] + BN_EPS).sqrt();
            *v = self.gamma.value[c] * (*v - self.running_mean[c]) * inv + self.beta.value[c];
        }
        Ok(out)
    }

    fn forward(&mut self, x: &Tensor, batch_stats: bool) -> Result<Tensor, NeuralError> {
        self.check(x)?;
        let f = self.features;
        let b = x.batch();
        self.batch_stats = batch_stats && b > 1;
        if !self.batch_stats {
            self.inv_std = (0..f)
                .map(|c| 1.0 / (self.running_var[c] + BN_EPS).sqrt())
                .collect();
            return self.infer(x);
        }
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for i in 0..b {
            for c in 0..f {
                mean[c] += x.data[i * f + c];
            }
        }
        for m in &mut mean {
            *m /= b as f64;
        }
        for i in 0..b {
            for c in 0..f {
                let d = x.data[i * f + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in &mut var {
            *v /= b as f64;
        }
        self.inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.xhat = x.data.clone();
        let mut out = x.clone();
        for (j, v) in out.data.iter_mut().enumerate() {
            let c = j % f;
            let xh = (*v - mean[c]) * self.inv_std[c];
            self.xhat[j] = xh;
            *v = self.gamma.value[c] * xh + self.beta.value[c];
        }
        let unbias = b as f64 / (b as f64 - 1.0);
        for c in 0..f {
            self.running_mean[c] = BN_MOMENTUM * self.running_mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
            self.running_var[c] =
                BN_MOMENTUM * self.running_var[c] + (1.0 - BN_MOMENTUM) * var[c] * unbias;
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need_input: bool, params: bool) -> Option<Tensor> {
        let f = self.features;
        let b = grad.batch();
        if !self.batch_stats {
            // running statistics are constants here
            if params {
                for (j, g) in grad.data.iter().enumerate() {
                    let c = j % f;
                    self.beta.grad[c] += g;
                }
            }
            return need_input.then(|| {
                let mut dx = grad.clone();
                for (j, v) in dx.data.iter_mut().enumerate() {
                    let c = j % f;
                    *v *= self.gamma.value[c] * self.inv_std[c];
                }
                dx
            });
        }
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for (j, g) in grad.data.iter().enumerate() {
            let c = j % f;
            sum_dy[c] += g;
            sum_dy_xhat[c] += g * self.xhat[j];
        }
        if params {
            for c in 0..f {
                self.gamma.grad[c] += sum_dy_xhat[c];
                self.beta.grad[c] += sum_dy[c];
            }
        }
        need_input.then(|| {
            let n = b as f64;
            let mut dx = grad.clone();
            for (j, v) in dx.data.iter_mut().enumerate() {
                let c = j % f;
                let g = self.gamma.value[c] * self.inv_std[c] / n;
                *v = g * (n * *v - sum_dy[c] - self.xhat[j] * sum_dy_xhat[c]);
            }
            dx
        })
    }
}

/// A layer with its parameters and forward caches.
#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Standardize { out: Vec<f64>, inv_std: Vec<f64> },
    Conv2d(Box<Conv2d>),
    MaxPool2d { argmax: Vec<usize>, in_shape: Vec<usize> },
    AvgPool2d { in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    Dense(Box<Dense>),
    Relu { mask: Vec<bool> },
    Sigmoid { out: Vec<f64> },
    BatchNorm(Box<BatchNorm>),
    Dropout { rate: f64, mask: Vec<f64> },
}

fn standardize(x: &Tensor) -> (Tensor, Vec<f64>) {
    let n = x.row_len();
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.batch());
    for row in out.data.chunks_mut(n.max(1)) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + STANDARDIZE_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv.push(s);
    }
    (out, inv)
}

fn max_pool(x: &Tensor, argmax: Option<&mut Vec<usize>>) -> Result<Tensor, NeuralError> {
    let (b, c, h, w) = match x.shape[..] {
        [b, c, h, w] if h >= 2 && w >= 2 => (b, c, h, w),
        _ => {
            return Err(NeuralError::Shape(format!(
                "max_pool2d expects [batch, c, h>=2, w>=2], got {:?}",
                x.shape
            )))
        }
    };
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut idx = Vec::with_capacity(out.data.len());
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                out.data[plane * oh * ow + oy * ow + ox] = x.data[best];
                idx.push(best);
            }
        }
    }
    if let Some(a) = argmax {
        *a = idx;
    }
    Ok(out)
}

fn pool_dims(x: &Tensor) -> Result<(usize, usize, usize, usize), NeuralError> {
    match x.shape[..] {
        [b, c, h, w] if h >= 2 && w >= 2 => Ok((b, c, h, w)),
        _ => Err(NeuralError::Shape(format!(
            "pool2d expects [batch, c, h>=2, w>=2], got {:?}",
            x.shape
        ))),
    }
}

fn avg_pool(x: &Tensor) -> Result<Tensor, NeuralError> {
    let (b, c, h, w) = pool_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let j = base + 2 * oy * w + 2 * ox;
                out.data[plane * oh * ow + oy * ow + ox] =
                    0.25 * (x.data[j] + x.data[j + 1] + x.data[j + w] + x.data[j + w + 1]);
            }
        }
    }
    Ok(out)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub(crate) fn build(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        match spec {
            LayerSpec::Standardize => Layer::Standardize {
                out: Vec::new(),
                inv_std: Vec::new(),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Layer::Conv2d(Box::new(Conv2d::new(*in_channels, *out_channels, rng))),
            LayerSpec::MaxPool2d => Layer::MaxPool2d {
                argmax: Vec::new(),
                in_shape: Vec::new(),
            },
            LayerSpec::AvgPool2d => Layer::AvgPool2d { in_shape: Vec::new() },
            LayerSpec::Flatten => Layer::Flatten {
                in_shape: Vec::new(),
            },
            LayerSpec::Dense { inputs, outputs } => {
                Layer::Dense(Box::new(Dense::new(*inputs, *outputs, rng)))
            }
            LayerSpec::Relu => Layer::Relu { mask: Vec::new() },
            LayerSpec::Sigmoid => Layer::Sigmoid { out: Vec::new() },
            LayerSpec::BatchNorm { features } => Layer::BatchNorm(Box::new(BatchNorm::new(*features))),
            LayerSpec::Dropout { rate } => Layer::Dropout {
                rate: *rate,
                mask: Vec::new(),
            },
        }
    }

    /// Evaluation-mode forward pass; no caches are touched.
    pub(crate) fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        match self {
            Layer::Standardize { .. } => Ok(standardize(x).0),
            Layer::Conv2d(c) => c.run(x, None),
            Layer::MaxPool2d { .. } => max_pool(x, None),
            Layer::AvgPool2d { .. } => avg_pool(x),
            Layer::Flatten { .. } => Ok(Tensor {
                shape: vec![x.batch(), x.row_len()],
                data: x.data.clone(),
            }),
            Layer::Dense(d) => d.run(x),
            Layer::Relu { .. } => Ok(Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
            }),
            Layer::Sigmoid { .. } => Ok(Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| sigmoid(*v)).collect(),
            }),
            Layer::BatchNorm(bn) => bn.infer(x),
            Layer::Dropout { .. } => Ok(x.clone()),
        }
    }

    /// Training-mode forward pass that records what backward needs.
    ///
    /// `frozen` batch-norm layers run on their running statistics.
    pub(crate) fn forward(
        &mut self,
        x: &Tensor,
        frozen: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, NeuralError> {
        match self {
            Layer::Standardize { out, inv_std } => {
                let (y, s) = standardize(x);
                *out = y.data.clone();
                *inv_std = s;
                Ok(y)
            }
            Layer::Conv2d(c) => {
                let mut cols = std::mem::take(&mut c.cols);
                let y = c.run(x, Some(&mut cols))?;
                c.cols = cols;
                c.in_shape = [x.shape[1], x.shape[2], x.shape[3]];
                Ok(y)
            }
            Layer::MaxPool2d { argmax, in_shape } => {
                *in_shape = x.shape.clone();
                max_pool(x, Some(argmax))
            }
            Layer::AvgPool2d { in_shape } => {
                *in_shape = x.shape.clone();
                avg_pool(x)
            }
            Layer::Flatten { in_shape } => {
                *in_shape = x.shape.clone();
                self.infer(x)
            }
            Layer::Dense(d) => {
                let y = d.run(x)?;
                d.input = x.data.clone();
                Ok(y)
            }
            Layer::Relu { mask } => {
                *mask = x.data.iter().map(|v| *v > 0.0).collect();
                self.infer(x)
            }
            Layer::Sigmoid { out } => {
                *out = x.data.iter().map(|v| sigmoid(*v)).collect();
                Ok(Tensor {
                    shape: x.shape.clone(),
                    data: out.clone(),
                })
            }
            Layer::BatchNorm(bn) => bn.forward(x, !frozen),
            Layer::Dropout { rate, mask } => {
                let keep = 1.0 - *rate;
                *mask = (0..x.data.len())
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Ok(Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().zip(mask.iter()).map(|(v, m)| v * m).collect(),
                })
            }
        }
    }

    /// Back-propagates `grad` (the loss gradient w.r.t. this layer's
    /// output), accumulating parameter gradients when `params` is set and
    /// returning the input gradient when `need_input` is set.
    pub(crate) fn backward(&mut self, grad: &Tensor, need_input: bool, params: bool) -> Option<Tensor> {
        match self {
            Layer::Conv2d(c) => c.backward(grad, need_input, params),
            Layer::Dense(d) => d.backward(grad, need_input, params),
            Layer::BatchNorm(bn) => bn.backward(grad, need_input, params),
            _ if !need_input => None,
            Layer::Standardize { out, inv_std } => {
                let n = grad.row_len();
                let mut dx = grad.clone();
                for (i, row) in dx.data.chunks_mut(n.max(1)).enumerate() {
                    let y = &out[i * n..(i + 1) * n];
                    let mean_dy = row.iter().sum::<f64>() / n as f64;
                    let mean_dy_y = row.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / n as f64;
                    for (g, y) in row.iter_mut().zip(y) {
                        *g = inv_std[i] * (*g - mean_dy - y * mean_dy_y);
                    }
                }
                Some(dx)
            }
            Layer::MaxPool2d { argmax, in_shape } => {
                let mut dx = Tensor::zeros(in_shape.clone());
                for (g, j) in grad.data.iter().zip(argmax.iter()) {
                    dx.data[*j] += g;
                }
                Some(dx)
            }
            Layer::AvgPool2d { in_shape } => {
                let (h, w) = (in_shape[2], in_shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = Tensor::zeros(in_shape.clone());
                for plane in 0..in_shape[0] * in_shape[1] {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = 0.25 * grad.data[plane * oh * ow + oy * ow + ox];
                            let j = base + 2 * oy * w + 2 * ox;
                            for k in [j, j + 1, j + w, j + w + 1] {
                                dx.data[k] = g;
                            }
                        }
                    }
                }
                Some(dx)
            }
            Layer::Flatten { in_shape } => Some(Tensor {
                shape: in_shape.clone(),
                data: grad.data.clone(),
            }),
            Layer::Relu { mask } => Some(Tensor {
                shape: grad.shape.clone(),
                data: grad
                    .data
                    .iter()
                    .zip(mask.iter())
                    .map(|(g, m)| if *m { *g } else { 0.0 })
                    .collect(),
            }),
            Layer::Sigmoid { out } => Some(Tensor {
                shape: grad.shape.clone(),
                data: grad
                    .data
                    .iter()
                    .zip(out.iter())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect(),
            }),
            Layer::Dropout { mask, .. } => Some(Tensor {
                shape: grad.shape.clone(),
                data: grad.data.iter().zip(mask.iter()).map(|(g, m)| g * m).collect(),
            }),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state that must survive a checkpoint.
    pub(crate) fn buffers(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::BatchNorm(bn) => vec![&bn.running_mean, &bn.running_var],
            _ => Vec::new(),
        }
    }

    /// Parameter values then buffers, in [`Layer::params`] /
    /// [`Layer::buffers`] order.
    pub(crate) fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight.value, &mut c.bias.value],
            Layer::Dense(d) => vec![&mut d.weight.value, &mut d.bias.value],
            Layer::BatchNorm(bn) => vec![
                &mut bn.gamma.value,
                &mut bn.beta.value,
                &mut bn.running_mean,
                &mut bn.running_var,
            ],
            _ => Vec::new(),
        }
    }

    /// Which branch each piecewise-linear unit took in the last training
    /// forward pass (ReLU sign, max-pool winner); empty for smooth layers.
    pub(crate) fn branch_pattern(&self) -> Vec<usize> {
        match self {
            Layer::Relu { mask } => mask.iter().map(|m| usize::from(*m)).collect(),
            Layer::MaxPool2d { argmax, .. } => argmax.clone(),
            _ => Vec::new(),
        }
    }

    /// Drops forward caches to release memory after training.
    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Standardize { out, inv_std } => {
                *out = Vec::new();
                *inv_std = Vec::new();
            }
            Layer::Conv2d(c) => c.cols = Vec::new(),
            Layer::MaxPool2d { argmax, .. } => *argmax = Vec::new(),
            Layer::Dense(d) => d.input = Vec::new(),
            Layer::Relu { mask } => *mask = Vec::new(),
            Layer::Sigmoid { out } => *out = Vec::new(),
            Layer::BatchNorm(bn) => bn.xhat = Vec::new(),
            Layer::Dropout { mask, .. } => *mask = Vec::new(),
            Layer::Flatten { .. } | Layer::AvgPool2d { .. } => {}
        }
    }
}
