use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec, Param};
use super::tensor::Tensor;
use super::NeuralError;
use crate::seed;

/// Dropout rate after each hidden dense block.
pub const DROPOUT_RATE: f64 = 0.3;

/// Which of the named networks a model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Image to actuation.
    VsNet1,
    /// Image to pose.
    VsNet2,
    /// Pose to actuation.
    P2ANet,
    Custom,
}

/// Everything needed to rebuild a network's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    /// Per-sample input shape, e.g. `[3, 64, 64]` or `[7]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub trainable: Vec<bool>,
}

impl NetSpec {
    pub fn new(kind: NetKind, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        let trainable = vec![true; layers.len()];
        NetSpec {
            kind,
            input_shape,
            layers,
            trainable,
        }
    }

    /// Validates layer chaining and returns the per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>, NeuralError> {
        if self.trainable.len() != self.layers.len() {
            return Err(NeuralError::InvalidConfig(
                "trainable flags do not match layer count".into(),
            ));
        }
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            l.validate()?;
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Marks the first `n` layers as frozen.
    pub fn freeze_first(&mut self, n: usize) {
        for (i, t) in self.trainable.iter_mut().enumerate() {
            *t = i >= n;
        }
    }

    /// Number of layers up to and including the flatten that ends the
    /// convolutional backbone (0 if there is none).
    pub fn backbone_len(&self) -> usize {
        self.layers
            .iter()
            .position(|l| *l == LayerSpec::Flatten)
            .map_or(0, |i| i + 1)
    }
}

/// Convolutional backbone: input standardization, then one
/// conv-relu-pool block per entry of `channels`, then flatten. Pooling is
/// 2x2 averaging, which keeps sub-pixel position information.
pub fn backbone(image: [usize; 3], channels: &[usize]) -> (Vec<LayerSpec>, usize) {
    let [mut c, mut h, mut w] = image;
    let mut layers = vec![LayerSpec::Standardize];
    for &out in channels {
        layers.push(LayerSpec::Conv2d {
            in_channels: c,
            out_channels: out,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::AvgPool2d);
        c = out;
        h /= 2;
        w /= 2;
    }
    layers.push(LayerSpec::Flatten);
    (layers, c * h * w)
}

/// The dense 64-32 head shared by the image networks.
fn image_head(features: usize, outputs: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut n = features;
    for units in [64, 32] {
        layers.extend([
            LayerSpec::Dense {
                inputs: n,
                outputs: units,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm { features: units },
            LayerSpec::Dropout { rate: DROPOUT_RATE },
        ]);
        n = units;
    }
    layers.push(LayerSpec::Dense { inputs: n, outputs });
    layers.push(LayerSpec::Sigmoid);
    layers
}

fn image_net(kind: NetKind, image: [usize; 3], channels: &[usize], outputs: usize) -> NetSpec {
    let (mut layers, features) = backbone(image, channels);
    layers.extend(image_head(features, outputs));
    NetSpec::new(kind, image.to_vec(), layers)
}

/// Image (`[channels, height, width]`) to 5 normalized actuations.
pub fn vsnet1_spec(image: [usize; 3], channels: &[usize]) -> NetSpec {
    image_net(NetKind::VsNet1, image, channels, 5)
}

/// Image to 7 normalized pose components.
pub fn vsnet2_spec(image: [usize; 3], channels: &[usize]) -> NetSpec {
    image_net(NetKind::VsNet2, image, channels, 7)
}

/// 7 normalized pose components to 5 normalized actuations. Only the first
/// dense layer has a ReLU.
pub fn p2anet_spec() -> NetSpec {
    let layers = vec![
        LayerSpec::Dense {
            inputs: 7,
            outputs: 256,
        },
        LayerSpec::Relu,
        LayerSpec::BatchNorm { features: 256 },
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::Dense {
            inputs: 256,
            outputs: 128,
        },
        LayerSpec::BatchNorm { features: 128 },
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::Dense {
            inputs: 128,
            outputs: 5,
        },
        LayerSpec::Sigmoid,
    ];
    NetSpec::new(NetKind::P2ANet, vec![7], layers)
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the network with He-normal weights drawn from `init_seed`.
    pub fn new(spec: NetSpec, init_seed: u64) -> Result<Self, NeuralError> {
        spec.output_shape()?;
        let mut rng = seed::rng(init_seed);
        let layers = spec.layers.iter().map(|l| Layer::build(l, &mut rng)).collect();
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn output_len(&self) -> usize {
        self.spec
            .output_shape()
            .expect("validated at construction")
            .iter()
            .product()
    }

    pub fn set_trainable(&mut self, flags: Vec<bool>) -> Result<(), NeuralError> {
        if flags.len() != self.layers.len() {
            return Err(NeuralError::InvalidConfig(format!(
                "{} trainable flags for {} layers",
                flags.len(),
                self.layers.len()
            )));
        }
        self.spec.trainable = flags;
        Ok(())
    }

    pub fn freeze_first(&mut self, n: usize) {
        self.spec.freeze_first(n);
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NeuralError> {
        if x.shape.len() != self.spec.input_shape.len() + 1 || x.shape[1..] != self.spec.input_shape[..] {
            return Err(NeuralError::Shape(format!(
                "network expects [batch, {:?}], got {:?}",
                self.spec.input_shape, x.shape
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass: dropout off, batch norm on running
    /// statistics. Deterministic and shareable across threads.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    /// Training-mode forward pass. Dropout masks come from `rng`.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor, NeuralError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (l, t) in self.layers.iter_mut().zip(&self.spec.trainable) {
            h = l.forward(&h, !t, rng)?;
        }
        Ok(h)
    }

    /// Back-propagates the output gradient of the last
    /// [`forward_train`](Self::forward_train), accumulating into each
    /// trainable parameter's `grad`.
    pub fn backward(&mut self, grad: &Tensor) {
        let first_trainable = self
            .layers
            .iter()
            .zip(&self.spec.trainable)
            .position(|(l, t)| *t && !l.params().is_empty());
        let Some(first) = first_trainable else {
            return;
        };
        let mut g = grad.clone();
        for i in (first..self.layers.len()).rev() {
            let trainable = self.spec.trainable[i];
            match self.layers[i].backward(&g, i > first, trainable) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    /// Same as [`backward`](Self::backward) but always returns the gradient
    /// with respect to the network input.
    pub fn backward_to_input(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for i in (0..self.layers.len()).rev() {
            let trainable = self.spec.trainable[i];
            g = self.layers[i]
                .backward(&g, true, trainable)
                .expect("input gradient requested");
        }
        g
    }

    /// ReLU signs and max-pool winners from the last training forward
    /// pass. Two passes with equal patterns lie on the same linear piece,
    /// which is what finite-difference checks need to know.
    pub fn branch_pattern(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| l.branch_pattern()).collect()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            for p in l.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    /// Parameters of trainable layers, in layer order.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .zip(&self.spec.trainable)
            .filter(|(_, t)| **t)
            .flat_map(|(l, _)| l.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameter values of layer `i`, concatenated.
    pub fn layer_values(&self, i: usize) -> Vec<f64> {
        self.layers[i]
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Every parameter followed by every running statistic, in layer order.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for p in l.params() {
                out.extend_from_slice(&p.value);
            }
            for b in l.buffers() {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn load_state_vector(&mut self, v: &[f64]) -> Result<(), NeuralError> {
        let mut at = 0;
        for l in &mut self.layers {
            for s in l.state_mut() {
                let n = s.len();
                let src = v.get(at..at + n).ok_or_else(|| {
                    NeuralError::Format(format!("weight blob too short ({} values)", v.len()))
                })?;
                s.copy_from_slice(src);
                at += n;
            }
        }
        if at != v.len() {
            return Err(NeuralError::Format(format!(
                "weight blob has {} values, network needs {at}",
                v.len()
            )));
        }
        Ok(())
    }

    /// L1 and L2 penalty over regularized (dense weight) parameters.
    pub fn penalty(&self, l1: f64, l2: f64) -> f64 {
        self.params()
            .iter()
            .filter(|p| p.regularized)
            .flat_map(|p| p.value.iter())
            .map(|w| l1 * w.abs() + l2 * w * w)
            .sum()
    }

    /// Adds the penalty gradient to trainable regularized parameters.
    pub fn add_penalty_grad(&mut self, l1: f64, l2: f64) {
        for p in self.trainable_params_mut() {
            if !p.regularized {
                continue;
            }
            for (g, w) in p.grad.iter_mut().zip(&p.value) {
                let sign = if *w == 0.0 { 0.0 } else { w.signum() };
                *g += l1 * sign + 2.0 * l2 * w;
            }
        }
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}

/// Mean of squared differences over every element.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64, NeuralError> {
    if pred.shape != target.shape {
        return Err(NeuralError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape, target.shape
        )));
    }
    let n = pred.data.len().max(1) as f64;
    Ok(pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor, NeuralError> {
    if pred.shape != target.shape {
        return Err(NeuralError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape, target.shape
        )));
    }
    let n = pred.data.len().max(1) as f64;
    Ok(Tensor {
        shape: pred.shape.clone(),
        data: pred
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect(),
    })
}
