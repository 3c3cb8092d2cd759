#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use softservo::neural::{mse_grad, mse_loss, LayerSpec, NetKind, NetSpec, Network, Tensor};
use softservo::seed;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms; central
/// differences cannot resolve relative error below it.
pub const FD_FLOOR: f64 = 1e-6;
/// Entries checked per parameter tensor and for the input.
pub const FD_SAMPLES: usize = 24;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn loss(net: &mut Network, x: &Tensor, y: &Tensor, dropout_seed: u64) -> (f64, Vec<usize>) {
    let out = net.forward_train(x, &mut seed::rng(dropout_seed)).unwrap();
    (mse_loss(&out, y).unwrap(), net.branch_pattern())
}

/// Result of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over compared entries.
    pub max_rel_err: f64,
    pub compared: usize,
    /// Entries whose perturbation moved a ReLU or max-pool across a
    /// switch; the loss is not differentiable there at this step size.
    pub skipped: usize,
}

/// Compares analytic and central-difference gradients over sampled
/// parameter and input entries, for MSE against random targets in training
/// mode with a fixed dropout mask.
pub fn gradient_check(spec: NetSpec, batch: usize, s: u64) -> GradCheck {
    let mut net = Network::new(spec.clone(), s).unwrap();
    let mut rng = seed::rng(seed::derive(s, "data"));
    let mut shape = vec![batch];
    shape.extend_from_slice(&spec.input_shape);
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
    let mut y_shape = vec![batch];
    y_shape.extend(spec.output_shape().unwrap());
    let m: usize = y_shape.iter().product();
    let y = Tensor::new(y_shape, (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let drop = seed::derive(s, "dropout");

    net.zero_grad();
    let out = net.forward_train(&x, &mut seed::rng(drop)).unwrap();
    let pattern = net.branch_pattern();
    let gx = net.backward_to_input(&mse_grad(&out, &y).unwrap());
    let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut res = GradCheck {
        max_rel_err: 0.0,
        compared: 0,
        skipped: 0,
    };
    let mut record = |analytic: f64, (up, pu): (f64, Vec<usize>), (down, pd): (f64, Vec<usize>)| {
        if pu != pattern || pd != pattern {
            res.skipped += 1;
            return;
        }
        res.compared += 1;
        res.max_rel_err = res.max_rel_err.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
    };
    for (pi, g) in grads.iter().enumerate() {
        for _ in 0..FD_SAMPLES.min(g.len()) {
            let k = rng.gen_range(0..g.len());
            let orig = net.params()[pi].value[k];
            net.params_mut()[pi].value[k] = orig + FD_STEP;
            let up = loss(&mut net, &x, &y, drop);
            net.params_mut()[pi].value[k] = orig - FD_STEP;
            let down = loss(&mut net, &x, &y, drop);
            net.params_mut()[pi].value[k] = orig;
            record(g[k], up, down);
        }
    }
    let mut xp = x.clone();
    for _ in 0..FD_SAMPLES.min(n) {
        let k = rng.gen_range(0..n);
        let orig = x.data[k];
        xp.data[k] = orig + FD_STEP;
        let up = loss(&mut net, &xp, &y, drop);
        xp.data[k] = orig - FD_STEP;
        let down = loss(&mut net, &xp, &y, drop);
        xp.data[k] = orig;
        record(gx.data[k], up, down);
    }
    res
}

/// One network per layer type, each wrapping that layer alone.
pub fn single_layer_specs() -> Vec<(&'static str, NetSpec)> {
    let one = |name, shape: Vec<usize>, l: LayerSpec| (name, NetSpec::new(NetKind::Custom, shape, vec![l]));
    vec![
        one("standardize", vec![2, 4, 4], LayerSpec::Standardize),
        one(
            "conv2d",
            vec![2, 5, 6],
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
            },
        ),
        one("max_pool2d", vec![2, 4, 6], LayerSpec::MaxPool2d),
        one("avg_pool2d", vec![2, 4, 6], LayerSpec::AvgPool2d),
        one("flatten", vec![2, 3, 3], LayerSpec::Flatten),
        one("dense", vec![6], LayerSpec::Dense { inputs: 6, outputs: 4 }),
        one("relu", vec![10], LayerSpec::Relu),
        one("sigmoid", vec![10], LayerSpec::Sigmoid),
        one("batch_norm", vec![5], LayerSpec::BatchNorm { features: 5 }),
        one("dropout", vec![10], LayerSpec::Dropout { rate: 0.3 }),
    ]
}
