use rand::Rng;
use softservo::neural::{
    evaluate, mse_grad, mse_loss, p2anet_spec, train, vsnet1_spec, vsnet2_spec, LayerSpec, Model, NetKind,
    NetSpec, NeuralError, Network, Samples, Tensor, TrainConfig,
};
use softservo::norm::ChannelNorm;
use softservo::seed;

const CH: [usize; 3] = [8, 16, 16];

fn conv_params(cin: usize, cout: usize) -> usize {
    cin * cout * 9 + cout
}

fn dense_params(i: usize, o: usize) -> usize {
    i * o + o
}

#[test]
fn vsnet1_parameter_count_matches_layer_sum() {
    let spec = vsnet1_spec([3, 64, 64], &CH);
    let want = conv_params(3, 8)
        + conv_params(8, 16)
        + conv_params(16, 16)
        + dense_params(16 * 8 * 8, 64)
        + 2 * 64
        + dense_params(64, 32)
        + 2 * 32
        + dense_params(32, 5);
    assert_eq!(spec.param_count(), want);
    let net = Network::new(spec, 0).unwrap();
    assert_eq!(net.params().iter().map(|p| p.value.len()).sum::<usize>(), want);
}

#[test]
fn p2anet_parameter_count() {
    let bn = 2 * 256 + 2 * 128;
    assert_eq!(p2anet_spec().param_count(), 7 * 256 + 256 + 256 * 128 + 128 + 128 * 5 + 5 + bn);
}

#[test]
fn output_shapes_and_range() {
    let x = Tensor::new(vec![2, 3, 64, 64], (0..2 * 3 * 64 * 64).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
    let n1 = Network::new(vsnet1_spec([3, 64, 64], &CH), 1).unwrap();
    let y = n1.predict(&x).unwrap();
    assert_eq!(y.shape, vec![2, 5]);
    assert!(y.data.iter().all(|v| *v > 0.0 && *v < 1.0));
    let n2 = Network::new(vsnet2_spec([3, 64, 64], &CH), 1).unwrap();
    assert_eq!(n2.predict(&x).unwrap().shape, vec![2, 7]);
    let p = Network::new(p2anet_spec(), 1).unwrap();
    assert_eq!(p.predict(&Tensor::zeros(vec![3, 7])).unwrap().shape, vec![3, 5]);
}

#[test]
fn pose_and_actuation_nets_share_all_but_the_output_layer() {
    let a = vsnet1_spec([3, 64, 64], &CH);
    let b = vsnet2_spec([3, 64, 64], &CH);
    assert_eq!(a.layers.len(), b.layers.len());
    let n = a.layers.len();
    // last two layers: output dense, sigmoid
    assert_eq!(a.layers[..n - 2], b.layers[..n - 2]);
    assert_eq!(a.layers[n - 2], LayerSpec::Dense { inputs: 32, outputs: 5 });
    assert_eq!(b.layers[n - 2], LayerSpec::Dense { inputs: 32, outputs: 7 });
    assert_eq!(a.layers[n - 1], b.layers[n - 1]);
}

#[test]
fn frozen_flags_follow_request() {
    let mut spec = vsnet1_spec([3, 32, 32], &CH);
    let k = spec.backbone_len();
    spec.freeze_first(k);
    assert!(spec.trainable[..k].iter().all(|t| !t));
    assert!(spec.trainable[k..].iter().all(|t| *t));
}

#[test]
fn zeroed_p2anet_outputs_one_half() {
    let mut net = Network::new(p2anet_spec(), 3).unwrap();
    for p in net.params_mut() {
        p.value.fill(0.0);
    }
    let x = Tensor::new(vec![2, 7], (0..14).map(|i| i as f64 * 0.1).collect()).unwrap();
    assert!(net.predict(&x).unwrap().data.iter().all(|v| *v == 0.5));
}

#[test]
fn linear_net_gradient_matches_closed_form() {
    let spec = NetSpec::new(NetKind::Custom, vec![3], vec![LayerSpec::Dense { inputs: 3, outputs: 2 }]);
    let mut net = Network::new(spec, 5).unwrap();
    net.params_mut()[1].value.fill(0.0);
    let w = net.params()[0].value.clone();
    let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let y = Tensor::new(vec![4, 2], (0..8).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
    net.zero_grad();
    let p = net.forward_train(&x, &mut seed::rng(0)).unwrap();
    net.backward(&mse_grad(&p, &y).unwrap());
    let n = 8.0;
    for o in 0..2 {
        for i in 0..3 {
            let mut want = 0.0;
            for s in 0..4 {
                let wx: f64 = (0..3).map(|j| w[o * 3 + j] * x.data[s * 3 + j]).sum();
                want += 2.0 * (wx - y.data[s * 2 + o]) * x.data[s * 3 + i] / n;
            }
            assert!((net.params()[0].grad[o * 3 + i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn mse_goldens() {
    let t = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
    let ones = Tensor::new(vec![2, 3], t.data.iter().map(|v| v + 1.0).collect()).unwrap();
    assert!((mse_loss(&ones, &t).unwrap() - 1.0).abs() < 1e-12);
    let mut rng = seed::rng(8);
    let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut hand = 0.0;
    for i in 0..20 {
        hand += (a[i] - b[i]) * (a[i] - b[i]);
    }
    hand /= 20.0;
    let got = mse_loss(&Tensor::new(vec![4, 5], a).unwrap(), &Tensor::new(vec![4, 5], b).unwrap()).unwrap();
    assert!((got - hand).abs() < 1e-12);
    let err = mse_loss(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![3, 2])).unwrap_err();
    assert!(err.to_string().contains("[2, 3]"), "{err}");
}

#[test]
fn penalty_sums_dense_weights_only() {
    let mut net = Network::new(p2anet_spec(), 0).unwrap();
    for p in net.params_mut() {
        p.value.fill(0.5);
    }
    let dense_weights = (7 * 256 + 256 * 128 + 128 * 5) as f64;
    let want = dense_weights * (1e-4 * 0.5 + 5e-4 * 0.25);
    assert!((net.penalty(1e-4, 5e-4) - want).abs() < 1e-12 * want);
}

#[test]
fn eval_forward_is_deterministic() {
    let net = Network::new(vsnet1_spec([3, 16, 16], &CH), 2).unwrap();
    let x = Tensor::new(vec![3, 3, 16, 16], (0..768 * 3).map(|i| (i as f64 * 0.013).fract()).collect()).unwrap();
    assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
}

#[test]
fn single_sample_eval_is_finite() {
    let net = Network::new(vsnet1_spec([3, 16, 16], &CH), 2).unwrap();
    let x = Tensor::new(vec![1, 3, 16, 16], vec![0.3; 768]).unwrap();
    assert!(net.predict(&x).unwrap().all_finite());
}

fn toy_samples(n: usize, s: u64) -> Samples {
    let mut rng = seed::rng(s);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        x.extend([a, b]);
        y.push(0.6 * a - 0.3 * b + 0.1);
    }
    Samples::new(vec![2], x, 1, y).unwrap()
}

fn linear_spec() -> NetSpec {
    NetSpec::new(NetKind::Custom, vec![2], vec![LayerSpec::Dense { inputs: 2, outputs: 1 }])
}

#[test]
fn one_epoch_reduces_loss_on_toy_set() {
    let set = toy_samples(4, 1);
    let mut net = Network::new(linear_spec(), 4).unwrap();
    let before = evaluate(&net, &set, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        initial_lr: 0.05,
        l1: 0.0,
        l2: 0.0,
        ..TrainConfig::default()
    };
    train(&mut net, &set, None, &cfg, |_, _, _| {}).unwrap();
    assert!(evaluate(&net, &set, 4).unwrap() < before);
}

#[test]
fn training_is_bit_reproducible() {
    let set = toy_samples(40, 2);
    let spec = p2anet_like_small();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = Network::new(spec.clone(), 9).unwrap();
        let rep = train(&mut net, &set, Some(&set), &cfg, |_, _, _| {}).unwrap();
        (net.state_vector(), rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ra, rb);
    assert_eq!(ra.train_loss.len(), 3);
    assert_eq!(ra.learning_rates.len(), 3);
}

fn p2anet_like_small() -> NetSpec {
    NetSpec::new(
        NetKind::Custom,
        vec![2],
        vec![
            LayerSpec::Dense { inputs: 2, outputs: 8 },
            LayerSpec::Relu,
            LayerSpec::BatchNorm { features: 8 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { inputs: 8, outputs: 1 },
            LayerSpec::Sigmoid,
        ],
    )
}

#[test]
fn frozen_layers_stay_bit_identical() {
    let set = toy_samples(40, 3);
    let mut spec = p2anet_like_small();
    spec.freeze_first(3);
    let mut net = Network::new(spec, 6).unwrap();
    let before: Vec<Vec<f64>> = (0..3).map(|i| net.layer_values(i)).collect();
    let head_before = net.layer_values(4);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train(&mut net, &set, None, &cfg, |_, _, _| {}).unwrap();
    for (i, b) in before.iter().enumerate() {
        assert_eq!(&net.layer_values(i), b, "layer {i} changed");
    }
    assert_ne!(net.layer_values(4), head_before);
}

#[test]
fn stronger_l2_never_grows_the_fitted_weights() {
    let set = toy_samples(64, 4);
    let mut norms = Vec::new();
    for l2 in [0.0, 0.01, 0.1, 1.0] {
        let mut net = Network::new(linear_spec(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 64,
            initial_lr: 0.01,
            l1: 0.0,
            l2,
            ..TrainConfig::default()
        };
        train(&mut net, &set, None, &cfg, |_, _, _| {}).unwrap();
        norms.push(net.params()[0].value.iter().map(|w| w * w).sum::<f64>().sqrt());
    }
    for w in norms.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{norms:?}");
    }
    assert!(norms[3] < norms[0]);
}

#[test]
fn non_finite_loss_aborts() {
    let mut set = toy_samples(16, 5);
    set.inputs[3] = f64::NAN;
    let mut net = Network::new(linear_spec(), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut net, &set, None, &cfg, |_, _, _| {}),
        Err(NeuralError::Diverged { epoch: 1, .. })
    ));
}

#[test]
fn checkpoint_round_trip() {
    let mut net = Network::new(vsnet1_spec([3, 16, 16], &CH), 4).unwrap();
    // move running statistics off their defaults
    let x = Tensor::new(vec![4, 3, 16, 16], (0..3072).map(|i| (i as f64 * 0.07).sin()).collect()).unwrap();
    net.forward_train(&x, &mut seed::rng(1)).unwrap();
    let model = Model {
        net,
        input_norm: None,
        output_norm: Some(ChannelNorm::new(vec![0.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()),
        init_seed: 4,
        train: Some(TrainConfig::default()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.net.state_vector(), model.net.state_vector());
    assert_eq!(back.output_norm, model.output_norm);
    assert_eq!(back.train, model.train);
    assert_eq!(back.net.predict(&x).unwrap(), model.net.predict(&x).unwrap());

    let bytes = model.to_bytes().unwrap();
    assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::from_bytes(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(Model::from_bytes(&long).is_err());
}
