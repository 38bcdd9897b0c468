use std::collections::BTreeMap;

use eegrisk::classifier::model_io::{
    load_model, load_model_for, model_bytes, parse_model, save_model,
};
use eegrisk::classifier::{
    build_arch, train, Layer, LayerSpec, Mode, Network, NetworkSpec, Sgd, Shape, Tensor,
    TrainConfig,
};
use eegrisk::imaging::store::{ImageSet, ImageSource};
use eegrisk::imaging::{ImageLabel, ImageType};
use proptest::prelude::*;

mod common;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pre_fc_shapes_match_dimension_table() {
    // (h, w) after each conv / pool stage, derived by hand.
    let one = {
        let (h, w) = (conv_dim(19, 0, 1, 3, 1), conv_dim(256, 1, 1, 27, 3));
        assert_eq!((h, w), (18, 78));
        let w = conv_dim(w, 0, 0, 2, 2);
        let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 0, 0, 5, 2));
        assert_eq!((h, w), (14, 18));
        let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 1, 2, 3, 2));
        (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1))
    };
    assert_eq!(one, (8, 8));
    assert_eq!(
        build_arch(ImageType::OneSec).pre_fc_shape().unwrap(),
        Shape::new(512, 8, 8)
    );

    let five = {
        let (h, w) = (conv_dim(95, 1, 1, 3, 2), conv_dim(256, 2, 3, 11, 2));
        assert_eq!((h, w), (48, 126));
        let w = conv_dim(w, 0, 0, 2, 2);
        let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 0, 1, 5, 1));
        assert_eq!((h, w), (44, 60));
        let (h, w) = (conv_dim(h, 0, 0, 2, 2), conv_dim(w, 0, 0, 2, 2));
        let (h, w) = (conv_dim(h, 0, 1, 5, 2), conv_dim(w, 1, 1, 5, 3));
        (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1))
    };
    assert_eq!(five, (8, 8));
    assert_eq!(
        build_arch(ImageType::FiveSec).pre_fc_shape().unwrap(),
        Shape::new(512, 8, 8)
    );

    let ten = {
        let (h, w) = (conv_dim(190, 4, 4, 3, 3), conv_dim(256, 1, 1, 27, 3));
        assert_eq!((h, w), (66, 78));
        let (h, w) = (conv_dim(h, 0, 0, 2, 2), conv_dim(w, 0, 0, 2, 2));
        let (h, w) = (conv_dim(h, 1, 1, 5, 2), conv_dim(w, 0, 0, 5, 2));
        let (h, w) = (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 5, 1));
        let (h, w) = (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1));
        (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1))
    };
    assert_eq!(ten, (10, 10));
    assert_eq!(
        build_arch(ImageType::TenSec).pre_fc_shape().unwrap(),
        Shape::new(256, 10, 10)
    );
}

/// Naive nested-loop convolution with zero padding.
#[allow(clippy::too_many_arguments)]
fn direct_conv(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    filters: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    [pt, pb, pl, pr]: [usize; 4],
) -> (Vec<f64>, usize, usize) {
    let ho = (h + pt + pb - kh) / sh + 1;
    let wo = (w + pl + pr - kw) / sw + 1;
    let mut out = vec![0.0; filters * ho * wo];
    for f in 0..filters {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias[f];
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * sh + ky) as i64 - pt as i64;
                            let ix = (ox * sw + kx) as i64 - pl as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += weight[((f * c + ci) * kh + ky) * kw + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(f * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn conv_stack_matches_direct_convolution() {
    let spec = NetworkSpec {
        input: Shape::new(1, 3, 4),
        layers: vec![
            LayerSpec::conv(2, (2, 3), (1, 2), [1, 0, 2, 1]),
            LayerSpec::conv(3, (2, 2), (1, 1), [0, 1, 1, 0]),
            LayerSpec::FullyConnected { units: 2 },
            LayerSpec::Softmax,
        ],
        image_type: None,
    };
    let mut net = Network::<f64>::new(spec, 5).unwrap();
    for (i, l) in net.layers.iter_mut().enumerate() {
        if let Layer::Conv(c) = l {
            c.bias.value = random_vec(c.bias.value.len(), 100 + i as u64);
        }
    }
    let x = random_vec(12, 1);
    let Layer::Conv(c1) = &net.layers[0] else {
        unreachable!()
    };
    let Layer::Conv(c2) = &net.layers[1] else {
        unreachable!()
    };
    let (y1, h1, w1) = direct_conv(
        &x,
        (1, 3, 4),
        &c1.weight.value,
        &c1.bias.value,
        2,
        (2, 3),
        (1, 2),
        [1, 0, 2, 1],
    );
    let (y2, _, _) = direct_conv(
        &y1,
        (2, h1, w1),
        &c2.weight.value,
        &c2.bias.value,
        3,
        (2, 2),
        (1, 1),
        [0, 1, 1, 0],
    );

    let t = Tensor::from_vec(1, Shape::new(1, 3, 4), x);
    let got1 = net.layers[0].infer(&t);
    let got2 = net.layers[1].infer(&got1);
    assert_eq!(got1.data.len(), y1.len());
    assert_eq!(got2.data.len(), y2.len());
    for (a, b) in got1.data.iter().zip(&y1).chain(got2.data.iter().zip(&y2)) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

// ---------------------------------------------------------------- gradient checks

#[test]
fn gradient_check_each_layer_kind() {
    for (spec, input) in layer_cases() {
        let err = check_layer(spec.clone(), input, 3, 17);
        assert!(err < TOL, "{} relative error {err}", spec.name());
    }
}

#[test]
fn gradient_check_composed_network() {
    let worst = check_composed_network();
    assert!(worst < TOL, "composed relative error {worst}");
}

// ---------------------------------------------------------------- softmax / inference

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-1e4f64..1e4, 2..6)) {
        let s = Layer::<f64>::build(&LayerSpec::Softmax, Shape::new(logits.len(), 1, 1), Shape::new(logits.len(), 1, 1), 0, 0);
        let y = s.infer(&Tensor::from_vec(1, Shape::new(logits.len(), 1, 1), logits));
        prop_assert!(y.data.iter().all(|p| p.is_finite() && *p >= 0.0));
        prop_assert!((y.data.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn inference_is_independent_of_batch_grouping() {
    let net = Network::<f32>::new(build_arch(ImageType::OneSec), 2).unwrap();
    let imgs = random_images(ImageType::OneSec, 7, 4);
    let a = net.predict_source(&imgs, 1).unwrap();
    let b = net.predict_source(&imgs, 3).unwrap();
    let c = net.predict_source(&imgs, 64).unwrap();
    assert_eq!(a.len(), 7);
    assert_eq!(a, b);
    assert_eq!(a, c);
    let single = net.predict_proba(imgs.image(5)).unwrap();
    assert_eq!(single, a[5]);
}

#[test]
fn model_round_trip_and_format_errors() {
    let mut net = Network::<f32>::new(build_arch(ImageType::OneSec), 8).unwrap();
    // Move batchnorm running statistics off their initial values.
    let imgs = random_images(ImageType::OneSec, 10, 9);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 5,
        ..TrainConfig::default()
    };
    train(&mut net, &imgs, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p_1s_10.cnn");
    let meta = BTreeMap::from([("patient".to_string(), "p".to_string())]);
    save_model(&net, &path, &meta).unwrap();
    let (back, header) = load_model_for(&path, ImageType::OneSec).unwrap();
    assert_eq!(header.meta, meta);
    assert_eq!(
        net.layers
            .iter()
            .flat_map(|l| l.state())
            .collect::<Vec<_>>(),
        back.layers
            .iter()
            .flat_map(|l| l.state())
            .collect::<Vec<_>>()
    );
    assert_eq!(
        net.predict_source(&imgs, 4).unwrap(),
        back.predict_source(&imgs, 4).unwrap()
    );

    assert!(load_model_for(&path, ImageType::FiveSec).is_err());
    let bytes = model_bytes(&net, &meta).unwrap();
    assert!(parse_model(&bytes[..bytes.len() - 1]).is_err());
    assert!(parse_model(&bytes[..20]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(parse_model(&extra).is_err());
    let mut bad_version = bytes;
    bad_version[8] = 9;
    assert!(parse_model(&bad_version).is_err());
    assert!(load_model(&dir.path().join("missing.cnn")).is_err());
}

// ---------------------------------------------------------------- training

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        input: Shape::new(1, 4, 6),
        layers: vec![
            LayerSpec::conv(3, (3, 3), (1, 1), [1, 1, 1, 1]),
            LayerSpec::Relu,
            LayerSpec::FullyConnected { units: 2 },
            LayerSpec::Softmax,
        ],
        image_type: None,
    }
}

/// Two constant-intensity classes with a little pixel noise.
fn toy_data(n: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ImageSet {
        image_type: ImageType::OneSec,
        rows: 4,
        cols: 6,
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    for i in 0..n {
        let pre = i % 2 == 1;
        let level = if pre { 0.8 } else { 0.2 };
        set.pixels
            .extend((0..24).map(|_| level + rng.random_range(-0.05f32..0.05)));
        set.labels.push(if pre {
            ImageLabel::Preictal
        } else {
            ImageLabel::Interictal
        });
    }
    set
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_toy_set_is_learned() {
    let data = toy_data(64, 1);
    let mut net = Network::<f32>::new(toy_spec(), 1).unwrap();
    let hist = train(&mut net, &data, &toy_config(1)).unwrap();
    assert_eq!(hist.epochs.len(), 50);
    assert_eq!(hist.epochs.last().unwrap().accuracy, 1.0);
    let p = net.predict_source(&data, 16).unwrap();
    for (i, p) in p.iter().enumerate() {
        assert_eq!(*p > 0.5, data.label(i) == ImageLabel::Preictal);
    }
}

#[test]
fn toy_loss_is_non_increasing_for_most_seeds() {
    let data = toy_data(64, 2);
    let monotone = (0..20u64)
        .filter(|&seed| {
            let mut net = Network::<f32>::new(toy_spec(), seed).unwrap();
            let hist = train(&mut net, &data, &toy_config(seed)).unwrap();
            hist.epochs.windows(2).all(|w| w[1].loss <= w[0].loss)
        })
        .count();
    assert!(monotone >= 18, "{monotone}/20 seeds monotone");
}

#[test]
fn same_seed_same_parameters() {
    let data = toy_data(32, 3);
    let run = || {
        let mut net = Network::<f32>::new(toy_spec(), 4).unwrap();
        train(
            &mut net,
            &data,
            &TrainConfig {
                epochs: 3,
                batch_size: 5,
                seed: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        net.layers
            .iter()
            .flat_map(|l| l.state())
            .map(|s| s.to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_momentum_is_plain_sgd() {
    let mut net = Network::<f64>::new(toy_spec(), 6).unwrap();
    let x = Tensor::from_vec(2, Shape::new(1, 4, 6), random_vec(48, 6));
    let p = net.forward(x, Mode::Train).unwrap();
    net.backward_cross_entropy(&p, &[0, 1]).unwrap();
    let before: Vec<(Vec<f64>, Vec<f64>)> = net
        .params()
        .iter()
        .map(|p| (p.value.clone(), p.grad.clone()))
        .collect();
    let mut sgd = Sgd::new(&net, 0.05, 0.0);
    sgd.step(&mut net);
    // Two steps with the same gradient: no velocity carries over.
    sgd.step(&mut net);
    for ((w0, g), p) in before.iter().zip(net.params()) {
        for ((a, g), b) in w0.iter().zip(g).zip(&p.value) {
            assert!((a - 2.0 * 0.05 * g - b).abs() < 1e-15);
        }
    }
}

#[test]
fn training_rejects_bad_input() {
    let mut net = Network::<f32>::new(toy_spec(), 0).unwrap();
    let empty = ImageSet {
        image_type: ImageType::OneSec,
        rows: 4,
        cols: 6,
        pixels: vec![],
        labels: vec![],
    };
    assert!(train(&mut net, &empty, &TrainConfig::default()).is_err());
    let mut unl = toy_data(2, 0);
    unl.labels[0] = ImageLabel::Unlabeled;
    assert!(train(&mut net, &unl, &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(train(&mut net, &toy_data(2, 0), &bad).is_err());
}
