//! Oracles and fixtures shared by the integration tests. Everything here is
//! written independently of the library code it checks.
#![allow(dead_code)]

use std::f64::consts::PI;

use eegrisk::classifier::{
    cross_entropy, Layer, LayerSpec, Mode, Network, NetworkSpec, Shape, Tensor,
};
use eegrisk::forecast::{AlarmEvent, ForecastParams, LikelihoodPoint, Verdict};
use eegrisk::imaging::store::ImageSet;
use eegrisk::imaging::{ImageLabel, ImageTensor, ImageType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Conv output size.
pub fn conv_dim(input: usize, pad_a: usize, pad_b: usize, kernel: usize, stride: usize) -> usize {
    (input + pad_a + pad_b - kernel) / stride + 1
}

/// (h, w, c) before the first fully connected layer, walked by hand from
/// the architecture figures.
pub fn expected_pre_fc(t: ImageType) -> (usize, usize, usize) {
    match t {
        ImageType::OneSec => {
            let (h, w) = (conv_dim(19, 0, 1, 3, 1), conv_dim(256, 1, 1, 27, 3));
            let w = conv_dim(w, 0, 0, 2, 2);
            let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 0, 0, 5, 2));
            let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 1, 2, 3, 2));
            (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1), 512)
        }
        ImageType::FiveSec => {
            let (h, w) = (conv_dim(95, 1, 1, 3, 2), conv_dim(256, 2, 3, 11, 2));
            let w = conv_dim(w, 0, 0, 2, 2);
            let (h, w) = (conv_dim(h, 0, 0, 5, 1), conv_dim(w, 0, 1, 5, 1));
            let (h, w) = (conv_dim(h, 0, 0, 2, 2), conv_dim(w, 0, 0, 2, 2));
            let (h, w) = (conv_dim(h, 0, 1, 5, 2), conv_dim(w, 1, 1, 5, 3));
            (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1), 512)
        }
        ImageType::TenSec => {
            let (h, w) = (conv_dim(190, 4, 4, 3, 3), conv_dim(256, 1, 1, 27, 3));
            let (h, w) = (conv_dim(h, 0, 0, 2, 2), conv_dim(w, 0, 0, 2, 2));
            let (h, w) = (conv_dim(h, 1, 1, 5, 2), conv_dim(w, 0, 0, 5, 2));
            let (h, w) = (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 5, 1));
            let (h, w) = (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1));
            (conv_dim(h, 0, 0, 3, 1), conv_dim(w, 0, 0, 3, 1), 256)
        }
    }
}

// ---------------------------------------------------------------- gradient checks

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst relative error of input and parameter gradients of one layer under
/// `L = Σ r·y`, against central differences.
pub fn check_layer(spec: LayerSpec, input: Shape, n: usize, seed: u64) -> f64 {
    let out = spec.output_shape(input).unwrap();
    let mut layer = Layer::<f64>::build(&spec, input, out, seed, 0);
    // Give the norm layers non-trivial affine parameters.
    for (k, p) in layer.params_mut().into_iter().enumerate() {
        if matches!(spec, LayerSpec::BatchNorm | LayerSpec::InstanceNorm) {
            p.value = random_vec(p.value.len(), seed + 10 + k as u64)
                .iter()
                .map(|v| v + 1.5)
                .collect();
        }
    }
    let pristine = layer.clone();
    let x = Tensor::from_vec(n, input, random_vec(n * input.len(), seed + 1));
    let r = random_vec(n * out.len(), seed + 2);

    let y = layer.forward_train(x.clone());
    assert_eq!(y.data.len(), r.len());
    let dx = layer
        .backward(&Tensor::from_vec(n, out, r.clone()), true)
        .unwrap();

    let loss_at = |l: &Layer<f64>, x: &Tensor<f64>| {
        let mut l = l.clone();
        weighted_sum(&l.forward_train(x.clone()), &r)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += EPS;
        let mut xm = x.clone();
        xm.data[i] -= EPS;
        let num = (loss_at(&pristine, &xp) - loss_at(&pristine, &xm)) / (2.0 * EPS);
        worst = worst.max(rel_err(dx.data[i], num));
    }
    let analytic: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let mut lp = pristine.clone();
            lp.params_mut()[pi].value[j] += EPS;
            let mut lm = pristine.clone();
            lm.params_mut()[pi].value[j] -= EPS;
            let num = (loss_at(&lp, &x) - loss_at(&lm, &x)) / (2.0 * EPS);
            worst = worst.max(rel_err(g, num));
        }
    }
    worst
}

/// One tiny instance of every layer kind.
pub fn layer_cases() -> Vec<(LayerSpec, Shape)> {
    let s = Shape::new(2, 4, 5);
    vec![
        (LayerSpec::conv(3, (2, 3), (1, 2), [1, 0, 1, 2]), s),
        (LayerSpec::BatchNorm, s),
        (LayerSpec::InstanceNorm, s),
        (LayerSpec::Relu, s),
        (
            LayerSpec::MaxPool {
                pool: (2, 2),
                stride: (2, 1),
            },
            s,
        ),
        (LayerSpec::Dropout { rate: 0.5 }, s),
        (LayerSpec::FullyConnected { units: 3 }, s),
        (LayerSpec::Softmax, Shape::new(4, 1, 1)),
    ]
}

/// Conv → norm → pool → conv → norm → dense → dense → softmax, checked on
/// every parameter under cross-entropy.
pub fn check_composed_network() -> f64 {
    let spec = NetworkSpec {
        input: Shape::new(1, 5, 6),
        layers: vec![
            LayerSpec::conv(3, (3, 3), (1, 1), [1, 1, 1, 1]),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                pool: (1, 2),
                stride: (1, 2),
            },
            LayerSpec::conv(2, (2, 2), (1, 1), [0, 0, 0, 0]),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::FullyConnected { units: 4 },
            LayerSpec::FullyConnected { units: 2 },
            LayerSpec::Softmax,
        ],
        image_type: None,
    };
    let pristine = Network::<f64>::new(spec, 23).unwrap();
    let n = 4;
    let x = Tensor::from_vec(n, Shape::new(1, 5, 6), random_vec(n * 30, 3));
    let labels = [0, 1, 1, 0];

    let mut net = pristine.clone();
    let p = net.forward(x.clone(), Mode::Train).unwrap();
    net.backward_cross_entropy(&p, &labels).unwrap();

    let loss_of = |net: &Network<f64>| {
        let mut net = net.clone();
        let p = net.forward(x.clone(), Mode::Train).unwrap();
        cross_entropy(&p, &labels)
    };
    let mut worst: f64 = 0.0;
    for pi in 0..net.params().len() {
        let grads = net.params()[pi].grad.clone();
        for (j, &g) in grads.iter().enumerate() {
            let mut np = pristine.clone();
            np.params_mut()[pi].value[j] += EPS;
            let mut nm = pristine.clone();
            nm.params_mut()[pi].value[j] -= EPS;
            let num = (loss_of(&np) - loss_of(&nm)) / (2.0 * EPS);
            worst = worst.max(rel_err(g, num));
        }
    }
    worst
}

pub fn random_images(t: ImageType, n: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ImageSet::new(t, t.rows());
    for i in 0..n {
        set.push(&ImageTensor {
            pixels: (0..t.rows() * 256).map(|_| rng.random::<f32>()).collect(),
            rows: t.rows(),
            cols: 256,
            label: if i % 2 == 0 {
                ImageLabel::Interictal
            } else {
                ImageLabel::Preictal
            },
            t_end_s: i as f64,
            image_type: t,
        })
        .unwrap();
    }
    set
}

// ---------------------------------------------------------------- filters

/// Squared magnitude of a bilinear-transformed Butterworth high-pass at `lo`
/// times a low-pass at `hi`, both of order `n`, from the analog prototype
/// `1 / (1 + (Ω/Ωc)^2n)` with pre-warped frequencies.
pub fn butterworth_bandpass_mag2(f: f64, fs: f64, lo: f64, hi: f64, n: i32) -> f64 {
    let w = (PI * f / fs).tan();
    let (wl, wh) = ((PI * lo / fs).tan(), (PI * hi / fs).tan());
    let hp = if w == 0.0 {
        0.0
    } else {
        1.0 / (1.0 + (wl / w).powi(2 * n))
    };
    let lp = 1.0 / (1.0 + (w / wh).powi(2 * n));
    hp * lp
}

/// Squared magnitude of the analog notch `(s² + 1) / (s² + s/Q + 1)` mapped
/// through a bilinear transform pre-warped so the null lands on `f0`.
pub fn notch_mag2(f: f64, fs: f64, f0: f64, q: f64) -> f64 {
    let w = (PI * f / fs).tan() / (PI * f0 / fs).tan();
    let num = (1.0 - w * w).powi(2);
    num / (num + (w / q).powi(2))
}

/// Steady-state gain measured by filtering a sine and fitting amplitude over
/// the last `measure_s` seconds.
pub fn measured_gain(
    filter: impl Fn(&mut [f64]),
    f: f64,
    fs: f64,
    total_s: f64,
    measure_s: f64,
) -> f64 {
    let n = (total_s * fs) as usize;
    let mut x: Vec<f64> = (0..n)
        .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
        .collect();
    filter(&mut x);
    let m = (measure_s * fs) as usize;
    // Least-squares projection on sin and cos.
    let (mut s, mut c, mut ss, mut cc) = (0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate().skip(n - m) {
        let ph = 2.0 * PI * f * i as f64 / fs;
        s += v * ph.sin();
        c += v * ph.cos();
        ss += ph.sin() * ph.sin();
        cc += ph.cos() * ph.cos();
    }
    ((s / ss).powi(2) + (c / cc).powi(2)).sqrt()
}

// ---------------------------------------------------------------- windows

/// Every start `s` in `[a, b)` with `(s − a) % step == 0` whose window fits.
pub fn enumerate_windows(a: usize, b: usize, window: usize, step: usize) -> Vec<usize> {
    (a..b)
        .filter(|s| (s - a) % step == 0 && s + window <= b)
        .collect()
}

/// Pixel `(row, col)` of the image starting at `start`, index by index.
pub fn pixel_oracle(channels: &[Vec<f64>], start: usize, row: usize, col: usize) -> f32 {
    let n_ch = channels.len();
    channels[row % n_ch][start + (row / n_ch) * 256 + col] as f32
}

// ---------------------------------------------------------------- forecaster

/// A probability trace alternating between quiet and elevated regimes.
pub fn regime_trace(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut level: f64 = rng.random_range(0.0..1.0);
    while out.len() < n {
        let len = rng.random_range(30..1500);
        if rng.random_bool(0.3) {
            level = rng.random_range(0.0..1.0);
        }
        let spread = rng.random_range(0.0..0.5);
        for _ in 0..len.min(n - out.len()) {
            let p: f64 = level + spread * rng.random_range(-1.0..1.0);
            out.push(p.clamp(0.0, 1.0));
        }
    }
    // Exact endpoints and values that land on thresholds.
    if n > 10 {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = 0.5;
    }
    out
}

/// Brute-force recomputation: every smoothed value and firing power is
/// summed from scratch over its window, alarms are scanned greedily.
/// Probabilities are added as integers in units of 2^-53, the mean is the
/// integer quotient plus the remainder fraction.
pub fn oracle_forecast(
    t_s: &[f64],
    raw: &[f64],
    p: &ForecastParams,
) -> (Vec<LikelihoodPoint>, Vec<AlarmEvent>) {
    let one = (1u64 << 53) as f64;
    let q: Vec<u64> = raw.iter().map(|&v| (v * one).round() as u64).collect();
    let smoothed: Vec<f64> = (0..raw.len())
        .map(|i| {
            let lo = i.saturating_sub(59);
            let n = (i - lo + 1) as u64;
            let sum: u64 = q[lo..=i].iter().sum();
            ((sum / n) as f64 + (sum % n) as f64 / n as f64) / one
        })
        .collect();
    let w = p.x_min as usize * 60;
    let bits: Vec<bool> = smoothed.iter().map(|&s| s > p.z).collect();
    let fp: Vec<f64> = (0..raw.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            bits[lo..=i].iter().filter(|&&b| b).count() as f64 / w as f64
        })
        .collect();
    let refractory = 300.0 + p.x_min as f64 * 30.0;
    let mut alarms: Vec<AlarmEvent> = Vec::new();
    let mut points = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        let free = alarms
            .last()
            .is_none_or(|a| t_s[i] > a.t_alarm_s + refractory);
        let alarm = free && fp[i] > p.y;
        if alarm {
            alarms.push(AlarmEvent {
                t_alarm_s: t_s[i],
                sop_start_s: t_s[i] + 300.0,
                sop_end_s: t_s[i] + refractory,
                verdict: Verdict::Undetermined,
            });
        }
        points.push(LikelihoodPoint {
            t_s: t_s[i],
            raw_p: raw[i],
            smoothed: smoothed[i],
            fp: fp[i],
            alarm,
        });
    }
    (points, alarms)
}
