use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{load_batch, Mode, Network};
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::imaging::store::ImageSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.001,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// SGD with momentum: `v ← m·v − lr·g; w ← w + v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            momentum: T::lit(momentum),
            velocity: net
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>) {
        let (lr, m) = (self.learning_rate, self.momentum);
        for (p, v) in net.params_mut().into_iter().zip(&mut self.velocity) {
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vel = m * *vel - lr * *g;
                *w += *vel;
            }
        }
    }
}

pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &dyn ImageSource,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(net, data, cfg, |_| {})
}

/// Trains in place, calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    net: &mut Network<T>,
    data: &dyn ImageSource,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let labels = (0..data.len())
        .map(|i| {
            data.label(i)
                .class()
                .ok_or_else(|| Error::InsufficientData(format!("training image {i} is unlabeled")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sgd = Sgd::new(net, cfg.learning_rate, cfg.momentum);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = load_batch::<T>(data, batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            net.zero_grad();
            let probs = net.forward(x, Mode::Train)?;
            let loss = net.backward_cross_entropy(&probs, &y)?;
            sgd.step(net);
            loss_sum += loss.to_f64().unwrap() * batch.len() as f64;
            correct += probs
                .data
                .chunks_exact(probs.sample_len())
                .zip(&y)
                .filter(|(p, &c)| (p[1] > p[0]) == (c == 1))
                .count();
        }
        net.clear_cache();
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
