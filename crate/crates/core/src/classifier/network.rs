use rayon::prelude::*;

use super::layers::{Layer, Param};
use super::spec::{NetworkSpec, Shape};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::imaging::store::ImageSource;

/// Index of the pre-ictal component in the network output.
pub const PREICTAL_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batchnorm on batch statistics, activations cached.
    Train,
    Inference,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
    pub seed: u64,
}

/// Mean cross-entropy of `probs` (N × classes) against class indices.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> T {
    let k = probs.sample_len();
    let floor = T::lit(1e-12);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.data[i * k + y].max(floor).ln())
        .sum();
    total / T::from_usize(labels.len().max(1)).unwrap()
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut input = spec.input;
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .enumerate()
            .map(|(i, (l, &out))| {
                let layer = Layer::build(l, input, out, seed, i);
                input = out;
                layer
            })
            .collect();
        Ok(Self { spec, layers, seed })
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape != self.spec.input {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input.to_string(),
                found: x.shape.to_string(),
            });
        }
        Ok(())
    }

    /// Pure inference pass; returns class probabilities (N × 2).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = self.layers[0].infer(x);
        for l in &self.layers[1..] {
            cur = l.infer(&cur);
        }
        Ok(cur)
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Inference => self.infer(&x),
            Mode::Train => {
                self.check_input(&x)?;
                let mut cur = x;
                for l in &mut self.layers {
                    cur = l.forward_train(cur);
                }
                Ok(cur)
            }
        }
    }

    fn backward_from(&mut self, last: usize, grad: Tensor<T>) {
        let mut g = grad;
        for i in (0..last).rev() {
            match self.layers[i].backward(&g, i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    /// Backpropagates an arbitrary gradient on the probabilities, through
    /// the softmax. Requires a preceding `forward(.., Mode::Train)`.
    pub fn backward(&mut self, dprobs: Tensor<T>) {
        let n = self.layers.len();
        self.backward_from(n, dprobs);
    }

    /// Accumulates gradients of the mean cross-entropy using the fused
    /// softmax derivative `(p − y)/N`. Returns the loss.
    pub fn backward_cross_entropy(&mut self, probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
        if labels.len() != probs.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", probs.n),
                found: labels.len().to_string(),
            });
        }
        let loss = cross_entropy(probs, labels);
        let k = probs.sample_len();
        let inv_n = T::one() / T::from_usize(probs.n).unwrap();
        let mut g = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            g.data[i * k + y] -= T::one();
        }
        g.data.iter_mut().for_each(|v| *v *= inv_n);
        let n = self.layers.len();
        if let Some(Layer::Softmax(s)) = self.layers.last_mut() {
            s.clear();
        }
        self.backward_from(n - 1, g);
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Pre-ictal probability of a single image given as `rows × cols` pixels.
    pub fn predict_proba(&self, image: &[T]) -> Result<f64> {
        let shape = self.spec.input;
        if image.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", shape.len()),
                found: image.len().to_string(),
            });
        }
        let out = self.infer(&Tensor::from_vec(1, shape, image.to_vec()))?;
        Ok(out.data[PREICTAL_CLASS].to_f64().unwrap())
    }

    /// Pre-ictal probabilities for every image of `src`, in order. Batches
    /// run in parallel; results do not depend on `batch`.
    pub fn predict_source(&self, src: &dyn ImageSource, batch: usize) -> Result<Vec<f64>> {
        let shape = self.spec.input;
        if shape.c != 1 || src.rows() != shape.h || src.cols() != shape.w {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", shape.h, shape.w),
                found: format!("{}x{}", src.rows(), src.cols()),
            });
        }
        let batch = batch.max(1);
        let starts: Vec<usize> = (0..src.len()).step_by(batch).collect();
        let chunks = starts
            .par_iter()
            .map(|&s| {
                let e = (s + batch).min(src.len());
                let x = load_batch::<T>(src, &(s..e).collect::<Vec<_>>());
                let out = self.infer(&x)?;
                Ok(out
                    .data
                    .chunks_exact(out.sample_len())
                    .map(|p| p[PREICTAL_CLASS].to_f64().unwrap())
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.concat())
    }
}

/// Renders the given images of `src` into one input tensor.
pub fn load_batch<T: Real>(src: &dyn ImageSource, indices: &[usize]) -> Tensor<T> {
    let per = src.pixels_per_image();
    let shape = Shape::new(1, src.rows(), src.cols());
    let mut buf = vec![0.0f32; per];
    let mut data = Vec::with_capacity(per * indices.len());
    for &i in indices {
        src.render_into(i, &mut buf);
        data.extend(buf.iter().map(|&v| T::from_f32(v).unwrap()));
    }
    Tensor::from_vec(indices.len(), shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::spec::LayerSpec;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input: Shape::new(1, 4, 5),
            layers: vec![
                LayerSpec::conv(2, (2, 3), (1, 1), [0, 1, 1, 0]),
                LayerSpec::Relu,
                LayerSpec::FullyConnected { units: 2 },
                LayerSpec::Softmax,
            ],
            image_type: None,
        }
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut net = Network::<f64>::new(tiny_spec(), 3).unwrap();
        if let Layer::Dense(d) = &mut net.layers[2] {
            d.weight.value.iter_mut().for_each(|w| *w = 0.0);
        }
        let img: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        assert_eq!(net.predict_proba(&img).unwrap(), 0.5);
    }

    #[test]
    fn wrong_dimensions_rejected() {
        let net = Network::<f64>::new(tiny_spec(), 3).unwrap();
        assert!(net.predict_proba(&[0.0; 19]).is_err());
        assert!(net.infer(&Tensor::zeros(1, Shape::new(1, 5, 4))).is_err());
    }

    #[test]
    fn symmetric_logits_give_opposite_bias_gradients() {
        let mut net = Network::<f64>::new(tiny_spec(), 3).unwrap();
        if let Layer::Dense(d) = &mut net.layers[2] {
            d.weight.value.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = Tensor::from_vec(
            2,
            Shape::new(1, 4, 5),
            (0..40).map(|i| (i as f64).sin()).collect(),
        );
        let p = net.forward(x, Mode::Train).unwrap();
        net.backward_cross_entropy(&p, &[0, 1]).unwrap();
        // One sample per class: the bias gradient vanishes. Single class: ±(0.5).
        let Layer::Dense(d) = &net.layers[2] else {
            unreachable!()
        };
        assert!(d.bias.grad.iter().all(|g| g.abs() < 1e-15));

        net.zero_grad();
        let x = Tensor::from_vec(
            1,
            Shape::new(1, 4, 5),
            (0..20).map(|i| (i as f64).cos()).collect(),
        );
        let p = net.forward(x, Mode::Train).unwrap();
        net.backward_cross_entropy(&p, &[1]).unwrap();
        let Layer::Dense(d) = &net.layers[2] else {
            unreachable!()
        };
        assert_eq!(d.bias.grad[0], -d.bias.grad[1]);
        assert_eq!(d.bias.grad[0], 0.5);
    }

    #[test]
    fn duplicated_sample_doubles_gradient_numerator() {
        let img: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
        let grads = |n: usize| {
            let mut net = Network::<f64>::new(tiny_spec(), 9).unwrap();
            let data: Vec<f64> = img.iter().copied().cycle().take(20 * n).collect();
            let p = net
                .forward(Tensor::from_vec(n, Shape::new(1, 4, 5), data), Mode::Train)
                .unwrap();
            net.backward_cross_entropy(&p, &vec![1; n]).unwrap();
            // Undo the 1/N of the batch mean.
            net.params()
                .iter()
                .flat_map(|p| p.grad.iter().map(|g| g * n as f64).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        let one = grads(1);
        let two = grads(2);
        for (a, b) in one.iter().zip(&two) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} {b}");
        }
    }
}
