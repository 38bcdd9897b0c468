//! Layer implementations. Every layer offers a pure inference pass, a
//! caching training pass and a backward pass that accumulates parameter
//! gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::spec::{LayerSpec, Padding, Shape};
use super::tensor::{Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in batchnorm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn filled(n: usize, v: T) -> Self {
        Self::new(vec![v; n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

fn he_uniform<T: Real>(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect()
}

// ---------------------------------------------------------------- conv

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    /// `filters × (in_c·kh·kw)`, row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_shape: Shape,
        out_shape: Shape,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = in_shape.c * kernel.0 * kernel.1;
        Self {
            in_shape,
            out_shape,
            kernel,
            stride,
            padding,
            weight: Param::new(he_uniform(out_shape.c * k, k, rng)),
            bias: Param::filled(out_shape.c, T::zero()),
            input: None,
        }
    }

    fn k(&self) -> usize {
        self.in_shape.c * self.kernel.0 * self.kernel.1
    }

    fn p(&self) -> usize {
        self.out_shape.h * self.out_shape.w
    }

    fn im2col(&self, x: &[T], col: &mut [T]) {
        let Shape { c, h, w } = self.in_shape;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ho, wo) = (self.out_shape.h, self.out_shape.w);
        let (pt, pl) = (self.padding[0] as isize, self.padding[2] as isize);
        let p = ho * wo;
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((ci * kh + ky) * kw + kx) * p;
                    for oy in 0..ho {
                        let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                        let iy = (oy * sh + ky) as isize - pt;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pl;
                            *d = if ix >= 0 && ix < w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], dx: &mut [T]) {
        let Shape { c, h, w } = self.in_shape;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ho, wo) = (self.out_shape.h, self.out_shape.w);
        let (pt, pl) = (self.padding[0] as isize, self.padding[2] as isize);
        let p = ho * wo;
        dx.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((ci * kh + ky) * kw + kx) * p;
                    for oy in 0..ho {
                        let iy = (oy * sh + ky) as isize - pt;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &col[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * sw + kx) as isize - pl;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_sample(&self, x: &[T], col: &mut [T], y: &mut [T]) {
        let (k, p, f) = (self.k(), self.p(), self.out_shape.c);
        self.im2col(x, col);
        T::gemm(
            f,
            k,
            p,
            T::one(),
            &self.weight.value,
            k,
            1,
            col,
            p,
            1,
            T::zero(),
            y,
            p,
            1,
        );
        for (row, &b) in y.chunks_exact_mut(p).zip(&self.bias.value) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(x.n, self.out_shape);
        let ol = self.out_shape.len();
        let il = self.in_shape.len();
        let col_len = self.k() * self.p();
        out.data
            .par_chunks_mut(ol)
            .zip(x.data.par_chunks(il))
            .for_each_init(
                || vec![T::zero(); col_len],
                |col, (y, xs)| self.forward_sample(xs, col, y),
            );
        out
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self
            .input
            .take()
            .expect("conv backward without cached input");
        let (k, p, f) = (self.k(), self.p(), self.out_shape.c);
        let mut col = vec![T::zero(); k * p];
        for i in 0..x.n {
            let g = dy.sample(i);
            self.im2col(x.sample(i), &mut col);
            // dW += dY · colᵀ
            T::gemm(
                f,
                p,
                k,
                T::one(),
                g,
                p,
                1,
                &col,
                1,
                p,
                T::one(),
                &mut self.weight.grad,
                k,
                1,
            );
            for (db, row) in self.bias.grad.iter_mut().zip(g.chunks_exact(p)) {
                *db += row.iter().copied().sum::<T>();
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(x.n, self.in_shape);
        let il = self.in_shape.len();
        let ol = self.out_shape.len();
        let w = &self.weight.value;
        dx.data
            .par_chunks_mut(il)
            .zip(dy.data.par_chunks(ol))
            .for_each_init(
                || vec![T::zero(); k * p],
                |dcol, (dxs, g)| {
                    // dcol = Wᵀ · dY
                    T::gemm(k, f, p, T::one(), w, 1, k, g, p, 1, T::zero(), dcol, p, 1);
                    self.col2im(dcol, dxs);
                },
            );
        Some(dx)
    }
}

// ---------------------------------------------------------------- norms

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Vec<T>,
    /// One entry per normalized group.
    inv_std: Vec<T>,
}

fn mean_var<T: Real>(values: impl Iterator<Item = T> + Clone, m: usize) -> (T, T) {
    let mf = T::from_usize(m).unwrap();
    let mean = values.clone().sum::<T>() / mf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<T>() / mf;
    (mean, var)
}

/// Backward through `y = gamma·xhat + beta` and the normalization itself,
/// for one group of `m` values sharing statistics.
fn norm_backward_group<T: Real>(
    dy: &[T],
    xhat: &[T],
    gamma: T,
    inv_std: T,
    dx: &mut [T],
) -> (T, T) {
    let m = T::from_usize(dy.len()).unwrap();
    let dbeta: T = dy.iter().copied().sum();
    let dgamma: T = dy.iter().zip(xhat).map(|(&g, &h)| g * h).sum();
    let scale = gamma * inv_std / m;
    for ((d, &g), &h) in dx.iter_mut().zip(dy).zip(xhat) {
        *d = scale * (m * g - dbeta - h * dgamma);
    }
    (dgamma, dbeta)
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub shape: Shape,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            gamma: Param::filled(shape.c, T::one()),
            beta: Param::filled(shape.c, T::zero()),
            running_mean: vec![T::zero(); shape.c],
            running_var: vec![T::one(); shape.c],
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let hw = self.shape.h * self.shape.w;
        let eps = T::lit(NORM_EPS);
        for s in y.data.chunks_exact_mut(self.shape.len()) {
            for (c, plane) in s.chunks_exact_mut(hw).enumerate() {
                let inv = T::one() / (self.running_var[c] + eps).sqrt();
                let (g, b, m) = (
                    self.gamma.value[c],
                    self.beta.value[c],
                    self.running_mean[c],
                );
                plane.iter_mut().for_each(|v| *v = g * (*v - m) * inv + b);
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let Shape { c: nc, h, w } = self.shape;
        let hw = h * w;
        let sl = self.shape.len();
        let m = x.n * hw;
        let eps = T::lit(NORM_EPS);
        let mom = T::lit(BN_MOMENTUM);
        let mut y = x;
        let mut xhat = vec![T::zero(); y.data.len()];
        let mut inv_std = vec![T::zero(); nc];
        for c in 0..nc {
            let vals = (0..y.n).flat_map(|i| {
                y.data[i * sl + c * hw..i * sl + (c + 1) * hw]
                    .iter()
                    .copied()
            });
            let (mean, var) = mean_var(vals, m);
            let inv = T::one() / (var + eps).sqrt();
            inv_std[c] = inv;
            let unbiased = if m > 1 {
                var * T::from_usize(m).unwrap() / T::from_usize(m - 1).unwrap()
            } else {
                var
            };
            self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean;
            self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * unbiased;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..y.n {
                let r = i * sl + c * hw..i * sl + (c + 1) * hw;
                for (v, xh) in y.data[r.clone()].iter_mut().zip(&mut xhat[r]) {
                    *xh = (*v - mean) * inv;
                    *v = g * *xh + b;
                }
            }
        }
        self.cache = Some(NormCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batchnorm backward without cache");
        let hw = self.shape.h * self.shape.w;
        let sl = self.shape.len();
        let n = dy.n;
        let mut dx = Tensor::zeros(n, self.shape);
        // Gather each channel into a contiguous buffer so the group formula applies.
        let mut g = Vec::with_capacity(n * hw);
        let mut h = Vec::with_capacity(n * hw);
        let mut d = vec![T::zero(); n * hw];
        for c in 0..self.shape.c {
            g.clear();
            h.clear();
            for i in 0..n {
                let r = i * sl + c * hw..i * sl + (c + 1) * hw;
                g.extend_from_slice(&dy.data[r.clone()]);
                h.extend_from_slice(&cache.xhat[r]);
            }
            let (dgamma, dbeta) =
                norm_backward_group(&g, &h, self.gamma.value[c], cache.inv_std[c], &mut d);
            self.gamma.grad[c] += dgamma;
            self.beta.grad[c] += dbeta;
            for i in 0..n {
                dx.data[i * sl + c * hw..i * sl + (c + 1) * hw]
                    .copy_from_slice(&d[i * hw..(i + 1) * hw]);
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2d<T> {
    pub shape: Shape,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Real> InstanceNorm2d<T> {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            gamma: Param::filled(shape.c, T::one()),
            beta: Param::filled(shape.c, T::zero()),
            cache: None,
        }
    }

    fn normalize(
        &self,
        x: &Tensor<T>,
        mut xhat: Option<&mut Vec<T>>,
        inv_std: &mut Vec<T>,
    ) -> Tensor<T> {
        let hw = self.shape.h * self.shape.w;
        let eps = T::lit(NORM_EPS);
        let mut y = x.clone();
        inv_std.clear();
        for (gi, plane) in y.data.chunks_exact_mut(hw).enumerate() {
            let c = gi % self.shape.c;
            let (mean, var) = mean_var(plane.iter().copied(), hw);
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for (k, v) in plane.iter_mut().enumerate() {
                let xh = (*v - mean) * inv;
                if let Some(buf) = xhat.as_deref_mut() {
                    buf[gi * hw + k] = xh;
                }
                *v = g * xh + b;
            }
        }
        y
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.normalize(x, None, &mut Vec::new())
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = Vec::new();
        let y = self.normalize(&x, Some(&mut xhat), &mut inv_std);
        self.cache = Some(NormCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self
            .cache
            .take()
            .expect("instancenorm backward without cache");
        let hw = self.shape.h * self.shape.w;
        let mut dx = Tensor::zeros(dy.n, self.shape);
        for (gi, (d, g)) in dx
            .data
            .chunks_exact_mut(hw)
            .zip(dy.data.chunks_exact(hw))
            .enumerate()
        {
            let c = gi % self.shape.c;
            let h = &cache.xhat[gi * hw..(gi + 1) * hw];
            let (dgamma, dbeta) =
                norm_backward_group(g, h, self.gamma.value[c], cache.inv_std[gi], d);
            self.gamma.grad[c] += dgamma;
            self.beta.grad[c] += dbeta;
        }
        dx
    }
}

// ---------------------------------------------------------------- elementwise

#[derive(Debug, Clone)]
pub struct Relu<T> {
    pub shape: Shape,
    output: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            output: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let mut y = x;
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("relu backward without cache");
        let mut dx = dy.clone();
        for (d, &o) in dx.data.iter_mut().zip(&y.data) {
            if o <= T::zero() {
                *d = T::zero();
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub pool: (usize, usize),
    pub stride: (usize, usize),
    argmax: Option<Vec<u32>>,
}

impl MaxPool2d {
    pub fn new(
        in_shape: Shape,
        out_shape: Shape,
        pool: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        Self {
            in_shape,
            out_shape,
            pool,
            stride,
            argmax: None,
        }
    }

    /// Returns the output and, per output element, the index of the winning
    /// input element within its sample.
    fn run<T: Real>(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Vec<u32>) {
        let Shape { c, h, w } = self.in_shape;
        let (ho, wo) = (self.out_shape.h, self.out_shape.w);
        let mut y = Tensor::zeros(x.n, self.out_shape);
        let mut arg = if keep {
            vec![0u32; y.data.len()]
        } else {
            Vec::new()
        };
        let (il, ol) = (self.in_shape.len(), self.out_shape.len());
        for i in 0..x.n {
            let xs = x.sample(i);
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut at = 0;
                        for py in 0..self.pool.0 {
                            let iy = oy * self.stride.0 + py;
                            for px in 0..self.pool.1 {
                                let idx = ci * h * w + iy * w + ox * self.stride.1 + px;
                                // First maximum wins on ties.
                                if xs[idx] > best {
                                    best = xs[idx];
                                    at = idx;
                                }
                            }
                        }
                        let o = i * ol + (ci * ho + oy) * wo + ox;
                        y.data[o] = best;
                        if keep {
                            arg[o] = at as u32;
                        }
                    }
                }
            }
            debug_assert!(il > 0);
        }
        (y, arg)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, false).0
    }

    pub fn forward_train<T: Real>(&mut self, x: Tensor<T>) -> Tensor<T> {
        let (y, arg) = self.run(&x, true);
        self.argmax = Some(arg);
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let arg = self.argmax.take().expect("maxpool backward without cache");
        let mut dx = Tensor::zeros(dy.n, self.in_shape);
        let (il, ol) = (self.in_shape.len(), self.out_shape.len());
        for (o, (&g, &a)) in dy.data.iter().zip(&arg).enumerate() {
            dx.data[(o / ol) * il + a as usize] += g;
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub shape: Shape,
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(shape: Shape, rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            shape,
            rate,
            rng,
            mask: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.clone()
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.data.len())
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut y = x;
        y.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("dropout backward without cache");
        let mut dx = dy.clone();
        dx.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        dx
    }
}

// ---------------------------------------------------------------- dense

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub units: usize,
    /// `units × in_features`, row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_features: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_features,
            units,
            weight: Param::new(he_uniform(units * in_features, in_features, rng)),
            bias: Param::filled(units, T::zero()),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, k, u) = (x.n, self.in_features, self.units);
        let mut y = Tensor::zeros(n, Shape::new(u, 1, 1));
        // Y = X · Wᵀ in one call; the kernel's k-blocking does not depend on n,
        // so each row is the same whatever the batch grouping.
        T::gemm(
            n,
            k,
            u,
            T::one(),
            &x.data,
            k,
            1,
            &self.weight.value,
            1,
            k,
            T::zero(),
            &mut y.data,
            u,
            1,
        );
        for yr in y.data.chunks_exact_mut(u) {
            yr.iter_mut()
                .zip(&self.bias.value)
                .for_each(|(v, &b)| *v += b);
        }
        y
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self
            .input
            .take()
            .expect("dense backward without cached input");
        let (n, k, u) = (x.n, self.in_features, self.units);
        // dW += dYᵀ · X
        T::gemm(
            u,
            n,
            k,
            T::one(),
            &dy.data,
            1,
            u,
            &x.data,
            k,
            1,
            T::one(),
            &mut self.weight.grad,
            k,
            1,
        );
        for row in dy.data.chunks_exact(u) {
            self.bias
                .grad
                .iter_mut()
                .zip(row)
                .for_each(|(b, &g)| *b += g);
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(n, x.shape);
        T::gemm(
            n,
            u,
            k,
            T::one(),
            &dy.data,
            u,
            1,
            &self.weight.value,
            k,
            1,
            T::zero(),
            &mut dx.data,
            k,
            1,
        );
        Some(dx)
    }
}

#[derive(Debug, Clone)]
pub struct Softmax<T> {
    pub shape: Shape,
    output: Option<Tensor<T>>,
}

pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    v.iter_mut().for_each(|x| *x = (*x - max).exp());
    let sum: T = v.iter().copied().sum();
    v.iter_mut().for_each(|x| *x /= sum);
}

impl<T: Real> Softmax<T> {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            output: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let l = y.sample_len();
        y.data.chunks_exact_mut(l).for_each(softmax_in_place);
        y
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = self.infer(&x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let p = self.output.take().expect("softmax backward without cache");
        let l = p.sample_len();
        let mut dx = dy.clone();
        for (d, ps) in dx.data.chunks_exact_mut(l).zip(p.data.chunks_exact(l)) {
            let dot: T = d.iter().zip(ps).map(|(&g, &q)| g * q).sum();
            d.iter_mut().zip(ps).for_each(|(g, &q)| *g = q * (*g - dot));
        }
        dx
    }

    pub fn clear(&mut self) {
        self.output = None;
    }
}

// ---------------------------------------------------------------- enum

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    InstanceNorm(InstanceNorm2d<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool2d),
    Dropout(Dropout<T>),
    Dense(Dense<T>),
    Softmax(Softmax<T>),
}

impl<T: Real> Layer<T> {
    /// Instantiates a layer. `index` separates the random streams of layers.
    pub fn build(spec: &LayerSpec, input: Shape, output: Shape, seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        match *spec {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => Layer::Conv(Conv2d::new(
                input, output, kernel, stride, padding, &mut rng,
            )),
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(input)),
            LayerSpec::InstanceNorm => Layer::InstanceNorm(InstanceNorm2d::new(input)),
            LayerSpec::Relu => Layer::Relu(Relu::new(input)),
            LayerSpec::MaxPool { pool, stride } => {
                Layer::MaxPool(MaxPool2d::new(input, output, pool, stride))
            }
            LayerSpec::Dropout { rate } => {
                let mut drng = ChaCha8Rng::seed_from_u64(seed);
                drng.set_stream(1 << 32 | index as u64);
                Layer::Dropout(Dropout::new(input, rate, drng))
            }
            LayerSpec::FullyConnected { units } => {
                Layer::Dense(Dense::new(input.len(), units, &mut rng))
            }
            LayerSpec::Softmax => Layer::Softmax(Softmax::new(input)),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::InstanceNorm(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Dropout(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Softmax(l) => l.infer(x),
        }
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::InstanceNorm(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::Dropout(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
            Layer::Softmax(l) => l.forward_train(x),
        }
    }

    /// Gradient with respect to the input. `need_dx = false` lets the first
    /// layer skip that work and return `None`.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(dy, need_dx),
            Layer::Dense(l) => l.backward(dy, need_dx),
            Layer::BatchNorm(l) => Some(l.backward(dy)),
            Layer::InstanceNorm(l) => Some(l.backward(dy)),
            Layer::Relu(l) => Some(l.backward(dy)),
            Layer::MaxPool(l) => Some(l.backward(dy)),
            Layer::Dropout(l) => Some(l.backward(dy)),
            Layer::Softmax(l) => Some(l.backward(dy)),
        }
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::InstanceNorm(l) => vec![&l.gamma, &l.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::InstanceNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => vec![],
        }
    }

    /// Parameters followed by non-trainable buffers, as stored in model files.
    pub fn state(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self
            .params()
            .into_iter()
            .map(|p| p.value.as_slice())
            .collect();
        if let Layer::BatchNorm(l) = self {
            out.push(&l.running_mean);
            out.push(&l.running_var);
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::Dense(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::BatchNorm(l) => vec![
                &mut l.gamma.value,
                &mut l.beta.value,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::InstanceNorm(l) => vec![&mut l.gamma.value, &mut l.beta.value],
            _ => vec![],
        }
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.input = None,
            Layer::Dense(l) => l.input = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::InstanceNorm(l) => l.cache = None,
            Layer::Relu(l) => l.output = None,
            Layer::MaxPool(l) => l.argmax = None,
            Layer::Dropout(l) => l.mask = None,
            Layer::Softmax(l) => l.clear(),
        }
    }
}
