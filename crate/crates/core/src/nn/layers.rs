use rand::Rng;

use super::{Param, Real};

/// Valid (unpadded) 1D convolution over `[batch, in_ch, len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_ch, in_ch, kernel]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![out_ch, in_ch, kernel],
                in_ch * kernel,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_ch]),
        }
    }

    /// Output length for input length `len`, or `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    fn im2col(&self, x: &[T], len: usize, lo: usize, cols: &mut [T]) {
        let k = self.kernel;
        for c in 0..self.in_ch {
            let xc = &x[c * len..(c + 1) * len];
            for j in 0..k {
                let row = &mut cols[(c * k + j) * lo..(c * k + j + 1) * lo];
                if self.stride == 1 {
                    row.copy_from_slice(&xc[j..j + lo]);
                } else {
                    for (t, r) in row.iter_mut().enumerate() {
                        *r = xc[t * self.stride + j];
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[T], batch: usize, len: usize) -> Vec<T> {
        let lo = self.out_len(len).expect("input shorter than kernel");
        let ck = self.in_ch * self.kernel;
        let mut cols = vec![T::zero(); ck * lo];
        let mut y = vec![T::zero(); batch * self.out_ch * lo];
        for n in 0..batch {
            let xn = &x[n * self.in_ch * len..(n + 1) * self.in_ch * len];
            self.im2col(xn, len, lo, &mut cols);
            let yn = &mut y[n * self.out_ch * lo..(n + 1) * self.out_ch * lo];
            for (o, row) in yn.chunks_mut(lo).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            T::gemm(
                self.out_ch,
                ck,
                lo,
                T::one(),
                &self.weight.value,
                ck,
                1,
                &cols,
                lo,
                1,
                T::one(),
                yn,
                lo,
                1,
            );
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[T], batch: usize, len: usize, dy: &[T]) -> Vec<T> {
        let lo = self.out_len(len).expect("input shorter than kernel");
        let k = self.kernel;
        let ck = self.in_ch * k;
        let mut cols = vec![T::zero(); ck * lo];
        let mut dcols = vec![T::zero(); ck * lo];
        let mut dx = vec![T::zero(); batch * self.in_ch * len];
        for n in 0..batch {
            let xn = &x[n * self.in_ch * len..(n + 1) * self.in_ch * len];
            let dyn_ = &dy[n * self.out_ch * lo..(n + 1) * self.out_ch * lo];
            self.im2col(xn, len, lo, &mut cols);
            // dW += dy_n · colsᵀ
            T::gemm(
                self.out_ch,
                lo,
                ck,
                T::one(),
                dyn_,
                lo,
                1,
                &cols,
                1,
                lo,
                T::one(),
                &mut self.weight.grad,
                ck,
                1,
            );
            for (o, row) in dyn_.chunks(lo).enumerate() {
                self.bias.grad[o] += row.iter().copied().sum::<T>();
            }
            // dcols = Wᵀ · dy_n
            T::gemm(
                ck,
                self.out_ch,
                lo,
                T::one(),
                &self.weight.value,
                1,
                ck,
                dyn_,
                lo,
                1,
                T::zero(),
                &mut dcols,
                lo,
                1,
            );
            let dxn = &mut dx[n * self.in_ch * len..(n + 1) * self.in_ch * len];
            for c in 0..self.in_ch {
                for j in 0..k {
                    let row = &dcols[(c * k + j) * lo..(c * k + j + 1) * lo];
                    for (t, &g) in row.iter().enumerate() {
                        dxn[c * len + t * self.stride + j] += g;
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Batch normalization over `[batch, channels, len]`, statistics per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm1d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
            name: name.to_string(),
        }
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &[T], batch: usize, len: usize) -> (Vec<T>, BnCache<T>) {
        let c_n = self.channels;
        let m = (batch * len) as f64;
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c_n];
        for c in 0..c_n {
            let mut sum = 0.0f64;
            for n in 0..batch {
                let s = &x[(n * c_n + c) * len..(n * c_n + c + 1) * len];
                sum += s.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0f64;
            for n in 0..batch {
                let s = &x[(n * c_n + c) * len..(n * c_n + c + 1) * len];
                sq += s
                    .iter()
                    .map(|v| (v.to_f64().unwrap() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = T::lit(istd);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
            for n in 0..batch {
                let r = (n * c_n + c) * len..(n * c_n + c + 1) * len;
                for i in r {
                    let h = (x[i] - mean_t) * istd_t;
                    xhat[i] = h;
                    y[i] = g * h + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mom = T::lit(self.momentum);
            self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean_t;
            self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * T::lit(unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &[T], batch: usize, len: usize) -> Vec<T> {
        let c_n = self.channels;
        let mut y = vec![T::zero(); x.len()];
        let eps = T::lit(self.eps);
        for c in 0..c_n {
            let istd = T::one() / (self.running_var[c] + eps).sqrt();
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            for n in 0..batch {
                let r = (n * c_n + c) * len..(n * c_n + c + 1) * len;
                for i in r {
                    y[i] = x[i] * scale + shift;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &[T], batch: usize, len: usize) -> Vec<T> {
        let c_n = self.channels;
        let m = T::lit((batch * len) as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for c in 0..c_n {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for n in 0..batch {
                let r = (n * c_n + c) * len..(n * c_n + c + 1) * len;
                for i in r {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * cache.xhat[i];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value[c];
            let k = g * cache.inv_std[c] / m;
            for n in 0..batch {
                let r = (n * c_n + c) * len..(n * c_n + c + 1) * len;
                for i in r {
                    dx[i] = k * (m * dy[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }
}

/// Inverted dropout; the mask already carries the `1/(1-p)` scale.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub mask: Vec<T>,
}

impl<T: Real> Dropout<T> {
    pub fn sample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = (0..len)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        Dropout { mask }
    }

    pub fn apply(&self, x: &mut [T]) {
        x.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= *m);
    }
}

/// Fully connected layer over `[batch, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::he_normal(format!("{name}.weight"), vec![outputs, inputs], inputs, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        T::gemm(
            batch,
            self.inputs,
            self.outputs,
            T::one(),
            x,
            self.inputs,
            1,
            &self.weight.value,
            1,
            self.inputs,
            T::one(),
            &mut y,
            self.outputs,
            1,
        );
        y
    }

    pub fn backward(&mut self, x: &[T], batch: usize, dy: &[T]) -> Vec<T> {
        T::gemm(
            self.outputs,
            batch,
            self.inputs,
            T::one(),
            dy,
            1,
            self.outputs,
            x,
            self.inputs,
            1,
            T::one(),
            &mut self.weight.grad,
            self.inputs,
            1,
        );
        for row in dy.chunks(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += *d;
            }
        }
        let mut dx = vec![T::zero(); batch * self.inputs];
        T::gemm(
            batch,
            self.outputs,
            self.inputs,
            T::one(),
            dy,
            self.outputs,
            1,
            &self.weight.value,
            self.inputs,
            1,
            T::zero(),
            &mut dx,
            self.inputs,
            1,
        );
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    dy.iter_mut().zip(y).for_each(|(d, v)| {
        if *v <= T::zero() {
            *d = T::zero()
        }
    });
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    len: usize,
}

/// Max over time: `[batch, ch, len]` → `[batch, ch]`.
pub fn global_max_pool<T: Real>(x: &[T], batch: usize, ch: usize, len: usize) -> (Vec<T>, MaxPoolCache) {
    let mut y = Vec::with_capacity(batch * ch);
    let mut argmax = Vec::with_capacity(batch * ch);
    for row in x.chunks(len).take(batch * ch) {
        let (i, v) = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        y.push(v);
        argmax.push(i);
    }
    (y, MaxPoolCache { argmax, len })
}

pub fn global_max_pool_backward<T: Real>(cache: &MaxPoolCache, dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len() * cache.len];
    for (r, (&i, &g)) in cache.argmax.iter().zip(dy).enumerate() {
        dx[r * cache.len + i] = g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(c: &Conv1d<f64>, x: &[f64], len: usize) -> Vec<f64> {
        let lo = c.out_len(len).unwrap();
        let mut y = vec![0.0; c.out_ch * lo];
        for o in 0..c.out_ch {
            for t in 0..lo {
                let mut s = c.bias.value[o];
                for i in 0..c.in_ch {
                    for j in 0..c.kernel {
                        s += c.weight.value[(o * c.in_ch + i) * c.kernel + j]
                            * x[i * len + t * c.stride + j];
                    }
                }
                y[o * lo + t] = s;
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in [1, 3] {
            let mut conv = Conv1d::<f64>::new("c", 2, 3, 4, stride, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3];
            let x: Vec<f64> = (0..2 * 2 * 17).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let y = conv.forward(&x, 2, 17);
            let lo = conv.out_len(17).unwrap();
            for n in 0..2 {
                let expect = naive_conv(&conv, &x[n * 34..(n + 1) * 34], 17);
                let got = &y[n * 3 * lo..(n + 1) * 3 * lo];
                for (a, b) in got.iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn eval_batchnorm_uses_running_stats() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0 - 1e-5];
        let y = bn.forward_eval(&[2.0, 4.0], 1, 2);
        assert!((y[0]).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = [1.0, 5.0, 2.0, -1.0, -3.0, -2.0];
        let (y, cache) = global_max_pool(&x, 1, 2, 3);
        assert_eq!(y, vec![5.0, -1.0]);
        let dx = global_max_pool_backward(&cache, &[1.0, 2.0]);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
    }
}
