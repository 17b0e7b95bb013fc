//! Layer kernels. Convolutional activations are stored channels-last
//! (`N x H x W x C`), so one kernel row of an input patch is a single
//! contiguous run and the conv product lands directly in the same layout.

use rand::Rng;

use crate::scalar::{gemm, MatRef};
use crate::Scalar;

/// An `N x H x W x C` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Activation<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self { channels, batch, height, width, data: vec![T::zero(); channels * batch * height * width] }
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.channels, self.batch, self.height, self.width)
    }

    /// Converts `N x C x H x W` data.
    pub fn from_nchw(data: &[T], batch: usize, channels: usize, height: usize, width: usize) -> Self {
        let plane = height * width;
        let mut out = Self::zeros(channels, batch, height, width);
        for s in 0..batch {
            for c in 0..channels {
                let src = &data[(s * channels + c) * plane..][..plane];
                for (p, &v) in src.iter().enumerate() {
                    out.data[(s * plane + p) * channels + c] = v;
                }
            }
        }
        out
    }

    /// Back to `N x C x H x W`.
    pub fn to_nchw(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); self.data.len()];
        for s in 0..self.batch {
            for p in 0..plane {
                for c in 0..self.channels {
                    out[(s * self.channels + c) * plane + p] = self.data[(s * plane + p) * self.channels + c];
                }
            }
        }
        out
    }

    /// Flattens to `N x (H*W*C)` with features in `(y, x, c)` order.
    pub fn to_rows(&self) -> Vec<T> {
        self.data.clone()
    }

    /// Inverse of [`Activation::to_rows`].
    pub fn from_rows(rows: &[T], channels: usize, batch: usize, height: usize, width: usize) -> Self {
        assert_eq!(rows.len(), channels * batch * height * width, "row data size");
        Self { channels, batch, height, width, data: rows.to_vec() }
    }
}

/// Uniform He initialization bound for a given fan-in.
fn he_uniform<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect()
}

/// 2-D convolution without bias (a batch norm always follows).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_channels x (kernel * kernel * in_channels)`, patch order `(ky, kx, c)`.
    pub weight: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self { in_channels, out_channels, kernel, stride, padding, weight: he_uniform(rng, fan_in, out_channels * fan_in) }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        (input + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Valid kernel taps `kx` for output index `o`: those whose input index
    /// `o * stride + kx - padding` lies inside `[0, len)`.
    fn taps(&self, o: usize, len: usize) -> (usize, usize) {
        let origin = o * self.stride;
        let lo = self.padding.saturating_sub(origin);
        let hi = (len + self.padding - origin).min(self.kernel);
        (lo, hi.max(lo))
    }

    /// Unfolds input patches into an `(N*OH*OW) x (k*k*C)` matrix, one
    /// patch per row in `(ky, kx, c)` order.
    fn im2col(&self, x: &Activation<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, c) = (self.kernel, self.in_channels);
        let (h, w) = (x.height, x.width);
        let row_len = k * c;
        let mut col = Vec::with_capacity(x.batch * oh * ow * self.patch_len());
        let zero = T::zero();
        for s in 0..x.batch {
            for oy in 0..oh {
                let (ky0, ky1) = self.taps(oy, h);
                for ox in 0..ow {
                    let (kx0, kx1) = self.taps(ox, w);
                    let ix0 = ox * self.stride + kx0 - self.padding;
                    col.resize(col.len() + ky0 * row_len, zero);
                    for ky in ky0..ky1 {
                        let iy = oy * self.stride + ky - self.padding;
                        col.resize(col.len() + kx0 * c, zero);
                        col.extend_from_slice(&x.data[((s * h + iy) * w + ix0) * c..][..(kx1 - kx0) * c]);
                        col.resize(col.len() + (k - kx1) * c, zero);
                    }
                    col.resize(col.len() + (k - ky1) * row_len, zero);
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], dx: &mut Activation<T>, oh: usize, ow: usize) {
        let (k, c) = (self.kernel, self.in_channels);
        let plen = self.patch_len();
        let (h, w) = (dx.height, dx.width);
        for s in 0..dx.batch {
            for oy in 0..oh {
                let (ky0, ky1) = self.taps(oy, h);
                for ox in 0..ow {
                    let (kx0, kx1) = self.taps(ox, w);
                    let ix0 = ox * self.stride + kx0 - self.padding;
                    let patch = &col[((s * oh + oy) * ow + ox) * plen..][..plen];
                    for ky in ky0..ky1 {
                        let iy = oy * self.stride + ky - self.padding;
                        let src = &patch[(ky * k + kx0) * c..(ky * k + kx1) * c];
                        let dst = &mut dx.data[((s * h + iy) * w + ix0) * c..][..src.len()];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }

    /// Returns the output and the unfolded input needed by [`Conv2d::backward`].
    pub fn forward(&self, x: &Activation<T>) -> (Activation<T>, Vec<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = (self.output_dim(x.height), self.output_dim(x.width));
        let col = self.im2col(x, oh, ow);
        let mut y = Activation::zeros(self.out_channels, x.batch, oh, ow);
        let n = x.batch * oh * ow;
        gemm(
            T::one(),
            MatRef::new(&col, n, self.patch_len()),
            MatRef::new(&self.weight, self.out_channels, self.patch_len()).t(),
            T::zero(),
            &mut y.data,
        );
        (y, col)
    }

    /// Accumulates the weight gradient into `dw` and, if asked, returns the input gradient.
    pub fn backward(
        &self,
        input_dims: (usize, usize),
        col: &[T],
        dy: &Activation<T>,
        dw: &mut [T],
        input_grad: bool,
    ) -> Option<Activation<T>> {
        let n = dy.batch * dy.height * dy.width;
        let k = self.patch_len();
        let co = self.out_channels;
        gemm(T::one(), MatRef::new(&dy.data, n, co).t(), MatRef::new(col, n, k), T::one(), dw);
        if !input_grad {
            return None;
        }
        let mut dcol = vec![T::zero(); n * k];
        gemm(T::one(), MatRef::new(&dy.data, n, co), MatRef::new(&self.weight, co, k), T::zero(), &mut dcol);
        let mut dx = Activation::zeros(self.in_channels, dy.batch, input_dims.0, input_dims.1);
        self.col2im(&dcol, &mut dx, dy.height, dy.width);
        Some(dx)
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Values saved by a batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased variance; `None` when running statistics were used.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, momentum: T, eps: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics when `use_batch_stats`, else with the
    /// running estimates.
    pub fn forward(&self, x: &Activation<T>, use_batch_stats: bool) -> (Activation<T>, BatchNormCache<T>) {
        let c = self.channels();
        let mf = T::from_usize(x.batch * x.height * x.width).expect("count");
        let (mean, var) = if use_batch_stats {
            let mut mean = vec![T::zero(); c];
            for px in x.data.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mf);
            let mut var = vec![T::zero(); c];
            for px in x.data.chunks_exact(c) {
                for ((acc, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= mf);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut y = x.same_shape();
        let mut xhat = vec![T::zero(); x.data.len()];
        for ((yp, hp), xp) in y.data.chunks_exact_mut(c).zip(xhat.chunks_exact_mut(c)).zip(x.data.chunks_exact(c)) {
            for ch in 0..c {
                let h = (xp[ch] - mean[ch]) * inv_std[ch];
                hp[ch] = h;
                yp[ch] = self.gamma[ch] * h + self.beta[ch];
            }
        }
        let batch_stats = use_batch_stats.then_some((mean, var));
        (y, BatchNormCache { xhat, inv_std, batch_stats })
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>, count: usize) {
        let Some((means, vars)) = &cache.batch_stats else { return };
        let unbias = if count > 1 {
            T::from_usize(count).expect("count") / T::from_usize(count - 1).expect("count")
        } else {
            T::one()
        };
        let keep = T::one() - self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + self.momentum * means[c];
            self.running_var[c] = keep * self.running_var[c] + self.momentum * vars[c] * unbias;
        }
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Activation<T>,
        dgamma: &mut [T],
        dbeta: &mut [T],
    ) -> Activation<T> {
        let c = self.channels();
        let mf = T::from_usize(dy.batch * dy.height * dy.width).expect("count");
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xh = vec![T::zero(); c];
        for (gp, hp) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += gp[ch];
                sum_dy_xh[ch] += gp[ch] * hp[ch];
            }
        }
        for ch in 0..c {
            dgamma[ch] += sum_dy_xh[ch];
            dbeta[ch] += sum_dy[ch];
        }
        let scale: Vec<T> = (0..c).map(|ch| self.gamma[ch] * cache.inv_std[ch]).collect();
        let mut dx = dy.same_shape();
        let rows = dx.data.chunks_exact_mut(c).zip(dy.data.chunks_exact(c)).zip(cache.xhat.chunks_exact(c));
        if cache.batch_stats.is_some() {
            let k: Vec<T> = scale.iter().map(|&s| s / mf).collect();
            for ((op, gp), hp) in rows {
                for ch in 0..c {
                    op[ch] = k[ch] * (mf * gp[ch] - sum_dy[ch] - hp[ch] * sum_dy_xh[ch]);
                }
            }
        } else {
            for ((op, gp), _) in rows {
                for ch in 0..c {
                    op[ch] = scale[ch] * gp[ch];
                }
            }
        }
        dx
    }
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            in_features,
            out_features,
            weight: he_uniform(rng, in_features, in_features * out_features),
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(batch * self.out_features);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            T::one(),
            MatRef::new(x, batch, self.in_features),
            MatRef::new(&self.weight, self.out_features, self.in_features).t(),
            T::one(),
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &[T], dy: &[T], batch: usize, dw: &mut [T], db: &mut [T]) -> Vec<T> {
        gemm(T::one(), MatRef::new(dy, batch, self.out_features).t(), MatRef::new(x, batch, self.in_features), T::one(), dw);
        for row in dy.chunks_exact(self.out_features) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![T::zero(); batch * self.in_features];
        gemm(
            T::one(),
            MatRef::new(dy, batch, self.out_features),
            MatRef::new(&self.weight, self.out_features, self.in_features),
            T::zero(),
            &mut dx,
        );
        dx
    }
}

pub fn relu_in_place<T: Scalar>(xs: &mut [T]) {
    for v in xs {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose forward output was clamped.
pub fn relu_backward_in_place<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}
