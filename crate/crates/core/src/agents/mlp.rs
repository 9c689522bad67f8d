//! Fully connected Q-network: hidden blocks of dense -> ReLU -> batch norm,
//! then a dense output layer with one unit per action.
//!
//! Batch norm always normalizes with its running statistics; training-mode
//! passes additionally feed the running estimates. Gradients treat those
//! statistics as constants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offsets of one layer's parameters inside the flat learnable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
    /// `(gamma, beta)` offsets; absent on the output layer.
    pub norm: Option<(usize, usize)>,
    /// Offset of this block inside the running-statistics vectors.
    pub stats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layout: Vec<LayerLayout>,
    /// Per layer: weights stored `[fan_in][fan_out]`, bias, then gamma and beta.
    params: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    bn_eps: f64,
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden block.
    pre: Vec<Vec<f64>>,
    /// ReLU output of every hidden block.
    post: Vec<Vec<f64>>,
    /// Normalized ReLU output before the affine gain/shift.
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// ReLU output of every hidden block, for running-statistic updates.
    pub fn relu_outputs(&self) -> Vec<&[f64]> {
        self.post.iter().map(Vec::as_slice).collect()
    }

    /// Dense outputs of every hidden block before the ReLU.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// Activations of a frozen-statistics forward pass over a batch. Every
/// matrix is row-major with one row per sample.
#[derive(Debug, Clone)]
pub struct BatchCache {
    rows: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    /// `rows x n_outputs` Q-values.
    pub output: Vec<f64>,
}

impl BatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Q-values of sample `r`.
    pub fn output_row(&self, r: usize) -> &[f64] {
        let n = self.output.len() / self.rows;
        &self.output[r * n..(r + 1) * n]
    }

    /// Per-sample ReLU outputs of every hidden block.
    pub fn relu_outputs(&self) -> Vec<Vec<&[f64]>> {
        (0..self.rows)
            .map(|r| {
                self.post
                    .iter()
                    .map(|h| {
                        let n = h.len() / self.rows;
                        &h[r * n..(r + 1) * n]
                    })
                    .collect()
            })
            .collect()
    }
}

/// `c = a b + beta c` for an `m x k` by `k x n` product. `c` is row-major
/// and contiguous; `a` and `b` are described by row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), beta: f64, c: &mut [f64]) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(m > 0 && k > 0 && n > 0);
    assert!(last(m, k, a_strides) < a.len() && last(k, n, b_strides) < b.len() && c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[inline(always)]
fn dense(x: &[f64], w: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(b);
    let n = b.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n..(i + 1) * n];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

impl Mlp {
    /// He-uniform dense weights, zero biases, unit gain, zero shift,
    /// running mean 0 and variance 1.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], momentum: f64, bn_eps: f64, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, momentum, bn_eps)?;
        for l in mlp.layout.clone() {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for w in &mut mlp.params[l.weights..l.weights + l.fan_in * l.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    /// All dense weights and biases zero; batch norm at identity.
    pub fn zeros(sizes: &[usize], momentum: f64, bn_eps: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("agents.hidden", "network needs positive layer sizes"));
        }
        if !(0.0..1.0).contains(&momentum) || bn_eps <= 0.0 {
            return Err(Error::config("agents.bn_momentum", "momentum must be in [0, 1) and eps positive"));
        }
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut stats = 0;
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let weights = offset;
            let bias = weights + fan_in * fan_out;
            offset = bias + fan_out;
            let norm = if l + 1 < n_layers {
                let g = offset;
                offset += 2 * fan_out;
                Some((g, g + fan_out))
            } else {
                None
            };
            layout.push(LayerLayout { fan_in, fan_out, weights, bias, norm, stats });
            if norm.is_some() {
                stats += fan_out;
            }
        }
        let mut params = vec![0.0; offset];
        for l in &layout {
            if let Some((g, _)) = l.norm {
                params[g..g + l.fan_out].fill(1.0);
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            layout,
            params,
            running_mean: vec![0.0; stats],
            running_var: vec![1.0; stats],
            momentum,
            bn_eps,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    /// Learnable scalars: dense weights and biases plus batch-norm gain and shift.
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Multiplications and additions of the dense layers: `sum(2 in out - out)`.
    pub fn operation_count(&self) -> usize {
        self.layout.iter().map(|l| 2 * l.fan_in * l.fan_out - l.fan_out).sum()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn running_stats_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.running_mean, &mut self.running_var)
    }

    /// Q-values without touching any state.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x, false)?.output)
    }

    /// Forward pass. `Mode::Train` also moves the running statistics
    /// towards this sample after normalizing with the previous values.
    pub fn forward(&mut self, x: &[f64], mode: Mode) -> Result<ForwardCache> {
        let cache = self.run(x, true)?;
        if mode == Mode::Train {
            self.update_running_stats(&[cache.relu_outputs()]);
        }
        Ok(cache)
    }

    /// Forward without updating statistics, but keeping the cache.
    pub fn forward_frozen(&self, x: &[f64]) -> Result<ForwardCache> {
        self.run(x, true)
    }

    /// Moves the running statistics towards the mean and variance of a
    /// batch of ReLU outputs (`batch[sample][block]`).
    pub fn update_running_stats(&mut self, batch: &[Vec<&[f64]>]) {
        if batch.is_empty() {
            return;
        }
        let m = self.momentum;
        let n = batch.len() as f64;
        for (b, l) in self.layout.iter().filter(|l| l.norm.is_some()).enumerate() {
            for j in 0..l.fan_out {
                let mean = batch.iter().map(|s| s[b][j]).sum::<f64>() / n;
                let var = batch.iter().map(|s| (s[b][j] - mean).powi(2)).sum::<f64>() / n;
                let k = l.stats + j;
                if batch.len() == 1 {
                    // Exponentially weighted mean and variance of single samples.
                    let delta = mean - self.running_mean[k];
                    self.running_mean[k] += (1.0 - m) * delta;
                    self.running_var[k] = m * (self.running_var[k] + (1.0 - m) * delta * delta);
                } else {
                    self.running_mean[k] = m * self.running_mean[k] + (1.0 - m) * mean;
                    self.running_var[k] = m * self.running_var[k] + (1.0 - m) * var;
                }
            }
        }
    }

    fn run(&self, x: &[f64], keep: bool) -> Result<ForwardCache> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { self.run_avx2(x, keep) };
        }
        self.run_impl(x, keep)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&self, x: &[f64], keep: bool) -> Result<ForwardCache> {
        self.run_impl(x, keep)
    }

    #[inline(always)]
    fn run_impl(&self, x: &[f64], keep: bool) -> Result<ForwardCache> {
        if x.len() != self.n_inputs() {
            return Err(Error::Numeric(format!(
                "network expects {} inputs, got {}",
                self.n_inputs(),
                x.len()
            )));
        }
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
            normalized: Vec::new(),
            inv_std: Vec::new(),
            output: Vec::new(),
        };
        let mut current = x.to_vec();
        let mut z = Vec::new();
        for (li, l) in self.layout.iter().enumerate() {
            let w = &self.params[l.weights..l.weights + l.fan_in * l.fan_out];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            dense(&current, w, b, &mut z);
            let Some((g, be)) = l.norm else {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite activation in layer {li}")));
                }
                if keep {
                    cache.inputs.push(current);
                }
                cache.output = z;
                return Ok(cache);
            };
            let gamma = &self.params[g..g + l.fan_out];
            let beta = &self.params[be..be + l.fan_out];
            let mean = &self.running_mean[l.stats..l.stats + l.fan_out];
            let var = &self.running_var[l.stats..l.stats + l.fan_out];
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn_eps).sqrt()).collect();
            let xhat: Vec<f64> = (0..l.fan_out).map(|j| (h[j] - mean[j]) * inv[j]).collect();
            let y: Vec<f64> = (0..l.fan_out).map(|j| gamma[j] * xhat[j] + beta[j]).collect();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activation in layer {li}")));
            }
            if keep {
                cache.inputs.push(std::mem::replace(&mut current, y));
                cache.pre.push(z.clone());
                cache.post.push(h);
                cache.normalized.push(xhat);
                cache.inv_std.push(inv);
            } else {
                current = y;
            }
        }
        unreachable!("the last layer has no batch norm")
    }

    /// Accumulates into `grads` the gradient of `sum_k d_out[k] * q_k`
    /// with respect to every learnable.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { self.backward_avx2(cache, d_out, grads) };
        }
        self.backward_impl(cache, d_out, grads)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn backward_avx2(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        self.backward_impl(cache, d_out, grads)
    }

    #[inline(always)]
    fn backward_impl(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if cache.inputs.len() != self.layout.len() {
            return Err(Error::Usage("backward needs a cached forward pass".into()));
        }
        if d_out.len() != self.n_outputs() || grads.len() != self.params.len() {
            return Err(Error::Numeric("gradient buffer shape mismatch".into()));
        }
        let mut dz = d_out.to_vec();
        for (li, l) in self.layout.iter().enumerate().rev() {
            if let Some((g, be)) = l.norm {
                let dy = dz;
                let gamma = &self.params[g..g + l.fan_out];
                let xhat = &cache.normalized[li];
                let inv = &cache.inv_std[li];
                let pre = &cache.pre[li];
                dz = vec![0.0; l.fan_out];
                for j in 0..l.fan_out {
                    grads[g + j] += dy[j] * xhat[j];
                    grads[be + j] += dy[j];
                    if pre[j] > 0.0 {
                        dz[j] = dy[j] * gamma[j] * inv[j];
                    }
                }
            }
            let x = &cache.inputs[li];
            let n = l.fan_out;
            for (gb, d) in grads[l.bias..l.bias + n].iter_mut().zip(&dz) {
                *gb += d;
            }
            if dz.iter().all(|d| *d == 0.0) {
                if li == 0 {
                    break;
                }
                dz = vec![0.0; l.fan_in];
                continue;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut grads[l.weights + i * n..l.weights + (i + 1) * n];
                for (gw, d) in row.iter_mut().zip(&dz) {
                    *gw += xi * d;
                }
            }
            if li > 0 {
                let w = &self.params[l.weights..l.weights + l.fan_in * n];
                dz = (0..l.fan_in)
                    .map(|i| w[i * n..(i + 1) * n].iter().zip(&dz).map(|(a, b)| a * b).sum())
                    .collect();
            }
        }
        Ok(())
    }

    /// Q-values of a row-major batch of inputs without touching any state.
    pub fn predict_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run_batch(xs, false)?.output)
    }

    /// Batch forward with frozen statistics, keeping the cache.
    pub fn forward_batch_frozen(&self, xs: &[f64]) -> Result<BatchCache> {
        self.run_batch(xs, true)
    }

    fn run_batch(&self, xs: &[f64], keep: bool) -> Result<BatchCache> {
        let n_in = self.n_inputs();
        if xs.is_empty() || xs.len() % n_in != 0 {
            return Err(Error::Numeric(format!(
                "network expects rows of {n_in} inputs, got {} values",
                xs.len()
            )));
        }
        let rows = xs.len() / n_in;
        let mut cache = BatchCache {
            rows,
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
            normalized: Vec::new(),
            inv_std: Vec::new(),
            output: Vec::new(),
        };
        let mut current = xs.to_vec();
        for (li, l) in self.layout.iter().enumerate() {
            let (fi, fo) = (l.fan_in, l.fan_out);
            let w = &self.params[l.weights..l.weights + fi * fo];
            let b = &self.params[l.bias..l.bias + fo];
            let mut z = Vec::with_capacity(rows * fo);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            gemm(rows, fi, fo, &current, (fi, 1), w, (fo, 1), 1.0, &mut z);
            let Some((g, be)) = l.norm else {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite activation in layer {li}")));
                }
                if keep {
                    cache.inputs.push(current);
                }
                cache.output = z;
                return Ok(cache);
            };
            let gamma = &self.params[g..g + fo];
            let beta = &self.params[be..be + fo];
            let mean = &self.running_mean[l.stats..l.stats + fo];
            let var = &self.running_var[l.stats..l.stats + fo];
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn_eps).sqrt()).collect();
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let xhat: Vec<f64> = h.iter().enumerate().map(|(i, v)| (v - mean[i % fo]) * inv[i % fo]).collect();
            let y: Vec<f64> = xhat.iter().enumerate().map(|(i, v)| gamma[i % fo] * v + beta[i % fo]).collect();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activation in layer {li}")));
            }
            if keep {
                cache.inputs.push(std::mem::replace(&mut current, y));
                cache.pre.push(z);
                cache.post.push(h);
                cache.normalized.push(xhat);
                cache.inv_std.push(inv);
            } else {
                current = y;
            }
        }
        unreachable!("the last layer has no batch norm")
    }

    /// Accumulates into `grads` the gradient of `sum_r sum_k d_out[r][k] * q_rk`
    /// for a row-major `rows x n_outputs` matrix `d_out`.
    pub fn backward_batch(&self, cache: &BatchCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if cache.inputs.len() != self.layout.len() {
            return Err(Error::Usage("backward needs a cached forward pass".into()));
        }
        let rows = cache.rows;
        if d_out.len() != rows * self.n_outputs() || grads.len() != self.params.len() {
            return Err(Error::Numeric("gradient buffer shape mismatch".into()));
        }
        let mut dz = d_out.to_vec();
        for (li, l) in self.layout.iter().enumerate().rev() {
            let (fi, fo) = (l.fan_in, l.fan_out);
            if let Some((g, be)) = l.norm {
                let gamma = &self.params[g..g + fo];
                let xhat = &cache.normalized[li];
                let inv = &cache.inv_std[li];
                let pre = &cache.pre[li];
                for (i, d) in dz.iter_mut().enumerate() {
                    let j = i % fo;
                    grads[g + j] += *d * xhat[i];
                    grads[be + j] += *d;
                    *d = if pre[i] > 0.0 { *d * gamma[j] * inv[j] } else { 0.0 };
                }
            }
            for row in dz.chunks_exact(fo) {
                for (gb, d) in grads[l.bias..l.bias + fo].iter_mut().zip(row) {
                    *gb += d;
                }
            }
            let x = &cache.inputs[li];
            gemm(fi, rows, fo, x, (1, fi), &dz, (fo, 1), 1.0, &mut grads[l.weights..l.weights + fi * fo]);
            if li > 0 {
                let w = &self.params[l.weights..l.weights + fi * fo];
                let mut dx = vec![0.0; rows * fi];
                gemm(rows, fo, fi, &dz, (fo, 1), w, (1, fo), 0.0, &mut dx);
                dz = dx;
            }
        }
        Ok(())
    }

    /// Copies learnables and running statistics from `other`.
    pub fn copy_from(&mut self, other: &Mlp) {
        self.params.copy_from_slice(&other.params);
        self.running_mean.copy_from_slice(&other.running_mean);
        self.running_var.copy_from_slice(&other.running_var);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates with the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam descent step on `params`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Numeric("Adam shapes differ".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let step = hyper.lr / c1;
    let sqrt_c2 = c2.sqrt();
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { adam_avx2(params, grads, state, hyper, step, sqrt_c2) };
        return Ok(());
    }
    adam_moments(params, grads, state, hyper, step, sqrt_c2);
    Ok(())
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn adam_avx2(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper, step: f64, sqrt_c2: f64) {
    adam_moments(params, grads, state, hyper, step, sqrt_c2)
}

#[inline(always)]
fn adam_moments(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper, step: f64, sqrt_c2: f64) {
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        *p -= step * *m / (v.sqrt() / sqrt_c2 + hyper.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SIZES: [usize; 6] = [18, 64, 128, 64, 16, 9];

    #[test]
    fn counts_of_the_default_network() {
        let net = Mlp::zeros(&SIZES, 0.99, 1e-5).unwrap();
        assert_eq!(net.parameter_count(), 18_985 + 544);
        assert_eq!(net.operation_count(), 37_127);
        assert_eq!(net.running_mean().len(), 272);
    }

    #[test]
    fn zero_network_outputs_bias() {
        let mut net = Mlp::zeros(&SIZES, 0.99, 1e-5).unwrap();
        let x = [0.3; 18];
        assert_eq!(net.predict(&x).unwrap(), vec![0.0; 9]);
        let out_bias = net.layout().last().unwrap().bias;
        net.params_mut()[out_bias + 4] = 1.0;
        let q = net.predict(&x).unwrap();
        for (a, v) in q.iter().enumerate() {
            assert_eq!(*v, if a == 4 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn zero_delta_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(&SIZES, 0.99, 1e-5, &mut rng).unwrap();
        let cache = net.forward(&[0.5; 18], Mode::Train).unwrap();
        let mut g = vec![0.0; net.parameter_count()];
        net.backward(&cache, &[0.0; 9], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unselected_outputs_get_no_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::new(&SIZES, 0.99, 1e-5, &mut rng).unwrap();
        let cache = net.forward_frozen(&[0.2; 18]).unwrap();
        let mut d = [0.0; 9];
        d[2] = -0.7;
        let mut g = vec![0.0; net.parameter_count()];
        net.backward(&cache, &d, &mut g).unwrap();
        let last = *net.layout().last().unwrap();
        for i in 0..last.fan_in {
            for j in 0..last.fan_out {
                if j != 2 {
                    assert_eq!(g[last.weights + i * last.fan_out + j], 0.0);
                }
            }
        }
        for j in 0..9 {
            assert_eq!(g[last.bias + j] != 0.0, j == 2);
        }
    }

    #[test]
    fn backward_without_cache_is_usage_error() {
        let net = Mlp::zeros(&[3, 3, 2], 0.99, 1e-5).unwrap();
        let mut cache = net.forward_frozen(&[1.0, 2.0, 3.0]).unwrap();
        cache.inputs.clear();
        let mut g = vec![0.0; net.parameter_count()];
        assert!(matches!(net.backward(&cache, &[1.0, 0.0], &mut g), Err(Error::Usage(_))));
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let hyper = AdamHyper::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 0.0];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-8);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-8);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let hyper = AdamHyper::default();
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut st, &hyper).unwrap();
        assert_eq!(p, vec![1.0]);
        st.m[0] = 0.5;
        st.v[0] = 0.25;
        let mut q = vec![0.0];
        let mut frozen = st.clone();
        adam_step(&mut q, &[0.0], &mut frozen, &hyper).unwrap();
        assert_eq!(frozen.m[0], 0.45);
        assert!((frozen.v[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_descends_monotonically() {
        let hyper = AdamHyper::default();
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let mut prev = p[0];
        for _ in 0..1000 {
            adam_step(&mut p, &[2.5], &mut st, &hyper).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
        // Constant gradient: every bias-corrected step is exactly lr / (1 + eps / |g|).
        let oracle = -1000.0 * hyper.lr / (1.0 + hyper.eps / 2.5);
        assert!((p[0] - oracle).abs() < 1e-9);
    }

    #[test]
    fn train_forward_moves_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Mlp::new(&[4, 3, 2], 0.9, 1e-5, &mut rng).unwrap();
        let x = [1.0, -1.0, 0.5, 2.0];
        let before = net.clone();
        let eval = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(net, before);
        let train = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(eval.output, train.output);
        let h = &train.post[0];
        for j in 0..3 {
            assert!((net.running_mean()[j] - 0.1 * h[j]).abs() < 1e-15);
            assert!((net.running_var()[j] - 0.9 * (1.0 + 0.1 * h[j] * h[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_pass_matches_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::new(&[5, 7, 6, 3], 0.9, 1e-5, &mut rng).unwrap();
        for v in net.running_var.iter_mut() {
            *v = rng.random_range(0.5..2.0);
        }
        let rows = 4;
        let xs: Vec<f64> = (0..rows * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d_out: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = net.forward_batch_frozen(&xs).unwrap();
        let mut batch_grads = vec![0.0; net.parameter_count()];
        net.backward_batch(&cache, &d_out, &mut batch_grads).unwrap();
        let mut grads = vec![0.0; net.parameter_count()];
        for r in 0..rows {
            let single = net.forward_frozen(&xs[r * 5..(r + 1) * 5]).unwrap();
            for (a, b) in single.output.iter().zip(cache.output_row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
            net.backward(&single, &d_out[r * 3..(r + 1) * 3], &mut grads).unwrap();
        }
        for (a, b) in grads.iter().zip(&batch_grads) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(net.predict_batch(&xs).unwrap(), cache.output);
        assert!(net.predict_batch(&xs[..7]).is_err());
    }
}
