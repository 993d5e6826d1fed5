//! Dense numeric core: row-major matrices, feed-forward networks with ReLU
//! hidden layers, analytic reverse-mode gradients of categorical
//! log-likelihoods, and the initialisers used by the policy architectures.
//!
//! Everything is 64-bit. Weights are stored input-major (`in_dim` rows of
//! `out_dim` entries), so a forward pass accumulates scaled weight rows and
//! can skip zero input coordinates; game observations are concatenated
//! one-hot blocks, which makes that skip the dominant saving.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum NnError {
    #[error("input has {got} entries, expected {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("non-finite input value at index {0}")]
    NonFiniteInput(usize),
    #[error("action {action} out of range ({n_actions} outputs)")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("gradient has {got} entries, parameters have {expected}")]
    MisalignedGradient { got: usize, expected: usize },
    #[error("invalid layer shapes: {0}")]
    BadShape(String),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
}

/// Row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Tensor2 { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// One dense layer: `out = input * weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weight: Tensor2::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows * self.weight.cols + self.bias.len()
    }
}

/// Parameters of a feed-forward network; ReLU on hidden layers, with the
/// output activation chosen at call time (softmax for policies, identity for
/// parameter-generating networks).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        MlpParams {
            layers: dims
                .iter()
                .map(|&(i, o)| DenseLayer::zeros(i, o))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::BadShape("no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::BadShape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Canonical flat ordering: layers in forward order, each weight
    /// row-major then its bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weight.data);
            out.extend_from_slice(&layer.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.flatten_into(&mut out);
        out
    }

    pub fn from_flat(dims: &[(usize, usize)], values: &[f64]) -> Result<Self, NnError> {
        let expected: usize = dims.iter().map(|&(i, o)| i * o + o).sum();
        if values.len() != expected {
            return Err(NnError::MisalignedGradient {
                got: values.len(),
                expected,
            });
        }
        let mut params = MlpParams {
            layers: Vec::with_capacity(dims.len()),
        };
        let mut cursor = 0;
        for &(i, o) in dims {
            let w_len = i * o;
            let weight = Tensor2 {
                rows: i,
                cols: o,
                data: values[cursor..cursor + w_len].to_vec(),
            };
            cursor += w_len;
            let bias = values[cursor..cursor + o].to_vec();
            cursor += o;
            params.layers.push(DenseLayer { weight, bias });
        }
        params.validate()?;
        Ok(params)
    }

    /// Overwrite parameters in place from a flat slice (shape-preserving).
    pub fn assign_from_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.param_count() {
            return Err(NnError::MisalignedGradient {
                got: values.len(),
                expected: self.param_count(),
            });
        }
        let mut cursor = 0;
        for layer in &mut self.layers {
            let w_len = layer.weight.data.len();
            layer.weight.data.copy_from_slice(&values[cursor..cursor + w_len]);
            cursor += w_len;
            let b_len = layer.bias.len();
            layer.bias.copy_from_slice(&values[cursor..cursor + b_len]);
            cursor += b_len;
        }
        Ok(())
    }

    /// `theta += scale * values`, with `values` in the canonical flat order.
    pub fn add_scaled(&mut self, values: &[f64], scale: f64) -> Result<(), NnError> {
        if values.len() != self.param_count() {
            return Err(NnError::MisalignedGradient {
                got: values.len(),
                expected: self.param_count(),
            });
        }
        let mut cursor = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weight.data {
                *w += scale * values[cursor];
                cursor += 1;
            }
            for b in &mut layer.bias {
                *b += scale * values[cursor];
                cursor += 1;
            }
        }
        Ok(())
    }
}

/// Named spans of a canonical flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub segments: Vec<ParamSegment>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(segments: Vec<ParamSegment>) -> Self {
        let total = segments.iter().map(|s| s.len).sum();
        ParamLayout { segments, total }
    }

    pub fn of_mlp(prefix: &str, params: &MlpParams) -> Self {
        let mut segments = Vec::new();
        for (k, layer) in params.layers.iter().enumerate() {
            segments.push(ParamSegment {
                name: format!("{prefix}layer{k}.weight"),
                len: layer.weight.data.len(),
            });
            segments.push(ParamSegment {
                name: format!("{prefix}layer{k}.bias"),
                len: layer.bias.len(),
            });
        }
        ParamLayout::new(segments)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Byte-offset of a named segment in the flat vector.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut offset = 0;
        for seg in &self.segments {
            if seg.name == name {
                return Some(offset);
            }
            offset += seg.len;
        }
        None
    }
}

/// A flat vector of partial derivatives aligned with a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGradient {
    pub layout: Arc<ParamLayout>,
    pub values: Vec<f64>,
}

impl FlatGradient {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total()];
        FlatGradient { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != layout.total() {
            return Err(NnError::MisalignedGradient {
                got: values.len(),
                expected: layout.total(),
            });
        }
        Ok(FlatGradient { layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn add(&mut self, other: &FlatGradient) -> Result<(), NnError> {
        if other.values.len() != self.values.len() {
            return Err(NnError::MisalignedGradient {
                got: other.values.len(),
                expected: self.values.len(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }
}

/// Activations recorded by a forward pass, plus scratch space reused by the
/// backward pass. Reusable across calls to avoid per-sample allocation.
///
/// The raw input is kept as its nonzero coordinates only: game observations
/// are concatenated one-hot blocks, and both the forward matvec and the
/// first-layer weight gradients touch nothing else.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input_nnz: Vec<(u32, f64)>,
    input_len: usize,
    /// acts[l] is the post-activation output of layer l; the last entry is
    /// the network output.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Output of the last forward pass run on this cache.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache never run").as_slice()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OutputActivation {
    Softmax,
    Identity,
}

fn forward_impl(
    params: &MlpParams,
    input: &[f64],
    cache: &mut ForwardCache,
    out_act: OutputActivation,
) -> Result<(), NnError> {
    if input.len() != params.input_dim() {
        return Err(NnError::InputDimMismatch {
            got: input.len(),
            expected: params.input_dim(),
        });
    }
    let n_layers = params.layers.len();
    cache.acts.resize(n_layers, Vec::new());
    cache.input_len = input.len();
    cache.input_nnz.clear();

    // First layer straight off the raw input; non-finite values cannot be
    // zero, so checking the nonzeros covers the whole input.
    {
        let layer = &params.layers[0];
        let cols = layer.weight.cols;
        let y = &mut cache.acts[0];
        y.clear();
        y.extend_from_slice(&layer.bias);
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            if !xi.is_finite() {
                return Err(NnError::NonFiniteInput(i));
            }
            cache.input_nnz.push((i as u32, xi));
            let row = &layer.weight.data[i * cols..(i + 1) * cols];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        finish_layer(y, n_layers == 1, out_act);
    }

    for l in 1..n_layers {
        let layer = &params.layers[l];
        let cols = layer.weight.cols;
        let (before, after) = cache.acts.split_at_mut(l);
        let x = before[l - 1].as_slice();
        let y = &mut after[0];
        y.clear();
        y.extend_from_slice(&layer.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &layer.weight.data[i * cols..(i + 1) * cols];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        finish_layer(y, l + 1 == n_layers, out_act);
    }
    Ok(())
}

#[inline]
fn finish_layer(y: &mut [f64], last: bool, out_act: OutputActivation) {
    if !last {
        for v in y.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    } else if out_act == OutputActivation::Softmax {
        softmax_in_place(y);
    }
}

/// Max-subtracted softmax; normalised to sum exactly to the computed total.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Policy forward pass: ReLU hidden layers, softmax output.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
    let mut cache = ForwardCache::new();
    forward_impl(params, input, &mut cache, OutputActivation::Softmax)?;
    Ok((cache.output().to_vec(), cache))
}

/// Policy forward pass reusing an existing cache; output via `cache.output()`.
pub fn forward_into(
    params: &MlpParams,
    input: &[f64],
    cache: &mut ForwardCache,
) -> Result<(), NnError> {
    forward_impl(params, input, cache, OutputActivation::Softmax)
}

/// Forward pass with a linear output layer (parameter-generating networks).
pub fn forward_linear_into(
    params: &MlpParams,
    input: &[f64],
    cache: &mut ForwardCache,
) -> Result<(), NnError> {
    forward_impl(params, input, cache, OutputActivation::Identity)
}

/// Gradient of `log probs[action]` with respect to all parameters, in the
/// canonical flat ordering.
pub fn backward_logprob(
    params: &MlpParams,
    cache: &ForwardCache,
    action: usize,
) -> Result<FlatGradient, NnError> {
    let layout = Arc::new(ParamLayout::of_mlp("", params));
    let mut grad = FlatGradient::zeros(layout);
    let mut scratch = cache.clone();
    accumulate_logprob_gradient(params, &mut scratch, action, 1.0, &mut grad.values)?;
    Ok(grad)
}

/// Accumulate `weight * d log probs[action] / d theta` into `out`.
///
/// `cache` must hold the forward pass of these `params`; its scratch buffers
/// are reused, the recorded activations are not modified.
pub fn accumulate_logprob_gradient(
    params: &MlpParams,
    cache: &mut ForwardCache,
    action: usize,
    weight: f64,
    out: &mut [f64],
) -> Result<(), NnError> {
    let n_out = params.output_dim();
    if action >= n_out {
        return Err(NnError::ActionOutOfRange {
            action,
            n_actions: n_out,
        });
    }
    if out.len() != params.param_count() {
        return Err(NnError::MisalignedGradient {
            got: out.len(),
            expected: params.param_count(),
        });
    }
    // d log p[a] / d logits = onehot(a) - probs.
    let probs = cache.acts.last().unwrap();
    cache.delta.clear();
    cache.delta.extend(probs.iter().map(|&p| -weight * p));
    cache.delta[action] += weight;
    backprop_accumulate(params, cache, out, None);
    Ok(())
}

/// Accumulate gradients of a linear-output network given `weight * out_err`
/// as the gradient at the output. Optionally also accumulates the gradient
/// with respect to the input vector (used for trainable embeddings).
pub fn accumulate_linear_gradient(
    params: &MlpParams,
    cache: &mut ForwardCache,
    out_err: &[f64],
    weight: f64,
    out: &mut [f64],
    input_grad: Option<&mut [f64]>,
) -> Result<(), NnError> {
    if out_err.len() != params.output_dim() {
        return Err(NnError::InputDimMismatch {
            got: out_err.len(),
            expected: params.output_dim(),
        });
    }
    if out.len() != params.param_count() {
        return Err(NnError::MisalignedGradient {
            got: out.len(),
            expected: params.param_count(),
        });
    }
    cache.delta.clear();
    cache.delta.extend(out_err.iter().map(|&e| weight * e));
    backprop_accumulate(params, cache, out, input_grad);
    Ok(())
}

/// Shared reverse pass. `cache.delta` holds the gradient at the final
/// pre-activation (softmax and log-likelihood already folded in by callers).
fn backprop_accumulate(
    params: &MlpParams,
    cache: &mut ForwardCache,
    out: &mut [f64],
    input_grad: Option<&mut [f64]>,
) {
    // Segment offsets in the canonical flat ordering.
    let n_layers = params.layers.len();
    let mut offsets = Vec::with_capacity(n_layers);
    let mut cursor = 0;
    for layer in &params.layers {
        offsets.push(cursor);
        cursor += layer.param_count();
    }

    let mut delta = std::mem::take(&mut cache.delta);
    let mut delta_prev = std::mem::take(&mut cache.delta_prev);

    for l in (1..n_layers).rev() {
        let layer = &params.layers[l];
        let x = cache.acts[l - 1].as_slice();
        let cols = layer.weight.cols;
        let w_off = offsets[l];
        let b_off = w_off + layer.weight.data.len();

        for (bj, &dj) in out[b_off..b_off + cols].iter_mut().zip(&delta) {
            *bj += dj;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut out[w_off + i * cols..w_off + (i + 1) * cols];
            for (wij, &dj) in row.iter_mut().zip(&delta) {
                *wij += xi * dj;
            }
        }

        // x is a ReLU output, so x > 0 is exactly the active mask
        // (subgradient 0 at the kink).
        delta_prev.clear();
        delta_prev.resize(x.len(), 0.0);
        for (i, dp) in delta_prev.iter_mut().enumerate() {
            if x[i] <= 0.0 {
                continue;
            }
            let row = &layer.weight.data[i * cols..(i + 1) * cols];
            let mut acc = 0.0;
            for (&wij, &dj) in row.iter().zip(&delta) {
                acc += wij * dj;
            }
            *dp = acc;
        }
        std::mem::swap(&mut delta, &mut delta_prev);
    }

    // First layer: weight gradients only over the input's nonzeros.
    {
        let layer = &params.layers[0];
        let cols = layer.weight.cols;
        let w_off = offsets[0];
        let b_off = w_off + layer.weight.data.len();
        for (bj, &dj) in out[b_off..b_off + cols].iter_mut().zip(&delta) {
            *bj += dj;
        }
        for &(i, xi) in &cache.input_nnz {
            let i = i as usize;
            let row = &mut out[w_off + i * cols..w_off + (i + 1) * cols];
            for (wij, &dj) in row.iter_mut().zip(&delta) {
                *wij += xi * dj;
            }
        }
        if let Some(ig) = input_grad {
            debug_assert_eq!(ig.len(), cache.input_len);
            // No activation below the first layer: propagate unmasked.
            for (i, g) in ig.iter_mut().enumerate() {
                let row = &layer.weight.data[i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for (&wij, &dj) in row.iter().zip(&delta) {
                    acc += wij * dj;
                }
                *g += acc;
            }
        }
    }

    cache.delta = delta;
    cache.delta_prev = delta_prev;
}

/// `theta <- theta - lr * grad`, elementwise over the canonical ordering.
pub fn sgd_step(params: &mut MlpParams, grad: &FlatGradient, lr: f64) -> Result<(), NnError> {
    if grad.values.len() != params.param_count() {
        return Err(NnError::MisalignedGradient {
            got: grad.values.len(),
            expected: params.param_count(),
        });
    }
    params.add_scaled(&grad.values, -lr)
}

/// Draw a standard normal via Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// (Semi-)orthogonal matrix scaled by `gain`: the Gram matrix over the
/// smaller dimension equals `gain^2 * I`.
pub fn orthogonal_init<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor2 {
    assert!(rows >= 1 && cols >= 1);
    if rows <= cols {
        let basis = orthonormal_rows(rows, cols, rng);
        let mut t = Tensor2::from_rows(basis);
        for v in &mut t.data {
            *v *= gain;
        }
        t
    } else {
        let basis = orthonormal_rows(cols, rows, rng);
        let mut t = Tensor2::zeros(rows, cols);
        for (j, row) in basis.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                t.data[i * cols + j] = gain * v;
            }
        }
        t
    }
}

/// `m` orthonormal vectors of dimension `dim` (m <= dim), built by modified
/// Gram-Schmidt with a second pass for numerical cleanliness.
fn orthonormal_rows<R: Rng + ?Sized>(m: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(m <= dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // essentially impossible; resample
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    basis
}

/// Entries i.i.d. uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` with
/// `fan_in = rows` (the input dimension).
pub fn fan_in_uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    let bound = 1.0 / (rows as f64).sqrt();
    let mut t = Tensor2::zeros(rows, cols);
    for v in &mut t.data {
        *v = (2.0 * rng.random::<f64>() - 1.0) * bound;
    }
    t
}

/// Uniform fan-in entries for a bias vector of the same layer.
pub fn fan_in_uniform_bias<R: Rng + ?Sized>(fan_in: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
        .collect()
}

/// Sample an index with probability `probs[i]`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, NnError> {
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if p < 0.0 || !p.is_finite() {
            return Err(NnError::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(NnError::InvalidDistribution(format!("sums to {sum}")));
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last_nonzero)
}
