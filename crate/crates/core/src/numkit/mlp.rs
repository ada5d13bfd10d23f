//! Fully connected network with hand-written backward pass.
//!
//! Weights are stored row-major as `[out, in]` so each output unit is one
//! contiguous dot product. Layer `l` owns the segments `{prefix}{l}.weight`
//! and `{prefix}{l}.bias`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Rows per work item in the batched paths. Fixed so that reduction order does
/// not depend on the number of worker threads.
const BATCH_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputTransform {
    Identity,
    /// `shift + softplus(z)`, strictly above `shift`.
    SoftplusShifted { shift: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

impl MlpSpec {
    /// Two hidden ReLU layers of width 64 and a positive scalar output above `beta_min`.
    pub fn uncertainty_head(in_dim: usize, beta_min: f64) -> Self {
        Self {
            in_dim,
            hidden: vec![64, 64],
            out_dim: 1,
            activation: Activation::Relu,
            output_transform: OutputTransform::SoftplusShifted { shift: beta_min },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("mlp in_dim and out_dim must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("mlp hidden widths must be >= 1".into()));
        }
        if let OutputTransform::SoftplusShifted { shift } = self.output_transform {
            if !shift.is_finite() || shift < 0.0 {
                return Err(Error::Config(format!("softplus shift must be finite and >= 0, got {shift}")));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.in_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.out_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Activations recorded by a single-sample forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// Input to each linear layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each linear layer.
    pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Activations recorded by a batched forward pass, one block per chunk.
#[derive(Clone, Debug, Default)]
pub struct MlpBatchCache {
    chunks: Vec<ChunkCache>,
    rows: usize,
}

#[derive(Clone, Debug)]
struct ChunkCache {
    rows: usize,
    /// Row-major `rows x fan_in` per layer.
    inputs: Vec<Vec<f64>>,
    /// Row-major `rows x fan_out` pre-activations of the last layer.
    out_pre: Vec<f64>,
}

impl MlpBatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// A network bound to the segment layout of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerOffsets>,
    n_params: usize,
}

impl Mlp {
    /// Registers this network's segments in `store` and initialises them
    /// uniformly in `±1/sqrt(fan_in)`.
    pub fn build<R: Rng>(spec: MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = store.add_segment(&format!("{prefix}{l}.weight"), &[fan_out, fan_in])?;
            let b = store.add_segment(&format!("{prefix}{l}.bias"), &[fan_out])?;
            let values = store.values_mut();
            for v in &mut values[w] {
                *v = rng.gen_range(-bound..bound);
            }
            for v in &mut values[b] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Self::attach(spec, store, prefix)
    }

    /// Binds to segments already present in `store`.
    pub fn attach(spec: MlpSpec, store: &ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let wname = format!("{prefix}{l}.weight");
            let bname = format!("{prefix}{l}.bias");
            let w = store.segment(&wname).ok_or_else(|| Error::Segment {
                name: wname.clone(),
                message: "missing for mlp layout".into(),
            })?;
            let b = store.segment(&bname).ok_or_else(|| Error::Segment {
                name: bname.clone(),
                message: "missing for mlp layout".into(),
            })?;
            if w.shape != [fan_out, fan_in] || b.shape != [fan_out] {
                return Err(Error::Segment {
                    name: wname,
                    message: format!("expected weight [{fan_out}, {fan_in}] and bias [{fan_out}]"),
                });
            }
            layers.push(LayerOffsets {
                weight: w.offset,
                bias: b.offset,
                fan_in,
                fan_out,
            });
        }
        Ok(Self {
            spec,
            layers,
            n_params: store.len(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn check_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, network was bound to {}",
                values.len(),
                self.n_params
            )));
        }
        Ok(())
    }

    fn apply_output(&self, pre: f64) -> f64 {
        match self.spec.output_transform {
            OutputTransform::Identity => pre,
            OutputTransform::SoftplusShifted { shift } => shift + softplus(pre),
        }
    }

    fn output_derivative(&self, pre: f64) -> f64 {
        match self.spec.output_transform {
            OutputTransform::Identity => 1.0,
            OutputTransform::SoftplusShifted { .. } => sigmoid(pre),
        }
    }

    pub fn forward(&self, values: &[f64], x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_values(values)?;
        if x.len() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "mlp input has length {}, expected {}",
                x.len(),
                self.spec.in_dim
            )));
        }
        let mut cache = MlpCache::default();
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.fan_out];
            linear(values, layer, &h, &mut z);
            cache.inputs.push(h);
            h = if l == last {
                z.iter().map(|&v| self.apply_output(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, values: &[f64], cache: &MlpCache, dy: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        self.check_values(values)?;
        if grads.len() != self.n_params {
            return Err(Error::Dimension("gradient buffer does not match parameter count".into()));
        }
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::InvalidInput("mlp backward called without a matching forward cache".into()));
        }
        if dy.len() != self.spec.out_dim {
            return Err(Error::Dimension(format!(
                "upstream gradient has length {}, expected {}",
                dy.len(),
                self.spec.out_dim
            )));
        }
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = dy
            .iter()
            .zip(&cache.pre[last])
            .map(|(&g, &z)| g * self.output_derivative(z))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let mut dx = vec![0.0; layer.fan_in];
            linear_backward(values, layer, input, &delta, grads, &mut dx);
            if l > 0 {
                for (d, &z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Forward pass over `rows` inputs stored row-major in `xs`.
    pub fn forward_batch(&self, values: &[f64], xs: &[f64]) -> Result<(Vec<f64>, MlpBatchCache)> {
        self.check_values(values)?;
        let d = self.spec.in_dim;
        if !xs.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!(
                "batch input length {} is not a multiple of in_dim {d}",
                xs.len()
            )));
        }
        let rows = xs.len() / d;
        let chunks: Vec<ChunkCache> = xs
            .par_chunks(BATCH_CHUNK * d)
            .map(|chunk| self.forward_chunk(values, chunk))
            .collect();
        let mut out = Vec::with_capacity(rows * self.spec.out_dim);
        for c in &chunks {
            out.extend(c.out_pre.iter().map(|&z| self.apply_output(z)));
        }
        Ok((out, MlpBatchCache { chunks, rows }))
    }

    fn forward_chunk(&self, values: &[f64], xs: &[f64]) -> ChunkCache {
        let rows = xs.len() / self.spec.in_dim;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = xs.to_vec();
        let last = self.layers.len() - 1;
        let mut out_pre = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; rows * layer.fan_out];
            for r in 0..rows {
                linear(
                    values,
                    layer,
                    &h[r * layer.fan_in..(r + 1) * layer.fan_in],
                    &mut z[r * layer.fan_out..(r + 1) * layer.fan_out],
                );
            }
            inputs.push(h);
            if l == last {
                out_pre = z;
                h = Vec::new();
            } else {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                h = z;
            }
        }
        ChunkCache { rows, inputs, out_pre }
    }

    /// Backward pass for a batch; returns the summed parameter gradient.
    ///
    /// Chunks are reduced in index order, so the result is bit-identical for
    /// any thread count.
    pub fn backward_batch(&self, values: &[f64], cache: &MlpBatchCache, dys: &[f64]) -> Result<Vec<f64>> {
        self.check_values(values)?;
        if dys.len() != cache.rows * self.spec.out_dim {
            return Err(Error::Dimension(format!(
                "upstream gradient has {} entries, batch has {} rows",
                dys.len(),
                cache.rows
            )));
        }
        let out_dim = self.spec.out_dim;
        let mut starts = Vec::with_capacity(cache.chunks.len());
        let mut acc = 0;
        for c in &cache.chunks {
            starts.push(acc);
            acc += c.rows;
        }
        let partials: Vec<Vec<f64>> = cache
            .chunks
            .par_iter()
            .zip(starts.par_iter())
            .map(|(chunk, &start)| {
                let dy = &dys[start * out_dim..(start + chunk.rows) * out_dim];
                self.backward_chunk(values, chunk, dy)
            })
            .collect();
        let mut grads = vec![0.0; self.n_params];
        for p in partials {
            for (g, v) in grads.iter_mut().zip(&p) {
                *g += v;
            }
        }
        Ok(grads)
    }

    fn backward_chunk(&self, values: &[f64], chunk: &ChunkCache, dy: &[f64]) -> Vec<f64> {
        let mut grads = vec![0.0; self.n_params];
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = dy
            .iter()
            .zip(&chunk.out_pre)
            .map(|(&g, &z)| g * self.output_derivative(z))
            .collect();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let input = &chunk.inputs[l];
            let mut dx = vec![0.0; chunk.rows * layer.fan_in];
            for r in 0..chunk.rows {
                let d = &delta[r * layer.fan_out..(r + 1) * layer.fan_out];
                if d.iter().all(|&v| v == 0.0) {
                    continue;
                }
                linear_backward(
                    values,
                    layer,
                    &input[r * layer.fan_in..(r + 1) * layer.fan_in],
                    d,
                    &mut grads,
                    &mut dx[r * layer.fan_in..(r + 1) * layer.fan_in],
                );
            }
            if l > 0 {
                // The input of layer l is relu(pre_{l-1}); zero where it was clamped.
                for (d, &a) in dx.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        grads
    }
}

fn linear(values: &[f64], layer: &LayerOffsets, x: &[f64], z: &mut [f64]) {
    let w = &values[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
    let b = &values[layer.bias..layer.bias + layer.fan_out];
    for (o, zo) in z.iter_mut().enumerate() {
        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
        *zo = b[o] + dot(row, x);
    }
}

fn linear_backward(
    values: &[f64],
    layer: &LayerOffsets,
    x: &[f64],
    delta: &[f64],
    grads: &mut [f64],
    dx: &mut [f64],
) {
    let n_w = layer.fan_in * layer.fan_out;
    let w = &values[layer.weight..layer.weight + n_w];
    for (o, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grads[layer.bias + o] += d;
        let row = o * layer.fan_in;
        let gw = &mut grads[layer.weight + row..layer.weight + row + layer.fan_in];
        for (g, &xi) in gw.iter_mut().zip(x) {
            *g += d * xi;
        }
        for (dxi, &wi) in dx.iter_mut().zip(&w[row..row + layer.fan_in]) {
            *dxi += d * wi;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let n4 = a.len() / 4 * 4;
    for i in (0..n4).step_by(4) {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in n4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Single-sample forward through the network stored in `params`.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamStore, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    let mlp = Mlp::attach(spec.clone(), params, "")?;
    mlp.forward(params.values(), x)
}

/// Single-sample backward; parameter gradients are added to `params.grads`.
pub fn mlp_backward(spec: &MlpSpec, params: &mut ParamStore, cache: &MlpCache, dy: &[f64]) -> Result<Vec<f64>> {
    let mlp = Mlp::attach(spec.clone(), params, "")?;
    let (values, grads) = params.split_mut();
    mlp.backward(values, cache, dy, grads)
}
