use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Dense layer, `weights` row-major with `rows = out`, `cols = in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let w = &self.weights[r * self.cols..(r + 1) * self.cols];
                self.bias[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Architecture of the gating MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingArch {
    pub hidden_dims: Vec<usize>,
    /// Leaky-rectifier slope for negative inputs.
    pub negative_slope: f64,
    /// Feed `[x, h_1, .., h_L]` to the output layer instead of `h_L`.
    pub residual: bool,
}

impl Default for GatingArch {
    fn default() -> Self {
        Self { hidden_dims: vec![32, 32], negative_slope: 0.25, residual: true }
    }
}

/// Parameters θ of the gating network `g(x, θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    pub schema_version: u32,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub negative_slope: f64,
    pub residual: bool,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
}

/// Activations kept by the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer; empty when disabled.
    masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl GatingParams {
    fn shapes(input_dim: usize, hidden: &[usize], output_dim: usize, residual: bool) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            shapes.push((h, prev));
            prev = h;
        }
        let out_in = if residual { input_dim + hidden.iter().sum::<usize>() } else { prev };
        shapes.push((output_dim, out_in));
        shapes
    }

    pub fn zeros(input_dim: usize, output_dim: usize, arch: &GatingArch) -> Self {
        let layers = Self::shapes(input_dim, &arch.hidden_dims, output_dim, arch.residual)
            .into_iter()
            .map(|(r, c)| Layer::zeros(r, c))
            .collect();
        Self {
            schema_version: PARAMS_SCHEMA_VERSION,
            input_dim,
            hidden_dims: arch.hidden_dims.clone(),
            output_dim,
            negative_slope: arch.negative_slope,
            residual: arch.residual,
            layers,
        }
    }

    /// He-scaled Gaussian hidden weights; the output layer starts small so the
    /// initial gate is close to uniform.
    pub fn init(input_dim: usize, output_dim: usize, arch: &GatingArch, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(input_dim, output_dim, arch);
        let last = p.layers.len() - 1;
        for (i, layer) in p.layers.iter_mut().enumerate() {
            let std = if i == last { 0.1 / (layer.cols as f64).sqrt() } else { (2.0 / layer.cols as f64).sqrt() };
            for w in &mut layer.weights {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        }
        p
    }

    pub fn arch(&self) -> GatingArch {
        GatingArch { hidden_dims: self.hidden_dims.clone(), negative_slope: self.negative_slope, residual: self.residual }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(Error::Schema { found: self.schema_version, expected: PARAMS_SCHEMA_VERSION });
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("gating layer widths must be positive"));
        }
        let shapes = Self::shapes(self.input_dim, &self.hidden_dims, self.output_dim, self.residual);
        if shapes.len() != self.layers.len() {
            return Err(Error::invalid(format!("expected {} layers, found {}", shapes.len(), self.layers.len())));
        }
        for (i, ((r, c), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.rows != *r || l.cols != *c || l.weights.len() != r * c || l.bias.len() != *r {
                return Err(Error::invalid(format!("layer {i} does not have shape {r}x{c}")));
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite entries")));
            }
        }
        if !self.negative_slope.is_finite() {
            return Err(Error::invalid("negative slope must be finite"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension { expected: self.n_params(), got: flat.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.negative_slope * z
        }
    }

    fn leaky_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.negative_slope
        }
    }

    /// Raw scores `g(x, θ)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, None)?.output)
    }

    /// Forward pass keeping activations. With `dropout = Some((p, rng))`
    /// hidden activations are zeroed with probability `p` and rescaled.
    pub fn forward_cached(&self, x: &[f64], dropout: Option<(f64, &mut SimRng)>) -> Result<ForwardCache> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: x.len() });
        }
        let n_hidden = self.hidden_dims.len();
        let mut pre = Vec::with_capacity(n_hidden);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut masks = Vec::new();
        let mut dropout = dropout.filter(|(p, _)| *p > 0.0);
        for layer in &self.layers[..n_hidden] {
            let input = post.last().map(|v| v.as_slice()).unwrap_or(x);
            let z = layer.apply(input);
            let mut h: Vec<f64> = z.iter().map(|&v| self.leaky(v)).collect();
            if let Some((p, rng)) = dropout.as_mut() {
                let keep = 1.0 - *p;
                let m: Vec<f64> = h.iter().map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                for (a, b) in h.iter_mut().zip(&m) {
                    *a *= b;
                }
                masks.push(m);
            }
            pre.push(z);
            post.push(h);
        }
        let head_in = self.head_input(x, &post);
        let output = self.layers[n_hidden].apply(&head_in);
        Ok(ForwardCache { input: x.to_vec(), pre, post, masks, output })
    }

    fn head_input(&self, x: &[f64], post: &[Vec<f64>]) -> Vec<f64> {
        if self.residual {
            let mut v = x.to_vec();
            for h in post {
                v.extend_from_slice(h);
            }
            v
        } else {
            post.last().cloned().unwrap_or_else(|| x.to_vec())
        }
    }

    /// Accumulates `dL/dθ` into `grad` (flattened layout) given `dL/d(raw)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        let n_hidden = self.hidden_dims.len();
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.weights.len() + l.bias.len();
                Some(o)
            })
            .collect();

        let head = &self.layers[n_hidden];
        let head_in = self.head_input(&cache.input, &cache.post);
        let d_head_in = accumulate_layer(head, &head_in, d_out, &mut grad[offsets[n_hidden]..]);

        // Split the head-input gradient back over its sources.
        let mut d_post: Vec<Vec<f64>> = cache.post.iter().map(|h| vec![0.0; h.len()]).collect();
        if self.residual {
            let mut at = cache.input.len();
            for (l, d) in d_post.iter_mut().enumerate() {
                let w = self.hidden_dims[l];
                d.copy_from_slice(&d_head_in[at..at + w]);
                at += w;
            }
        } else if n_hidden > 0 {
            d_post[n_hidden - 1].copy_from_slice(&d_head_in);
        }

        for l in (0..n_hidden).rev() {
            let mut dz = d_post[l].clone();
            if let Some(m) = cache.masks.get(l) {
                for (a, b) in dz.iter_mut().zip(m) {
                    *a *= b;
                }
            }
            for (a, &z) in dz.iter_mut().zip(&cache.pre[l]) {
                *a *= self.leaky_grad(z);
            }
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let d_in = accumulate_layer(&self.layers[l], input, &dz, &mut grad[offsets[l]..]);
            if l > 0 {
                for (a, b) in d_post[l - 1].iter_mut().zip(&d_in) {
                    *a += b;
                }
            }
        }
    }
}

/// Adds the weight/bias gradient of `layer` to `grad` and returns `dL/d(input)`.
fn accumulate_layer(layer: &Layer, input: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let (rows, cols) = (layer.rows, layer.cols);
    let mut d_in = vec![0.0; cols];
    for r in 0..rows {
        let g = d_out[r];
        if g == 0.0 {
            continue;
        }
        let w = &layer.weights[r * cols..(r + 1) * cols];
        let gw = &mut grad[r * cols..(r + 1) * cols];
        for c in 0..cols {
            gw[c] += g * input[c];
            d_in[c] += g * w[c];
        }
        grad[rows * cols + r] += g;
    }
    d_in
}
