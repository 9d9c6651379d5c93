//! Fully-connected autoencoder with hand-written backpropagation.
//!
//! The encoder maps `d → h₁ → … → p` and the decoder mirrors it back,
//! `p → … → h₁ → d`. Hidden layers use the configured activation; the latent
//! layer and the reconstruction layer are linear.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::optim::{Optimizer, StageConfig};
#[cfg(test)]
use crate::optim::OptimizerKind;
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Layer widths of the encoder; the decoder is its mirror image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    input_dim: usize,
    encoder_sizes: Vec<usize>,
    activation: Activation,
    allow_overcomplete: bool,
}

impl Architecture {
    /// Bottleneck architecture: the latent width must be smaller than the input.
    pub fn new(input_dim: usize, encoder_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::build(input_dim, encoder_sizes, activation, false)
    }

    /// Same as [`Architecture::new`] but accepts a latent at least as wide as
    /// the input. Some published winning configurations (e.g. a 16-wide
    /// latent on 9-feature data) need this.
    pub fn overcomplete(input_dim: usize, encoder_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::build(input_dim, encoder_sizes, activation, true)
    }

    fn build(input_dim: usize, encoder_sizes: Vec<usize>, activation: Activation, allow_overcomplete: bool) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if encoder_sizes.is_empty() || encoder_sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "encoder sizes {encoder_sizes:?} must be a nonempty list of positive widths"
            )));
        }
        let p = *encoder_sizes.last().expect("nonempty");
        if !allow_overcomplete && p >= input_dim {
            return Err(Error::invalid(format!(
                "latent dimension {p} must be smaller than input dimension {input_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            encoder_sizes,
            activation,
            allow_overcomplete,
        })
    }

    /// Parse `"64,32,16"` (parentheses and spaces tolerated).
    pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
        s.trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad layer width '{t}' in '{s}'")))
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_sizes.last().expect("validated nonempty")
    }

    pub fn encoder_sizes(&self) -> &[usize] {
        &self.encoder_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn allows_overcomplete(&self) -> bool {
        self.allow_overcomplete
    }

    /// Number of encoder layers; the decoder has the same count.
    pub fn depth(&self) -> usize {
        self.encoder_sizes.len()
    }

    /// `(fan_in, fan_out)` of every layer, encoder first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.encoder_sizes);
        widths.extend(self.encoder_sizes.iter().rev().skip(1));
        widths.push(self.input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        let last_encoder = self.depth() - 1;
        let last = 2 * self.depth() - 1;
        if layer == last_encoder || layer == last {
            Activation::Linear
        } else {
            self.activation
        }
    }
}

/// Weights (`fan_out × fan_in`) and bias of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    arch: Architecture,
    layers: Vec<Dense>,
}

/// Activations recorded during a forward pass, consumed by backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array1<f64>>,
    pre: Vec<Array1<f64>>,
    latent: Array1<f64>,
    output: Array1<f64>,
}

impl Trace {
    pub fn latent(&self) -> &Array1<f64> {
        &self.latent
    }

    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }
}

/// Glorot-uniform weights and zero biases, deterministic under `seed`.
pub fn init(arch: &Architecture, seed: u64) -> AutoencoderParams {
    let mut rng = seeded(seed);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    AutoencoderParams {
        arch: arch.clone(),
        layers,
    }
}

impl AutoencoderParams {
    /// Assemble from explicit layers; shapes must chain as the architecture says.
    pub fn from_layers(arch: Architecture, layers: Vec<Dense>) -> Result<Self> {
        let shapes = arch.layer_shapes();
        Error::check_dim(shapes.len(), layers.len())?;
        for ((fan_in, fan_out), l) in shapes.iter().zip(&layers) {
            if l.weights.dim() != (*fan_out, *fan_in) || l.bias.len() != *fan_out {
                return Err(Error::invalid(format!(
                    "layer shape {:?}/{} does not match ({fan_out}, {fan_in})",
                    l.weights.dim(),
                    l.bias.len()
                )));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.ncols(), l.weights.nrows()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn run(&self, x: ArrayView1<'_, f64>, from: usize, to: usize) -> Array1<f64> {
        let mut h = x.to_owned();
        for (i, l) in self.layers[from..to].iter().enumerate() {
            let act = self.arch.layer_activation(from + i);
            h = l.weights.dot(&h) + &l.bias;
            h.mapv_inplace(|v| act.apply(v));
        }
        h
    }

    /// Latent code `z = ψ(x)`.
    pub fn encode(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_dim(self.arch.input_dim, x.len())?;
        Ok(self.run(x, 0, self.arch.depth()))
    }

    /// Reconstruction `x̂ = θ(z)`.
    pub fn decode(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_dim(self.arch.latent_dim(), z.len())?;
        Ok(self.run(z, self.arch.depth(), self.layers.len()))
    }

    /// Forward pass keeping what backpropagation needs.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Trace> {
        Error::check_dim(self.arch.input_dim, x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let mut latent = None;
        for (i, l) in self.layers.iter().enumerate() {
            let act = self.arch.layer_activation(i);
            let a = l.weights.dot(&h) + &l.bias;
            inputs.push(h);
            h = a.mapv(|v| act.apply(v));
            pre.push(a);
            if i + 1 == self.arch.depth() {
                latent = Some(h.clone());
            }
        }
        Ok(Trace {
            inputs,
            pre,
            latent: latent.expect("depth >= 1"),
            output: h,
        })
    }

    /// Accumulate parameter gradients given `∂L/∂x̂` and an optional extra
    /// `∂L/∂z` arriving at the latent layer from downstream consumers.
    pub fn backward(
        &self,
        trace: &Trace,
        d_output: ArrayView1<'_, f64>,
        d_latent: Option<ArrayView1<'_, f64>>,
        grads: &mut Gradients,
    ) {
        let latent_layer = self.arch.depth() - 1;
        let mut delta = d_output.to_owned();
        for l in (0..self.layers.len()).rev() {
            if l == latent_layer {
                if let Some(dz) = d_latent {
                    delta += &dz;
                }
            }
            let act = self.arch.layer_activation(l);
            let dpre = &delta * &trace.pre[l].mapv(|v| act.derivative(v));
            let g = &mut grads.layers[l];
            let outer = dpre
                .view()
                .insert_axis(Axis(1))
                .dot(&trace.inputs[l].view().insert_axis(Axis(0)));
            g.weights += &outer;
            g.bias += &dpre;
            if l > 0 {
                delta = self.layers[l].weights.t().dot(&dpre);
            }
        }
    }
}

/// Parameter gradients with the same layout as [`AutoencoderParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights *= c;
            l.bias *= c;
        }
    }
}

/// Squared reconstruction error and cosine similarity of `(x, x̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionMeasures {
    pub euclid_err: f64,
    pub cos_sim: f64,
    /// Set when either vector has zero norm; `cos_sim` is then 0.
    pub degenerate: bool,
}

pub fn reconstruction_measures(x: ArrayView1<'_, f64>, x_hat: ArrayView1<'_, f64>) -> Result<ReconstructionMeasures> {
    Error::check_dim(x.len(), x_hat.len())?;
    let euclid_err = x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let nx = x.dot(&x).sqrt();
    let nh = x_hat.dot(&x_hat).sqrt();
    if nx == 0.0 || nh == 0.0 {
        return Ok(ReconstructionMeasures {
            euclid_err,
            cos_sim: 0.0,
            degenerate: true,
        });
    }
    let cos_sim = (x.dot(&x_hat) / (nx * nh)).clamp(-1.0, 1.0);
    Ok(ReconstructionMeasures {
        euclid_err,
        cos_sim,
        degenerate: false,
    })
}

/// Gradients of the two measures with respect to `x̂`:
/// `∂‖x−x̂‖²/∂x̂ = −2(x − x̂)` and
/// `∂cos/∂x̂ = x/(‖x‖‖x̂‖) − cos·x̂/‖x̂‖²` (zero when degenerate).
pub(crate) fn measure_gradients(x: ArrayView1<'_, f64>, x_hat: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let d_euclid = (&x_hat - &x) * 2.0;
    let nx = x.dot(&x).sqrt();
    let nh2 = x_hat.dot(&x_hat);
    let nh = nh2.sqrt();
    let d_cos = if nx == 0.0 || nh == 0.0 {
        Array1::zeros(x.len())
    } else {
        let c = x.dot(&x_hat) / (nx * nh);
        &x / (nx * nh) - &(&x_hat * (c / nh2))
    };
    (d_euclid, d_cos)
}

/// Latent code plus reconstruction measures: `o = [z, ‖x−x̂‖², cos(x, x̂)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLatent {
    pub z: Array1<f64>,
    pub euclid_err: f64,
    pub cos_sim: f64,
}

impl AugmentedLatent {
    pub fn len(&self) -> usize {
        self.z.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Array1<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(self.z.iter());
        v.push(self.euclid_err);
        v.push(self.cos_sim);
        Array1::from(v)
    }
}

pub fn augmented_output(params: &AutoencoderParams, x: ArrayView1<'_, f64>) -> Result<AugmentedLatent> {
    let trace = params.forward(x)?;
    let m = reconstruction_measures(x, trace.output.view())?;
    Ok(AugmentedLatent {
        z: trace.latent,
        euclid_err: m.euclid_err,
        cos_sim: m.cos_sim,
    })
}

/// Augmented latents of every row, stacked.
pub fn augmented_matrix(params: &AutoencoderParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    let m = params.architecture().latent_dim() + 2;
    let mut out = Array2::zeros((x.nrows(), m));
    for (i, row) in x.outer_iter().enumerate() {
        out.row_mut(i).assign(&augmented_output(params, row)?.to_vec());
    }
    Ok(out)
}

/// Mean of `‖x − x̂‖²` over the rows of `x`.
pub fn reconstruction_loss(params: &AutoencoderParams, x: &Array2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for row in x.outer_iter() {
        let t = params.forward(row)?;
        total += row.iter().zip(t.output.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / x.nrows().max(1) as f64)
}

/// Mean reconstruction loss over `rows` and its gradient.
pub fn reconstruction_loss_grad(params: &AutoencoderParams, x: &Array2<f64>, rows: &[usize]) -> Result<(f64, Gradients)> {
    let mut grads = params.zero_grads();
    let mut total = 0.0;
    for &i in rows {
        let xi = x.row(i);
        let t = params.forward(xi)?;
        let diff = &t.output - &xi;
        total += diff.dot(&diff);
        params.backward(&t, (&diff * 2.0).view(), None, &mut grads);
    }
    let n = rows.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: AutoencoderParams,
    /// Mean reconstruction loss over the whole set: entry 0 before training,
    /// then one entry per completed epoch.
    pub losses: Vec<f64>,
}

/// Train encoder and decoder alone on reconstruction error.
pub fn pretrain(params: &AutoencoderParams, x: &Array2<f64>, cfg: &StageConfig, seed: u64) -> Result<PretrainOutcome> {
    if x.nrows() == 0 {
        return Err(Error::invalid("pretraining needs at least one row"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut params = params.clone();
    let mut flat = params.to_flat();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, flat.len());
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut losses = vec![reconstruction_loss(&params, x)?];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = reconstruction_loss_grad(&params, x, batch)?;
            opt.step(&mut flat, &g.to_flat());
            params.set_flat(&flat);
        }
        let loss = reconstruction_loss(&params, x)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Numerical(format!(
                "autoencoder pretraining diverged at epoch {} (loss {loss})",
                epoch + 1
            )));
        }
        losses.push(loss);
        if cfg.converged(&losses) {
            break;
        }
    }
    Ok(PretrainOutcome { params, losses })
}
