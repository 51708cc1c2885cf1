//! Dense feedforward networks.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Uniform};

use super::tape::{self, GradientTape, Gradients, NodeId};
use crate::error::{invalid, shape};
use crate::{rng, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Lower bound added to every softplus head.
pub const SOFTPLUS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    LeakyRelu,
    Elu,
    /// Softplus plus [`SOFTPLUS_FLOOR`]; strictly positive.
    Softplus,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::LeakyRelu => "leaky-relu",
            Activation::Elu => "elu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "linear" => Activation::Linear,
            "leaky-relu" => Activation::LeakyRelu,
            "elu" => Activation::Elu,
            "softplus" => Activation::Softplus,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => tape::leaky_relu(x, LEAKY_SLOPE),
            Activation::Elu => tape::elu(x),
            Activation::Softplus => tape::softplus(x) + SOFTPLUS_FLOOR,
        }
    }

    fn apply_taped(self, t: &mut GradientTape, x: NodeId) -> NodeId {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => t.leaky_relu(x, LEAKY_SLOPE),
            Activation::Elu => t.elu(x),
            Activation::Softplus => {
                let sp = t.softplus(x);
                t.add_scalar(sp, SOFTPLUS_FLOOR)
            }
        }
    }
}

/// A contiguous block of output columns with its own activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputHead {
    pub width: usize,
    pub activation: Activation,
}

impl OutputHead {
    pub fn linear(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Linear,
        }
    }

    pub fn softplus(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Softplus,
        }
    }
}

/// Weights and biases of one MLP.
///
/// `weights[l]` is `layer_sizes[l + 1] × layer_sizes[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub hidden_activation: Activation,
    pub heads: Vec<OutputHead>,
}

/// Tape handles for a network's parameters.
#[derive(Clone, Debug)]
pub struct NetworkVars {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

impl NetworkVars {
    /// Flattened gradient in the same order as [`NetworkParams::to_flat`].
    pub fn flat_gradient(&self, grads: &Gradients, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            grads.extend_flat(*w, out);
            grads.extend_flat(*b, out);
        }
    }
}

/// Initialize a network with weights uniform in ±√(6/(fan_in+fan_out)) and
/// zero biases. An empty `heads` means a single linear head.
pub fn mlp_init(
    layer_sizes: &[usize],
    hidden_activation: Activation,
    heads: &[OutputHead],
    seed: u64,
) -> Result<NetworkParams> {
    if layer_sizes.len() < 2 {
        return Err(invalid("a network needs at least input and output sizes"));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(invalid(format!("non-positive layer size in {layer_sizes:?}")));
    }
    let out = *layer_sizes.last().unwrap();
    let heads = if heads.is_empty() {
        vec![OutputHead::linear(out)]
    } else {
        heads.to_vec()
    };
    let head_total: usize = heads.iter().map(|h| h.width).sum();
    if head_total != out || heads.iter().any(|h| h.width == 0) {
        return Err(invalid(format!(
            "output heads cover {head_total} columns but the output layer has {out}"
        )));
    }

    let mut rng = rng::from_seed(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(&mut rng));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(NetworkParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        hidden_activation,
        heads,
    })
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Check internal consistency: shapes follow `layer_sizes`, heads cover
    /// the output, and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.weights.len() != self.layer_sizes.len() - 1 {
            return Err(shape("layer count does not match layer_sizes"));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let expect = (self.layer_sizes[l + 1], self.layer_sizes[l]);
            if w.dim() != expect || b.len() != expect.0 {
                return Err(shape(format!(
                    "layer {l}: weight {:?} / bias {} but expected {expect:?}",
                    w.dim(),
                    b.len()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer {l} holds a non-finite parameter")));
            }
        }
        let head_total: usize = self.heads.iter().map(|h| h.width).sum();
        if head_total != self.output_dim() {
            return Err(shape("output heads do not cover the output layer"));
        }
        Ok(())
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite network input"));
        }
        Ok(())
    }

    /// Forward pass without recording; returns one matrix per output head.
    pub fn forward_heads(&self, input: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&input)?;
        let last = self.num_layers() - 1;
        let mut h = input.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            if l < last {
                let act = self.hidden_activation;
                z.mapv_inplace(|x| act.apply(x));
            }
            h = z;
        }
        let mut out = Vec::with_capacity(self.heads.len());
        let mut offset = 0;
        for head in &self.heads {
            let act = head.activation;
            let block = h
                .slice(s![.., offset..offset + head.width])
                .mapv(|x| act.apply(x));
            out.push(block);
            offset += head.width;
        }
        Ok(out)
    }

    /// Forward pass; heads are concatenated back into one `n × d_out` matrix.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let heads = self.forward_heads(input)?;
        let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
        Ok(ndarray::concatenate(Axis(1), &views).expect("heads share row count"))
    }

    /// Put the parameters on `tape` as variables.
    pub fn register(&self, tape: &mut GradientTape) -> NetworkVars {
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(tape.variable(w.clone()));
            biases.push(tape.variable(b.clone().insert_axis(Axis(0))));
        }
        NetworkVars { weights, biases }
    }

    /// Recorded forward pass; returns one node per output head.
    pub fn forward_taped(
        &self,
        tape: &mut GradientTape,
        vars: &NetworkVars,
        input: NodeId,
    ) -> Result<Vec<NodeId>> {
        let (_, cols) = tape.shape(input);
        if cols != self.input_dim() {
            return Err(shape(format!(
                "network expects {} input columns, got {cols}",
                self.input_dim()
            )));
        }
        if tape.value(input).iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite network input"));
        }
        let last = self.num_layers() - 1;
        let mut h = input;
        for l in 0..self.num_layers() {
            let z = tape.matmul_t(h, vars.weights[l]);
            let z = tape.add_row(z, vars.biases[l]);
            h = if l < last {
                self.hidden_activation.apply_taped(tape, z)
            } else {
                z
            };
        }
        let mut out = Vec::with_capacity(self.heads.len());
        let mut offset = 0;
        for head in &self.heads {
            let block = if self.heads.len() == 1 {
                h
            } else {
                tape.slice_cols(h, offset, head.width)
            };
            out.push(head.activation.apply_taped(tape, block));
            offset += head.width;
        }
        Ok(out)
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.extend_flat(&mut out);
        out
    }

    pub fn extend_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
    }

    /// Overwrite parameters from a flat slice; returns the number consumed.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(shape(format!(
                "need {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(pos)
    }
}

/// Central finite-difference gradient, `(f(θ+h) − f(θ−h)) / 2h` per
/// coordinate. Non-finite losses propagate into the result.
pub fn finite_diff_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let up = loss(&theta);
        theta[i] = orig - step;
        let down = loss(&theta);
        theta[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}
