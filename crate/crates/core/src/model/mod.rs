//! The iVAEar model: encoder, decoder and auxiliary network with an
//! autoregressive Gaussian prior.
//!
//! The encoder maps `(x, u)` to the posterior mean and scale of `z`, the
//! decoder maps `z` back to `x`, and the auxiliary network maps `u` to the
//! prior mean and scale plus `W` blocks of AR coefficients. The prior mean at
//! time `t` is
//!
//! ```text
//! μ* = μ_u(u_t) + Σ_r γ_r(u_t) ⊙ (μ_q(x_{t−r}, u_{t−r}) − μ_u(u_{t−r}))
//! ```
//!
//! With `W = 0` the model is a plain identifiable VAE.

mod checkpoint;
mod elbo;
mod sweep;
mod train;

pub use checkpoint::{checkpoint_load, checkpoint_save, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use elbo::{gaussian_kl, mc_kl, ElboBreakdown, LaggedBatch};
pub use sweep::{dimension_sweep, knee_index, SweepResult};
pub use train::{extract_latents, fit, train, FitOutcome, TrainingConfig};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::auxdata::{AuxiliaryEncoder, Standardizer};
use crate::error::{invalid, shape};
use crate::neuralnet::{mlp_init, Activation, NetworkParams, OutputHead};
use crate::rng::{self, Rng};
use crate::Result;

/// Hidden layer layout shared by the three networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub aux_hidden_units: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            hidden_units: 128,
            aux_hidden_units: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IVaeArModel {
    pub encoder: NetworkParams,
    pub decoder: NetworkParams,
    pub auxnet: NetworkParams,
    pub observed_dim: usize,
    pub latent_dim: usize,
    pub ar_order: usize,
    pub aux_dim: usize,
    /// Variance of the Gaussian reconstruction likelihood.
    pub beta: f64,
    /// Applied to observations before they enter the networks; the decoder
    /// works in the standardized space.
    pub x_standardizer: Standardizer,
    /// Auxiliary construction the model was trained with, if any.
    pub aux_encoder: Option<AuxiliaryEncoder>,
    /// Last time point of the training data.
    pub trained_until: Option<i64>,
}

/// Auxiliary network outputs for a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxOutputs {
    pub mean: Array2<f64>,
    pub scale: Array2<f64>,
    /// One `n × P` block per lag.
    pub gamma: Vec<Array2<f64>>,
}

fn layers(input: usize, hidden: usize, units: usize, output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend(std::iter::repeat_n(units, hidden));
    v.push(output);
    v
}

/// Initialize the three networks. `W = 0` gives the non-autoregressive
/// model whose prior mean is `μ_u(u_t)`.
pub fn model_init(
    observed_dim: usize,
    latent_dim: usize,
    ar_order: usize,
    aux_dim: usize,
    arch: Architecture,
    beta: f64,
    seed: u64,
) -> Result<IVaeArModel> {
    if observed_dim == 0 || latent_dim == 0 || aux_dim == 0 {
        return Err(invalid(format!(
            "dimensions must be positive (S={observed_dim}, P={latent_dim}, m={aux_dim})"
        )));
    }
    if arch.hidden_units == 0 || arch.aux_hidden_units == 0 {
        return Err(invalid("hidden layers need at least one unit"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("β must be positive, got {beta}")));
    }
    if latent_dim > observed_dim {
        log::warn!("latent dimension {latent_dim} exceeds observed dimension {observed_dim}");
    }
    let p = latent_dim;
    let encoder = mlp_init(
        &layers(observed_dim + aux_dim, arch.hidden_layers, arch.hidden_units, 2 * p),
        Activation::LeakyRelu,
        &[OutputHead::linear(p), OutputHead::softplus(p)],
        rng::derive_seed(seed, "init/encoder"),
    )?;
    let decoder = mlp_init(
        &layers(p, arch.hidden_layers, arch.hidden_units, observed_dim),
        Activation::LeakyRelu,
        &[OutputHead::linear(observed_dim)],
        rng::derive_seed(seed, "init/decoder"),
    )?;
    let mut heads = vec![OutputHead::linear(p), OutputHead::softplus(p)];
    if ar_order > 0 {
        heads.push(OutputHead::linear(ar_order * p));
    }
    let auxnet = mlp_init(
        &layers(aux_dim, arch.hidden_layers, arch.aux_hidden_units, (2 + ar_order) * p),
        Activation::LeakyRelu,
        &heads,
        rng::derive_seed(seed, "init/auxnet"),
    )?;
    Ok(IVaeArModel {
        encoder,
        decoder,
        auxnet,
        observed_dim,
        latent_dim,
        ar_order,
        aux_dim,
        beta,
        x_standardizer: Standardizer::identity(observed_dim),
        aux_encoder: None,
        trained_until: None,
    })
}

impl IVaeArModel {
    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params() + self.auxnet.num_params()
    }

    /// Encoder, decoder and auxiliary-network parameters, in that order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.encoder.extend_flat(&mut out);
        self.decoder.extend_flat(&mut out);
        self.auxnet.extend_flat(&mut out);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let a = self.encoder.assign_flat(flat)?;
        let b = self.decoder.assign_flat(&flat[a..])?;
        self.auxnet.assign_flat(&flat[a + b..])?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for net in [&self.encoder, &self.decoder, &self.auxnet] {
            net.validate()?;
        }
        let (s_dim, p, m, w) = (self.observed_dim, self.latent_dim, self.aux_dim, self.ar_order);
        if self.encoder.input_dim() != s_dim + m
            || self.encoder.output_dim() != 2 * p
            || self.decoder.input_dim() != p
            || self.decoder.output_dim() != s_dim
            || self.auxnet.input_dim() != m
            || self.auxnet.output_dim() != (2 + w) * p
        {
            return Err(shape("network shapes disagree with the model dimensions"));
        }
        if self.x_standardizer.dim() != s_dim {
            return Err(shape("observation standardizer has the wrong width"));
        }
        if let Some(enc) = &self.aux_encoder {
            if enc.dim() != m {
                return Err(shape("auxiliary encoder width differs from the model"));
            }
        }
        Ok(())
    }

    fn check_rows(&self, x: &ArrayView2<f64>, u: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.observed_dim || u.ncols() != self.aux_dim {
            return Err(shape(format!(
                "expected x with {} and u with {} columns, got {} and {}",
                self.observed_dim,
                self.aux_dim,
                x.ncols(),
                u.ncols()
            )));
        }
        if x.nrows() != u.nrows() {
            return Err(shape(format!("{} x rows but {} u rows", x.nrows(), u.nrows())));
        }
        Ok(())
    }

    /// Encoder input `[standardize(x), u]`.
    pub(crate) fn encoder_input(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(&x, &u)?;
        let xs = self.x_standardizer.apply(x)?;
        Ok(ndarray::concatenate(Axis(1), &[xs.view(), u]).expect("row counts checked"))
    }

    /// Posterior mean and scale for raw observations `x` and auxiliary rows
    /// `u`.
    pub fn encode(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let input = self.encoder_input(x, u)?;
        let mut heads = self.encoder.forward_heads(input.view())?.into_iter();
        Ok((heads.next().unwrap(), heads.next().unwrap()))
    }

    /// Decoder output mapped back to the raw observation scale.
    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let xs = self.decoder.forward(z)?;
        self.x_standardizer.invert(xs.view())
    }

    pub fn aux_outputs(&self, u: ArrayView2<f64>) -> Result<AuxOutputs> {
        let mut heads = self.auxnet.forward_heads(u)?.into_iter();
        let mean = heads.next().unwrap();
        let scale = heads.next().unwrap();
        let p = self.latent_dim;
        let gamma = match heads.next() {
            Some(g) => (0..self.ar_order)
                .map(|r| g.slice(s![.., r * p..(r + 1) * p]).to_owned())
                .collect(),
            None => Vec::new(),
        };
        Ok(AuxOutputs { mean, scale, gamma })
    }

    /// Prior mean `μ*` and scale at `u_t`, given the lagged observations and
    /// auxiliary rows `lags[r-1] = (x_{t−r}, u_{t−r})`.
    pub fn prior_params(
        &self,
        u_t: ArrayView2<f64>,
        lags: &[(ArrayView2<f64>, ArrayView2<f64>)],
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if lags.len() != self.ar_order {
            return Err(invalid(format!(
                "model has AR order {} but {} lags were given",
                self.ar_order,
                lags.len()
            )));
        }
        let now = self.aux_outputs(u_t)?;
        let mut deviations = Vec::with_capacity(lags.len());
        for (x, u) in lags {
            if x.nrows() != u_t.nrows() {
                return Err(shape("lag rows differ from the target rows"));
            }
            let (mu_q, _) = self.encode(*x, *u)?;
            let mu_u = self.aux_outputs(*u)?.mean;
            deviations.push(mu_q - mu_u);
        }
        Ok((prior_mean(&now, &deviations), now.scale))
    }

    /// Keep only the first `ar_order` AR coefficient blocks (0 removes the
    /// autoregression entirely).
    pub fn truncate_ar_order(&self, ar_order: usize) -> Result<Self> {
        if ar_order > self.ar_order {
            return Err(invalid("cannot raise the AR order by truncation"));
        }
        let p = self.latent_dim;
        let mut out = self.clone();
        let keep = (2 + ar_order) * p;
        let last = out.auxnet.weights.len() - 1;
        out.auxnet.weights[last] = self.auxnet.weights[last].slice(s![..keep, ..]).to_owned();
        out.auxnet.biases[last] = self.auxnet.biases[last].slice(s![..keep]).to_owned();
        *out.auxnet.layer_sizes.last_mut().unwrap() = keep;
        out.auxnet.heads.truncate(2);
        if ar_order > 0 {
            out.auxnet.heads.push(OutputHead::linear(ar_order * p));
        }
        out.ar_order = ar_order;
        Ok(out)
    }
}

/// `μ_u + Σ_r γ_r ⊙ d_r` for deviations `d_r`.
pub(crate) fn prior_mean(now: &AuxOutputs, deviations: &[Array2<f64>]) -> Array2<f64> {
    let mut mu = now.mean.clone();
    for (g, d) in now.gamma.iter().zip(deviations) {
        mu += &(g * d);
    }
    mu
}

/// `μ + σ ⊙ ε` with standard normal ε.
pub fn reparameterize(mu: ArrayView2<f64>, sigma: ArrayView2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
    if mu.dim() != sigma.dim() {
        return Err(shape("μ and σ differ in shape"));
    }
    let eps = standard_normal(mu.dim(), rng);
    Ok(&mu + &(&sigma * &eps))
}

pub fn standard_normal(dim: (usize, usize), rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(w: usize) -> IVaeArModel {
        let arch = Architecture {
            hidden_layers: 1,
            hidden_units: 5,
            aux_hidden_units: 4,
        };
        model_init(3, 2, w, 4, arch, 1.0, 11).unwrap()
    }

    #[test]
    fn head_widths() {
        let m = model_init(6, 6, 1, 148, Architecture::default(), 1.0, 0).unwrap();
        assert_eq!(m.auxnet.output_dim(), 18);
        assert_eq!(m.encoder.output_dim(), 12);
        let m0 = model_init(6, 6, 0, 148, Architecture::default(), 1.0, 0).unwrap();
        assert_eq!(m0.auxnet.output_dim(), 12);
        assert!(model_init(0, 2, 1, 4, Architecture::default(), 1.0, 0).is_err());
        assert_eq!(tiny(2), tiny(2));
    }

    #[test]
    fn encode_shapes_and_floor() {
        let m = tiny(1);
        let x = Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 - 3.0) * (j as f64 + 1.0));
        let u = Array2::from_shape_fn((7, 4), |(i, j)| (i + j) as f64 * 0.1);
        let (mu, sd) = m.encode(x.view(), u.view()).unwrap();
        assert_eq!(mu.dim(), (7, 2));
        assert!(sd.iter().all(|&v| v >= 1e-6));
        let (mu2, _) = m.encode(x.view(), u.view()).unwrap();
        assert_eq!(mu, mu2);
        assert!(m.encode(u.view(), u.view()).is_err());
    }

    #[test]
    fn reparameterize_moments() {
        let mu = Array2::from_elem((10_000, 1), 2.0);
        let sd = Array2::from_elem((10_000, 1), 0.5);
        let z = reparameterize(mu.view(), sd.view(), &mut rng::from_seed(4)).unwrap();
        let mean = z.mean().unwrap();
        let var = z.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!((mean - 2.0).abs() < 3.0 * 0.5 / 100.0);
        assert!((var - 0.25).abs() < 0.25 * 0.05);
        let tight = Array2::from_elem((3, 1), 1e-6);
        let z = reparameterize(mu.slice(s![..3, ..]), tight.view(), &mut rng::from_seed(1)).unwrap();
        assert!(z.iter().all(|v| (v - 2.0).abs() < 1e-4));
    }

    #[test]
    fn zero_gamma_reduces_prior_to_aux_mean() {
        let mut m = tiny(1);
        let last = m.auxnet.weights.len() - 1;
        m.auxnet.weights[last].slice_mut(s![4.., ..]).fill(0.0);
        let u = Array2::from_shape_fn((5, 4), |(i, j)| (i * j) as f64 * 0.3);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| i as f64 - j as f64);
        let (mu, sd) = m.prior_params(u.view(), &[(x.view(), u.view())]).unwrap();
        let aux = m.aux_outputs(u.view()).unwrap();
        assert_eq!(mu, aux.mean);
        assert_eq!(sd, aux.scale);
        assert!(m.prior_params(u.view(), &[]).is_err());
    }

    #[test]
    fn unit_gamma_adds_the_lag_deviation() {
        let mut m = tiny(1);
        let last = m.auxnet.weights.len() - 1;
        m.auxnet.weights[last].slice_mut(s![4.., ..]).fill(0.0);
        m.auxnet.biases[last].slice_mut(s![4..]).fill(1.0);
        let u_t = Array2::from_shape_fn((3, 4), |(i, j)| (i + 2 * j) as f64 * 0.1);
        let u_l = Array2::from_shape_fn((3, 4), |(i, j)| (2 * i + j) as f64 * 0.2);
        let x_l = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64) - 0.5 * j as f64);
        let (mu, _) = m.prior_params(u_t.view(), &[(x_l.view(), u_l.view())]).unwrap();
        let (mu_q, _) = m.encode(x_l.view(), u_l.view()).unwrap();
        let want = m.aux_outputs(u_t.view()).unwrap().mean + (mu_q - m.aux_outputs(u_l.view()).unwrap().mean);
        assert!((&mu - &want).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn flat_round_trip_and_truncation() {
        let m = tiny(2);
        let mut other = tiny(2);
        other.assign_flat(&vec![0.0; m.num_params()]).unwrap();
        other.assign_flat(&m.to_flat()).unwrap();
        assert_eq!(other, m);
        let t = m.truncate_ar_order(0).unwrap();
        assert_eq!(t.auxnet.output_dim(), 4);
        t.validate().unwrap();
        assert!(m.truncate_ar_order(3).is_err());
    }
}
