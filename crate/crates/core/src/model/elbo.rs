//! Evidence lower bound on a batch of lagged rows.

use ndarray::{Array2, ArrayView2, Axis};

use super::IVaeArModel;
use crate::dataset::LaggedRow;
use crate::error::{invalid, shape};
use crate::neuralnet::{GradientTape, NetworkVars, NodeId};
use crate::rng::Rng;
use crate::{Error, Result};

/// Targets and their lags, stacked in blocks of `size` rows: block 0 holds
/// the targets, block `r` the lag-`r` rows at the same locations.
#[derive(Clone, Debug, PartialEq)]
pub struct LaggedBatch {
    /// `[standardized x, u]` rows, `size·(1+W) × (S+m)`.
    pub encoder_input: Array2<f64>,
    /// `size·(1+W) × m`.
    pub aux: Array2<f64>,
    /// Standardized targets, `size × S`.
    pub target: Array2<f64>,
    pub size: usize,
    pub ar_order: usize,
}

impl LaggedBatch {
    /// Gather a batch from already standardized observations.
    pub fn gather(
        x_std: ArrayView2<f64>,
        u: ArrayView2<f64>,
        rows: &[LaggedRow],
        ar_order: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("empty batch"));
        }
        if x_std.nrows() != u.nrows() {
            return Err(shape("x and u differ in row count"));
        }
        if let Some(bad) = rows.iter().find(|r| r.lags.len() < ar_order) {
            return Err(invalid(format!(
                "row {} has {} of {ar_order} lags",
                bad.row,
                bad.lags.len()
            )));
        }
        let b = rows.len();
        let mut index = Vec::with_capacity(b * (1 + ar_order));
        index.extend(rows.iter().map(|r| r.row));
        for lag in 0..ar_order {
            index.extend(rows.iter().map(|r| r.lags[lag]));
        }
        let xs = x_std.select(Axis(0), &index);
        let aux = u.select(Axis(0), &index);
        let encoder_input = ndarray::concatenate(Axis(1), &[xs.view(), aux.view()]).expect("same rows");
        let target = xs.slice(ndarray::s![..b, ..]).to_owned();
        Ok(Self {
            encoder_input,
            aux,
            target,
            size: b,
            ar_order,
        })
    }

    /// Gather a batch from raw observations using the model's standardizer.
    pub fn new(model: &IVaeArModel, x: ArrayView2<f64>, u: ArrayView2<f64>, rows: &[LaggedRow]) -> Result<Self> {
        if x.ncols() != model.observed_dim || u.ncols() != model.aux_dim {
            return Err(shape("batch widths differ from the model"));
        }
        let xs = model.x_standardizer.apply(x)?;
        Self::gather(xs.view(), u, rows, model.ar_order)
    }
}

/// Per-point means of the ELBO and its three terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboBreakdown {
    pub elbo: f64,
    /// `log N(x | decoder(z'), βI)`
    pub reconstruction: f64,
    /// `log N(z' | μ*, σ_u²)`
    pub log_prior: f64,
    /// `log N(z' | μ_q, σ_q²)`
    pub log_posterior: f64,
}

pub(crate) struct ElboGraph {
    pub elbo: NodeId,
    pub reconstruction: NodeId,
    pub log_prior: NodeId,
    pub log_posterior: NodeId,
    pub vars: [NetworkVars; 3],
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Record the batch-mean ELBO on `tape` with fixed standard normal `noise`
/// (`size × P`).
pub(crate) fn record_elbo(
    tape: &mut GradientTape,
    model: &IVaeArModel,
    batch: &LaggedBatch,
    noise: ArrayView2<f64>,
) -> Result<ElboGraph> {
    let (b, p, w) = (batch.size, model.latent_dim, model.ar_order);
    if batch.ar_order != w {
        return Err(invalid(format!(
            "batch built for AR order {} but model has {w}",
            batch.ar_order
        )));
    }
    if noise.dim() != (b, p) {
        return Err(shape(format!("noise must be {b}×{p}, got {:?}", noise.dim())));
    }
    let enc_vars = model.encoder.register(tape);
    let dec_vars = model.decoder.register(tape);
    let aux_vars = model.auxnet.register(tape);

    let enc_in = tape.constant(batch.encoder_input.clone());
    let enc = model.encoder.forward_taped(tape, &enc_vars, enc_in)?;
    let aux_in = tape.constant(batch.aux.clone());
    let aux = model.auxnet.forward_taped(tape, &aux_vars, aux_in)?;

    let rows = |t: &mut GradientTape, id: NodeId, block: usize| {
        if w == 0 {
            id
        } else {
            t.slice_rows(id, block * b, b)
        }
    };
    let mu_q = rows(tape, enc[0], 0);
    let sd_q = rows(tape, enc[1], 0);
    let mu_u = rows(tape, aux[0], 0);
    let sd_u = rows(tape, aux[1], 0);

    let mut mu_star = mu_u;
    if w > 0 {
        let gamma = tape.slice_rows(aux[2], 0, b);
        for r in 1..=w {
            let lag_q = tape.slice_rows(enc[0], r * b, b);
            let lag_u = tape.slice_rows(aux[0], r * b, b);
            let dev = tape.sub(lag_q, lag_u);
            let g = tape.slice_cols(gamma, (r - 1) * p, p);
            let term = tape.mul(g, dev);
            mu_star = tape.add(mu_star, term);
        }
    }

    let eps = tape.constant(noise.to_owned());
    let spread = tape.mul(sd_q, eps);
    let z = tape.add(mu_q, spread);
    let x_hat = model.decoder.forward_taped(tape, &dec_vars, z)?[0];

    let bf = b as f64;
    let s = model.observed_dim as f64;
    let pf = p as f64;

    // log N(x | x̂, βI), batch mean
    let target = tape.constant(batch.target.clone());
    let resid = tape.sub(x_hat, target);
    let sq = tape.square(resid);
    let rss = tape.sum_all(sq);
    let rec = tape.scale(rss, -0.5 / (model.beta * bf));
    let reconstruction = tape.add_scalar(rec, -0.5 * s * (LN_2PI + model.beta.ln()));

    // log N(z' | μ*, σ_u²)
    let diff = tape.sub(z, mu_star);
    let std = tape.div(diff, sd_u);
    let std2 = tape.square(std);
    let quad = tape.sum_all(std2);
    let quad = tape.scale(quad, -0.5 / bf);
    let ln_sd_u = tape.ln(sd_u);
    let ln_sd_u = tape.sum_all(ln_sd_u);
    let ln_sd_u = tape.scale(ln_sd_u, -1.0 / bf);
    let log_prior = tape.add(quad, ln_sd_u);
    let log_prior = tape.add_scalar(log_prior, -0.5 * pf * LN_2PI);

    // log N(z' | μ_q, σ_q²); the standardized residual is ε itself
    let eps_sq: f64 = noise.iter().map(|e| e * e).sum::<f64>();
    let ln_sd_q = tape.ln(sd_q);
    let ln_sd_q = tape.sum_all(ln_sd_q);
    let ln_sd_q = tape.scale(ln_sd_q, -1.0 / bf);
    let log_posterior = tape.add_scalar(ln_sd_q, -0.5 * pf * LN_2PI - 0.5 * eps_sq / bf);

    let kl_free = tape.sub(log_prior, log_posterior);
    let elbo = tape.add(reconstruction, kl_free);

    Ok(ElboGraph {
        elbo,
        reconstruction,
        log_prior,
        log_posterior,
        vars: [enc_vars, dec_vars, aux_vars],
    })
}

fn scalar(tape: &GradientTape, id: NodeId) -> f64 {
    tape.value(id)[[0, 0]]
}

fn diverged(detail: String) -> Error {
    Error::TrainingDiverged {
        epoch: 0,
        step: 0,
        detail,
    }
}

impl IVaeArModel {
    /// Batch-mean ELBO with one reparameterized sample per row drawn from
    /// the fixed standard normal `noise`.
    pub fn elbo(&self, batch: &LaggedBatch, noise: ArrayView2<f64>) -> Result<f64> {
        Ok(self.elbo_breakdown(batch, noise)?.elbo)
    }

    pub fn elbo_breakdown(&self, batch: &LaggedBatch, noise: ArrayView2<f64>) -> Result<ElboBreakdown> {
        let mut tape = GradientTape::new();
        let g = record_elbo(&mut tape, self, batch, noise)?;
        let out = ElboBreakdown {
            elbo: scalar(&tape, g.elbo),
            reconstruction: scalar(&tape, g.reconstruction),
            log_prior: scalar(&tape, g.log_prior),
            log_posterior: scalar(&tape, g.log_posterior),
        };
        if !out.elbo.is_finite() {
            return Err(diverged(format!("non-finite ELBO {out:?}")));
        }
        Ok(out)
    }

    /// ELBO and its exact gradient with respect to [`IVaeArModel::to_flat`].
    pub fn elbo_and_gradient(&self, batch: &LaggedBatch, noise: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let mut tape = GradientTape::new();
        let g = record_elbo(&mut tape, self, batch, noise)?;
        let value = scalar(&tape, g.elbo);
        if !value.is_finite() {
            return Err(diverged(format!("non-finite ELBO {value}")));
        }
        let grads = tape.backward(g.elbo)?;
        let mut flat = Vec::with_capacity(self.num_params());
        for v in &g.vars {
            v.flat_gradient(&grads, &mut flat);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(diverged("non-finite gradient".into()));
        }
        Ok((value, flat))
    }
}

fn check_same(parts: [&ArrayView2<f64>; 4]) -> Result<()> {
    if parts.iter().any(|p| p.dim() != parts[0].dim()) {
        return Err(shape("Gaussian parameters differ in shape"));
    }
    Ok(())
}

/// Closed-form `KL(N(μ_q, σ_q²) ‖ N(μ_p, σ_p²))`, summed over all entries.
pub fn gaussian_kl(
    mu_q: ArrayView2<f64>,
    sd_q: ArrayView2<f64>,
    mu_p: ArrayView2<f64>,
    sd_p: ArrayView2<f64>,
) -> Result<f64> {
    check_same([&mu_q, &sd_q, &mu_p, &sd_p])?;
    let mut kl = 0.0;
    for (((mq, sq), mp), sp) in mu_q.iter().zip(&sd_q).zip(&mu_p).zip(&sd_p) {
        kl += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// Monte Carlo estimate of the same KL: the mean of `log q(z) − log p(z)`
/// over `samples` draws `z ~ q`.
pub fn mc_kl(
    mu_q: ArrayView2<f64>,
    sd_q: ArrayView2<f64>,
    mu_p: ArrayView2<f64>,
    sd_p: ArrayView2<f64>,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    check_same([&mu_q, &sd_q, &mu_p, &sd_p])?;
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let log_n = |z: f64, m: f64, s: f64| -0.5 * LN_2PI - s.ln() - (z - m).powi(2) / (2.0 * s * s);
    let mut total = 0.0;
    for _ in 0..samples {
        let eps = super::standard_normal(mu_q.dim(), rng);
        for ((((e, mq), sq), mp), sp) in eps.iter().zip(&mu_q).zip(&sd_q).zip(&mu_p).zip(&sd_p) {
            let z = mq + sq * e;
            total += log_n(z, *mq, *sq) - log_n(z, *mp, *sp);
        }
    }
    Ok(total / samples as f64)
}
