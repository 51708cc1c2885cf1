//! Training loop and latent extraction.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::elbo::LaggedBatch;
use super::{model_init, standard_normal, Architecture, IVaeArModel};
use crate::auxdata::{AuxiliaryEncoder, AuxiliarySpec, Standardizer};
use crate::dataset::{LaggedRow, SpatioTemporalDataset};
use crate::error::{invalid, shape};
use crate::neuralnet::{adam_step, AdamConfig, AdamState};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reconstruction variance; 1.0 for separation, 0.02 for prediction.
    pub beta: f64,
    /// Model AR order W.
    pub ar_order: usize,
    pub latent_dim: usize,
    pub architecture: Architecture,
    pub adam: AdamConfig,
    /// Center and scale observations before they enter the networks. Off by
    /// default: β is an absolute variance on the observation scale.
    pub standardize_observations: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            seed: 0,
            beta: 1.0,
            ar_order: 1,
            latent_dim: 6,
            architecture: Architecture::default(),
            adam: AdamConfig::default(),
            standardize_observations: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("β must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Maximize the ELBO with Adam over shuffled batches of `rows`. `x` holds raw
/// observations (standardized with the model's standardizer) and `u` the
/// auxiliary rows. Returns the mean ELBO of every epoch.
pub fn train(
    model: &mut IVaeArModel,
    x: ArrayView2<f64>,
    u: ArrayView2<f64>,
    rows: &[LaggedRow],
    config: &TrainingConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    model.validate()?;
    if rows.is_empty() {
        return Err(invalid(format!(
            "no rows have all {} lags available",
            model.ar_order
        )));
    }
    if x.ncols() != model.observed_dim || u.ncols() != model.aux_dim || x.nrows() != u.nrows() {
        return Err(shape("training data widths differ from the model"));
    }
    let xs = model.x_standardizer.apply(x)?;
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut shuffle = rng::stream(config.seed, "shuffle");
    let mut noise = rng::stream(config.seed, "noise");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut selected: Vec<LaggedRow> = Vec::with_capacity(config.batch_size);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            selected.clear();
            selected.extend(chunk.iter().map(|&i| rows[i].clone()));
            let batch = LaggedBatch::gather(xs.view(), u, &selected, model.ar_order)?;
            let eps = standard_normal((batch.size, model.latent_dim), &mut noise);
            let (value, mut grad) = model
                .elbo_and_gradient(&batch, eps.view())
                .map_err(|e| match e {
                    Error::TrainingDiverged { detail, .. } => Error::TrainingDiverged { epoch, step, detail },
                    other => other,
                })?;
            grad.iter_mut().for_each(|g| *g = -*g);
            adam_step(&mut params, &grad, &mut adam)?;
            model.assign_flat(&params)?;
            total += value * batch.size as f64;
            step += 1;
        }
        let mean = total / rows.len() as f64;
        log::debug!("epoch {epoch}: mean ELBO {mean:.6}");
        trace.push(mean);
    }
    Ok(trace)
}

/// A trained model and its per-epoch ELBO trace.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: IVaeArModel,
    pub trace: Vec<f64>,
}

/// Build the auxiliary variables, initialize a model and train it on
/// `dataset`.
pub fn fit(dataset: &SpatioTemporalDataset, aux: &AuxiliarySpec, config: &TrainingConfig) -> Result<FitOutcome> {
    config.validate()?;
    dataset.validate()?;
    let (_, t_max) = dataset.time_range().ok_or_else(|| invalid("empty dataset"))?;
    let encoder = AuxiliaryEncoder::fit(aux, &dataset.coords, &dataset.times)?;
    let u = encoder.encode(&dataset.coords, &dataset.times)?;
    let rows = dataset.lagged_rows(config.ar_order);
    if rows.is_empty() {
        return Err(invalid(format!(
            "no location has more than W = {} consecutive time points",
            config.ar_order
        )));
    }
    let mut model = model_init(
        dataset.observed_dim(),
        config.latent_dim,
        config.ar_order,
        encoder.dim(),
        config.architecture,
        config.beta,
        rng::derive_seed(config.seed, "init"),
    )?;
    if config.standardize_observations {
        model.x_standardizer = Standardizer::fit(dataset.x.view())?;
    }
    let trace = train(&mut model, dataset.x.view(), u.view(), &rows, config)?;
    model.aux_encoder = Some(encoder);
    model.trained_until = Some(t_max);
    Ok(FitOutcome { model, trace })
}

const EXTRACT_CHUNK: usize = 512;

/// Posterior means for every row, evaluated in fixed-size chunks.
pub fn extract_latents(model: &IVaeArModel, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != u.nrows() {
        return Err(shape("x and u differ in row count"));
    }
    let mut out = Array2::zeros((x.nrows(), model.latent_dim));
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + EXTRACT_CHUNK).min(x.nrows());
        let (mu, _) = model.encode(
            x.slice_axis(Axis(0), (start..end).into()),
            u.slice_axis(Axis(0), (start..end).into()),
        )?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&mu);
        start = end;
    }
    Ok(out)
}

impl IVaeArModel {
    /// Auxiliary rows for `dataset` from the stored auxiliary encoder.
    pub fn aux_for(&self, dataset: &SpatioTemporalDataset) -> Result<Array2<f64>> {
        let enc = self
            .aux_encoder
            .as_ref()
            .ok_or_else(|| invalid("model has no auxiliary encoder; train it with `fit`"))?;
        enc.encode(&dataset.coords, &dataset.times)
    }

    /// Posterior means for every row of `dataset`.
    pub fn latents_for(&self, dataset: &SpatioTemporalDataset) -> Result<Array2<f64>> {
        let u = self.aux_for(dataset)?;
        extract_latents(self, dataset.x.view(), u.view())
    }
}
