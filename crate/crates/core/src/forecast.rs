//! Multi-step forecasts from the learned latent autoregression.
//!
//! For each location the lag buffer starts from the posterior means of the
//! last `W` history points. Each step evaluates the auxiliary network at the
//! future auxiliary row, forms the prior mean from the buffer, optionally
//! adds `σ ⊙ ε`, pushes the new latent into the buffer and decodes it.

use std::collections::{HashMap, VecDeque};

use ndarray::{Array2, ArrayView2, Axis};

use crate::dataset::SpatioTemporalDataset;
use crate::error::{invalid, shape};
use crate::model::{standard_normal, IVaeArModel};
use crate::stfield::Location;
use crate::{rng, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastMode {
    /// Propagate prior means.
    Mean,
    /// Add `σ ⊙ ε` at every step.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct ForecastRequest<'a> {
    pub model: &'a IVaeArModel,
    pub history: &'a SpatioTemporalDataset,
    pub horizon: usize,
    pub mode: ForecastMode,
    /// Auxiliary rows aligned with `history`; built from the model's
    /// auxiliary encoder when absent.
    pub history_aux: Option<ArrayView2<'a, f64>>,
    /// Auxiliary rows for the forecast targets, step-major (all locations
    /// for step 1, then step 2, …); built from the encoder when absent.
    pub future_aux: Option<ArrayView2<'a, f64>>,
}

impl<'a> ForecastRequest<'a> {
    pub fn new(model: &'a IVaeArModel, history: &'a SpatioTemporalDataset, horizon: usize) -> Self {
        Self {
            model,
            history,
            horizon,
            mode: ForecastMode::Mean,
            history_aux: None,
            future_aux: None,
        }
    }
}

/// Forecast origin per location: its coordinates, last history time and the
/// history rows of its last `W` time points (most recent first).
#[derive(Clone, Debug)]
struct Origin {
    location: Location,
    last_time: i64,
    lag_rows: Vec<usize>,
}

fn origins(history: &SpatioTemporalDataset, ar_order: usize) -> Result<Vec<Origin>> {
    if history.n_rows() == 0 {
        return Err(invalid("empty history"));
    }
    let index = history.location_index();
    let mut out = Vec::with_capacity(index.locations.len());
    for (loc, rows) in index.locations.iter().zip(&index.series) {
        let last = *rows.last().unwrap();
        let last_time = history.times[last];
        if rows.len() < ar_order {
            return Err(invalid(format!(
                "location {loc:?} has {} history points but W = {ar_order}",
                rows.len()
            )));
        }
        let lag_rows: Vec<usize> = rows.iter().rev().take(ar_order).copied().collect();
        for (r, &row) in lag_rows.iter().enumerate() {
            if history.times[row] != last_time - r as i64 {
                return Err(invalid(format!(
                    "location {loc:?} lacks a history point at t = {}",
                    last_time - r as i64
                )));
            }
        }
        out.push(Origin {
            location: *loc,
            last_time,
            lag_rows,
        });
    }
    Ok(out)
}

/// Forecast targets in step-major order.
fn target_rows(origins: &[Origin], horizon: usize) -> (Vec<Location>, Vec<i64>) {
    let mut coords = Vec::with_capacity(origins.len() * horizon);
    let mut times = Vec::with_capacity(origins.len() * horizon);
    for h in 1..=horizon as i64 {
        for o in origins {
            coords.push(o.location);
            times.push(o.last_time + h);
        }
    }
    (coords, times)
}

/// Predicted observations (and latents in `z`) for `horizon` steps at every
/// history location, rows in step-major order.
pub fn forecast(req: &ForecastRequest<'_>) -> Result<SpatioTemporalDataset> {
    let model = req.model;
    let history = req.history;
    if req.horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if history.observed_dim() != model.observed_dim {
        return Err(shape(format!(
            "history has {} variables, model expects {}",
            history.observed_dim(),
            model.observed_dim
        )));
    }
    let w = model.ar_order;
    let p = model.latent_dim;
    let origins = origins(history, w)?;
    let n_loc = origins.len();
    let (coords, times) = target_rows(&origins, req.horizon);

    let encoder = || {
        model
            .aux_encoder
            .as_ref()
            .ok_or_else(|| invalid("auxiliary rows not given and the model has no auxiliary encoder"))
    };
    let future_aux = match req.future_aux {
        Some(u) => u.to_owned(),
        None => encoder()?.encode(&coords, &times)?,
    };
    if future_aux.nrows() != n_loc * req.horizon || future_aux.ncols() != model.aux_dim {
        return Err(shape(format!(
            "future auxiliary rows must be {}×{}, got {:?}",
            n_loc * req.horizon,
            model.aux_dim,
            future_aux.dim()
        )));
    }

    // buffer[r] holds (latent, μ_u) at time T − r for every location
    let mut buffer: VecDeque<(Array2<f64>, Array2<f64>)> = VecDeque::with_capacity(w + 1);
    if w > 0 {
        let history_aux = match req.history_aux {
            Some(u) => u.to_owned(),
            None => encoder()?.encode(&history.coords, &history.times)?,
        };
        if history_aux.dim() != (history.n_rows(), model.aux_dim) {
            return Err(shape("history auxiliary rows do not match the history"));
        }
        for r in 0..w {
            let rows: Vec<usize> = origins.iter().map(|o| o.lag_rows[r]).collect();
            let x = history.x.select(Axis(0), &rows);
            let u = history_aux.select(Axis(0), &rows);
            let (mu_q, _) = model.encode(x.view(), u.view())?;
            let mu_u = model.aux_outputs(u.view())?.mean;
            buffer.push_back((mu_q, mu_u));
        }
    }

    let mut noise = match req.mode {
        ForecastMode::Sampled { seed } => Some(rng::stream(seed, "forecast")),
        ForecastMode::Mean => None,
    };
    let mut latents = Array2::zeros((n_loc * req.horizon, p));
    for h in 0..req.horizon {
        let u = future_aux.slice(ndarray::s![h * n_loc..(h + 1) * n_loc, ..]);
        let out = model.aux_outputs(u)?;
        let mut z = out.mean.clone();
        for (g, (lat, mu_u)) in out.gamma.iter().zip(&buffer) {
            z += &(g * &(lat - mu_u));
        }
        if let Some(rng) = noise.as_mut() {
            z += &(&out.scale * &standard_normal((n_loc, p), rng));
        }
        latents
            .slice_mut(ndarray::s![h * n_loc..(h + 1) * n_loc, ..])
            .assign(&z);
        if w > 0 {
            buffer.pop_back();
            buffer.push_front((z, out.mean));
        }
    }
    let x = model.decode(latents.view())?;
    SpatioTemporalDataset::new(coords, times, x, Some(latents))
}

/// Repeat each location's last observation for `horizon` steps, rows in the
/// same order as [`forecast`].
pub fn persistence_baseline(history: &SpatioTemporalDataset, horizon: usize) -> Result<SpatioTemporalDataset> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let origins = origins(history, 1)?;
    let (coords, times) = target_rows(&origins, horizon);
    let last: Vec<usize> = origins.iter().map(|o| o.lag_rows[0]).collect();
    let block = history.x.select(Axis(0), &last);
    let views: Vec<_> = (0..horizon).map(|_| block.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("same widths");
    SpatioTemporalDataset::new(coords, times, x, None)
}

/// For every prediction row, the row of `truth` at the same location and
/// time, if any.
pub fn match_rows(pred: &SpatioTemporalDataset, truth: &SpatioTemporalDataset) -> Vec<Option<usize>> {
    let key = |s: &Location, t: i64| (s[0].to_bits(), s[1].to_bits(), t);
    let lookup: HashMap<_, usize> = (0..truth.n_rows())
        .map(|r| (key(&truth.coords[r], truth.times[r]), r))
        .collect();
    (0..pred.n_rows())
        .map(|r| lookup.get(&key(&pred.coords[r], pred.times[r])).copied())
        .collect()
}

/// Truth rows aligned with `pred`, or `None` when any prediction row has no
/// counterpart.
pub fn aligned_truth(pred: &SpatioTemporalDataset, truth: &SpatioTemporalDataset) -> Option<Array2<f64>> {
    let rows: Option<Vec<usize>> = match_rows(pred, truth).into_iter().collect();
    rows.map(|r| truth.x.select(Axis(0), &r))
}
