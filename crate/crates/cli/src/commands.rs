//! Subcommand implementations. Every command is a function of the config,
//! its input files and the seed; outputs carry no timestamps or timings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ivaear::dataset::SpatioTemporalDataset;
use ivaear::eval::{deseasonalized_variances, per_variable_mse, wmse, EvalReport};
use ivaear::forecast::{aligned_truth, forecast as run_forecast, persistence_baseline, ForecastMode, ForecastRequest};
use ivaear::model::{checkpoint_load, checkpoint_save, dimension_sweep, fit, IVaeArModel};
use ivaear::stfield::{simulate as run_simulation, Simulation};
use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ForecastKind};
use crate::error::{CliError, CliResult};

pub const DATA_FILE: &str = "data.csv";
pub const META_FILE: &str = "meta.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const ELBO_FILE: &str = "elbo.csv";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const PERSISTENCE_FILE: &str = "persistence.csv";
pub const FORECAST_REPORT: &str = "forecast_report.txt";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn out_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|source| CliError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_dataset(path: &Path, data: &SpatioTemporalDataset) -> CliResult<()> {
    data.write_csv_path(path).map_err(|e| match e {
        ivaear::Error::Io(source) => CliError::Write {
            path: path.display().to_string(),
            source,
        },
        other => other.into(),
    })
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Rows at or before `cutoff` for training when `holdout` time points are
/// withheld.
fn training_part(data: &SpatioTemporalDataset, holdout: usize) -> CliResult<SpatioTemporalDataset> {
    if holdout == 0 {
        return Ok(data.clone());
    }
    let (_, t_max) = data
        .time_range()
        .ok_or_else(|| CliError::Mismatch("data file has no rows".into()))?;
    Ok(data.split_at_time(t_max - holdout as i64).0)
}

fn check_observed_dim(cfg: &ExperimentConfig, data: &SpatioTemporalDataset) -> CliResult<()> {
    if data.observed_dim() != cfg.simulation.observed_dim {
        return Err(CliError::Mismatch(format!(
            "data has {} observed columns but simulation.observed_dim = {}",
            data.observed_dim(),
            cfg.simulation.observed_dim
        )));
    }
    Ok(())
}

/// Flat record of the simulation draws.
pub fn meta_text(cfg: &ExperimentConfig, sim: &Simulation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# resolved configuration");
    for line in cfg.serialize().lines().filter(|l| !l.starts_with("output.dir=")) {
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "# parameter draws");
    let _ = writeln!(s, "rows={}", sim.observed.nrows());
    for (j, d) in sim.latent.draws.iter().enumerate() {
        let c = j + 1;
        let _ = writeln!(s, "component.{c}.baselines={}", join(&d.baselines));
        let _ = writeln!(s, "component.{c}.scales={}", join(&d.scales));
        let _ = writeln!(s, "component.{c}.magnitudes={}", join(&d.magnitudes));
        let _ = writeln!(s, "component.{c}.jitter={}", d.jitter);
        if let Some(t) = &d.trend {
            let _ = writeln!(
                s,
                "component.{c}.trend={} {} {} {} {} {} {} {}",
                t.theta_s1, t.theta_s2, t.theta_t, t.omega_s1, t.omega_s2, t.omega_t, t.omega_c, t.alpha
            );
        }
    }
    for (l, layer) in sim.mixing.layers.iter().enumerate() {
        for (i, row) in layer.axis_iter(Axis(0)).enumerate() {
            let _ = writeln!(s, "mixing.{}.{}={}", l + 1, i + 1, join(row.iter()));
        }
    }
    s
}

/// Simulate one dataset; writes `data.csv` and `meta.txt`.
pub fn simulate(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let sim = run_simulation(&cfg.simulation_spec(cfg.seed)?)?;
    let dir = out_dir(cfg)?;
    let data = dir.join(DATA_FILE);
    write_dataset(&data, &sim.to_dataset())?;
    write_text(&dir.join(META_FILE), &meta_text(cfg, &sim))?;
    Ok(data)
}

pub fn elbo_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,elbo\n");
    for (e, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", e + 1);
    }
    s
}

/// Train on `data` (minus the holdout); writes the checkpoint and
/// `elbo.csv`.
pub fn train(cfg: &ExperimentConfig, data_path: &Path) -> CliResult<(IVaeArModel, Vec<f64>)> {
    cfg.validate()?;
    let data = SpatioTemporalDataset::read_csv_path(data_path)?;
    check_observed_dim(cfg, &data)?;
    let part = training_part(&data, cfg.evaluation.holdout)?;
    let out = fit(&part, &cfg.aux_spec()?, &cfg.training_config(cfg.seed)?)?;
    let dir = out_dir(cfg)?;
    let ckpt = dir.join(MODEL_FILE);
    checkpoint_save(&out.model, &ckpt).map_err(|e| match e {
        ivaear::Error::Io(source) => CliError::Write {
            path: ckpt.display().to_string(),
            source,
        },
        other => other.into(),
    })?;
    write_text(&dir.join(ELBO_FILE), &elbo_csv(&out.trace))?;
    Ok((out.model, out.trace))
}

/// MCC report of `model` on every row of `data`.
pub fn evaluate_dataset(model: &IVaeArModel, data: &SpatioTemporalDataset) -> CliResult<EvalReport> {
    let z = data
        .z
        .as_ref()
        .ok_or_else(|| ivaear::Error::InvalidArgument("data file has no latent (z) columns".into()))?;
    let est = model.latents_for(data)?;
    Ok(EvalReport::from_latents(z.view(), est.view())?)
}

/// Evaluate a checkpoint against data with true latents; writes
/// `report.txt` and `report.csv`.
pub fn evaluate(cfg: &ExperimentConfig, model_path: &Path, data_path: &Path) -> CliResult<EvalReport> {
    let model = checkpoint_load(model_path)?;
    let data = SpatioTemporalDataset::read_csv_path(data_path)?;
    let report = evaluate_dataset(&model, &data)?;
    let dir = out_dir(cfg)?;
    write_text(&dir.join(REPORT_TEXT), &report.to_text())?;
    let csv = format!(
        "{}\n{}\n",
        EvalReport::csv_header(),
        report.csv_row(&format!("seed{}", cfg.seed))
    );
    write_text(&dir.join(REPORT_CSV), &csv)?;
    Ok(report)
}

/// wMSE weights: per-variable variances of the history, deseasonalized when
/// `period` is positive.
pub fn history_variances(history: &SpatioTemporalDataset, period: usize) -> CliResult<Vec<f64>> {
    if period > 0 {
        return Ok(deseasonalized_variances(history.x.view(), &history.times, period as f64)?);
    }
    let n = history.n_rows() as f64;
    Ok(history
        .x
        .axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .collect())
}

/// Model and persistence errors on the forecast window.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastScores {
    pub model_mse: Vec<f64>,
    pub model_wmse: f64,
    pub persistence_mse: Vec<f64>,
    pub persistence_wmse: f64,
}

#[derive(Clone, Debug)]
pub struct ForecastOutcome {
    pub predictions: SpatioTemporalDataset,
    pub persistence: SpatioTemporalDataset,
    /// `None` when some forecast rows have no truth counterpart.
    pub scores: Option<ForecastScores>,
}

fn score(truth: ArrayView2<f64>, pred: &SpatioTemporalDataset, variances: &[f64]) -> CliResult<(Vec<f64>, f64)> {
    Ok((
        per_variable_mse(truth, pred.x.view())?,
        wmse(truth, pred.x.view(), variances)?,
    ))
}

/// Forecast `horizon` steps from `history` and score both the model and the
/// persistence baseline against `truth` when it covers every target row.
pub fn forecast_with(
    cfg: &ExperimentConfig,
    model: &IVaeArModel,
    history: &SpatioTemporalDataset,
    truth: Option<&SpatioTemporalDataset>,
) -> CliResult<ForecastOutcome> {
    let horizon = cfg.evaluation.horizon;
    let mut req = ForecastRequest::new(model, history, horizon);
    if cfg.evaluation.forecast_mode == ForecastKind::Sampled {
        req.mode = ForecastMode::Sampled {
            seed: ivaear::rng::derive_seed(cfg.seed, "forecast"),
        };
    }
    let predictions = run_forecast(&req)?;
    let persistence = persistence_baseline(history, horizon)?;
    let scores = match truth.and_then(|t| aligned_truth(&predictions, t)) {
        Some(t) => {
            let variances = history_variances(history, cfg.evaluation.period)?;
            let (model_mse, model_wmse) = score(t.view(), &predictions, &variances)?;
            let (persistence_mse, persistence_wmse) = score(t.view(), &persistence, &variances)?;
            Some(ForecastScores {
                model_mse,
                model_wmse,
                persistence_mse,
                persistence_wmse,
            })
        }
        None => None,
    };
    Ok(ForecastOutcome {
        predictions,
        persistence,
        scores,
    })
}

pub fn forecast_report(outcome: &ForecastOutcome, origin: i64, horizon: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "origin={origin}");
    let _ = writeln!(s, "horizon={horizon}");
    match &outcome.scores {
        Some(sc) => {
            let _ = writeln!(s, "model.mse={}", join(&sc.model_mse));
            let _ = writeln!(s, "model.wmse={}", sc.model_wmse);
            let _ = writeln!(s, "persistence.mse={}", join(&sc.persistence_mse));
            let _ = writeln!(s, "persistence.wmse={}", sc.persistence_wmse);
        }
        None => {
            let _ = writeln!(s, "metrics=skipped (truth rows for the forecast window are missing)");
        }
    }
    s
}

/// Forecast from a checkpoint. History is every data row at or before
/// `origin` (default: the model's last training time, else the last data
/// time); truth is `truth_path` or the data rows after `origin`.
pub fn forecast(
    cfg: &ExperimentConfig,
    model_path: &Path,
    data_path: &Path,
    origin: Option<i64>,
    truth_path: Option<&Path>,
) -> CliResult<ForecastOutcome> {
    if cfg.evaluation.horizon == 0 {
        return Err(CliError::Config("evaluation.horizon must be at least 1".into()));
    }
    let model = checkpoint_load(model_path)?;
    let data = SpatioTemporalDataset::read_csv_path(data_path)?;
    let (_, t_last) = data
        .time_range()
        .ok_or_else(|| CliError::Mismatch("data file has no rows".into()))?;
    let origin = origin.or(model.trained_until).unwrap_or(t_last);
    let (history, after) = data.split_at_time(origin);
    let truth = match truth_path {
        Some(p) => SpatioTemporalDataset::read_csv_path(p)?,
        None => after,
    };
    let outcome = forecast_with(cfg, &model, &history, Some(&truth))?;
    if outcome.scores.is_none() {
        log::warn!("truth rows for the forecast window are missing; metrics skipped");
        eprintln!("notice: truth rows for the forecast window are missing; metrics skipped");
    }
    let dir = out_dir(cfg)?;
    write_dataset(&dir.join(FORECAST_FILE), &outcome.predictions)?;
    write_dataset(&dir.join(PERSISTENCE_FILE), &outcome.persistence)?;
    write_text(
        &dir.join(FORECAST_REPORT),
        &forecast_report(&outcome, origin, cfg.evaluation.horizon),
    )?;
    Ok(outcome)
}

/// Train one model per latent dimension; writes `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, data_path: &Path, dims: &[usize]) -> CliResult<ivaear::model::SweepResult> {
    cfg.validate()?;
    let data = SpatioTemporalDataset::read_csv_path(data_path)?;
    check_observed_dim(cfg, &data)?;
    let part = training_part(&data, cfg.evaluation.holdout)?;
    let result = dimension_sweep(&part, &cfg.aux_spec()?, dims, &cfg.training_config(cfg.seed)?)?;
    let mut s = String::from("latent_dim,elbo,knee\n");
    for (p, e) in result.latent_dims.iter().zip(&result.elbo) {
        let _ = writeln!(s, "{p},{e},{}", u8::from(result.knee == Some(*p)));
    }
    write_text(&out_dir(cfg)?.join(SWEEP_FILE), &s)?;
    Ok(result)
}

/// Metrics of one simulate-train-evaluate replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateMetrics {
    pub mcc: f64,
    pub final_elbo: f64,
    pub forecast_wmse: Option<f64>,
    pub persistence_wmse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplicateRow {
    pub seed: u64,
    pub result: Result<ReplicateMetrics, String>,
}

/// Simulate with `seed`, train on all but the holdout, score MCC on every
/// row and, when the holdout covers the horizon, forecast against it.
pub fn run_replicate(cfg: &ExperimentConfig, seed: u64) -> CliResult<ReplicateMetrics> {
    let sim = run_simulation(&cfg.simulation_spec(seed)?)?;
    let data = sim.to_dataset();
    let part = training_part(&data, cfg.evaluation.holdout)?;
    let out = fit(&part, &cfg.aux_spec()?, &cfg.training_config(seed)?)?;
    let report = evaluate_dataset(&out.model, &data)?;
    let ev = &cfg.evaluation;
    let (forecast_wmse, persistence_wmse) = if ev.holdout > 0 && ev.horizon > 0 && ev.horizon <= ev.holdout {
        let local = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let (_, after) = data.split_at_time(out.model.trained_until.expect("set by fit"));
        let scores = forecast_with(&local, &out.model, &part, Some(&after))?
            .scores
            .expect("holdout covers the horizon");
        (Some(scores.model_wmse), Some(scores.persistence_wmse))
    } else {
        (None, None)
    };
    Ok(ReplicateMetrics {
        mcc: report.mcc.expect("set by from_latents"),
        final_elbo: *out.trace.last().expect("at least one epoch"),
        forecast_wmse,
        persistence_wmse,
    })
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(q1, median, q3)` of the present values, if any.
pub fn quartiles(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some((quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn replicates_csv(rows: &[ReplicateRow]) -> String {
    let mut s = String::from("seed,status,mcc,final_elbo,forecast_wmse,persistence_wmse,error\n");
    for r in rows {
        match &r.result {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "{},ok,{},{},{},{},",
                    r.seed,
                    m.mcc,
                    m.final_elbo,
                    opt(m.forecast_wmse),
                    opt(m.persistence_wmse)
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{},failed,,,,,\"{}\"", r.seed, e.replace('"', "'"));
            }
        }
    }
    s
}

pub fn summary_csv(rows: &[ReplicateRow]) -> String {
    let ok: Vec<&ReplicateMetrics> = rows.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let mut s = String::from("metric,n,q1,median,q3\n");
    let metrics: [(&str, Vec<f64>); 4] = [
        ("mcc", ok.iter().map(|m| m.mcc).collect()),
        ("final_elbo", ok.iter().map(|m| m.final_elbo).collect()),
        ("forecast_wmse", ok.iter().filter_map(|m| m.forecast_wmse).collect()),
        ("persistence_wmse", ok.iter().filter_map(|m| m.persistence_wmse).collect()),
    ];
    for (name, values) in metrics {
        let n = values.len();
        match quartiles(values) {
            Some((q1, med, q3)) => {
                let _ = writeln!(s, "{name},{n},{q1},{med},{q3}");
            }
            None => {
                let _ = writeln!(s, "{name},0,,,");
            }
        }
    }
    s
}

/// Run replicates with seeds `seed..seed+count` on `threads` workers (rayon's
/// default when `None`). Rows are in seed order regardless of scheduling.
pub fn replicate_rows(cfg: &ExperimentConfig, threads: Option<usize>) -> CliResult<Vec<ReplicateRow>> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.replicate_count as u64).map(|k| cfg.seed + k).collect();
    let job = |&seed: &u64| {
        let result = run_replicate(cfg, seed).map_err(|e| e.to_string());
        match &result {
            Ok(m) => log::info!("seed {seed}: MCC {:.4}", m.mcc),
            Err(e) => log::warn!("seed {seed} failed: {e}"),
        }
        ReplicateRow { seed, result }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(job).collect()))
}

/// Replicate and write `replicates.csv` and `summary.csv`. Fails with
/// [`CliError::PartialFailure`] after writing if any replicate failed.
pub fn replicate(cfg: &ExperimentConfig, threads: Option<usize>) -> CliResult<Vec<ReplicateRow>> {
    let rows = replicate_rows(cfg, threads)?;
    let dir = out_dir(cfg)?;
    write_text(&dir.join(REPLICATES_FILE), &replicates_csv(&rows))?;
    write_text(&dir.join(SUMMARY_FILE), &summary_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        return Err(CliError::PartialFailure {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}
