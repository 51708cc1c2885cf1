//! Experiment configuration as flat `key=value` lines with dotted keys.
//!
//! Files may contain blank lines and `#` comments. Every key is validated;
//! unknown keys are errors. Later assignments override earlier ones, so flags
//! applied after the file take precedence.

use std::fmt::Write as _;
use std::path::Path;

use ivaear::auxdata::AuxiliarySpec;
use ivaear::model::TrainingConfig;
use ivaear::stfield::SimulationSpec;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSection {
    pub setting: u8,
    pub latent_dim: usize,
    pub observed_dim: usize,
    pub n_locations: usize,
    pub n_times: usize,
    pub ar_order: usize,
    pub mixing_layers: usize,
    pub burn_in: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            setting: 5,
            latent_dim: 3,
            observed_dim: 3,
            n_locations: 30,
            n_times: 200,
            ar_order: 1,
            mixing_layers: 1,
            burn_in: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    Rbf,
    Segmentation,
    Seasonal,
}

impl AuxKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "rbf" => Some(Self::Rbf),
            "segmentation" => Some(Self::Segmentation),
            "seasonal" => Some(Self::Seasonal),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Rbf => "rbf",
            Self::Segmentation => "segmentation",
            Self::Seasonal => "seasonal",
        }
    }
}

/// Parameters for every auxiliary kind; only those of `kind` are used.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliarySection {
    pub kind: AuxKind,
    pub spatial_levels: Vec<usize>,
    pub temporal_levels: Vec<usize>,
    pub grid: usize,
    pub segment_len: usize,
    pub period: usize,
    pub year_breaks: Vec<i64>,
}

impl Default for AuxiliarySection {
    fn default() -> Self {
        Self {
            kind: AuxKind::Rbf,
            spatial_levels: vec![2, 9],
            temporal_levels: vec![9, 17, 37],
            grid: 3,
            segment_len: 20,
            period: 365,
            year_breaks: vec![1],
        }
    }
}

impl AuxiliarySection {
    pub fn spec(&self) -> AuxiliarySpec {
        match self.kind {
            AuxKind::Rbf => AuxiliarySpec::Rbf {
                spatial_levels: self.spatial_levels.clone(),
                temporal_levels: self.temporal_levels.clone(),
            },
            AuxKind::Segmentation => AuxiliarySpec::Segmentation {
                grid: self.grid,
                segment_len: self.segment_len,
            },
            AuxKind::Seasonal => AuxiliarySpec::Seasonal {
                spatial_levels: self.spatial_levels.clone(),
                temporal_levels: self.temporal_levels.clone(),
                period: self.period,
                year_breaks: self.year_breaks.clone(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastKind {
    Mean,
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSection {
    /// Number of final time points withheld from training.
    pub holdout: usize,
    pub horizon: usize,
    /// Seasonal period for wMSE weights; 0 uses plain variances.
    pub period: usize,
    pub forecast_mode: ForecastKind,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            holdout: 0,
            horizon: 10,
            period: 0,
            forecast_mode: ForecastKind::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub simulation: SimulationSection,
    pub auxiliary: AuxiliarySection,
    pub training: TrainingConfig,
    pub evaluation: EvaluationSection,
    pub output_dir: String,
    pub replicate_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            simulation: SimulationSection::default(),
            auxiliary: AuxiliarySection::default(),
            training: TrainingConfig {
                latent_dim: 3,
                ..TrainingConfig::default()
            },
            evaluation: EvaluationSection::default(),
            output_dir: "out".into(),
            replicate_count: 5,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key}: expected {what}, got {value:?}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| bad(key, value, "a number"))
}

fn real(key: &str, value: &str) -> CliResult<f64> {
    let v: f64 = num(key, value)?;
    if !v.is_finite() {
        return Err(bad(key, value, "a finite number"));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> CliResult<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(key, value, "a comma-separated list")))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Assign one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let sim = &mut self.simulation;
        let aux = &mut self.auxiliary;
        let tr = &mut self.training;
        let ev = &mut self.evaluation;
        match key.trim() {
            "seed" => self.seed = num(key, v)?,
            "simulation.setting" => sim.setting = num(key, v)?,
            "simulation.latent_dim" => sim.latent_dim = num(key, v)?,
            "simulation.observed_dim" => sim.observed_dim = num(key, v)?,
            "simulation.n_locations" => sim.n_locations = num(key, v)?,
            "simulation.n_times" => sim.n_times = num(key, v)?,
            "simulation.ar_order" => sim.ar_order = num(key, v)?,
            "simulation.mixing_layers" => sim.mixing_layers = num(key, v)?,
            "simulation.burn_in" => sim.burn_in = num(key, v)?,
            "auxiliary.kind" => {
                aux.kind = AuxKind::parse(v).ok_or_else(|| bad(key, v, "rbf, segmentation or seasonal"))?
            }
            "auxiliary.spatial_levels" => aux.spatial_levels = list(key, v)?,
            "auxiliary.temporal_levels" => aux.temporal_levels = list(key, v)?,
            "auxiliary.grid" => aux.grid = num(key, v)?,
            "auxiliary.segment_len" => aux.segment_len = num(key, v)?,
            "auxiliary.period" => aux.period = num(key, v)?,
            "auxiliary.year_breaks" => aux.year_breaks = list(key, v)?,
            "training.epochs" => tr.epochs = num(key, v)?,
            "training.batch_size" => tr.batch_size = num(key, v)?,
            "training.beta" => tr.beta = real(key, v)?,
            "training.ar_order" => tr.ar_order = num(key, v)?,
            "training.latent_dim" => tr.latent_dim = num(key, v)?,
            "training.hidden_layers" => tr.architecture.hidden_layers = num(key, v)?,
            "training.hidden_units" => tr.architecture.hidden_units = num(key, v)?,
            "training.aux_hidden_units" => tr.architecture.aux_hidden_units = num(key, v)?,
            "training.learning_rate" => tr.adam.base_rate = real(key, v)?,
            "training.end_learning_rate" => tr.adam.end_rate = real(key, v)?,
            "training.decay_steps" => tr.adam.decay_steps = num(key, v)?,
            "training.decay_power" => tr.adam.power = real(key, v)?,
            "training.standardize_observations" => tr.standardize_observations = flag(key, v)?,
            "evaluation.holdout" => ev.holdout = num(key, v)?,
            "evaluation.horizon" => ev.horizon = num(key, v)?,
            "evaluation.period" => ev.period = num(key, v)?,
            "evaluation.forecast_mode" => {
                ev.forecast_mode = match v {
                    "mean" => ForecastKind::Mean,
                    "sampled" => ForecastKind::Sampled,
                    _ => return Err(bad(key, v, "mean or sampled")),
                }
            }
            "output.dir" => self.output_dir = v.to_string(),
            "replicate.count" => self.replicate_count = num(key, v)?,
            other => return Err(CliError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> CliResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Apply every line of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            self.apply_assignment(line).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key, one per line, in a fixed order.
    pub fn serialize(&self) -> String {
        let s = &self.simulation;
        let a = &self.auxiliary;
        let t = &self.training;
        let e = &self.evaluation;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("simulation.setting", s.setting.to_string());
        kv("simulation.latent_dim", s.latent_dim.to_string());
        kv("simulation.observed_dim", s.observed_dim.to_string());
        kv("simulation.n_locations", s.n_locations.to_string());
        kv("simulation.n_times", s.n_times.to_string());
        kv("simulation.ar_order", s.ar_order.to_string());
        kv("simulation.mixing_layers", s.mixing_layers.to_string());
        kv("simulation.burn_in", s.burn_in.to_string());
        kv("auxiliary.kind", a.kind.name().into());
        kv("auxiliary.spatial_levels", join(&a.spatial_levels));
        kv("auxiliary.temporal_levels", join(&a.temporal_levels));
        kv("auxiliary.grid", a.grid.to_string());
        kv("auxiliary.segment_len", a.segment_len.to_string());
        kv("auxiliary.period", a.period.to_string());
        kv("auxiliary.year_breaks", join(&a.year_breaks));
        kv("training.epochs", t.epochs.to_string());
        kv("training.batch_size", t.batch_size.to_string());
        kv("training.beta", t.beta.to_string());
        kv("training.ar_order", t.ar_order.to_string());
        kv("training.latent_dim", t.latent_dim.to_string());
        kv("training.hidden_layers", t.architecture.hidden_layers.to_string());
        kv("training.hidden_units", t.architecture.hidden_units.to_string());
        kv("training.aux_hidden_units", t.architecture.aux_hidden_units.to_string());
        kv("training.learning_rate", t.adam.base_rate.to_string());
        kv("training.end_learning_rate", t.adam.end_rate.to_string());
        kv("training.decay_steps", t.adam.decay_steps.to_string());
        kv("training.decay_power", t.adam.power.to_string());
        kv("training.standardize_observations", t.standardize_observations.to_string());
        kv("evaluation.holdout", e.holdout.to_string());
        kv("evaluation.horizon", e.horizon.to_string());
        kv("evaluation.period", e.period.to_string());
        kv(
            "evaluation.forecast_mode",
            match e.forecast_mode {
                ForecastKind::Mean => "mean",
                ForecastKind::Sampled => "sampled",
            }
            .into(),
        );
        kv("output.dir", self.output_dir.clone());
        kv("replicate.count", self.replicate_count.to_string());
        out
    }

    /// Simulation spec for `seed`, validated.
    pub fn simulation_spec(&self, seed: u64) -> CliResult<SimulationSpec> {
        let s = &self.simulation;
        let mut spec = SimulationSpec::new(s.setting, s.latent_dim, s.n_locations, s.n_times, seed);
        spec.observed_dim = s.observed_dim;
        spec.ar_order = s.ar_order;
        spec.mixing_layers = s.mixing_layers;
        spec.burn_in = s.burn_in;
        spec.validate()?;
        Ok(spec)
    }

    /// Training config for `seed`, validated.
    pub fn training_config(&self, seed: u64) -> CliResult<TrainingConfig> {
        let cfg = TrainingConfig {
            seed,
            ..self.training.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn aux_spec(&self) -> CliResult<AuxiliarySpec> {
        let spec = self.auxiliary.spec();
        spec.validate()?;
        Ok(spec)
    }

    /// Cross-field checks not covered by the library validators.
    pub fn validate(&self) -> CliResult<()> {
        self.simulation_spec(self.seed)?;
        self.training_config(self.seed)?;
        self.aux_spec()?;
        if self.replicate_count == 0 {
            return Err(CliError::Config("replicate.count must be at least 1".into()));
        }
        if self.evaluation.holdout >= self.simulation.n_times {
            return Err(CliError::Config(format!(
                "evaluation.holdout = {} leaves no training time points (simulation.n_times = {})",
                self.evaluation.holdout, self.simulation.n_times
            )));
        }
        if self.output_dir.is_empty() {
            return Err(CliError::Config("output.dir must not be empty".into()));
        }
        Ok(())
    }
}
