use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivaear_cli::commands;
use ivaear_cli::{threads_from_env, CliResult, ExperimentConfig};

/// Nonlinear spatio-temporal blind source separation with iVAEar.
///
/// Settings are resolved in order: built-in defaults, `--config` file,
/// `--set` assignments, then dedicated flags.
#[derive(Parser, Debug)]
#[command(name = "ivaear", version)]
struct Cli {
    /// Config file of `key=value` lines with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Override one config key, e.g. `--set training.epochs=30`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// Auxiliary encoding: rbf, segmentation or seasonal.
    #[arg(long)]
    aux: Option<String>,
    /// Spatial RBF resolution levels, comma-separated.
    #[arg(long = "H", value_name = "LEVELS")]
    spatial: Option<String>,
    /// Temporal RBF resolution levels, comma-separated.
    #[arg(long = "G", value_name = "LEVELS")]
    temporal: Option<String>,
    /// Model AR order; 0 trains the plain iVAE.
    #[arg(long = "W", value_name = "ORDER")]
    ar_order: Option<usize>,
    /// Latent dimension P.
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Reconstruction variance β.
    #[arg(long)]
    beta: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        let pairs = [
            ("auxiliary.kind", self.aux.clone()),
            ("auxiliary.spatial_levels", self.spatial.clone()),
            ("auxiliary.temporal_levels", self.temporal.clone()),
            ("training.ar_order", self.ar_order.map(|v| v.to_string())),
            ("training.latent_dim", self.latent_dim.map(|v| v.to_string())),
            ("training.epochs", self.epochs.map(|v| v.to_string())),
            ("training.beta", self.beta.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset: data.csv and meta.txt.
    Simulate {
        /// Simulation setting 1–6.
        #[arg(long)]
        setting: Option<u8>,
    },
    /// Train on a data file: model.ckpt and elbo.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a checkpoint against data with true latents.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate, train and evaluate `replicate.count` seeds.
    Replicate {
        #[command(flatten)]
        model: ModelFlags,
        /// Number of replicates.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one model per latent dimension and report the ELBO knee.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Latent dimensions, comma-separated and increasing.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Forecast from a checkpoint and compare with persistence.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        /// Last history time; defaults to the model's last training time.
        #[arg(long)]
        origin: Option<i64>,
        /// Truth file; defaults to data rows after the origin.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for a in &cli.set {
        cfg.apply_assignment(a)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    match &cli.command {
        Command::Simulate { setting: Some(s) } => cfg.simulation.setting = *s,
        Command::Train { model, .. } | Command::Sweep { model, .. } => model.apply(&mut cfg)?,
        Command::Replicate { model, count } => {
            model.apply(&mut cfg)?;
            if let Some(c) = count {
                cfg.replicate_count = *c;
            }
        }
        Command::Forecast { horizon: Some(h), .. } => cfg.evaluation.horizon = *h,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Simulate { .. } => {
            let path = commands::simulate(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train { data, .. } => {
            let (_, trace) = commands::train(&cfg, data)?;
            println!(
                "trained {} epochs, final ELBO {}",
                trace.len(),
                trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Evaluate { model, data } => {
            let report = commands::evaluate(&cfg, model, data)?;
            print!("{}", report.to_text());
        }
        Command::Replicate { .. } => {
            let result = commands::replicate(&cfg, threads_from_env()?);
            let dir = PathBuf::from(&cfg.output_dir);
            if let Ok(summary) = std::fs::read_to_string(dir.join(commands::SUMMARY_FILE)) {
                let seeds: Vec<String> = (0..cfg.replicate_count as u64)
                    .map(|k| (cfg.seed + k).to_string())
                    .collect();
                println!("seeds {}", seeds.join(","));
                print!("{summary}");
            }
            result?;
        }
        Command::Sweep { data, dims, .. } => {
            let r = commands::sweep(&cfg, data, dims)?;
            for (p, e) in r.latent_dims.iter().zip(&r.elbo) {
                println!("P={p} elbo={e}");
            }
            match r.knee {
                Some(k) => println!("knee at P={k}"),
                None => println!("no knee detected"),
            }
        }
        Command::Forecast { model, data, origin, truth, .. } => {
            let out = commands::forecast(&cfg, model, data, *origin, truth.as_deref())?;
            match out.scores {
                Some(s) => println!(
                    "wMSE model {} persistence {}",
                    s.model_wmse, s.persistence_wmse
                ),
                None => println!("wrote predictions; metrics skipped"),
            }
        }
        Command::Config => print!("{}", cfg.serialize()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ivaear_cli::error::EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
