//! End-to-end runs of the `ivaear` binary on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
simulation.n_locations=6
simulation.n_times=20
training.epochs=2
training.batch_size=16
training.hidden_layers=1
training.hidden_units=8
training.aux_hidden_units=8
auxiliary.spatial_levels=2
auxiliary.temporal_levels=3
";

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn ivaear(&self, out: &str, args: &[&str]) -> Output {
        self.ivaear_env(out, args, &[])
    }

    fn ivaear_env(&self, out: &str, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivaear"));
        cmd.arg("--config")
            .arg(self.path("tiny.cfg"))
            .arg("--out")
            .arg(self.path(out))
            .args(args);
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn simulate(&self, out: &str) -> PathBuf {
        let o = self.ivaear(out, &["simulate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        self.path(out).join("data.csv")
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_desk_scale_row_count_and_header() {
    let run = Run::new();
    // Default simulation size with the tiny training section.
    let o = run.ivaear("sim", &["simulate", "--set", "simulation.n_locations=30", "--set", "simulation.n_times=200"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(&run.path("sim/data.csv"));
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "s1,s2,t,x1,x2,x3,z1,z2,z3");
    assert_eq!(header.split(',').count(), 3 + 3 + 3);
    assert_eq!(lines.count(), 30 * 200);
    let meta = read(&run.path("sim/meta.txt"));
    assert!(meta.contains("seed=1"));
    assert!(meta.contains("simulation.setting=5"));
    assert!(meta.contains("component.3.baselines="));
    assert!(meta.contains("mixing.1.3="));
}

#[test]
fn simulate_is_byte_identical_and_seed_dependent() {
    let run = Run::new();
    let a = run.simulate("a");
    let b = run.simulate("b");
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&run.path("a/meta.txt")), read(&run.path("b/meta.txt")));
    let o = run.ivaear("c", &["--seed", "2", "simulate"]);
    assert_eq!(code(&o), 0);
    assert_ne!(read(&a), read(&run.path("c/data.csv")));
}

#[test]
fn train_evaluate_forecast_pipeline() {
    let run = Run::new();
    let data = run.simulate("sim");
    let data = data.to_str().unwrap();
    let train = |out: &str| {
        run.ivaear(
            out,
            &["train", "--data", data, "--W", "1", "--set", "evaluation.holdout=3"],
        )
    };
    let o = train("m1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o2 = train("m2");
    assert_eq!(code(&o2), 0);
    assert_eq!(
        fs::read(run.path("m1/model.ckpt")).unwrap(),
        fs::read(run.path("m2/model.ckpt")).unwrap()
    );
    let elbo = read(&run.path("m1/elbo.csv"));
    assert_eq!(elbo, read(&run.path("m2/elbo.csv")));
    assert_eq!(elbo.lines().count(), 3);
    assert!(elbo.starts_with("epoch,elbo\n1,"));

    let model = run.path("m1/model.ckpt");
    let model = model.to_str().unwrap();
    let o = run.ivaear("ev", &["evaluate", "--model", model, "--data", data]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read(&run.path("ev/report.txt"));
    let mcc: f64 = report.lines().next().unwrap().strip_prefix("mcc=").unwrap().parse().unwrap();
    assert!((0.0..=1.0 + 1e-12).contains(&mcc));
    let csv = read(&run.path("ev/report.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("label,mcc,wmse,final_elbo\nseed1,"));

    // Origin defaults to the last training time (t = 17); three held-out steps.
    let o = run.ivaear("fc", &["forecast", "--model", model, "--data", data, "--horizon", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = read(&run.path("fc/forecast_report.txt"));
    assert!(rep.contains("origin=17") && rep.contains("model.wmse=") && rep.contains("persistence.wmse="));
    let pred = read(&run.path("fc/forecast.csv"));
    assert_eq!(pred.lines().count(), 1 + 6 * 3);
    // Step-major rows line up with the simulated time-major layout.
    let truth = read(Path::new(data));
    let key = |s: &str| s.split(',').take(3).map(String::from).collect::<Vec<_>>();
    for (p, t) in pred.lines().skip(1).zip(truth.lines().skip(1 + 6 * 17)) {
        assert_eq!(key(p), key(t));
    }
    assert_eq!(read(&run.path("fc/persistence.csv")).lines().count(), 1 + 6 * 3);
}

#[test]
fn forecast_without_truth_skips_metrics_with_notice() {
    let run = Run::new();
    let data = run.simulate("sim");
    let data = data.to_str().unwrap();
    assert_eq!(code(&run.ivaear("m", &["train", "--data", data])), 0);
    let model = run.path("m/model.ckpt");
    let o = run.ivaear(
        "fc",
        &["forecast", "--model", model.to_str().unwrap(), "--data", data, "--origin", "20"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("metrics skipped"));
    assert!(read(&run.path("fc/forecast_report.txt")).contains("metrics=skipped"));
    assert!(run.path("fc/persistence.csv").exists());
}

#[test]
fn plain_ivae_ablation_trains() {
    let run = Run::new();
    let data = run.simulate("sim");
    let o = run.ivaear("m", &["train", "--data", data.to_str().unwrap(), "--W", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn validation_errors_exit_with_one() {
    let run = Run::new();
    let data = run.simulate("sim");
    let data = data.to_str().unwrap();

    let o = run.ivaear("x", &["train", "--data", data, "--W", "20"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("W = 20"), "{}", stderr(&o));

    let o = run.ivaear("x", &["train", "--data", data, "--set", "simulation.observed_dim=4"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("simulation.observed_dim"), "{}", stderr(&o));

    let o = run.ivaear("x", &["--set", "training.epoch=3", "simulate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("training.epoch"));

    let o = run.ivaear("x", &["no-such-command"]);
    assert_eq!(code(&o), 1);

    let mut text: String = read(Path::new(data)).lines().take(4).map(|l| l.to_string() + "\n").collect();
    text.push_str("0.5,0.5,4,NaN,1,1,1,1,1\n");
    let bad = run.path("bad.csv");
    fs::write(&bad, text).unwrap();
    let o = run.ivaear("x", &["train", "--data", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn evaluate_requires_latent_columns() {
    let run = Run::new();
    let data = run.simulate("sim");
    let data = data.to_str().unwrap();
    assert_eq!(code(&run.ivaear("m", &["train", "--data", data])), 0);
    let stripped: String = read(Path::new(data))
        .lines()
        .map(|l| l.split(',').take(6).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let xonly = run.path("xonly.csv");
    fs::write(&xonly, stripped).unwrap();
    let model = run.path("m/model.ckpt");
    let o = run.ivaear(
        "ev",
        &["evaluate", "--model", model.to_str().unwrap(), "--data", xonly.to_str().unwrap()],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("latent"), "{}", stderr(&o));
}

#[test]
fn replicate_serial_and_parallel_agree() {
    let run = Run::new();
    let args = ["replicate", "--count", "3", "--set", "evaluation.holdout=2", "--set", "evaluation.horizon=2"];
    let serial = run.ivaear_env("r1", &args, &[("IVAEAR_THREADS", "1")]);
    assert_eq!(code(&serial), 0, "{}", stderr(&serial));
    let parallel = run.ivaear_env("r2", &args, &[("IVAEAR_THREADS", "3")]);
    assert_eq!(code(&parallel), 0);
    let rows = read(&run.path("r1/replicates.csv"));
    assert_eq!(rows, read(&run.path("r2/replicates.csv")));
    assert_eq!(read(&run.path("r1/summary.csv")), read(&run.path("r2/summary.csv")));
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 4);
    for (k, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{},ok,", 1 + k)), "{line}");
        // forecast and persistence wMSE present
        assert_eq!(line.split(',').filter(|c| !c.is_empty()).count(), 6);
    }
    let stdout = String::from_utf8_lossy(&serial.stdout);
    assert!(stdout.contains("seeds 1,2,3"));
    assert!(stdout.contains("metric,n,q1,median,q3"));
}

#[test]
fn replicate_failures_are_recorded_with_exit_three() {
    let run = Run::new();
    // Two estimated components against three true ones: every evaluation fails.
    let o = run.ivaear("r", &["replicate", "--count", "2", "--latent-dim", "2"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let rows = read(&run.path("r/replicates.csv"));
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.lines().skip(1).all(|l| l.contains(",failed,")));
    assert!(read(&run.path("r/summary.csv")).contains("mcc,0,,,"));
}

#[test]
fn sweep_writes_one_row_per_dimension() {
    let run = Run::new();
    let data = run.simulate("sim");
    let o = run.ivaear("sw", &["sweep", "--data", data.to_str().unwrap(), "--dims", "1,2,3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(&run.path("sw/sweep.csv"));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("latent_dim,elbo,knee\n1,"));
    let o = run.ivaear("sw", &["sweep", "--data", data.to_str().unwrap(), "--dims", "1,2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_command_round_trips() {
    let run = Run::new();
    let o = run.ivaear("c", &["--set", "training.beta=0.02", "config"]);
    assert_eq!(code(&o), 0);
    let printed = String::from_utf8(o.stdout).unwrap();
    assert!(printed.contains("training.beta=0.02\n"));
    assert!(printed.contains("simulation.n_times=20\n"));
    let cfg = ivaear_cli::ExperimentConfig::parse(&printed).unwrap();
    assert_eq!(cfg.serialize(), printed);
}
