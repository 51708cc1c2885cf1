//! Simulate, fit, checkpoint and forecast through the public API.

use ivaear::auxdata::AuxiliarySpec;
use ivaear::dataset::SpatioTemporalDataset;
use ivaear::eval::EvalReport;
use ivaear::forecast::{aligned_truth, forecast, persistence_baseline, ForecastMode, ForecastRequest};
use ivaear::model::{dimension_sweep, fit, read_checkpoint, write_checkpoint, Architecture, TrainingConfig};
use ivaear::stfield::{simulate, SimulationSpec};

fn small_data(setting: u8, seed: u64) -> SpatioTemporalDataset {
    simulate(&SimulationSpec::new(setting, 3, 8, 40, seed)).unwrap().to_dataset()
}

fn small_config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 32,
        seed: 4,
        latent_dim: 3,
        architecture: Architecture {
            hidden_layers: 2,
            hidden_units: 16,
            aux_hidden_units: 16,
        },
        ..TrainingConfig::default()
    }
}

fn rbf() -> AuxiliarySpec {
    AuxiliarySpec::Rbf {
        spatial_levels: vec![2],
        temporal_levels: vec![3, 5],
    }
}

#[test]
fn training_raises_the_elbo() {
    let data = small_data(5, 1);
    let out = fit(&data, &rbf(), &small_config(15)).unwrap();
    assert_eq!(out.trace.len(), 15);
    assert!(out.trace.iter().all(|v| v.is_finite()));
    assert!(out.trace.last().unwrap() > out.trace.first().unwrap(), "{:?}", out.trace);
    let z = out.model.latents_for(&data).unwrap();
    assert_eq!(z.dim(), (8 * 40, 3));
    let report = EvalReport::from_latents(data.z.as_ref().unwrap().view(), z.view()).unwrap();
    assert!((0.0..=1.0 + 1e-12).contains(&report.mcc.unwrap()));
}

#[test]
fn fits_are_deterministic_and_seed_dependent() {
    let data = small_data(2, 3);
    let a = fit(&data, &rbf(), &small_config(2)).unwrap();
    let b = fit(&data, &rbf(), &small_config(2)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(write_checkpoint(&a.model).unwrap(), write_checkpoint(&b.model).unwrap());
    let c = fit(&data, &rbf(), &TrainingConfig { seed: 5, ..small_config(2) }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn checkpointed_model_predicts_identically() {
    let data = small_data(5, 2);
    let (train, test) = data.split_at_time(35);
    let out = fit(&train, &rbf(), &small_config(3)).unwrap();
    let restored = read_checkpoint(&write_checkpoint(&out.model).unwrap()).unwrap();
    assert_eq!(restored.trained_until, Some(35));
    assert_eq!(
        restored.latents_for(&data).unwrap(),
        out.model.latents_for(&data).unwrap()
    );
    for mode in [ForecastMode::Mean, ForecastMode::Sampled { seed: 9 }] {
        let mut req = ForecastRequest::new(&out.model, &train, 5);
        req.mode = mode;
        let a = forecast(&req).unwrap();
        req.model = &restored;
        let b = forecast(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), 8 * 5);
        let truth = aligned_truth(&a, &test).expect("held-out rows cover the horizon");
        assert_eq!(truth.dim(), a.x.dim());
    }
    let base = persistence_baseline(&train, 5).unwrap();
    assert_eq!(base.times, forecast(&ForecastRequest::new(&out.model, &train, 5)).unwrap().times);
}

#[test]
fn ablation_and_segmentation_variants_train() {
    let data = small_data(3, 4);
    let plain = TrainingConfig {
        ar_order: 0,
        ..small_config(2)
    };
    fit(&data, &rbf(), &plain).unwrap();
    let seg = AuxiliarySpec::Segmentation {
        grid: 2,
        segment_len: 10,
    };
    let out = fit(&data, &seg, &small_config(2)).unwrap();
    assert_eq!(out.model.aux_dim, 4 + 4);
}

#[test]
fn sweep_trains_one_model_per_dimension() {
    let data = small_data(1, 5);
    let r = dimension_sweep(&data, &rbf(), &[1, 2, 3], &small_config(2)).unwrap();
    assert_eq!(r.latent_dims, vec![1, 2, 3]);
    assert_eq!(r.elbo.len(), 3);
    assert!(dimension_sweep(&data, &rbf(), &[1, 2], &small_config(1)).is_err());
    assert!(dimension_sweep(&data, &rbf(), &[2, 1, 3], &small_config(1)).is_err());
}

#[test]
fn csv_round_trip_preserves_simulated_data() {
    let data = small_data(6, 6);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    assert_eq!(SpatioTemporalDataset::read_csv(buf.as_slice()).unwrap(), data);
}
