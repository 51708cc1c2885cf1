//! Property tests for invariants that hold for every input.

use ivaear::auxdata::{spatial_rbf, temporal_rbf, Standardizer};
use ivaear::dataset::SpatioTemporalDataset;
use ivaear::eval::{correlation_matrix, mcc, mcc_brute_force, wmse};
use ivaear::model::{knee_index, model_init, read_checkpoint, write_checkpoint, Architecture};
use ivaear::neuralnet::{lr_schedule, mlp_init, Activation, AdamConfig, OutputHead, SOFTPLUS_FLOOR};
use ivaear::stfield::{normalize_rows_cols, scale_ar_coefficients};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// `n × p` latent samples with `p` a strategy parameter.
fn latents() -> impl Strategy<Value = Array2<f64>> {
    (2usize..6).prop_flat_map(|p| matrix(40, p, -3.0, 3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mcc_is_invariant_to_permutation_sign_and_scale(
        z in latents(),
        seed in any::<u64>(),
        scales in prop::collection::vec(0.1f64..10.0, 6),
    ) {
        let p = z.ncols();
        let noise = z.mapv(|v| (v * 12.9898 + seed as f64 * 1e-9).sin());
        let est = &z + &(noise * 0.3);
        let base = correlation_matrix(z.view(), est.view()).unwrap();
        let (m0, _) = mcc(base.view()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m0));

        let mut order: Vec<usize> = (0..p).collect();
        order.rotate_left((seed % p as u64) as usize);
        let mut moved = est.select(Axis(1), &order);
        for (j, mut col) in moved.axis_iter_mut(Axis(1)).enumerate() {
            let sign = if (seed >> j) & 1 == 1 { -1.0 } else { 1.0 };
            col.mapv_inplace(|v| sign * scales[j] * v + 5.0);
        }
        let omega = correlation_matrix(z.view(), moved.view()).unwrap();
        let (m1, _) = mcc(omega.view()).unwrap();
        prop_assert!((m0 - m1).abs() < 1e-12, "{} vs {}", m0, m1);
    }

    #[test]
    fn assignment_matches_enumeration(omega in (2usize..7).prop_flat_map(|p| matrix(p, p, -1.0, 1.0))) {
        let (a, _) = mcc(omega.view()).unwrap();
        let (b, _) = mcc_brute_force(omega.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn wmse_is_invariant_to_per_variable_rescaling(
        truth in matrix(12, 3, -5.0, 5.0),
        pred in matrix(12, 3, -5.0, 5.0),
        var in prop::collection::vec(0.1f64..4.0, 3),
        c in prop::collection::vec(0.01f64..100.0, 3),
    ) {
        let w0 = wmse(truth.view(), pred.view(), &var).unwrap();
        let mut t = truth.clone();
        let mut p = pred.clone();
        for j in 0..3 {
            t.column_mut(j).mapv_inplace(|v| v * c[j]);
            p.column_mut(j).mapv_inplace(|v| v * c[j]);
        }
        let v1: Vec<f64> = var.iter().zip(&c).map(|(v, c)| v * c * c).collect();
        let w1 = wmse(t.view(), p.view(), &v1).unwrap();
        prop_assert!((w0 - w1).abs() <= 1e-10 * (1.0 + w0));
        prop_assert!(w0 >= 0.0);
    }

    #[test]
    fn scaled_ar_coefficients_sum_below_one(
        lags in (1usize..4).prop_flat_map(|r| prop::collection::vec(matrix(5, 4, -50.0, 50.0), r)),
    ) {
        let mut lags = lags;
        scale_ar_coefficients(&mut lags).unwrap();
        let mut total = Array2::<f64>::zeros((5, 4));
        for g in &lags {
            total += &g.mapv(f64::abs);
        }
        prop_assert!(total.iter().all(|&v| v < 1.0));
    }

    #[test]
    fn learning_rate_schedule_is_bounded_and_monotone(a in 0u64..20_000, b in 0u64..20_000) {
        let c = AdamConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        let (r_lo, r_hi) = (lr_schedule(lo, &c), lr_schedule(hi, &c));
        prop_assert!(r_hi <= r_lo);
        prop_assert!(r_hi >= c.end_rate - 1e-18 && r_lo <= c.base_rate + 1e-18);
    }

    #[test]
    fn softplus_head_stays_positive(x in matrix(6, 2, -1e3, 1e3), seed in any::<u64>()) {
        let net = mlp_init(&[2, 5, 4], Activation::LeakyRelu, &[OutputHead::linear(2), OutputHead::softplus(2)], seed).unwrap();
        let heads = net.forward_heads(x.view()).unwrap();
        prop_assert!(heads[1].iter().all(|&v| v >= SOFTPLUS_FLOOR && v.is_finite()));
    }

    #[test]
    fn temporal_rbf_is_lipschitz(t in 1.0f64..200.0, dt in 0.0f64..1e-3) {
        let levels = [9, 17, 37];
        let a = temporal_rbf(&[t], &levels, (1.0, 200.0));
        let b = temporal_rbf(&[t + dt], &levels, (1.0, 200.0));
        // each Gaussian has slope at most e^{-1/2}/width and width ≥ 1
        let bound = (-0.5f64).exp() * dt + 1e-15;
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= bound));
        prop_assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn spatial_rbf_is_bounded(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let m = spatial_rbf(&[[x, y]], &[2, 9]);
        prop_assert_eq!(m.ncols(), 4 + 81);
        prop_assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn standardizer_round_trips(data in matrix(10, 3, -1e3, 1e3)) {
        let s = Standardizer::fit(data.view()).unwrap();
        let back = s.invert(s.apply(data.view()).unwrap().view()).unwrap();
        prop_assert!(data.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs())));
    }

    #[test]
    fn square_mixing_normalization_gives_unit_rows_and_columns(b in matrix(4, 4, -1.0, 1.0)) {
        let mut b = b;
        prop_assume!(b.iter().all(|v| v.abs() > 1e-3));
        if normalize_rows_cols(&mut b) {
            for row in b.axis_iter(Axis(0)) {
                prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 0.05 + 1e-9);
            }
            for col in b.axis_iter(Axis(1)) {
                prop_assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_csv_round_trips_exactly(
        x in matrix(8, 2, -1e6, 1e6),
        z in matrix(8, 3, -1e-3, 1e-3),
        coords in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 8),
    ) {
        let coords: Vec<[f64; 2]> = coords.into_iter().map(|(a, b)| [a, b]).collect();
        let times: Vec<i64> = (0..8).map(|t| t / 2 + 1).collect();
        let ds = SpatioTemporalDataset::new(coords, times, x, Some(z)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = SpatioTemporalDataset::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn planted_knee_is_recovered(
        n in 5usize..12,
        k_frac in 0.0f64..1.0,
        steep in 5.0f64..20.0,
        flat in 0.0f64..1.0,
        start in -100.0f64..0.0,
    ) {
        let knee = 1 + ((n - 2) as f64 * k_frac).floor().min((n - 3) as f64) as usize;
        let mut v = start;
        let curve: Vec<f64> = (0..n).map(|i| { let out = v; v += if i < knee { steep } else { flat }; out }).collect();
        prop_assert_eq!(knee_index(&curve), Some(knee));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips(s in 1usize..5, p in 1usize..4, w in 0usize..3, m in 1usize..6, seed in any::<u64>(), beta in 0.01f64..5.0) {
        let arch = Architecture { hidden_layers: 2, hidden_units: 5, aux_hidden_units: 4 };
        let model = model_init(s, p, w, m, arch, beta, seed).unwrap();
        let bytes = write_checkpoint(&model).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    }
}
