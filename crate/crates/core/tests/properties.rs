//! Invariants across modules, checked on random inputs.

use chrono::{Duration, NaiveDate};
use loadcast_core::checkpoint::{self, Checkpoint};
use loadcast_core::exec::{self, Execution};
use loadcast_core::features::{
    dow_encoding, extract_window, lagged_features, month_offset_steps, window_starts,
    AutocorrFeature, FeatureMatrix, SplitPlan, WindowConfig, DEMAND_COL, N_COLUMNS, N_Y_FEATURES,
};
use loadcast_core::models::{Model, ModelConfig, ModelKind, Standardizer};
use loadcast_core::nn::loss::smape_terms;
use loadcast_core::nn::{seeded_rng, Activation, Initializer, Parameter, Tensor};
use loadcast_core::train_eval::{mean, postprocess_predictions, sample_std, EvalReport};
use proptest::prelude::*;
use rand::Rng;

fn toy_matrix(rows: usize, seed: u64) -> FeatureMatrix {
    let mut rng = seeded_rng(seed, 0);
    let t0 = NaiveDate::from_ymd_opt(2017, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let feature = |lag_steps| AutocorrFeature {
        lag_steps,
        value: 0.5,
    };
    FeatureMatrix {
        series_offset: 0,
        timestamps: (0..rows)
            .map(|i| t0 + Duration::minutes(30 * i as i64))
            .collect(),
        data: (0..rows * N_COLUMNS)
            .map(|_| rng.random_range(0.0..10.0))
            .collect(),
        autocorr: (feature(17520), feature(4383)),
    }
}

proptest! {
    #[test]
    fn smape_terms_are_bounded(pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..200)) {
        let (f, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        for t in smape_terms(&f, &a).unwrap() {
            prop_assert!((0.0..=2.0).contains(&t), "{t}");
        }
    }

    #[test]
    fn dow_points_lie_on_unit_circle(days in 0i64..20_000, half_hours in 0i64..48) {
        let t = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
            + Duration::days(days) + Duration::minutes(30 * half_hours);
        let (c, s) = dow_encoding(t);
        prop_assert!((c * c + s * s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asgd_average_is_snapshot_mean(traj in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..100)) {
        let mut p = Parameter::new("fc.weight", "zero", Tensor::zeros(&[3]));
        for snap in &traj {
            p.value = Tensor::new(vec![3], snap.clone()).unwrap();
            p.asgd_accumulate();
        }
        let avg = p.asgd_avg.as_ref().unwrap().data().to_vec();
        for (j, a) in avg.iter().enumerate() {
            let want = traj.iter().map(|s| s[j]).sum::<f64>() / traj.len() as f64;
            prop_assert!((a - want).abs() < 1e-12);
        }
        prop_assert_eq!(p.asgd_count, traj.len() as u64);
    }

    #[test]
    fn initializers_respect_their_support(fan_in in 1usize..40, fan_out in 1usize..40, seed in 0u64..1000) {
        let mut rng = seeded_rng(seed, 1);
        let shape = [fan_in, fan_out];
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        let xu = Initializer::XavierUniform.weight(&shape, &mut rng).unwrap();
        prop_assert!(xu.data().iter().all(|v| v.abs() <= (6.0 / (fi + fo)).sqrt()));
        let hu = Initializer::HeUniform.weight(&shape, &mut rng).unwrap();
        prop_assert!(hu.data().iter().all(|v| v.abs() <= (6.0 / fi).sqrt()));
        let hn = Initializer::HeNormal.weight(&shape, &mut rng).unwrap();
        prop_assert!(hn.data().iter().all(|v| v.abs() <= 2.0 * (2.0 / fi).sqrt()));
        let z = Initializer::Zero.weight(&shape, &mut rng).unwrap();
        prop_assert!(z.data().iter().all(|v| *v == 0.0));
        let id = Initializer::Identity.weight(&shape, &mut rng).unwrap();
        for i in 0..fan_in {
            for j in 0..fan_out {
                prop_assert_eq!(id.data()[i * fan_out + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn report_statistics_recompute(mapes in prop::collection::vec(0.0f64..50.0, 1..60)) {
        let r = EvalReport::from_windows(mapes.clone());
        prop_assert!((r.mean_mape - mean(&mapes)).abs() < 1e-12);
        prop_assert!((r.std_mape - sample_std(&mapes)).abs() < 1e-12);
        prop_assert!(r.per_window_mape.iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn postprocessed_forecasts_are_non_negative_integers(v in prop::collection::vec(-5.0f64..12.0, 0..100)) {
        let out = postprocess_predictions(&v);
        prop_assert_eq!(out.len(), v.len());
        for (o, x) in out.iter().zip(&v) {
            prop_assert_eq!(*o as f64, x.exp_m1().max(0.0).round());
        }
    }

    #[test]
    fn splits_are_contiguous_and_disjoint(
        rows in 1usize..50_000,
        a in 0.05f64..1.0,
        b in 0.0f64..1.0,
        align in prop::sample::select(vec![1usize, 48]),
    ) {
        let rest = 1.0 - a;
        let fr = [a, rest * b, rest - rest * b];
        let p = SplitPlan::by_fractions_aligned(rows, fr, align).unwrap();
        prop_assert_eq!(p.train.start, 0);
        prop_assert_eq!(p.train.end, p.validation.start);
        prop_assert_eq!(p.validation.end, p.test.start);
        prop_assert_eq!(p.test.end, rows);
        prop_assert!(p.train.end <= p.validation.end);
    }

    #[test]
    fn windows_pair_targets_with_demand(rows in 10usize..300, tw in 1usize..40, pw in 1usize..20, stride in 1usize..30, seed in 0u64..100) {
        prop_assume!(rows >= tw + pw);
        let m = toy_matrix(rows, seed);
        let cfg = WindowConfig { training_window: tw, predict_window: pw, stride };
        for s in window_starts(0..rows, &cfg).unwrap() {
            let w = extract_window(&m, s, &cfg);
            prop_assert_eq!(w.y_start, w.x_start + tw);
            prop_assert_eq!(w.x.shape(), &[tw, N_COLUMNS][..]);
            prop_assert_eq!(w.y_features.shape(), &[pw, N_Y_FEATURES][..]);
            for i in 0..pw {
                let row = m.row(w.y_start + i);
                prop_assert_eq!(w.y_targets[i], row[DEMAND_COL]);
                // y features are the row without its demand column.
                let feats = &w.y_features.data()[i * N_Y_FEATURES..(i + 1) * N_Y_FEATURES];
                prop_assert_eq!(feats, &row[DEMAND_COL + 1..]);
            }
        }
    }

    #[test]
    fn scaler_roundtrips(values in prop::collection::vec(0.0f64..20.0, 1..100), probe in -50.0f64..50.0) {
        let s = Standardizer::fit(&values);
        prop_assert!(s.std > 0.0);
        prop_assert!((s.inverse(s.apply(probe)) - probe).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoints_roundtrip_exactly(
        seq in any::<bool>(),
        hidden in 1usize..6,
        init in prop::sample::select(Initializer::ALL.to_vec()),
        act in prop::sample::select(vec![Activation::Identity, Activation::Tanh, Activation::Sigmoid]),
        seed in 0u64..10_000,
        mean in 5.0f64..10.0,
    ) {
        let cfg = ModelConfig {
            kind: if seq { ModelKind::Seq2Seq } else { ModelKind::Model1 },
            input_dim: N_COLUMNS,
            hidden,
            fc_activation: act,
            fc_initializer: init,
            training_window: 6,
            predict_window: 3,
        };
        let mut model = Model::new(cfg, seed).unwrap();
        // Give the averaged parameters something to carry.
        for p in model.params.iter_mut().filter(|p| p.averaged) {
            p.asgd_accumulate();
            for v in p.value.data_mut() {
                *v += 0.125;
            }
            p.asgd_accumulate();
        }
        let feature = |lag_steps, value| AutocorrFeature { lag_steps, value };
        let ck = Checkpoint {
            model,
            scaler: Standardizer { mean, std: 0.3 },
            autocorr: (feature(17520, 0.9), feature(4383, -0.2)),
        };
        let text = checkpoint::save(&ck);
        let back = checkpoint::load(&text).unwrap();
        prop_assert_eq!(&back.model.params, &ck.model.params);
        prop_assert_eq!(back.scaler, ck.scaler);
        prop_assert_eq!(checkpoint::save(&back), text);
    }
}

#[test]
fn lag_column_matches_demand_on_matching_period() {
    let lag = month_offset_steps(3);
    let v: Vec<f64> = (0..3 * lag)
        .map(|t| ((t % lag) as f64 * 0.37).sin())
        .collect();
    let l = lagged_features(&v, &[3]).unwrap();
    assert_eq!(l.columns[0], v[l.first_row..].to_vec());
}

#[test]
fn sequential_and_parallel_windows_agree() {
    let m = toy_matrix(2_000, 7);
    let cfg = WindowConfig {
        training_window: 96,
        predict_window: 24,
        stride: 13,
    };
    let starts = window_starts(0..m.rows(), &cfg).unwrap();
    let seq = exec::map_with(Execution::Sequential, &starts, |&s| {
        extract_window(&m, s, &cfg)
    });
    let par = exec::map_with(Execution::Parallel, &starts, |&s| {
        extract_window(&m, s, &cfg)
    });
    assert_eq!(seq, par);
}
