//! Sequential vs rayon execution of the two data-parallel hot spots: window
//! extraction and the per-arm initializer comparison (shrunk to bench size).

use criterion::{criterion_group, criterion_main, Criterion};
use loadcast_core::data_ingest::log1p_series;
use loadcast_core::exec::{self, Execution};
use loadcast_core::features::{extract_window, window_starts, WindowConfig, DEFAULT_SPLIT};
use loadcast_core::models::{ModelConfig, ModelKind};
use loadcast_core::nn::Initializer;
use loadcast_core::synthetic::SyntheticLoad;
use loadcast_core::train_eval::{
    compare_initializers_with, experiment_data, featurize_series, TrainConfig,
};

fn modes() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ]
}

fn bench(c: &mut Criterion) {
    let series = log1p_series(&SyntheticLoad::default().series()).unwrap();
    let (matrix, split) = featurize_series(&series, DEFAULT_SPLIT).unwrap();
    let wcfg = WindowConfig::default();
    let starts = window_starts(0..matrix.rows(), &wcfg).unwrap();

    let mut g = c.benchmark_group("windows");
    for (name, mode) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| exec::map_with(mode, &starts, |&s| extract_window(&matrix, s, &wcfg)))
        });
    }
    g.finish();

    let small = WindowConfig {
        training_window: 48,
        predict_window: 8,
        stride: 480,
    };
    let data = experiment_data(&matrix, &split, &small).unwrap();
    let mut mcfg = ModelConfig::new(ModelKind::Model1, Initializer::Zero);
    mcfg.hidden = 8;
    mcfg.training_window = 48;
    mcfg.predict_window = 8;
    let tcfg = TrainConfig {
        epochs: 2,
        n_repeat: 1,
        asgd_start_epoch: 1,
        ..TrainConfig::default()
    };
    let inits = [Initializer::Zero, Initializer::XavierUniform];
    let seeds = [1, 2, 3];
    let mut g = c.benchmark_group("compare");
    g.sample_size(10);
    for (name, mode) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| compare_initializers_with(mode, &mcfg, &tcfg, &data, &inits, &seeds).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
