use criterion::{criterion_group, criterion_main, Criterion};
use feedfuse::datagen::DataMode;
use feedfuse::domain::Dimension;
use feedfuse::harness::{run_grid_with, DataSource, Execution, ExperimentConfig};

fn small_config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataSource::Synthetic {
            mode: DataMode::Analytic,
            spec: None,
            seed: 0,
            n_instances: Some(400),
        },
        dimensions: vec![Dimension::Anatomic, Dimension::Praise],
        seeds: vec![0, 1],
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = 2;
    cfg
}

fn bench_grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    let mut modes = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    modes.push(("parallel", Execution::Parallel));
    for (name, exec) in modes {
        group.bench_function(name, |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                run_grid_with(&small_config(dir.path()), exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_grid);
criterion_main!(benches);
