use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use propforge_core::cfm::{sample_for_conditions, CfmModel};
use propforge_core::dataset::{generate_dataset, lhs_sample};
use propforge_core::hydro::{simulate_labels, OperatingGrid};
use propforge_core::nn::{MlpConfig, MlpModel};
use propforge_core::par::Execution;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn simulation(c: &mut Criterion) {
    let designs = lhs_sample(32, 1);
    let grid = OperatingGrid::default();
    let mut group = c.benchmark_group("simulate_labels_32");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| simulate_labels(black_box(&designs), &grid, exec).unwrap()));
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let data = generate_dataset(40, 2).unwrap().dataset;
    let field = MlpModel::new(MlpConfig { input_dim: 10, output_dim: 6, hidden_layers: 4, hidden_width: 128, seed: 3 }).unwrap();
    let model = CfmModel { field, norm: propforge_core::dataset::fit_norm(&data).unwrap(), label_envelope: data.label_envelope().unwrap() };
    let conditions: Vec<_> = data.labels().into_iter().cycle().take(512).collect();
    let mut group = c.benchmark_group("sample_512_designs");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| sample_for_conditions(&model, black_box(&conditions), 100, 7, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, simulation, sampling);
criterion_main!(benches);
