use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use eppf_bench::full_descriptor;
use eppf_core::{DescriptorConfig, NetworkConfig, TrainedModel, Variant};

fn forward(c: &mut Criterion) {
    let d = full_descriptor();
    let classes: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let mut group = c.benchmark_group("forward_single_descriptor");
    group.sample_size(10);
    for v in Variant::ALL {
        let cfg = NetworkConfig::new(v, classes.len());
        let mut model = TrainedModel::untrained(&cfg, classes.clone(), DescriptorConfig::full()).unwrap();
        group.bench_function(v.to_string(), |b| b.iter(|| model.predict(black_box(&d)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
