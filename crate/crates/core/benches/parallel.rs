//! Sequential vs data-parallel timings for the hot paths.
//!
//! With the `parallel` feature each benchmark runs twice: inside a one-thread
//! rayon pool and inside the default pool. Without it only the sequential
//! variant exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfu::attacks::kmeans;
use vfu::data::{synth_blobs, Split, VerticalDataset};
use vfu::numcore::{SgdConfig, Tensor};
use vfu::protocol::{train_epoch, FederationSpec, SplitFederation};

fn dataset(parties: usize) -> VerticalDataset {
    let ds = synth_blobs(10, 400, 784, 3.0, 1).unwrap();
    VerticalDataset::from_dataset(&ds, parties, Split::Train).unwrap()
}

fn federation(ds: &VerticalDataset) -> SplitFederation {
    let spec = FederationSpec {
        input_widths: ds.widths(),
        bottom_hidden: vec![128],
        embedding_dim: 64,
        top_hidden: vec![128],
        num_classes: ds.num_classes(),
    };
    let mut fed = SplitFederation::new(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    fed.attach(ds).unwrap();
    fed
}

fn pools() -> Vec<(&'static str, Option<usize>)> {
    if cfg!(feature = "parallel") {
        vec![("sequential", Some(1)), ("parallel", None)]
    } else {
        vec![("sequential", None)]
    }
}

#[cfg(feature = "parallel")]
fn within<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().unwrap().install(f)
}

#[cfg(not(feature = "parallel"))]
fn within<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench_logits(c: &mut Criterion) {
    let mut group = c.benchmark_group("dataset_logits");
    group.sample_size(10);
    for parties in [2, 4] {
        let ds = dataset(parties);
        let fed = federation(&ds);
        let rows: Vec<usize> = (0..ds.len()).collect();
        for (name, threads) in pools() {
            group.bench_with_input(BenchmarkId::new(name, parties), &parties, |b, _| {
                within(threads, || b.iter(|| fed.dataset_logits(&ds, &rows).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    let ds = dataset(4);
    let rows: Vec<usize> = (0..1000).collect();
    let sgd = SgdConfig::descent(0.01);
    for (name, threads) in pools() {
        group.bench_function(name, |b| {
            within(threads, || {
                b.iter_batched(
                    || (federation(&ds), ChaCha8Rng::seed_from_u64(3)),
                    |(mut fed, mut rng)| train_epoch(&mut fed, &ds, Some(&rows), 64, &sgd, &mut rng).unwrap(),
                    criterion::BatchSize::LargeInput,
                )
            })
        });
    }
    group.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans_restarts");
    group.sample_size(10);
    let blobs = synth_blobs(4, 500, 64, 2.0, 5).unwrap();
    let points: Tensor = blobs.features;
    for (name, threads) in pools() {
        group.bench_function(name, |b| within(threads, || b.iter(|| kmeans(&points, 4, 32, 7).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, bench_logits, bench_epoch, bench_kmeans);
criterion_main!(benches);
