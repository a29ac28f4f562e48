//! Sequential helpers against the dispatched (rayon when enabled) ones on the
//! hot loops: Monte Carlo CDF counts, pair-copula sampling and per-seed runs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use copconf::copulas::{fit_pair_tkde, fit_vine, CopulaModel, VineOptions};
use copconf::datagen::{NoiseCopula, SyntheticSpec};
use copconf::experiment::{load_data, run_seed, DataSource, RunConfig, Scheme};
use copconf::marginals::{fit_ecdfs, pit_transform};
use copconf::par;

fn gumbel_sample(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseCopula::Gumbel(2.0);
    let mut w = vec![0.0; d];
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        noise.sample_row(d, &mut rng, &mut w);
        row.assign(&ndarray::ArrayView1::from(&w[..]));
    }
    out
}

fn mc_count(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc_cdf_count");
    for n in [20_000usize, 200_000] {
        let data = gumbel_sample(n, 4, 1).into_raw_vec_and_offset().0;
        let u = [0.9, 0.85, 0.95, 0.9];
        let pred = |row: &[f64]| row.iter().zip(&u).all(|(a, b)| a <= b);
        group.bench_with_input(BenchmarkId::new("dispatched", n), &data, |b, data| {
            b.iter(|| par::count_chunks(black_box(data), 4, pred))
        });
        group.bench_with_input(BenchmarkId::new("seq", n), &data, |b, data| {
            b.iter(|| par::seq::count_chunks(black_box(data), 4, pred))
        });
    }
    group.finish();
}

fn tkde_sampling(c: &mut Criterion) {
    let sample = gumbel_sample(300, 2, 2);
    let pseudo = pit_transform(&fit_ecdfs(sample.view()).unwrap(), sample.view()).unwrap();
    let pair = fit_pair_tkde(&pseudo.column(0), &pseudo.column(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w: Vec<(f64, f64)> = (0..5_000)
        .map(|_| (rng.random_range(1e-6..1.0), rng.random_range(1e-6..1.0)))
        .collect();
    let mut group = c.benchmark_group("tkde_sampling");
    group.sample_size(10);
    group.bench_function("seq", |b| {
        b.iter(|| par::seq::map_slice(black_box(&w), |&(a, b)| pair.sample_with(a, b)))
    });
    group.bench_function("dispatched", |b| {
        b.iter(|| par::map_slice(black_box(&w), |&(a, b)| pair.sample_with(a, b)))
    });
    group.finish();
}

fn vine_mc_cache(c: &mut Criterion) {
    let sample = gumbel_sample(200, 3, 4);
    let pseudo = pit_transform(&fit_ecdfs(sample.view()).unwrap(), sample.view()).unwrap();
    let vine = fit_vine(&pseudo, &VineOptions::default()).unwrap();
    let mut group = c.benchmark_group("vine_sample");
    group.sample_size(10);
    group.bench_function("dispatched_20k", |b| {
        b.iter(|| black_box(&vine).sample(20_000, 7))
    });
    group.finish();
    if let CopulaModel::Vine(v) = &vine {
        println!("vine pairs: {}", v.structure().pair_count());
    }
}

fn seeds(c: &mut Criterion) {
    let config = RunConfig {
        schemes: vec![Scheme::Independent, Scheme::Corrected],
        seeds: (0..4).collect(),
        mc_samples: 5_000,
        n_cal: Some(150),
        n_test: Some(300),
        data: Some(DataSource::Synthetic(SyntheticSpec::new(3, 900, NoiseCopula::Gumbel(2.0), 5))),
        ..RunConfig::default()
    };
    let data = load_data(config.data.as_ref().unwrap()).unwrap();
    let mut group = c.benchmark_group("run_seeds");
    group.sample_size(10);
    group.bench_function("seq", |b| {
        b.iter(|| par::seq::map_slice(&config.seeds, |&s| run_seed(&config, &data, s).unwrap()))
    });
    group.bench_function("dispatched", |b| {
        b.iter(|| par::map_slice(&config.seeds, |&s| run_seed(&config, &data, s).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, mc_count, tkde_sampling, vine_mc_cache, seeds);
criterion_main!(benches);
