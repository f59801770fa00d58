use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use evoheur::insights::{credit_signal, jaccard_similarity};
use evoheur::problems::{bpp, fssp, gls, tsp};
use evoheur_bench::{bpp_instance, fssp_instance, full_pool, principle, tsp_instance};

fn problems(c: &mut Criterion) {
    let inst = fssp_instance(50, 10);
    let mut perm: Vec<usize> = (0..inst.n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    c.bench_function("fssp_makespan_50x10", |b| b.iter(|| fssp::makespan_unchecked(black_box(&inst.times), black_box(&perm))));

    let small = fssp_instance(20, 5);
    c.bench_function("fssp_local_search_20x5", |b| {
        b.iter_batched(
            || fssp::initial_order(&small),
            |mut p| fssp::local_search(&mut p, &small.times, None),
            BatchSize::SmallInput,
        )
    });

    let items = bpp_instance(5000);
    c.bench_function("bpp_best_fit_5k", |b| b.iter(|| bpp::best_fit(black_box(&items)).bins()));
    c.bench_function("bpp_first_fit_5k", |b| b.iter(|| bpp::first_fit(black_box(&items)).bins()));

    let cities = tsp_instance(100);
    c.bench_function("tsp_nearest_neighbor_100", |b| b.iter(|| tsp::nearest_neighbor(black_box(&cities))));
    c.bench_function("tsp_two_opt_relocate_100", |b| {
        b.iter_batched(
            || tsp::nearest_neighbor(&cities),
            |mut t| gls::local_search(&mut t, &cities.dist),
            BatchSize::SmallInput,
        )
    });
}

fn insight_pool(c: &mut Criterion) {
    c.bench_function("credit_signal", |b| b.iter(|| credit_signal(black_box(3.0), 2.0, 5.0, 9.0)));
    let (x, y) = (principle(1), principle(2));
    c.bench_function("jaccard_similarity", |b| b.iter(|| jaccard_similarity(black_box(&x), black_box(&y))));

    let pool = full_pool();
    c.bench_function("pool_retrieve_30", |b| {
        b.iter_batched(|| pool.clone(), |mut p| p.retrieve(2), BatchSize::SmallInput)
    });
    c.bench_function("pool_admit_and_prune_30", |b| {
        b.iter_batched(
            || pool.clone(),
            |mut p| {
                p.admit(&principle(1000), 3);
                p.prune(3)
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, problems, insight_pool);
criterion_main!(benches);
