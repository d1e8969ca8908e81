use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use lorascape::landscape::lanczos_min_eig;
use lorascape::objectives::{matrix_sensing_objective, planted_spurious_quadratic};
use lorascape::optim::{factored_gd, make_init, InitScheme, RunConfig};
use lorascape::RegularizedObjective;

fn factored_steps(c: &mut Criterion) {
    let p = planted_spurious_quadratic().unwrap();
    let obj = RegularizedObjective::factored(Arc::new(p.objective.clone()), p.lambda).unwrap();
    // Fixed step count: the tolerance is unreachable.
    let cfg = RunConfig {
        learning_rate: 0.02,
        weight_decay: p.lambda,
        max_steps: 1000,
        grad_tol: 1e-300,
        snapshot_stride: 1000,
        ..Default::default()
    };
    let init = InitScheme::centered(0.5, 1);
    c.bench_function("factored_gd/planted/1000_steps", |b| {
        b.iter(|| factored_gd(black_box(&obj), &init, 2, &cfg).unwrap())
    });
}

fn lanczos(c: &mut Criterion) {
    let f = Arc::new(matrix_sensing_objective(200, (16, 12), 3, 2).unwrap());
    let obj = RegularizedObjective::factored(f, 0.05).unwrap();
    let point = make_init(&InitScheme::centered(0.3, 4), obj.shapes(), 6).unwrap();
    let dim = point.num_entries();
    c.bench_function("lanczos_min_eig/sensing_16x12_r6", |b| {
        b.iter(|| {
            lanczos_min_eig(
                dim,
                |v| obj.factored_hvp(&point, &point.like_from_slice(v.as_slice())).to_vector(),
                200,
                0,
            )
        })
    });
}

criterion_group!(benches, factored_steps, lanczos);
criterion_main!(benches);
