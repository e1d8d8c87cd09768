use criterion::{black_box, criterion_group, criterion_main, Criterion};
use daclab_core::analysis::lanczos_top_eigenvalue;
use daclab_core::engine::dsgd_ac_step;
use daclab_core::graph::{build_complete, mixing_at, TopologyKind, TopologySchedule};
use daclab_core::problems::{MlpProblem, NoiseModel, QuadraticProblem, SyntheticTask};
use nalgebra::DMatrix;

fn bench_dsgd_ac_step(c: &mut Criterion) {
    let w = build_complete(8).unwrap();
    let d = 512;
    let mut x = DMatrix::from_fn(d, 8, |r, c| ((r * 31 + c * 7) % 13) as f64 * 0.1 - 0.6);
    let grads = x.clone();
    c.bench_function("dsgd_ac_step d=512 n=8", |b| {
        b.iter(|| dsgd_ac_step(black_box(&mut x), &w, 0.01, 0.3, &grads))
    });
}

fn bench_lanczos(c: &mut Criterion) {
    let lambda: Vec<f64> = (0..200).map(|k| 10f64.powf(k as f64 / 199.0 * 2.0)).collect();
    let q = QuadraticProblem::with_diag(lambda, NoiseModel::isotropic(0.0)).unwrap();
    c.bench_function("lanczos 15 iters d=200", |b| {
        b.iter(|| lanczos_top_eigenvalue(|v| q.hvp(&q.x_star, v), 200, 15, black_box(7)).unwrap())
    });
}

fn bench_mixing_at(c: &mut Criterion) {
    let sched = TopologySchedule::new(TopologyKind::OnePeerExp, 16).unwrap();
    c.bench_function("mixing_at one_peer_exp n=16", |b| {
        b.iter(|| mixing_at(&sched, black_box(3)).unwrap())
    });
}

fn bench_mlp_grad(c: &mut Criterion) {
    let task = SyntheticTask {
        samples: 256,
        test_samples: 64,
        input_dim: 2,
        classes: 2,
        seed: 1234,
        label_noise: 0.15,
        widths: vec![2, 32, 32, 2],
        activation: daclab_core::problems::Activation::Tanh,
    };
    let mlp = MlpProblem::new(task).unwrap();
    let params = mlp.init_params(0);
    let batch: Vec<usize> = (0..64).collect();
    c.bench_function("mlp loss_grad batch=64", |b| {
        b.iter(|| mlp.loss_grad(black_box(&params), &mlp.train, &batch).unwrap())
    });
}

criterion_group!(
    benches,
    bench_dsgd_ac_step,
    bench_lanczos,
    bench_mixing_at,
    bench_mlp_grad
);
criterion_main!(benches);
