use criterion::{black_box, criterion_group, criterion_main, Criterion};
use flint_core::data::synth_shapes_split;
use flint_core::losses::{soft_entropy_grad, LossWeights, StageMask};
use flint_core::metrics::{projection_depth_with_directions, random_directions};
use flint_core::models::{BundleSpec, ModelBundle};
use flint_core::training::{loss_and_grads, StepOptions};
use flint_core::visualization::{ampi_objective_grad, AmpiParams};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn training_step(c: &mut Criterion) {
    let (data, _) = synth_shapes_split(16, 1, 0).unwrap();
    let bundle = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 0).unwrap();
    let images = data.images.slice(s![..8, .., .., ..]).to_owned();
    let labels = data.labels[..8].to_vec();
    let opts = StepOptions {
        weights: LossWeights::MNIST,
        mask: StageMask::ALL,
        of_into_predictor: false,
    };
    c.bench_function("lenet_desk forward+backward, batch 8", |b| {
        b.iter(|| loss_and_grads(black_box(&bundle), &images, &labels, &opts).unwrap())
    });
    c.bench_function("lenet_desk forward, batch 8", |b| {
        b.iter(|| black_box(&bundle).predict(&images).unwrap())
    });
}

fn ampi_step(c: &mut Criterion) {
    let (data, _) = synth_shapes_split(1, 1, 0).unwrap();
    let bundle = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 0).unwrap();
    let x = data.image(0);
    let params = AmpiParams::default();
    c.bench_function("AM+PI objective gradient", |b| {
        b.iter(|| ampi_objective_grad(black_box(&bundle), &x, 3, &params).unwrap())
    });
}

fn depth(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cloud = Array2::from_shape_fn((100, 784), |_| rng.random::<f64>());
    let dirs = random_directions(784, 1000, 0);
    let x: Vec<f64> = (0..784).map(|_| rng.random()).collect();
    c.bench_function("projection depth, 100x784, 1000 directions", |b| {
        b.iter(|| projection_depth_with_directions(black_box(&x), &cloud, &dirs).unwrap())
    });
}

fn entropy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: Vec<f64> = (0..25).map(|_| rng.random_range(-5.0..5.0)).collect();
    c.bench_function("soft entropy and gradient, n=25", |b| {
        b.iter(|| soft_entropy_grad(black_box(&v)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = training_step, ampi_step, depth, entropy
}
criterion_main!(benches);
