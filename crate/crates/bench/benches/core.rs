use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simreweight_core::dataset::{DatasetBundle, DatasetConfig};
use simreweight_core::model::{Geometry, ModelConfig, MstNet};
use simreweight_core::pipeline::{simulate, SimulatorConfig};
use simreweight_core::reweighter::{Problem, ReweightConfig};
use simreweight_core::simulator::{generate_cube, ScenarioConfig};
use simreweight_core::trainer::ModelLearner;

fn setup() -> (MstNet, DatasetBundle, Vec<f64>) {
    let sim = SimulatorConfig { n_scenarios: 2, ..Default::default() };
    let bundle = simulate(&sim, &DatasetConfig::default()).expect("bundle");
    let model = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        cnn_channels: 4,
        mlp_hidden: 16,
        dropout_rate: 0.0,
        ..Default::default()
    };
    let net = MstNet::new(model, Geometry::of(&bundle.config)).expect("model");
    let phi = net.init(&mut ChaCha8Rng::seed_from_u64(0)).flat;
    (net, bundle, phi)
}

fn benches(c: &mut Criterion) {
    c.bench_function("simulate_cube_8x8x336", |b| {
        let cfg = ScenarioConfig::reference_real();
        b.iter(|| generate_cube(black_box(&cfg)).expect("cube"))
    });

    let (net, bundle, phi) = setup();
    let learner = ModelLearner { net: &net, task_weights: [1.0 / 3.0; 3], chunk: 8 };
    let sim = &bundle.sim[..8];
    let val = &bundle.val[..8];
    let cfg = ReweightConfig::default();
    let problem = Problem::new(&learner, sim, val, cfg).expect("problem");
    let w = vec![0.0; sim.len()];

    c.bench_function("forward_backward_8_samples", |b| {
        b.iter(|| problem.inner_grad(black_box(&w), black_box(&phi)).expect("grad"))
    });

    let trace = problem.k_step_inner(&w, &phi).expect("trace");
    let (_, v) = problem.outer_grad(trace.psi()).expect("outer grad");
    c.bench_function("hypergradient_k3_8_samples", |b| {
        b.iter(|| problem.hypergradient(black_box(&w), &trace, black_box(&v)).expect("hypergradient"))
    });
}

criterion_group! {
    name = core;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(core);
