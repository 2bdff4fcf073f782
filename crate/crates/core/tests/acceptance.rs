//! Acceptance criteria 1-9. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured numbers, then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simreweight_core::autodiff::check::check_primitives;
use simreweight_core::autodiff::{sigmoid, Graph, Tensor};
use simreweight_core::dataset::{self, DatasetBundle, DatasetConfig};
use simreweight_core::eval::{
    compare_reweighting, corrupt, evaluate, mae, rmse, run_variant, subsample, ExperimentConfig, MetricsReport, Variant,
};
use simreweight_core::model::{
    gradcheck_end_to_end, gradcheck_setup, save_checkpoint, Checkpoint, Geometry, Mode, ModelConfig, MstNet,
};
use simreweight_core::pipeline::{simulate, SimulatorConfig};
use simreweight_core::reweighter::{
    history_csv, phase1_step, weights_csv, LinearRegression, PlaneOffset, Problem, ReweightConfig, State,
};
use simreweight_core::simulator::{RandomizationRanges, ScenarioConfig};
use simreweight_core::trainer::{epoch_csv, train, TaskWeights, TrainConfig};
use simreweight_core::Task;

/// Written to stdout directly so the line survives the test harness's output
/// capture for passing tests.
fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

/// Small experiment used by the model-scale criteria.
fn small_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        cnn_channels: 4,
        mlp_hidden: 16,
        dropout_rate: 0.0,
        ..Default::default()
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    const STEP: f64 = 1e-5;
    let mut worst_prim = 0.0_f64;
    let mut worst_e2e = 0.0_f64;
    for seed in 0..10 {
        for c in check_primitives(seed, STEP).unwrap() {
            worst_prim = worst_prim.max(c.max_rel_err);
        }
        worst_e2e = worst_e2e.max(gradcheck_end_to_end(seed, STEP, 20).unwrap().max_rel_err);
    }
    let (model, data) = gradcheck_setup();
    assert_eq!((model.d_model, data.l_in), (8, 8));
    let pass = worst_prim <= 1e-4 && worst_e2e <= 1e-3;
    verdict(
        1,
        pass,
        &format!("worst primitive {worst_prim:.2e} <= 1e-4, worst end-to-end {worst_e2e:.2e} <= 1e-3, 10 seeds"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_bilevel_oracle() {
    let lr = LinearRegression { dim: 1 };
    let sim = vec![(vec![1.0], 1.0), (vec![1.0], -1.0)];
    let val = vec![(vec![1.0], 1.0)];
    let cfg = ReweightConfig { k: 5, eta: 0.2, ..Default::default() };
    let p = Problem::new(&lr, &sim, &val, cfg).unwrap();
    let out = p.run(vec![0.0, 0.0], vec![0.0]).unwrap();

    // Fixed point of the K-step solver warm-started from itself:
    // ∇g = (σ1+σ2)φ − (σ1−σ2) = 0.
    let fixed_point = |w: [f64; 2]| {
        let (s1, s2) = (sigmoid(w[0]), sigmoid(w[1]));
        (s1 - s2) / (s1 + s2)
    };
    // The closed form is what iterating the solver converges to.
    for w in [[4.0, -4.0], [0.0, 0.0], [-1.5, 2.5], [3.0, 3.0]] {
        let mut phi = vec![0.0];
        for _ in 0..3000 {
            phi = p.k_step_inner(&w, &phi).unwrap().psi().to_vec();
        }
        assert!((phi[0] - fixed_point(w)).abs() < 1e-9, "{w:?}: {} vs {}", phi[0], fixed_point(w));
    }
    let mut best = f64::INFINITY;
    for i in 0..=160 {
        for j in 0..=160 {
            let w = [-4.0 + 0.05 * i as f64, -4.0 + 0.05 * j as f64];
            best = best.min(p.outer_loss(&[fixed_point(w)]).unwrap());
        }
    }
    let gap = (out.final_g - best).abs();
    let (s1, s2) = (sigmoid(out.w[0]), sigmoid(out.w[1]));
    let pass = gap <= 1e-2 && s1 > s2;
    verdict(
        2,
        pass,
        &format!("G = {:.5}, oracle {best:.5}, |diff| {gap:.2e} <= 1e-2; sigma = ({s1:.3}, {s2:.3})", out.final_g),
    );
    assert!(pass);
}

#[test]
fn criterion_3_cutting_plane_invariants() {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut inserted, mut removed, mut worst_tangency) = (0usize, 0usize, 0.0_f64);
    let mut violations = Vec::new();
    for run in 0..20 {
        let dim = rng.random_range(1..=3);
        let n = rng.random_range(3..=8);
        let sample = |rng: &mut ChaCha8Rng| {
            ((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), rng.random_range(-1.0..1.0))
        };
        let sim: Vec<_> = (0..n).map(|_| sample(&mut rng)).collect();
        let val: Vec<_> = (0..2).map(|_| sample(&mut rng)).collect();
        let cfg = ReweightConfig {
            k: rng.random_range(1..=4),
            eta: rng.random_range(0.05..0.5),
            epsilon: 10f64.powf(rng.random_range(-4.0..-2.0)),
            eta_w: rng.random_range(0.01..1.0),
            eta_phi: rng.random_range(0.01..0.2),
            eta_mu: rng.random_range(0.1..5.0),
            delta: rng.random_range(2..=6),
            plane_offset: if run % 2 == 0 { PlaneOffset::Residual } else { PlaneOffset::Paper },
            ..Default::default()
        };
        let lr = LinearRegression { dim };
        let p = Problem::new(&lr, &sim, &val, cfg.clone()).unwrap();
        let phi0: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s = State::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), phi0);
        let mut ever: Vec<usize> = Vec::new();
        for t in 0..60 {
            if t % cfg.delta == 0 {
                let before: Vec<(usize, f64)> = s.planes.iter().map(|pl| (pl.id, pl.mu)).collect();
                let m = p.manage_polyhedron(&mut s, t).unwrap();
                removed += m.removed.len();
                for (id, mu) in &before {
                    let kept = s.planes.iter().any(|pl| pl.id == *id);
                    if *mu <= TOL && kept {
                        violations.push(format!("run {run} iter {t}: plane {id} with mu {mu:e} kept"));
                    }
                }
                if s.planes.len() > before.len() + 1 {
                    violations.push(format!("run {run} iter {t}: more than one plane added"));
                }
                if let Some(ins) = &m.inserted {
                    inserted += 1;
                    worst_tangency = worst_tangency.max(ins.tangency_residual.abs());
                    if ever.contains(&ins.id) {
                        violations.push(format!("run {run} iter {t}: plane id {} reused", ins.id));
                    }
                    ever.push(ins.id);
                }
            }
            let (_, grad) = p.outer_grad(&s.phi).unwrap();
            phase1_step(&mut s, &grad, &cfg);
            if let Some(pl) = s.planes.iter().find(|pl| pl.mu < 0.0) {
                violations.push(format!("run {run} iter {t}: plane {} has mu {}", pl.id, pl.mu));
            }
        }
    }
    let pass = violations.is_empty() && worst_tangency <= 1e-9 && inserted > 0 && removed > 0;
    verdict(
        3,
        pass,
        &format!("20 runs, {inserted} planes inserted, {removed} removed, worst tangency residual {worst_tangency:.1e}, {} violations", violations.len()),
    );
    assert!(pass, "{violations:?}");
}

/// 40 simulated windows, half with targets replaced by N(0, 5²) noise in
/// normalized units; the pool spans 30 randomized scenarios.
#[test]
fn criterion_4_reweighting_under_shift() {
    let bundle = simulate(&SimulatorConfig::default(), &DatasetConfig::default()).unwrap();
    let exp = ExperimentConfig {
        model: small_model(),
        train: TrainConfig { epochs: 60, batch_size: 8, learning_rate: 0.1, ..Default::default() },
        reweight: ReweightConfig {
            k: 3,
            eta: 0.05,
            epsilon: 1e-4,
            eta_w: 1000.0,
            eta_phi: 0.05,
            eta_mu: 1.0,
            t1: 60,
            delta: 10,
            t_max: 80,
            monitor_every: 1000,
            ..Default::default()
        },
        uniform_sample_weights: false,
    };
    let mut gaps = Vec::new();
    let mut wins = 0;
    for seed in 0..5 {
        let data = corrupt(&bundle, 40, 0.5, 5.0, seed).unwrap();
        let c = compare_reweighting(&exp, &data, seed).unwrap();
        println!(
            "  seed {seed}: sigma clean {:.3} corrupted {:.3} gap {:.3}; test MAE uniform {:.3} reweighted {:.3}",
            c.clean_mean_sigma,
            c.corrupted_mean_sigma,
            c.sigma_gap(),
            c.uniform_mean_mae(),
            c.reweighted_mean_mae()
        );
        gaps.push(c.sigma_gap());
        if c.reweighted_mean_mae() <= c.uniform_mean_mae() {
            wins += 1;
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let pass = mean_gap >= 0.15 && wins >= 4;
    verdict(4, pass, &format!("mean sigma gap {mean_gap:.3} >= 0.15; reweighted MAE <= uniform in {wins}/5 seeds"));
    assert!(pass);
}

#[test]
fn criterion_5_dynamic_weighting_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_simplex = 0.0_f64;
    let mut worst_other = 0.0_f64;
    for _ in 0..1000 {
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0) + 1e-3);
        let s: f64 = raw.iter().sum();
        let w = raw.map(|v| v / s);
        let losses: [f64; 3] = std::array::from_fn(|_| 10f64.powf(rng.random_range(-3.0..3.0)));
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let total: f64 = losses.iter().sum();

        let next = TaskWeights { weights: w, alpha }.update(losses).unwrap();
        worst_simplex = worst_simplex.max((next.weights.iter().sum::<f64>() - 1.0).abs());
        assert!(next.weights.iter().all(|&v| v >= 0.0));

        let same = TaskWeights { weights: w, alpha: 0.0 }.update(losses).unwrap();
        let prop = TaskWeights { weights: w, alpha: 1.0 }.update(losses).unwrap();
        let fixed = TaskWeights { weights: w, alpha }.update([losses[0]; 3]).unwrap();
        let equal = TaskWeights { weights: [1.0 / 3.0; 3], alpha }.update([losses[1]; 3]).unwrap();
        for i in 0..3 {
            worst_other = worst_other.max((same.weights[i] - w[i]).abs());
            worst_other = worst_other.max((prop.weights[i] - losses[i] / total).abs());
            worst_other = worst_other.max((equal.weights[i] - 1.0 / 3.0).abs());
            // Equal losses pull toward uniform: w' − 1/3 = (1 − α)(w − 1/3).
            worst_other = worst_other.max((fixed.weights[i] - 1.0 / 3.0 - (1.0 - alpha) * (w[i] - 1.0 / 3.0)).abs());
        }
    }
    let pass = worst_simplex <= 1e-12 && worst_other <= 1e-12;
    verdict(
        5,
        pass,
        &format!(
            "1000 triples, simplex error {worst_simplex:.1e}, no-op/proportional/fixed-point error {worst_other:.1e}"
        ),
    );
    assert!(pass);
}

/// Per (task, baseline) pair, the full model must win in at least 4 of 5
/// seeds. The default bundle's simulated split is subsampled to 40 windows.
#[test]
fn criterion_6_ablation_direction() {
    let bundle = simulate(&SimulatorConfig::default(), &DatasetConfig::default()).unwrap();
    let bundle = subsample(&bundle, 40).unwrap();
    let exp = ExperimentConfig {
        model: small_model(),
        train: TrainConfig { epochs: 40, batch_size: 8, learning_rate: 0.1, ..Default::default() },
        reweight: ReweightConfig {
            epsilon: 1e-4,
            eta_w: 1000.0,
            eta_phi: 0.05,
            eta_mu: 1.0,
            t1: 20,
            delta: 10,
            t_max: 30,
            monitor_every: 1000,
            ..Default::default()
        },
        uniform_sample_weights: false,
    };
    let baselines = [Variant::NoInteraction, Variant::AverageWeighting];
    let mut wins: BTreeMap<(Variant, Task), usize> = BTreeMap::new();
    for seed in 0..5 {
        let full = run_variant(Variant::Full, &exp, &bundle, seed, false).unwrap();
        for &b in &baselines {
            let other = run_variant(b, &exp, &bundle, seed, false).unwrap();
            for t in Task::ALL {
                let (f, o) = (full.get("test", t).unwrap().mae, other.get("test", t).unwrap().mae);
                println!("  seed {seed} {t}: full {f:.3} vs {b} {o:.3}");
                *wins.entry((b, t)).or_default() += usize::from(f <= o);
            }
        }
    }
    let pass = wins.values().all(|&w| w >= 4);
    let detail: Vec<String> = wins.iter().map(|((b, t), w)| format!("{t} vs {b} {w}/5")).collect();
    verdict(6, pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_7_decoder_causality() {
    let (model, data) = gradcheck_setup();
    let d = model.d_model;
    let net = MstNet::new(model, Geometry::of(&data)).unwrap();
    let geo = *net.geometry();
    let l_dec = geo.l_dec();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut moved) = (0.0_f64, 0usize);
    for trial in 0..100 {
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(trial));
        let task = Task::ALL[trial as usize % 3];
        let r: Vec<f64> = (0..l_dec * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mem: Vec<f64> = (0..geo.l_in * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = rng.random_range(1..l_dec);
        let mut r2 = r.clone();
        for v in &mut r2[t * d..] {
            *v += rng.random_range(-3.0..3.0);
        }
        let run = |r: Vec<f64>| {
            let mut g = Graph::new();
            let phi = g.leaf(Tensor::vector(p.flat.clone()).unwrap());
            let b = net.bind(&mut g, phi).unwrap();
            let rv = g.constant(Tensor::matrix(l_dec, d, r).unwrap());
            let m = g.constant(Tensor::matrix(geo.l_in, d, mem.clone()).unwrap());
            let y = net.decode_sequence(&mut g, &b, task, rv, m, &mut Mode::Eval).unwrap();
            g.value(y).data().to_vec()
        };
        let (a, b) = (run(r), run(r2));
        assert_eq!(a.len(), l_dec);
        for i in 0..t {
            worst = worst.max((a[i] - b[i]).abs());
        }
        moved += usize::from(a[t..] != b[t..]);
    }
    let pass = worst <= 1e-12 && moved == 100;
    verdict(
        7,
        pass,
        &format!(
            "100 trials, largest change before the perturbed step {worst:.1e}; later outputs moved in {moved}/100"
        ),
    );
    assert!(pass);
}

fn tiny_sim() -> (SimulatorConfig, DatasetConfig) {
    let sim = SimulatorConfig {
        n_scenarios: 2,
        ranges: RandomizationRanges { grid_rows: 5, grid_cols: 5, horizon: 72, ..Default::default() },
        real: ScenarioConfig {
            grid_rows: 5,
            grid_cols: 5,
            horizon: 96,
            hotspot_centers: vec![[2, 2]],
            ..ScenarioConfig::reference_real()
        },
        ..Default::default()
    };
    let data = DatasetConfig { l_in: 12, l_token: 6, l_out: 3, stride: 6, ..Default::default() };
    (sim, data)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

/// Each stage's artifacts, written by the library calls behind the
/// `simulate`, `train`, `reweight` and `evaluate` commands.
fn stage_artifacts(root: &Path) -> BTreeMap<&'static str, BTreeMap<String, Vec<u8>>> {
    let (sim, data) = tiny_sim();
    let model =
        ModelConfig { d_model: 8, n_heads: 2, n_enc_layers: 1, cnn_channels: 2, mlp_hidden: 8, ..Default::default() };
    let train_cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 3, ..Default::default() };
    let rw = ReweightConfig { t1: 4, t_max: 6, delta: 2, monitor_every: 2, ..Default::default() };

    let bundle = simulate(&sim, &data).unwrap();
    dataset::save(&bundle, &root.join("data")).unwrap();
    let bundle: DatasetBundle = dataset::load(&root.join("data")).unwrap();

    let net = MstNet::new(model, Geometry::of(&bundle.config)).unwrap();
    let pre = train(&net, &bundle, &train_cfg, Some(&vec![0.0; bundle.sim.len()]), None).unwrap();
    let meta = BTreeMap::from([("dataset_checksum".to_string(), bundle.checksum())]);
    let ck = |params| Checkpoint { model: net.config().clone(), geometry: *net.geometry(), params, meta: meta.clone() };
    save_checkpoint(&ck(pre.params.clone()), &root.join("train")).unwrap();
    std::fs::write(root.join("train/epochs.csv"), epoch_csv(&pre.epochs)).unwrap();

    let (params, outcome, _) = simreweight_core::pipeline::reweight(&net, &bundle, &pre, &train_cfg, &rw).unwrap();
    save_checkpoint(&ck(params.clone()), &root.join("reweight")).unwrap();
    let ids: Vec<usize> = bundle.sim.iter().map(|s| s.sample_id).collect();
    std::fs::write(root.join("reweight/weights.csv"), weights_csv(&ids, &outcome.w)).unwrap();
    std::fs::write(root.join("reweight/history.csv"), history_csv(&outcome.history)).unwrap();

    let report = MetricsReport {
        variant: "full".into(),
        seed: train_cfg.seed,
        weighting_mode: train_cfg.weighting_mode.name().into(),
        dataset_checksum: bundle.checksum(),
        config: serde_json::Value::Null,
        metrics: evaluate(&net, &params, &bundle).unwrap(),
        wall_clock_secs: None,
    };
    std::fs::create_dir_all(root.join("evaluate")).unwrap();
    report.save(&root.join("evaluate/metrics.json")).unwrap();

    ["data", "train", "reweight", "evaluate"].into_iter().map(|s| (s, tree(&root.join(s)))).collect()
}

#[test]
fn criterion_8_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (stage_artifacts(a.path()), stage_artifacts(b.path()));
    let mut differing = Vec::new();
    let mut files = 0;
    for (stage, fx) in &x {
        let fy = &y[stage];
        assert_eq!(fx.keys().collect::<Vec<_>>(), fy.keys().collect::<Vec<_>>());
        for (name, bytes) in fx {
            files += 1;
            if fy[name] != *bytes {
                differing.push(format!("{stage}/{name}"));
            }
        }
    }
    let pass = differing.is_empty();
    verdict(8, pass, &format!("simulate/train/reweight/evaluate: {files} files compared, {} differ", differing.len()));
    assert!(pass, "{differing:?}");
}

#[test]
fn criterion_9_metrics_sanity() {
    let (sim, data) = tiny_sim();
    let bundle = simulate(&sim, &data).unwrap();
    let mut cells = 0;
    let mut bad = Vec::new();
    for mode in [ModelConfig::default(), ModelConfig { single_task: Some(Task::Net), ..ModelConfig::default() }] {
        let net = MstNet::new(ModelConfig { d_model: 8, n_heads: 2, ..mode }, Geometry::of(&bundle.config)).unwrap();
        let params = net.init(&mut ChaCha8Rng::seed_from_u64(9));
        for (split, m) in evaluate(&net, &params, &bundle).unwrap() {
            for (t, v) in m {
                cells += 1;
                if !(v.mae <= v.rmse && v.mae >= 0.0) {
                    bad.push(format!("{split}/{t}: mae {} rmse {}", v.mae, v.rmse));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut perfect = true;
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let (m, r) = (mae(&x, &y).unwrap(), rmse(&x, &y).unwrap());
        if m > r {
            bad.push(format!("random vectors: mae {m} > rmse {r}"));
        }
        perfect &= mae(&x, &x).unwrap() == 0.0 && rmse(&x, &x).unwrap() == 0.0;
    }
    let pass = bad.is_empty() && perfect;
    verdict(
        9,
        pass,
        &format!(
            "{cells} report cells and 200 random vectors with MAE <= RMSE; perfect predictions give 0/0: {perfect}"
        ),
    );
    assert!(pass, "{bad:?}");
}
