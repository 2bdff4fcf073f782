use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type Sample = (Vec<f64>, f64);

fn scalar_set(pairs: &[(f64, f64)]) -> Vec<Sample> {
    pairs.iter().map(|&(x, y)| (vec![x], y)).collect()
}

fn problem<'a>(
    learner: &'a LinearRegression,
    sim: &'a [Sample],
    val: &'a [Sample],
    cfg: ReweightConfig,
) -> Problem<'a, LinearRegression> {
    Problem { learner, sim, val, cfg }
}

fn random_instance(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Sample> {
    (0..n).map(|_| ((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(-1.0..1.0))).collect()
}

#[test]
fn inner_loss_examples() {
    let lr = LinearRegression { dim: 1 };
    let sim = scalar_set(&[(1.0, 2f64.sqrt()), (1.0, 2.0)]);
    let p = problem(&lr, &sim, &sim, ReweightConfig::default());
    let g = p.inner_loss_g(&[0.0, 0.0], &[0.0]).unwrap();
    assert!((g - 1.5).abs() < 1e-12, "{g}");
    // w_1 → −∞ leaves only sample 2's half-weighted contribution
    let g = p.inner_loss_g(&[-30.0, 0.0], &[0.0]).unwrap();
    assert!((g - 0.5 * 4.0 / 2.0).abs() < 1e-12 * 2.0);
    assert!(p.inner_loss_g(&[0.0], &[0.0]).is_err());
}

#[test]
fn zero_rate_keeps_start_point() {
    let lr = LinearRegression { dim: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sim = random_instance(&mut rng, 2, 4);
    let cfg = ReweightConfig { eta: 0.0, ..Default::default() };
    let p = problem(&lr, &sim, &sim, cfg);
    let t = p.k_step_inner(&[0.3; 4], &[0.5, -0.2]).unwrap();
    assert_eq!(t.psi(), &[0.5, -0.2]);
}

#[test]
fn one_step_quadratic() {
    let lr = LinearRegression { dim: 1 };
    let sim = scalar_set(&[(1.0, 3.0)]);
    let cfg = ReweightConfig { k: 1, eta: 0.1, ..Default::default() };
    let p = problem(&lr, &sim, &sim, cfg);
    let psi = p.k_step_inner(&[0.0], &[0.0]).unwrap().psi()[0];
    assert!((psi - 0.3).abs() < 1e-12, "{psi}");

    let (dw, _) = p.hypergradient(&[0.0], &p.k_step_inner(&[0.0], &[0.0]).unwrap(), &[1.0]).unwrap();
    let step = 1e-5;
    let f = |w: f64| p.k_step_inner(&[w], &[0.0]).unwrap().psi()[0];
    let fd = (f(step) - f(-step)) / (2.0 * step);
    assert!((dw[0] - fd).abs() <= 1e-6, "{} vs {fd}", dw[0]);
    // closed form: ψ = 0.6 σ(w) → dψ/dw = 0.6 σ'(0) = 0.15
    assert!((dw[0] - 0.15).abs() < 1e-12);
}

#[test]
fn unrolled_jacobian_matches_finite_differences() {
    let lr = LinearRegression { dim: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sim = random_instance(&mut rng, 3, 5);
    let cfg = ReweightConfig { k: 4, eta: 0.3, ..Default::default() };
    let p = problem(&lr, &sim, &sim, cfg);
    let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phi0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (dw, dphi0) = p.hypergradient(&w, &p.k_step_inner(&w, &phi0).unwrap(), &v).unwrap();
    let f = |w: &[f64], phi0: &[f64]| dot(&v, p.k_step_inner(w, phi0).unwrap().psi());
    let step = 1e-5;
    for i in 0..w.len() {
        let (mut a, mut b) = (w.clone(), w.clone());
        a[i] += step;
        b[i] -= step;
        let fd = (f(&a, &phi0) - f(&b, &phi0)) / (2.0 * step);
        assert!((dw[i] - fd).abs() < 1e-8, "w[{i}]: {} vs {fd}", dw[i]);
    }
    for j in 0..phi0.len() {
        let (mut a, mut b) = (phi0.clone(), phi0.clone());
        a[j] += step;
        b[j] -= step;
        let fd = (f(&w, &a) - f(&w, &b)) / (2.0 * step);
        assert!((dphi0[j] - fd).abs() < 1e-8, "φ0[{j}]: {} vs {fd}", dphi0[j]);
    }
}

/// Chunked passes must agree with a single graph over all samples.
#[test]
fn chunking_does_not_change_results() {
    struct Chunked(LinearRegression);
    impl Learner for Chunked {
        type Sample = Sample;
        fn num_params(&self) -> usize {
            self.0.dim
        }
        fn losses(&self, g: &mut Graph, params: Var, samples: &[Sample]) -> Result<Vec<Var>> {
            self.0.losses(g, params, samples)
        }
        fn chunk_size(&self) -> usize {
            2
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sim = random_instance(&mut rng, 2, 7);
    let w: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (lr, ch) = (LinearRegression { dim: 2 }, Chunked(LinearRegression { dim: 2 }));
    let whole = Problem { learner: &lr, sim: &sim, val: &sim, cfg: ReweightConfig::default() };
    let parts = Problem { learner: &ch, sim: &sim, val: &sim, cfg: ReweightConfig::default() };
    let (h1, a1, b1) = whole.constraint_h_grad(&w, &[0.4, 0.1], &[0.0, 0.0]).unwrap();
    let (h2, a2, b2) = parts.constraint_h_grad(&w, &[0.4, 0.1], &[0.0, 0.0]).unwrap();
    assert!((h1 - h2).abs() < 1e-14);
    assert_eq!(b1, b2);
    for (x, y) in a1.iter().zip(&a2) {
        assert!((x - y).abs() < 1e-14);
    }
    let (g1, d1) = whole.outer_grad(&[0.4, 0.1]).unwrap();
    let (g2, d2) = parts.outer_grad(&[0.4, 0.1]).unwrap();
    assert!((g1 - g2).abs() < 1e-14 && (d1[0] - d2[0]).abs() < 1e-14);
}

#[test]
fn constraint_is_normalized_l1() {
    let lr = LinearRegression { dim: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sim = random_instance(&mut rng, 2, 3);
    let p = problem(&lr, &sim, &sim, ReweightConfig::default());
    let w = [0.1, -0.2, 0.3];
    let anchor = [0.2, 0.2];
    let psi = p.k_step_inner(&w, &anchor).unwrap().psi().to_vec();
    assert!(p.constraint_h(&w, &psi, &anchor).unwrap().abs() < 1e-15);
    let shifted: Vec<f64> = psi.iter().map(|x| x - 0.25).collect();
    assert!((p.constraint_h(&w, &shifted, &anchor).unwrap() - 0.25).abs() < 1e-12);
    // subgradient at a zero coordinate is zero
    let (_, _, b) = p.constraint_h_grad(&w, &psi, &anchor).unwrap();
    assert_eq!(b, vec![0.0, 0.0]);
}

fn plane(a: Vec<f64>, b: Vec<f64>, c: f64, mu: f64) -> CuttingPlane {
    CuttingPlane { id: 0, a, b, c, mu }
}

#[test]
fn lagrangian_and_penalty_forms() {
    let (w, phi) = ([1.0], [2.0]);
    assert_eq!(penalty(3.0, &[], &w, &phi), 3.0);
    assert_eq!(lagrangian(3.0, &[], &w, &phi), 3.0);
    let satisfied = plane(vec![1.0], vec![1.0], -4.0, 5.0);
    assert_eq!(penalty(3.0, std::slice::from_ref(&satisfied), &w, &phi), 3.0);
    assert_eq!(lagrangian(3.0, &[satisfied], &w, &phi), 3.0 + -5.0);
    let violated = plane(vec![1.0], vec![1.0], -2.5, 2.0);
    assert!((penalty(3.0, &[violated], &w, &phi) - 3.5).abs() < 1e-15);
}

#[test]
fn phase1_projects_multipliers() {
    let mut s = State::new(vec![0.0], vec![0.0]);
    s.planes.push(plane(vec![1.0], vec![1.0], -10.0, 0.5));
    s.planes.push(plane(vec![1.0], vec![-1.0], 2.0, 0.5));
    let cfg = ReweightConfig { eta_w: 0.1, eta_phi: 0.2, eta_mu: 0.1, ..Default::default() };
    phase1_step(&mut s, &[1.0], &cfg);
    assert_eq!(s.planes[0].mu, 0.0);
    assert!((s.planes[1].mu - 0.7).abs() < 1e-15);
    // ∇_w L_q = 0.5·1 + 0.5·1, ∇_φ L_q = 1 + 0.5 − 0.5
    assert!((s.w[0] + 0.1).abs() < 1e-15);
    assert!((s.phi[0] + 0.2).abs() < 1e-15);
}

#[test]
fn management_inserts_tangent_planes_and_drops_inactive() {
    let lr = LinearRegression { dim: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sim = random_instance(&mut rng, 2, 6);
    let val = random_instance(&mut rng, 2, 3);
    for offset in [PlaneOffset::Residual, PlaneOffset::Paper] {
        let cfg = ReweightConfig { k: 3, eta: 0.5, epsilon: 1e-3, plane_offset: offset, ..Default::default() };
        let p = problem(&lr, &sim, &val, cfg.clone());
        let mut s = State::new(vec![0.5; 6], vec![2.0, -2.0]);
        s.planes.push(plane(vec![0.0; 6], vec![0.0; 2], -1.0, 0.0));
        s.next_id = 1;
        let m = p.manage_polyhedron(&mut s, 0).unwrap();
        assert_eq!(m.removed, vec![(0, 0.0)]);
        let ins = m.inserted.expect("far from the inner solution");
        assert!(ins.tangency_residual.abs() < 1e-9);
        assert_eq!(s.planes.len(), 1);
        let pl = &s.planes[0];
        let expect = match offset {
            PlaneOffset::Residual => m.h - cfg.epsilon,
            PlaneOffset::Paper => m.h,
        };
        assert!((pl.value(&s.w, &s.phi) - expect).abs() < 1e-9);
        assert_eq!(pl.mu, cfg.mu_init);
        assert_eq!(s.anchor, s.phi);
    }
    // at the inner fixed point the constraint holds and nothing is added
    let cfg = ReweightConfig { k: 3, eta: 0.5, epsilon: 1e-3, ..Default::default() };
    let p = problem(&lr, &sim, &val, cfg);
    let mut phi = vec![0.0, 0.0];
    for _ in 0..2000 {
        phi = p.k_step_inner(&[0.0; 6], &phi).unwrap().psi().to_vec();
    }
    let mut s = State::new(vec![0.0; 6], phi);
    let m = p.manage_polyhedron(&mut s, 0).unwrap();
    assert!(m.h <= 1e-3 && m.inserted.is_none());
}

#[test]
fn phase2_only_is_plain_gradient_descent() {
    let lr = LinearRegression { dim: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sim = random_instance(&mut rng, 3, 4);
    let val = random_instance(&mut rng, 3, 5);
    let cfg = ReweightConfig { t1: 0, t_max: 40, eta_phi: 0.1, monitor_every: 7, ..Default::default() };
    let p = problem(&lr, &sim, &val, cfg.clone());
    let out = p.run(vec![0.0; 4], vec![0.1, 0.2, 0.3]).unwrap();
    assert!(out.management.is_empty() && out.planes.is_empty());
    assert_eq!(out.w, vec![0.0; 4]);

    let mut phi = vec![0.1, 0.2, 0.3];
    let n = val.len() as f64;
    for row in &out.history {
        let mut g = 0.0;
        let mut grad = [0.0; 3];
        for (x, y) in &val {
            let r = dot(x, &phi) - y;
            g += r * r / n;
            for j in 0..3 {
                grad[j] += 2.0 * r * x[j] / n;
            }
        }
        assert!((row.big_g - g).abs() < 1e-12, "iter {}", row.iter);
        assert_eq!(row.phase, 2);
        assert_eq!(row.g.is_some(), row.iter % 7 == 0);
        for j in 0..3 {
            phi[j] -= cfg.eta_phi * grad[j];
        }
    }
    for (a, b) in out.phi.iter().zip(&phi) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn run_rejects_bad_inputs() {
    let lr = LinearRegression { dim: 1 };
    let sim = scalar_set(&[(1.0, 1.0)]);
    assert!(Problem::new(&lr, &sim, &[], ReweightConfig::default()).is_err());
    let bad = ReweightConfig { t1: 700, ..Default::default() };
    assert!(Problem::new(&lr, &sim, &sim, bad).is_err());
    let p = Problem::new(&lr, &sim, &sim, ReweightConfig::default()).unwrap();
    assert!(p.run(vec![0.0, 0.0], vec![0.0]).is_err());
}

#[test]
fn divergence_is_reported() {
    let lr = LinearRegression { dim: 1 };
    let sim = scalar_set(&[(1.0, 1.0)]);
    let val = scalar_set(&[(30.0, 1.0)]);
    let cfg = ReweightConfig { t1: 0, eta_phi: 10.0, ..Default::default() };
    let p = Problem::new(&lr, &sim, &val, cfg).unwrap();
    match p.run(vec![0.0], vec![0.0]) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn two_sample_instance_upweights_matching_sample() {
    let lr = LinearRegression { dim: 1 };
    let sim = scalar_set(&[(1.0, 1.0), (1.0, -1.0)]);
    let val = scalar_set(&[(1.0, 1.0)]);
    let cfg = ReweightConfig { k: 5, eta: 0.2, ..Default::default() };
    let p = Problem::new(&lr, &sim, &val, cfg).unwrap();
    let out = p.run(vec![0.0, 0.0], vec![0.0]).unwrap();
    assert!(out.w[0] > out.w[1], "{:?}", out.w);
    assert!(out.final_g < 0.0113, "{}", out.final_g);
    assert!(out.history.iter().all(|r| r.min_mu >= 0.0 || r.n_planes == 0));
}

#[test]
fn csv_layouts() {
    let rows = vec![HistoryRow {
        iter: 0,
        phase: 1,
        big_g: 0.5,
        g: None,
        h: Some(0.25),
        n_planes: 1,
        max_mu: 1.0,
        min_mu: 1.0,
    }];
    let text = history_csv(&rows);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HISTORY_HEADER));
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cols.len(), 7);
    assert_eq!(cols[3], "");
    assert_eq!(cols[4].parse::<f64>().unwrap(), 0.25);

    let w = [0.0, -1.5, 1.0 / 3.0];
    let text = weights_csv(&[4, 5, 9], &w);
    let parsed = parse_weights_csv(&text, Path::new("w.csv")).unwrap();
    assert_eq!(parsed, vec![(4, 0.0), (5, -1.5), (9, 1.0 / 3.0)]);
    let sig: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(sig, 0.5);
    assert!(parse_weights_csv("id,w\n", Path::new("w.csv")).is_err());
    assert!(parse_weights_csv(&format!("{WEIGHTS_HEADER}\n1,x,0.5\n"), Path::new("w.csv")).is_err());
}
