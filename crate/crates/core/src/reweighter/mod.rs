//! Bilevel sample reweighting with a two-phase cutting-plane solver.
//!
//! The upper level minimizes the validation loss `G(φ)` over per-sample
//! logits `w`; the lower level asks `φ` to minimize the weighted training
//! loss `g(w, φ) = (1/N) Σ σ(w_i) L_i(φ)`. The lower level is replaced by
//! `K` unrolled gradient steps `ψ(w)` and the constraint
//! `h(w, φ) = ‖φ − ψ(w)‖₁ / |φ| ≤ ε`, which is approximated by linear cuts.
//!
//! Phase 1 runs gradient descent/ascent on the Lagrangian over the current
//! cuts and refreshes the cuts every `δ` iterations. Phase 2 freezes the cuts
//! and descends a quadratic penalty until the iterates stop moving.

mod csv;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub use csv::{history_csv, parse_weights_csv, weights_csv, HISTORY_HEADER, WEIGHTS_HEADER};

/// A model whose per-sample losses can be built into a graph from a flat
/// parameter vector.
pub trait Learner {
    type Sample;

    fn num_params(&self) -> usize;

    /// One scalar loss node per sample, all reading the parameter node
    /// `params` (shape `[num_params]`).
    fn losses(&self, g: &mut Graph, params: Var, samples: &[Self::Sample]) -> Result<Vec<Var>>;

    /// Samples per graph; bounds memory of the second-order passes.
    fn chunk_size(&self) -> usize {
        usize::MAX
    }
}

/// Least-squares linear model `ŷ = xᵀφ`, loss `(ŷ − y)²`. Small enough to
/// check the solver against closed forms and grid searches.
#[derive(Clone, Copy, Debug)]
pub struct LinearRegression {
    pub dim: usize,
}

impl Learner for LinearRegression {
    type Sample = (Vec<f64>, f64);

    fn num_params(&self) -> usize {
        self.dim
    }

    fn losses(&self, g: &mut Graph, params: Var, samples: &[Self::Sample]) -> Result<Vec<Var>> {
        samples
            .iter()
            .map(|(x, y)| {
                let xc = g.constant(Tensor::vector(x.clone())?);
                let pred = g.dot(xc, params)?;
                let yc = g.scalar(*y);
                let r = g.sub(pred, yc)?;
                g.mul(r, r)
            })
            .collect()
    }
}

/// Where the cut's offset is anchored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneOffset {
    /// `c = h − ε − aᵀw − bᵀφ`: the cut linearizes `h − ε ≤ 0`.
    Residual,
    /// `c = h − aᵀw − bᵀφ`: the cut linearizes `h ≤ 0`.
    Paper,
}

impl std::str::FromStr for PlaneOffset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Self::Residual),
            "paper" => Ok(Self::Paper),
            other => Err(Error::config(format!("unknown plane offset '{other}' (expected residual or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReweightConfig {
    /// Unrolled inner steps.
    pub k: usize,
    /// Inner learning rate.
    pub eta: f64,
    /// Tolerance on the per-parameter ℓ1 constraint.
    pub epsilon: f64,
    pub eta_w: f64,
    pub eta_phi: f64,
    pub eta_mu: f64,
    /// Phase-switch iteration.
    pub t1: usize,
    /// Polyhedron management interval.
    pub delta: usize,
    pub t_max: usize,
    pub mu_init: f64,
    pub inactive_tol: f64,
    pub plane_offset: PlaneOffset,
    /// Phase-2 stopping threshold on `‖Δw‖∞` and `‖Δφ‖∞`.
    pub converge_tol: f64,
    /// Record `g` and `h` in the history every this many iterations; they
    /// cost a full pass over the training set (plus `K` steps for `h`).
    pub monitor_every: usize,
    /// Samples per graph in the second-order passes over a model.
    pub chunk: usize,
    /// Retrain from scratch with the learned weights instead of keeping the
    /// solver's final parameters.
    pub retrain_with_weights: bool,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            k: 3,
            eta: 0.05,
            epsilon: 0.01,
            eta_w: 0.05,
            eta_phi: 0.01,
            eta_mu: 0.1,
            t1: 300,
            delta: 25,
            t_max: 600,
            mu_init: 1.0,
            inactive_tol: 1e-8,
            plane_offset: PlaneOffset::Residual,
            converge_tol: 1e-6,
            monitor_every: 1,
            chunk: 16,
            retrain_with_weights: false,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.delta == 0 || self.t_max == 0 || self.monitor_every == 0 || self.chunk == 0 {
            return Err(Error::config("reweight.k, delta, t_max, monitor_every and chunk must be positive"));
        }
        let rates = [
            ("eta", self.eta),
            ("epsilon", self.epsilon),
            ("eta_w", self.eta_w),
            ("eta_phi", self.eta_phi),
            ("eta_mu", self.eta_mu),
            ("mu_init", self.mu_init),
            ("inactive_tol", self.inactive_tol),
            ("converge_tol", self.converge_tol),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("reweight.{name} must be positive, got {v}")));
            }
        }
        if self.t1 > self.t_max {
            return Err(Error::config(format!("reweight.t1 {} > t_max {}", self.t1, self.t_max)));
        }
        Ok(())
    }
}

/// Linear cut `aᵀw + bᵀφ + c ≤ 0` with multiplier `μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CuttingPlane {
    /// Unique within one run, in insertion order.
    pub id: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub mu: f64,
}

impl CuttingPlane {
    pub fn value(&self, w: &[f64], phi: &[f64]) -> f64 {
        dot(&self.a, w) + dot(&self.b, phi) + self.c
    }
}

/// Solver state between iterations.
#[derive(Clone, Debug)]
pub struct State {
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    /// Start point of the inner solver: a detached copy of `φ` taken at the
    /// last management pass.
    pub anchor: Vec<f64>,
    pub planes: Vec<CuttingPlane>,
    next_id: usize,
}

impl State {
    pub fn new(w: Vec<f64>, phi: Vec<f64>) -> Self {
        Self { anchor: phi.clone(), w, phi, planes: Vec::new(), next_id: 0 }
    }

    pub fn max_mu(&self) -> f64 {
        self.planes.iter().map(|p| p.mu).fold(0.0, f64::max)
    }

    pub fn min_mu(&self) -> f64 {
        self.planes.iter().map(|p| p.mu).fold(f64::INFINITY, f64::min)
    }

    pub fn push_plane(&mut self, a: Vec<f64>, b: Vec<f64>, c: f64, mu: f64) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.planes.push(CuttingPlane { id, a, b, c, mu });
        id
    }
}

/// Iterates of the unrolled inner solver, `φ_0 .. φ_K`.
#[derive(Clone, Debug)]
pub struct InnerTrace {
    pub phis: Vec<Vec<f64>>,
}

impl InnerTrace {
    pub fn psi(&self) -> &[f64] {
        self.phis.last().expect("trace holds φ_0")
    }
}

/// What one management pass did.
#[derive(Clone, Debug, PartialEq)]
pub struct Management {
    pub iter: usize,
    /// `(id, μ)` of the planes dropped as inactive.
    pub removed: Vec<(usize, f64)>,
    /// Constraint value at the pass.
    pub h: f64,
    pub inserted: Option<Insertion>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Insertion {
    pub id: usize,
    /// Plane value at the insertion point minus its intended value
    /// (`h − ε`, or `h` with the paper offset).
    pub tangency_residual: f64,
}

/// One history row. `g` and `h` are present on monitored iterations only.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub phase: u8,
    pub big_g: f64,
    pub g: Option<f64>,
    pub h: Option<f64>,
    pub n_planes: usize,
    pub max_mu: f64,
    pub min_mu: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    pub planes: Vec<CuttingPlane>,
    pub history: Vec<HistoryRow>,
    pub management: Vec<Management>,
    /// Validation loss at the returned `φ`.
    pub final_g: f64,
    /// Iteration at which Phase 2 converged, if it did before `t_max`.
    pub converged_at: Option<usize>,
}

/// `L_q = G + Σ μ_l (a_lᵀw + b_lᵀφ + c_l)`
pub fn lagrangian(big_g: f64, planes: &[CuttingPlane], w: &[f64], phi: &[f64]) -> f64 {
    big_g + planes.iter().map(|p| p.mu * p.value(w, phi)).sum::<f64>()
}

/// `L̂ = G + Σ μ_l max(0, a_lᵀw + b_lᵀφ + c_l)²`
pub fn penalty(big_g: f64, planes: &[CuttingPlane], w: &[f64], phi: &[f64]) -> f64 {
    big_g + planes.iter().map(|p| p.mu * p.value(w, phi).max(0.0).powi(2)).sum::<f64>()
}

/// Gradient step on `L_q` in `(w, φ)` and projected ascent on every `μ_l`,
/// all evaluated at the incoming point.
pub fn phase1_step(s: &mut State, grad_g: &[f64], cfg: &ReweightConfig) {
    let mut gw = vec![0.0; s.w.len()];
    let mut gphi = grad_g.to_vec();
    let values: Vec<f64> = s.planes.iter().map(|p| p.value(&s.w, &s.phi)).collect();
    for p in &s.planes {
        axpy(&mut gw, p.mu, &p.a);
        axpy(&mut gphi, p.mu, &p.b);
    }
    axpy(&mut s.w, -cfg.eta_w, &gw);
    axpy(&mut s.phi, -cfg.eta_phi, &gphi);
    for (p, v) in s.planes.iter_mut().zip(values) {
        p.mu = (p.mu + cfg.eta_mu * v).max(0.0);
    }
}

/// Gradient step on the penalty `L̂` in `(w, φ)` with the cuts frozen.
pub fn phase2_step(s: &mut State, grad_g: &[f64], cfg: &ReweightConfig) {
    let mut gw = vec![0.0; s.w.len()];
    let mut gphi = grad_g.to_vec();
    for p in &s.planes {
        let v = p.value(&s.w, &s.phi).max(0.0);
        if v > 0.0 {
            axpy(&mut gw, 2.0 * p.mu * v, &p.a);
            axpy(&mut gphi, 2.0 * p.mu * v, &p.b);
        }
    }
    axpy(&mut s.w, -cfg.eta_w, &gw);
    axpy(&mut s.phi, -cfg.eta_phi, &gphi);
}

pub fn sigmoid(x: f64) -> f64 {
    crate::autodiff::sigmoid(x)
}

/// Objectives and derivatives of one bilevel instance.
pub struct Problem<'a, L: Learner> {
    pub learner: &'a L,
    pub sim: &'a [L::Sample],
    pub val: &'a [L::Sample],
    pub cfg: ReweightConfig,
}

impl<'a, L: Learner> Problem<'a, L> {
    pub fn new(learner: &'a L, sim: &'a [L::Sample], val: &'a [L::Sample], cfg: ReweightConfig) -> Result<Self> {
        cfg.validate()?;
        if sim.is_empty() || val.is_empty() {
            return Err(Error::config("training and validation sets must be non-empty"));
        }
        Ok(Self { learner, sim, val, cfg })
    }

    fn check(&self, w: &[f64], phi: &[f64]) -> Result<()> {
        if w.len() != self.sim.len() {
            return Err(Error::shape("reweight", format!("{} weights for {} samples", w.len(), self.sim.len())));
        }
        if phi.len() != self.learner.num_params() {
            return Err(Error::shape(
                "reweight",
                format!("{} parameters, learner has {}", phi.len(), self.learner.num_params()),
            ));
        }
        Ok(())
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, &'a [L::Sample])> {
        let size = self.learner.chunk_size().max(1);
        let sim = self.sim;
        (0..sim.len()).step_by(size).map(move |s| (s, &sim[s..(s + size).min(sim.len())]))
    }

    /// `(1/N) Σ σ(w_i) L_i(φ)`
    pub fn inner_loss_g(&self, w: &[f64], phi: &[f64]) -> Result<f64> {
        self.check(w, phi)?;
        let n = self.sim.len() as f64;
        let mut total = 0.0;
        for (start, chunk) in self.chunks() {
            let mut g = Graph::new();
            let p = g.constant(Tensor::vector(phi.to_vec())?);
            for (i, l) in self.learner.losses(&mut g, p, chunk)?.into_iter().enumerate() {
                total += sigmoid(w[start + i]) * g.value(l).item() / n;
            }
        }
        Ok(total)
    }

    /// Unweighted mean validation loss.
    pub fn outer_loss(&self, phi: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let p = g.constant(Tensor::vector(phi.to_vec())?);
        let losses = self.learner.losses(&mut g, p, self.val)?;
        Ok(losses.iter().map(|&l| g.value(l).item()).sum::<f64>() / self.val.len() as f64)
    }

    /// `(G, ∇_φ G)`
    pub fn outer_grad(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let size = self.learner.chunk_size().max(1);
        let n = self.val.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; phi.len()];
        for chunk in self.val.chunks(size) {
            let mut g = Graph::new();
            let p = g.leaf(Tensor::vector(phi.to_vec())?);
            let losses = self.learner.losses(&mut g, p, chunk)?;
            let total = weighted_sum(&mut g, &losses, &vec![1.0 / n; losses.len()])?;
            value += g.value(total).item();
            let gr = g.backward(total, &[p])?;
            axpy(&mut grad, 1.0, gr[&p].data());
        }
        finite(&grad, "validation gradient")?;
        Ok((value, grad))
    }

    /// `(g, ∇_φ g)` at `(w, φ)`.
    pub fn inner_grad(&self, w: &[f64], phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(w, phi)?;
        let n = self.sim.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; phi.len()];
        for (start, chunk) in self.chunks() {
            let mut g = Graph::new();
            let p = g.leaf(Tensor::vector(phi.to_vec())?);
            let losses = self.learner.losses(&mut g, p, chunk)?;
            let coef: Vec<f64> = (0..chunk.len()).map(|i| sigmoid(w[start + i]) / n).collect();
            let total = weighted_sum(&mut g, &losses, &coef)?;
            value += g.value(total).item();
            let gr = g.backward(total, &[p])?;
            axpy(&mut grad, 1.0, gr[&p].data());
        }
        finite(&grad, "inner gradient")?;
        Ok((value, grad))
    }

    /// `φ_{k+1} = φ_k − η ∇_φ g(w, φ_k)` for `k < K`.
    pub fn k_step_inner(&self, w: &[f64], phi0: &[f64]) -> Result<InnerTrace> {
        self.check(w, phi0)?;
        let mut phis = Vec::with_capacity(self.cfg.k + 1);
        phis.push(phi0.to_vec());
        for _ in 0..self.cfg.k {
            let cur = phis.last().expect("φ_0 present");
            let (_, grad) = self.inner_grad(w, cur)?;
            let mut next = cur.clone();
            axpy(&mut next, -self.cfg.eta, &grad);
            phis.push(next);
        }
        Ok(InnerTrace { phis })
    }

    /// `(H v, ∂_w (∇_φ g · v))` at `(w, φ)`: one double-backward pass.
    fn second_order(&self, w: &[f64], phi: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.sim.len() as f64;
        let mut hv = vec![0.0; phi.len()];
        let mut dw = vec![0.0; w.len()];
        for (start, chunk) in self.chunks() {
            let mut g = Graph::new();
            let p = g.leaf(Tensor::vector(phi.to_vec())?);
            let wl = g.leaf(Tensor::vector(w[start..start + chunk.len()].to_vec())?);
            let sw = g.sigmoid(wl)?;
            let losses = self.learner.losses(&mut g, p, chunk)?;
            let mut total: Option<Var> = None;
            for (i, &l) in losses.iter().enumerate() {
                let si = g.slice(sw, i, &[])?;
                let term = g.mul(si, l)?;
                total = Some(match total {
                    None => term,
                    Some(t) => g.add(t, term)?,
                });
            }
            let total = g.scale(total.ok_or_else(|| Error::shape("reweight", "empty chunk"))?, 1.0 / n)?;
            let gp = g.grad(total, &[p])?[0];
            let vc = g.constant(Tensor::vector(v.to_vec())?);
            let s = g.dot(gp, vc)?;
            let gr = g.backward(s, &[p, wl])?;
            axpy(&mut hv, 1.0, gr[&p].data());
            for (d, x) in dw[start..start + chunk.len()].iter_mut().zip(gr[&wl].data()) {
                *d += x;
            }
        }
        finite(&hv, "Hessian-vector product")?;
        finite(&dw, "weight hypergradient")?;
        Ok((hv, dw))
    }

    /// Pull a cotangent `v_K` on `ψ = φ_K` back through the unrolled steps.
    /// Returns `(∂/∂w, ∂/∂φ_0)` of `v_Kᵀ ψ`.
    pub fn hypergradient(&self, w: &[f64], trace: &InnerTrace, v_k: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut v = v_k.to_vec();
        let mut dw = vec![0.0; w.len()];
        for phi in trace.phis[..trace.phis.len() - 1].iter().rev() {
            let (hv, gw) = self.second_order(w, phi, &v)?;
            axpy(&mut dw, -self.cfg.eta, &gw);
            axpy(&mut v, -self.cfg.eta, &hv);
        }
        Ok((dw, v))
    }

    /// `h = ‖φ − ψ(w)‖₁ / |φ|` with the inner solver started at `anchor`.
    pub fn constraint_h(&self, w: &[f64], phi: &[f64], anchor: &[f64]) -> Result<f64> {
        let trace = self.k_step_inner(w, anchor)?;
        Ok(l1_gap(phi, trace.psi()))
    }

    /// `(h, ∂h/∂w, ∂h/∂φ)`. The anchor is treated as a constant; the
    /// subgradient of |·| at 0 is 0.
    pub fn constraint_h_grad(&self, w: &[f64], phi: &[f64], anchor: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(w, phi)?;
        let trace = self.k_step_inner(w, anchor)?;
        let n = phi.len() as f64;
        let b: Vec<f64> = phi.iter().zip(trace.psi()).map(|(p, q)| sign(p - q) / n).collect();
        let v_k: Vec<f64> = b.iter().map(|x| -x).collect();
        let (a, _) = self.hypergradient(w, &trace, &v_k)?;
        Ok((l1_gap(phi, trace.psi()), a, b))
    }

    /// Drop inactive cuts, re-anchor the inner solver at the current `φ`,
    /// and add a cut when the constraint is violated.
    pub fn manage_polyhedron(&self, s: &mut State, iter: usize) -> Result<Management> {
        let tol = self.cfg.inactive_tol;
        let removed: Vec<(usize, f64)> = s.planes.iter().filter(|p| p.mu <= tol).map(|p| (p.id, p.mu)).collect();
        s.planes.retain(|p| p.mu > tol);
        s.anchor = s.phi.clone();
        let (h, a, b) = self.constraint_h_grad(&s.w, &s.phi, &s.anchor)?;
        let mut inserted = None;
        if h > self.cfg.epsilon {
            let target = match self.cfg.plane_offset {
                PlaneOffset::Residual => h - self.cfg.epsilon,
                PlaneOffset::Paper => h,
            };
            let c = target - dot(&a, &s.w) - dot(&b, &s.phi);
            let id = s.push_plane(a, b, c, self.cfg.mu_init);
            let plane = s.planes.last().expect("just pushed");
            inserted = Some(Insertion { id, tangency_residual: plane.value(&s.w, &s.phi) - target });
        }
        Ok(Management { iter, removed, h, inserted })
    }

    /// Algorithm entry point: Phase 1 for `t < T₁` with management every
    /// `δ` iterations, then Phase 2 until convergence or `T_max`.
    pub fn run(&self, w0: Vec<f64>, phi0: Vec<f64>) -> Result<Outcome> {
        self.check(&w0, &phi0)?;
        let cfg = &self.cfg;
        let mut s = State::new(w0, phi0);
        let mut history = Vec::with_capacity(cfg.t_max);
        let mut management = Vec::new();
        let mut converged_at = None;
        let diverged = |iter: usize, e: Error| match e {
            Error::NonFiniteValue(what) | Error::NonFiniteGradient(what) => Error::Diverged { iter, what },
            other => other,
        };

        for t in 0..cfg.t_max {
            let phase = if t < cfg.t1 { 1 } else { 2 };
            if phase == 1 && t % cfg.delta == 0 {
                let m = self.manage_polyhedron(&mut s, t).map_err(|e| diverged(t, e))?;
                log::debug!("iter {t}: h = {:.3e}, {} planes", m.h, s.planes.len());
                management.push(m);
            }
            let (big_g, grad) = self.outer_grad(&s.phi).map_err(|e| diverged(t, e))?;
            if !big_g.is_finite() {
                return Err(Error::Diverged { iter: t, what: "validation loss".into() });
            }
            let monitored = t % cfg.monitor_every == 0;
            let (g, h) = if monitored {
                let g = self.inner_loss_g(&s.w, &s.phi).map_err(|e| diverged(t, e))?;
                let h = self.constraint_h(&s.w, &s.phi, &s.anchor).map_err(|e| diverged(t, e))?;
                (Some(g), Some(h))
            } else {
                (None, None)
            };
            history.push(HistoryRow {
                iter: t,
                phase,
                big_g,
                g,
                h,
                n_planes: s.planes.len(),
                max_mu: s.max_mu(),
                min_mu: s.min_mu(),
            });

            let (w_prev, phi_prev) = (s.w.clone(), s.phi.clone());
            if phase == 1 {
                phase1_step(&mut s, &grad, cfg);
            } else {
                phase2_step(&mut s, &grad, cfg);
            }
            if s.w.iter().chain(&s.phi).any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iter: t, what: "iterate".into() });
            }
            if phase == 2
                && max_abs_diff(&s.w, &w_prev) < cfg.converge_tol
                && max_abs_diff(&s.phi, &phi_prev) < cfg.converge_tol
            {
                converged_at = Some(t);
                break;
            }
        }
        let final_g = self.outer_loss(&s.phi)?;
        Ok(Outcome { w: s.w, phi: s.phi, planes: s.planes, history, management, final_g, converged_at })
    }
}

fn weighted_sum(g: &mut Graph, losses: &[Var], coef: &[f64]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&l, &c) in losses.iter().zip(coef) {
        let term = g.scale(l, c)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::shape("reweight", "no samples"))
}

fn l1_gap(phi: &[f64], psi: &[f64]) -> f64 {
    phi.iter().zip(psi).map(|(a, b)| (a - b).abs()).sum::<f64>() / phi.len() as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(what.to_string()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
