//! Multi-task spatio-temporal forecaster.
//!
//! Per task: a temporal attention encoder over the center-cell window, a
//! spatial encoder (conv → attention across cells → pool → linear) over the
//! patch, and a causally masked decoder with cross-attention. A cross-task
//! interaction block exchanges pooled spatial and temporal features between
//! the three tasks before decoding.
//!
//! All weights live in one flat [`ParamVector`]; a forward pass slices it
//! inside a [`Graph`], so the same code serves training, evaluation, and the
//! bilevel reweighter's second-order passes.

mod checkpoint;
mod params;


use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::check::{check_gradients, GradCheck};
use crate::autodiff::{AttentionMask, Graph, Tensor, Var};
use crate::dataset::{DatasetConfig, Source, WindowSample};
use crate::error::{Error, Result};
use crate::simulator::{generate_cube, ScenarioConfig};
use crate::Task;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MANIFEST, CHECKPOINT_PAYLOAD};
pub use params::{ParamEntry, ParamVector};

const LN_EPS: f64 = 1e-5;
const DAYS_PER_WEEK: usize = 7;

/// Architecture hyperparameters. Window lengths and patch size come from the
/// dataset configuration the model is built against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    /// Rows of the hour-of-day embedding table.
    pub steps_per_day: usize,
    /// Cross-task interaction block; off feeds `[H_s; pooled H_enc]` straight
    /// to each task MLP.
    pub interaction: bool,
    /// Spatial encoder; off removes the `H_s` path entirely.
    pub spatial: bool,
    /// Build only this task's parameters (no interaction).
    pub single_task: Option<Task>,
    /// Score only the top-u queries in cross-attention; the rest take the
    /// mean of the values.
    pub probsparse_top_u: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 1,
            cnn_channels: 8,
            cnn_kernel: 3,
            mlp_hidden: 64,
            dropout_rate: 0.1,
            steps_per_day: 24,
            interaction: true,
            spatial: true,
            single_task: None,
            probsparse_top_u: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("cnn_channels", self.cnn_channels),
            ("cnn_kernel", self.cnn_kernel),
            ("mlp_hidden", self.mlp_hidden),
            ("steps_per_day", self.steps_per_day),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "model.d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.cnn_kernel.is_multiple_of(2) {
            return Err(Error::config("model.cnn_kernel must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("model.dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.probsparse_top_u == Some(0) {
            return Err(Error::config("model.probsparse_top_u must be positive"));
        }
        Ok(())
    }

    pub fn tasks(&self) -> Vec<Task> {
        match self.single_task {
            Some(t) => vec![t],
            None => Task::ALL.to_vec(),
        }
    }

    /// Whether the cross-task interaction block is built.
    pub fn interacts(&self) -> bool {
        self.interaction && self.single_task.is_none()
    }

    /// Input width of the per-task MLP that produces `H̃`.
    fn fusion_width(&self) -> usize {
        if self.spatial {
            2 * self.d_model
        } else {
            self.d_model
        }
    }
}

/// Window geometry the model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub l_in: usize,
    pub l_token: usize,
    pub l_out: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Geometry {
    pub fn of(cfg: &DatasetConfig) -> Self {
        Self {
            l_in: cfg.l_in,
            l_token: cfg.l_token,
            l_out: cfg.l_out,
            patch_rows: cfg.patch_rows,
            patch_cols: cfg.patch_cols,
        }
    }

    pub fn patch_cells(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn center_cell(&self) -> usize {
        (self.patch_rows / 2) * self.patch_cols + self.patch_cols / 2
    }

    pub fn l_dec(&self) -> usize {
        self.l_token + self.l_out
    }
}

/// How parameters are initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// uniform(−1/√fan_in, 1/√fan_in)
    Fan(usize),
    Normal(f64),
    Const(f64),
}

/// Closed-form parameter count.
///
/// With d = d_model, h = mlp_hidden, c = cnn_channels, k = cnn_kernel,
/// P = steps_per_day, and `A(n) = 3(d·n + d) + d² + d` for attention from
/// width n, `F = 2hd + h + d`, `N = 2d`:
///
/// * per task: embedding `d + (P + 7)d`; each encoder layer `A(d) + F + 2N`;
///   spatial encoder `c·L_in·k² + c + A(c) + d² + d`; each decoder layer
///   `2A(d) + F + 3N`; head `d + 1`; fusion MLP `h·z + h + d·h + d` with
///   z = 2d (d without the spatial path)
/// * interaction: `A(d) + N` per stack (temporal always, spatial if enabled)
pub fn analytic_param_count(cfg: &ModelConfig, geo: &Geometry) -> usize {
    let d = cfg.d_model;
    let h = cfg.mlp_hidden;
    let c = cfg.cnn_channels;
    let k = cfg.cnn_kernel;
    let attn = |n: usize| 3 * (d * n + d) + d * d + d;
    let ffn = 2 * h * d + h + d;
    let norm = 2 * d;
    let z = cfg.fusion_width();

    let mut per_task = d + (cfg.steps_per_day + DAYS_PER_WEEK) * d;
    per_task += cfg.n_enc_layers * (attn(d) + ffn + 2 * norm);
    if cfg.spatial {
        per_task += c * geo.l_in * k * k + c + attn(c) + d * d + d;
    }
    per_task += cfg.n_dec_layers * (2 * attn(d) + ffn + 3 * norm);
    per_task += d + 1;
    per_task += h * z + h + d * h + d;

    let mut total = per_task * cfg.tasks().len();
    if cfg.interacts() {
        total += attn(d) + norm;
        if cfg.spatial {
            total += attn(d) + norm;
        }
    }
    total
}

/// Dropout switch for one forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Parameters sliced out of the flat vector inside one graph.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} missing from layout"))
    }

    /// Node of a named parameter, if the layout has it.
    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

struct Attn {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
}

/// Intermediate and final representations of one task.
#[derive(Clone, Copy, Debug)]
pub struct TaskOutput {
    /// `[L_in, d]`
    pub h_enc: Var,
    /// `[1, d]`, absent without the spatial path
    pub h_s: Option<Var>,
    /// `[1, d]`
    pub h_tilde: Var,
    /// `[L_out]`
    pub y: Var,
}

/// Outputs of every task the model was built for, indexed by [`Task::index`].
#[derive(Clone, Debug, Default)]
pub struct Forward {
    pub tasks: [Option<TaskOutput>; 3],
}

impl Forward {
    pub fn task(&self, t: Task) -> Option<&TaskOutput> {
        self.tasks[t.index()].as_ref()
    }
}

/// Result of the interaction block.
#[derive(Clone, Debug)]
pub struct Interaction {
    /// `[3, d]` task tokens after attention, residual and norm
    pub hat_s: Option<Var>,
    pub hat_t: Var,
    /// `H̃` per task, each `[1, d]`
    pub h_tilde: Vec<Var>,
}

/// Model definition: configuration plus the parameter layout.
#[derive(Clone, Debug)]
pub struct MstNet {
    cfg: ModelConfig,
    geo: Geometry,
    layout: Vec<(ParamEntry, Init)>,
    positional_enc: Tensor,
    positional_dec: Tensor,
}

impl MstNet {
    pub fn new(cfg: ModelConfig, geo: Geometry) -> Result<Self> {
        cfg.validate()?;
        if geo.l_in == 0 || geo.l_token == 0 || geo.l_out == 0 || geo.l_token > geo.l_in {
            return Err(Error::config(format!("invalid window geometry {geo:?}")));
        }
        if geo.patch_rows == 0 || geo.patch_cols == 0 {
            return Err(Error::config("patch must be non-empty"));
        }
        let layout = build_layout(&cfg, &geo);
        let positional_enc = sinusoidal(geo.l_in, cfg.d_model);
        let positional_dec = sinusoidal(geo.l_dec(), cfg.d_model);
        Ok(Self { cfg, geo, layout, positional_enc, positional_dec })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.cfg.tasks()
    }

    pub fn num_params(&self) -> usize {
        self.layout.last().map(|(e, _)| e.offset + e.numel()).unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ParamEntry> {
        self.layout.iter().map(|(e, _)| e)
    }

    /// Fresh parameters drawn from `rng`.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut flat = Vec::with_capacity(self.num_params());
        for (e, init) in &self.layout {
            for _ in 0..e.numel() {
                flat.push(match *init {
                    Init::Fan(fan_in) => {
                        let a = 1.0 / (fan_in as f64).sqrt();
                        rng.random_range(-a..=a)
                    }
                    Init::Normal(sd) => sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    Init::Const(v) => v,
                });
            }
        }
        ParamVector::new(flat, self.entries().cloned().collect()).expect("layout partitions the vector")
    }

    /// Slice every named parameter out of the flat vector `phi`.
    pub fn bind(&self, g: &mut Graph, phi: Var) -> Result<Bound> {
        if g.shape(phi) != [self.num_params()] {
            return Err(Error::shape(
                "bind",
                format!("parameter vector {:?}, model needs [{}]", g.shape(phi), self.num_params()),
            ));
        }
        let mut vars = HashMap::with_capacity(self.layout.len());
        for (e, _) in &self.layout {
            let v = g.slice(phi, e.offset, &e.shape)?;
            vars.insert(e.name.clone(), v);
        }
        Ok(Bound { vars })
    }

    fn attn(&self, p: &Bound, prefix: &str) -> Attn {
        let n = |s: &str| p.get(&format!("{prefix}.{s}"));
        Attn { wq: n("wq"), bq: n("bq"), wk: n("wk"), bk: n("bk"), wv: n("wv"), bv: n("bv"), wo: n("wo"), bo: n("bo") }
    }

    /// Multi-head attention from `x_q` onto `x_kv`.
    ///
    /// Query/key/value maps are `[d, d_in]` with head h owning rows
    /// `h·d_h..(h+1)·d_h`; the output map is `[d, d]` with head h owning the
    /// same rows, so the per-head outputs are summed rather than concatenated.
    fn mha(
        &self,
        g: &mut Graph,
        a: &Attn,
        x_q: Var,
        x_kv: Var,
        mask: Option<&AttentionMask>,
        top_u: Option<usize>,
    ) -> Result<Var> {
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_model / heads;
        let mut acc = None;
        for h in 0..heads {
            let head = |g: &mut Graph, w: Var, b: Var, x: Var| -> Result<Var> {
                let wh = g.rows(w, h * dh, dh)?;
                let bh = g.slice(b, h * dh, &[dh])?;
                g.linear(x, wh, Some(bh))
            };
            let q = head(g, a.wq, a.bq, x_q)?;
            let k = head(g, a.wk, a.bk, x_kv)?;
            let v = head(g, a.wv, a.bv, x_kv)?;
            let mut o = g.attention(q, k, v, mask)?;
            if let Some(u) = top_u {
                o = self.probsparse(g, q, k, v, o, u)?;
            }
            let wo = g.rows(a.wo, h * dh, dh)?;
            let part = g.matmul(o, wo)?;
            acc = Some(match acc {
                None => part,
                Some(prev) => g.add(prev, part)?,
            });
        }
        g.add(acc.expect("at least one head"), a.bo)
    }

    /// Keep the attention output of the `u` queries with the largest
    /// max-minus-mean score; the others get the mean value row.
    fn probsparse(&self, g: &mut Graph, q: Var, k: Var, v: Var, full: Var, u: usize) -> Result<Var> {
        let lq = g.shape(q)[0];
        if u >= lq {
            return Ok(full);
        }
        let (qv, kv) = (g.value(q), g.value(k));
        let (dh, lk) = (qv.shape()[1], kv.shape()[0]);
        let mut score: Vec<(f64, usize)> = (0..lq)
            .map(|i| {
                let qi = &qv.data()[i * dh..(i + 1) * dh];
                let dots: Vec<f64> = (0..lk)
                    .map(|j| qi.iter().zip(&kv.data()[j * dh..(j + 1) * dh]).map(|(a, b)| a * b).sum())
                    .collect();
                let max = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = dots.iter().sum::<f64>() / lk as f64;
                (max - mean, i)
            })
            .collect();
        score.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut keep = vec![0.0; lq];
        for &(_, i) in &score[..u] {
            keep[i] = 1.0;
        }
        let drop: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
        let kept = g.mul_const(full, Tensor::new(vec![lq, 1], keep)?)?;
        let mean_v = g.mean_rows(v)?;
        let filler = g.mul_const(mean_v, Tensor::new(vec![lq, 1], drop)?)?;
        g.add(kept, filler)
    }

    fn dropout(&self, g: &mut Graph, x: Var, mode: &mut Mode) -> Result<Var> {
        let p = self.cfg.dropout_rate;
        match mode {
            Mode::Train(rng) if p > 0.0 => {
                let shape = g.shape(x).to_vec();
                let n: usize = shape.iter().product();
                let keep = 1.0 / (1.0 - p);
                let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
                g.mul_const(x, Tensor::new(shape, mask)?)
            }
            _ => Ok(x),
        }
    }

    fn ffn(&self, g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let h = g.linear(x, p.get(&format!("{prefix}.w1")), Some(p.get(&format!("{prefix}.b1"))))?;
        let h = g.relu(h)?;
        g.linear(h, p.get(&format!("{prefix}.w2")), Some(p.get(&format!("{prefix}.b2"))))
    }

    fn norm(&self, g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        g.layer_norm(x, p.get(&format!("{prefix}.gamma")), p.get(&format!("{prefix}.beta")), LN_EPS)
    }

    /// `LN(x + dropout(f))`
    fn residual(&self, g: &mut Graph, p: &Bound, prefix: &str, x: Var, f: Var, mode: &mut Mode) -> Result<Var> {
        let f = self.dropout(g, f, mode)?;
        let s = g.add(x, f)?;
        self.norm(g, p, prefix, s)
    }

    /// `R = V + E + P`: a linear map of the values, learned hour-of-day and
    /// day-of-week embeddings, and the fixed sinusoidal position code.
    pub fn embed(
        &self,
        g: &mut Graph,
        p: &Bound,
        task: Task,
        values: &[f64],
        hours: &[usize],
        days: &[usize],
    ) -> Result<Var> {
        let len = values.len();
        let pos = if len == self.geo.l_in {
            &self.positional_enc
        } else if len == self.geo.l_dec() {
            &self.positional_dec
        } else {
            return Err(Error::shape(
                "embed",
                format!("window of {len} steps, expected {} or {}", self.geo.l_in, self.geo.l_dec()),
            ));
        };
        if hours.len() != len || days.len() != len {
            return Err(Error::shape("embed", format!("{len} values with {} hours, {} days", hours.len(), days.len())));
        }
        if let Some(&h) = hours.iter().find(|&&h| h >= self.cfg.steps_per_day) {
            return Err(Error::shape("embed", format!("hour {h} outside table of {}", self.cfg.steps_per_day)));
        }
        if let Some(&d) = days.iter().find(|&&d| d >= DAYS_PER_WEEK) {
            return Err(Error::shape("embed", format!("day {d} outside the week")));
        }
        let t = task.name();
        let x = g.constant(Tensor::new(vec![len, 1], values.to_vec())?);
        let v = g.linear(x, p.get(&format!("{t}.embed.value")), None)?;
        let eh = g.lookup(p.get(&format!("{t}.embed.hour")), hours)?;
        let ed = g.lookup(p.get(&format!("{t}.embed.day")), days)?;
        let e = g.add(eh, ed)?;
        let r = g.add(v, e)?;
        let pc = g.constant(pos.clone());
        g.add(r, pc)
    }

    /// Stack of unmasked self-attention encoder layers.
    pub fn temporal_encode(&self, g: &mut Graph, p: &Bound, task: Task, r: Var, mode: &mut Mode) -> Result<Var> {
        let t = task.name();
        let mut x = r;
        for l in 0..self.cfg.n_enc_layers {
            let pre = format!("{t}.enc{l}");
            let a = self.attn(p, &format!("{pre}.attn"));
            let f = self.mha(g, &a, x, x, None, None)?;
            x = self.residual(g, p, &format!("{pre}.ln1"), x, f, mode)?;
            let f = self.ffn(g, p, &format!("{pre}.ffn"), x)?;
            x = self.residual(g, p, &format!("{pre}.ln2"), x, f, mode)?;
        }
        Ok(x)
    }

    /// `Linear(pool(MHA(CNN(X))))` over a `[rows, cols, L_in]` grid; returns `[1, d]`.
    pub fn spatial_encode(&self, g: &mut Graph, p: &Bound, task: Task, grid: Var) -> Result<Var> {
        let expect = [self.geo.patch_rows, self.geo.patch_cols, self.geo.l_in];
        if g.shape(grid) != expect {
            return Err(Error::shape("spatial_encode", format!("grid {:?}, expected {expect:?}", g.shape(grid))));
        }
        let t = task.name();
        let c = g.conv2d(
            grid,
            p.get(&format!("{t}.spatial.conv.w")),
            Some(p.get(&format!("{t}.spatial.conv.b"))),
            self.cfg.cnn_kernel,
        )?;
        let c = g.relu(c)?;
        let a = self.attn(p, &format!("{t}.spatial.attn"));
        let h = self.mha(g, &a, c, c, None, None)?;
        let pooled = g.mean_rows(h)?;
        g.linear(pooled, p.get(&format!("{t}.spatial.out.w")), Some(p.get(&format!("{t}.spatial.out.b"))))
    }

    /// Per-task fusion MLP: `[1, z] → [1, d]`.
    fn fuse(&self, g: &mut Graph, p: &Bound, task: Task, z: Var) -> Result<Var> {
        self.ffn(g, p, &format!("{}.fuse", task.name()), z)
    }

    /// Cross-task attention over the three pooled task tokens.
    ///
    /// `h_s` and `h_enc` are indexed by [`Task::index`]; `h_s` is empty when
    /// the spatial path is off.
    pub fn interact(
        &self,
        g: &mut Graph,
        p: &Bound,
        h_s: &[Var],
        h_enc: &[Var],
        mode: &mut Mode,
    ) -> Result<Interaction> {
        if h_enc.len() != 3 || !(h_s.is_empty() || h_s.len() == 3) {
            return Err(Error::shape("interact", format!("{} spatial and {} temporal inputs", h_s.len(), h_enc.len())));
        }
        let pooled = h_enc.iter().map(|&h| g.mean_rows(h)).collect::<Result<Vec<_>>>()?;
        let ht_cat = g.concat(&pooled, 0)?;
        let a = self.attn(p, "inter.temporal.attn");
        let f = self.mha(g, &a, ht_cat, ht_cat, None, None)?;
        let ht = self.residual(g, p, "inter.temporal.ln", ht_cat, f, mode)?;
        let hs = if h_s.is_empty() {
            None
        } else {
            let hs_cat = g.concat(h_s, 0)?;
            let a = self.attn(p, "inter.spatial.attn");
            let f = self.mha(g, &a, hs_cat, hs_cat, None, None)?;
            Some(self.residual(g, p, "inter.spatial.ln", hs_cat, f, mode)?)
        };
        let mut out = Vec::with_capacity(3);
        for task in Task::ALL {
            let i = task.index();
            let t_row = g.rows(ht, i, 1)?;
            let z = match hs {
                Some(hs) => {
                    let s_row = g.rows(hs, i, 1)?;
                    g.concat(&[s_row, t_row], 1)?
                }
                None => t_row,
            };
            out.push(self.fuse(g, p, task, z)?);
        }
        Ok(Interaction { hat_s: hs, hat_t: ht, h_tilde: out })
    }

    /// `H̃` without interaction: the task MLP applied to `[H_s; pooled H_enc]`.
    fn fuse_local(&self, g: &mut Graph, p: &Bound, task: Task, h_s: Option<Var>, h_enc: Var) -> Result<Var> {
        let pooled = g.mean_rows(h_enc)?;
        let z = match h_s {
            Some(s) => g.concat(&[s, pooled], 1)?,
            None => pooled,
        };
        self.fuse(g, p, task, z)
    }

    /// Decoder stack over `R_dec` with memory `H_enc + H̃`; returns the
    /// one-step predictions of every decoder position, `[L_token + L_out]`.
    pub fn decode_sequence(
        &self,
        g: &mut Graph,
        p: &Bound,
        task: Task,
        r_dec: Var,
        memory: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let l_dec = self.geo.l_dec();
        if g.shape(r_dec) != [l_dec, self.cfg.d_model] {
            return Err(Error::shape(
                "decode",
                format!("decoder input {:?}, expected [{l_dec}, {}]", g.shape(r_dec), self.cfg.d_model),
            ));
        }
        let t = task.name();
        let mask = AttentionMask::causal(l_dec);
        let mut x = r_dec;
        for l in 0..self.cfg.n_dec_layers {
            let pre = format!("{t}.dec{l}");
            let a = self.attn(p, &format!("{pre}.self"));
            let f = self.mha(g, &a, x, x, Some(&mask), None)?;
            x = self.residual(g, p, &format!("{pre}.ln1"), x, f, mode)?;
            let a = self.attn(p, &format!("{pre}.cross"));
            let f = self.mha(g, &a, x, memory, None, self.cfg.probsparse_top_u)?;
            x = self.residual(g, p, &format!("{pre}.ln2"), x, f, mode)?;
            let f = self.ffn(g, p, &format!("{pre}.ffn"), x)?;
            x = self.residual(g, p, &format!("{pre}.ln3"), x, f, mode)?;
        }
        let y = g.linear(x, p.get(&format!("{t}.head.w")), Some(p.get(&format!("{t}.head.b"))))?;
        g.reshape(y, &[l_dec])
    }

    /// Forecast `[L_out]`: the last `L_out` decoder positions.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        p: &Bound,
        task: Task,
        r_dec: Var,
        h_enc: Var,
        h_tilde: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let memory = g.add(h_enc, h_tilde)?;
        let seq = self.decode_sequence(g, p, task, r_dec, memory, mode)?;
        g.slice(seq, self.geo.l_token, &[self.geo.l_out])
    }

    /// Encoder-side values and channels-last grid of one task.
    fn task_inputs(&self, s: &WindowSample, task: Task) -> Result<(Vec<f64>, Tensor)> {
        let cells = self.geo.patch_cells();
        let x = s.input(task);
        if x.len() != self.geo.l_in * cells
            || s.token(task).len() != self.geo.l_token
            || s.hours.len() != self.geo.l_in + self.geo.l_out
        {
            return Err(Error::shape("forward", "sample does not match the model's window geometry"));
        }
        let center = self.geo.center_cell();
        let series = (0..self.geo.l_in).map(|t| x[t * cells + center]).collect();
        let mut grid = Vec::with_capacity(x.len());
        for cell in 0..cells {
            grid.extend((0..self.geo.l_in).map(|t| x[t * cells + cell]));
        }
        let grid = Tensor::new(vec![self.geo.patch_rows, self.geo.patch_cols, self.geo.l_in], grid)?;
        Ok((series, grid))
    }

    /// Full forward pass of one sample.
    pub fn forward(&self, g: &mut Graph, p: &Bound, s: &WindowSample, mode: &mut Mode) -> Result<Forward> {
        let geo = self.geo;
        let tasks = self.tasks();
        let enc_hours = &s.hours[..geo.l_in];
        let enc_days = &s.days[..geo.l_in];
        let dec_span = geo.l_in - geo.l_token..geo.l_in + geo.l_out;

        let mut h_enc = Vec::with_capacity(tasks.len());
        let mut h_s = Vec::with_capacity(tasks.len());
        for &task in &tasks {
            let (series, grid) = self.task_inputs(s, task)?;
            let r = self.embed(g, p, task, &series, enc_hours, enc_days)?;
            h_enc.push(self.temporal_encode(g, p, task, r, mode)?);
            if self.cfg.spatial {
                let grid = g.constant(grid);
                h_s.push(self.spatial_encode(g, p, task, grid)?);
            }
        }

        let h_tilde = if self.cfg.interacts() {
            self.interact(g, p, &h_s, &h_enc, mode)?.h_tilde
        } else {
            tasks
                .iter()
                .enumerate()
                .map(|(j, &task)| self.fuse_local(g, p, task, h_s.get(j).copied(), h_enc[j]))
                .collect::<Result<Vec<_>>>()?
        };

        let mut out = Forward::default();
        for (j, &task) in tasks.iter().enumerate() {
            let mut dec_values = s.token(task).to_vec();
            dec_values.resize(geo.l_dec(), 0.0);
            let r_dec = self.embed(g, p, task, &dec_values, &s.hours[dec_span.clone()], &s.days[dec_span.clone()])?;
            let y = self.decode(g, p, task, r_dec, h_enc[j], h_tilde[j], mode)?;
            out.tasks[task.index()] =
                Some(TaskOutput { h_enc: h_enc[j], h_s: h_s.get(j).copied(), h_tilde: h_tilde[j], y });
        }
        Ok(out)
    }

    /// Mean squared error per task over the `L_out` forecast steps.
    pub fn task_losses(&self, g: &mut Graph, f: &Forward, s: &WindowSample) -> Result<[Option<Var>; 3]> {
        let mut out = [None; 3];
        for task in self.tasks() {
            let o = f.task(task).ok_or_else(|| Error::shape("task_losses", format!("no output for {task}")))?;
            let target = g.constant(Tensor::vector(s.target(task).to_vec())?);
            out[task.index()] = Some(g.mse(o.y, target)?);
        }
        Ok(out)
    }

    /// Evaluation-mode forecasts of one sample with fixed parameters.
    pub fn predict(&self, params: &ParamVector, s: &WindowSample) -> Result<[Option<Vec<f64>>; 3]> {
        let mut g = Graph::new();
        let phi = g.constant(Tensor::vector(params.flat.clone())?);
        let p = self.bind(&mut g, phi)?;
        let f = self.forward(&mut g, &p, s, &mut Mode::Eval)?;
        let mut out: [Option<Vec<f64>>; 3] = Default::default();
        for task in self.tasks() {
            let y = f.task(task).expect("built task").y;
            out[task.index()] = Some(g.value(y).data().to_vec());
        }
        Ok(out)
    }
}

/// Geometry and architecture of the end-to-end gradient check.
pub fn gradcheck_setup() -> (ModelConfig, DatasetConfig) {
    let model = ModelConfig { d_model: 8, n_heads: 2, cnn_channels: 4, mlp_hidden: 16, ..ModelConfig::default() };
    let data = DatasetConfig { l_in: 8, l_token: 4, l_out: 4, stride: 4, ..DatasetConfig::default() };
    (model, data)
}

/// Central-difference check of the total loss gradient at `n_coords` random
/// parameters of a freshly initialized small model on one simulated window.
pub fn gradcheck_end_to_end(seed: u64, step: f64, n_coords: usize) -> Result<GradCheck> {
    use rand::SeedableRng;

    let (model_cfg, data_cfg) = gradcheck_setup();
    let scenario = ScenarioConfig { horizon: 16, seed, ..ScenarioConfig::reference_real() };
    let cube = generate_cube(&scenario)?;
    let sample = crate::dataset::window(&cube, &data_cfg, Source::Sim, 0)?.swap_remove(0);
    let net = MstNet::new(model_cfg, Geometry::of(&data_cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = net.init(&mut rng);
    let coords: Vec<(usize, usize)> = (0..n_coords).map(|_| (0, rng.random_range(0..params.len()))).collect();
    check_gradients("end_to_end", &[Tensor::vector(params.flat)?], step, Some(&coords), |g, x| {
        let p = net.bind(g, x[0])?;
        let f = net.forward(g, &p, &sample, &mut Mode::Eval)?;
        let losses = net.task_losses(g, &f, &sample)?;
        let mut total = None;
        for l in losses.into_iter().flatten() {
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        total.ok_or_else(|| Error::shape("gradcheck", "model has no tasks"))
    })
}

/// `P[pos, 2i] = sin(pos / 10000^(2i/d))`, `P[pos, 2i+1] = cos(·)`.
pub fn sinusoidal(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for j in 0..d {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

fn build_layout(cfg: &ModelConfig, geo: &Geometry) -> Vec<(ParamEntry, Init)> {
    let mut b = LayoutBuilder::default();
    let d = cfg.d_model;
    let h = cfg.mlp_hidden;
    for task in cfg.tasks() {
        let t = task.name();
        b.push(format!("{t}.embed.value"), vec![d, 1], Init::Fan(1));
        b.push(format!("{t}.embed.hour"), vec![cfg.steps_per_day, d], Init::Normal(0.02));
        b.push(format!("{t}.embed.day"), vec![DAYS_PER_WEEK, d], Init::Normal(0.02));
        for l in 0..cfg.n_enc_layers {
            let pre = format!("{t}.enc{l}");
            b.attn(&format!("{pre}.attn"), d, d);
            b.norm(&format!("{pre}.ln1"), d);
            b.ffn(&format!("{pre}.ffn"), d, h, d);
            b.norm(&format!("{pre}.ln2"), d);
        }
        if cfg.spatial {
            let fan = geo.l_in * cfg.cnn_kernel * cfg.cnn_kernel;
            b.linear(&format!("{t}.spatial.conv"), cfg.cnn_channels, fan);
            b.attn(&format!("{t}.spatial.attn"), d, cfg.cnn_channels);
            b.linear(&format!("{t}.spatial.out"), d, d);
        }
        for l in 0..cfg.n_dec_layers {
            let pre = format!("{t}.dec{l}");
            b.attn(&format!("{pre}.self"), d, d);
            b.norm(&format!("{pre}.ln1"), d);
            b.attn(&format!("{pre}.cross"), d, d);
            b.norm(&format!("{pre}.ln2"), d);
            b.ffn(&format!("{pre}.ffn"), d, h, d);
            b.norm(&format!("{pre}.ln3"), d);
        }
        b.linear(&format!("{t}.head"), 1, d);
        b.ffn(&format!("{t}.fuse"), cfg.fusion_width(), h, d);
    }
    if cfg.interacts() {
        b.attn("inter.temporal.attn", d, d);
        b.norm("inter.temporal.ln", d);
        if cfg.spatial {
            b.attn("inter.spatial.attn", d, d);
            b.norm("inter.spatial.ln", d);
        }
    }
    b.entries
}

#[derive(Default)]
struct LayoutBuilder {
    entries: Vec<(ParamEntry, Init)>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        let e = ParamEntry { name, offset: self.offset, shape };
        self.offset += e.numel();
        self.entries.push((e, init));
    }

    /// `.w` as `[out, in]` plus `.b`.
    fn linear(&mut self, prefix: &str, out: usize, inp: usize) {
        self.push(format!("{prefix}.w"), vec![out, inp], Init::Fan(inp));
        self.push(format!("{prefix}.b"), vec![out], Init::Fan(inp));
    }

    fn attn(&mut self, prefix: &str, d: usize, d_in: usize) {
        for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv")] {
            self.push(format!("{prefix}.{w}"), vec![d, d_in], Init::Fan(d_in));
            self.push(format!("{prefix}.{b}"), vec![d], Init::Fan(d_in));
        }
        self.push(format!("{prefix}.wo"), vec![d, d], Init::Fan(d));
        self.push(format!("{prefix}.bo"), vec![d], Init::Fan(d));
    }

    fn ffn(&mut self, prefix: &str, d_in: usize, hidden: usize, d_out: usize) {
        self.push(format!("{prefix}.w1"), vec![hidden, d_in], Init::Fan(d_in));
        self.push(format!("{prefix}.b1"), vec![hidden], Init::Fan(d_in));
        self.push(format!("{prefix}.w2"), vec![d_out, hidden], Init::Fan(hidden));
        self.push(format!("{prefix}.b2"), vec![d_out], Init::Fan(hidden));
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), vec![d], Init::Const(1.0));
        self.push(format!("{prefix}.beta"), vec![d], Init::Const(0.0));
    }
}
