//! Joint training of the task heads with dynamic loss weighting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::dataset::{DatasetBundle, WindowSample};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::{Mode, MstNet, ParamVector};
use crate::reweighter::Learner;
use crate::Task;

pub const EPOCH_HEADER: &str = "epoch,loss_call,loss_sms,loss_net,w_call,w_sms,w_net,total";

/// Gradient-norm clipping threshold.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    Dynamic,
    Average,
}

impl WeightingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dynamic => "dynamic",
            Self::Average => "average",
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "average" => Ok(Self::Average),
            _ => Err(Error::config(format!("unknown weighting mode '{s}' (expected dynamic|average)"))),
        }
    }
}

/// Per-task loss weights and the smoothing factor of their update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub weights: [f64; 3],
    pub alpha: f64,
}

impl TaskWeights {
    /// Equal weights over `tasks`, zero elsewhere.
    pub fn uniform(tasks: &[Task], alpha: f64) -> Self {
        let mut weights = [0.0; 3];
        for t in tasks {
            weights[t.index()] = 1.0 / tasks.len() as f64;
        }
        Self { weights, alpha }
    }

    /// `w ← (1 − α) w + α L / ΣL`
    pub fn update(&self, losses: [f64; 3]) -> Result<Self> {
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::NonFiniteValue(format!("task losses {losses:?}")));
        }
        let total: f64 = losses.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroTotalLoss);
        }
        let a = self.alpha;
        let mut weights = [0.0; 3];
        for i in 0..3 {
            weights[i] = (1.0 - a) * self.weights[i] + a * (losses[i] / total);
        }
        Ok(Self { weights, alpha: a })
    }
}

/// `Σ w_t L_t`
pub fn total_loss(tw: &TaskWeights, losses: [f64; 3]) -> f64 {
    tw.weights.iter().zip(losses).map(|(w, l)| w * l).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub seed: u64,
    pub weighting_mode: WeightingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.05,
            alpha: 0.3,
            seed: 0,
            weighting_mode: WeightingMode::Dynamic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("train.epochs and train.batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("train.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("train.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Sample-weighted epoch means; zero for inactive tasks.
    pub losses: [f64; 3],
    /// Task weights used during the epoch.
    pub weights: [f64; 3],
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamVector,
    /// Weights before the first epoch, then after every epoch.
    pub task_weights: Vec<TaskWeights>,
    pub epochs: Vec<EpochRow>,
}

pub fn epoch_csv(rows: &[EpochRow]) -> String {
    let mut out = format!("{EPOCH_HEADER}\n");
    for r in rows {
        let _ = write!(out, "{}", r.epoch);
        for v in r.losses.iter().chain(&r.weights).chain([&r.total]) {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Sum of the task losses of one sample under fixed task weights.
fn weighted_task_loss(g: &mut Graph, losses: &[Option<Var>; 3], weights: &[f64; 3]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (l, &w) in losses.iter().zip(weights) {
        if let Some(l) = *l {
            let term = g.scale(l, w)?;
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term)?,
            });
        }
    }
    total.ok_or_else(|| Error::shape("total_loss", "model has no tasks"))
}

/// Trains `net` on the simulated split. `logits` holds one raw sample weight
/// per simulated window; each sample's loss is scaled by `σ(logit)`, and
/// without logits every sample counts fully. Starts from `init` when given,
/// else from a fresh initialization drawn from `cfg.seed`.
pub fn train(
    net: &MstNet,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    logits: Option<&[f64]>,
    init: Option<ParamVector>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = &bundle.sim;
    if samples.is_empty() {
        return Err(Error::config("no simulated samples to train on"));
    }
    let sample_w: Vec<f64> = match logits {
        Some(w) if w.len() != samples.len() => {
            return Err(Error::shape("train", format!("{} sample weights for {} samples", w.len(), samples.len())));
        }
        Some(w) => w.iter().map(|&x| sigmoid(x)).collect(),
        None => vec![1.0; samples.len()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = match init {
        Some(p) if p.len() != net.num_params() => {
            return Err(Error::shape(
                "train",
                format!("{} initial parameters, model has {}", p.len(), net.num_params()),
            ));
        }
        Some(p) => p,
        None => net.init(&mut rng),
    };
    let tasks = net.tasks();
    let mut tw = TaskWeights::uniform(&tasks, cfg.alpha);
    let mut history = vec![tw];
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut weight_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let phi = g.leaf(Tensor::vector(params.flat.clone())?);
            let p = net.bind(&mut g, phi)?;
            let mut total: Option<Var> = None;
            for &i in batch {
                let s = &samples[i];
                let f = net.forward(&mut g, &p, s, &mut Mode::Train(&mut rng))?;
                let losses = net.task_losses(&mut g, &f, s)?;
                for t in &tasks {
                    let l = losses[t.index()].expect("active task has a loss");
                    sums[t.index()] += sample_w[i] * g.value(l).item();
                }
                weight_sum += sample_w[i];
                let l = weighted_task_loss(&mut g, &losses, &tw.weights)?;
                let term = g.scale(l, sample_w[i] / batch.len() as f64)?;
                total = Some(match total {
                    None => term,
                    Some(t) => g.add(t, term)?,
                });
            }
            let total = total.expect("non-empty batch");
            if !g.value(total).item().is_finite() {
                return Err(Error::Diverged { iter: epoch, what: "training loss".into() });
            }
            let grads = g.backward(total, &[phi])?;
            let grad = grads[&phi].data();
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged { iter: epoch, what: "training gradient".into() });
            }
            let scale = if norm > CLIP_NORM { CLIP_NORM / norm } else { 1.0 };
            for (p, d) in params.flat.iter_mut().zip(grad) {
                *p -= cfg.learning_rate * scale * d;
            }
        }
        let losses = sums.map(|s| s / weight_sum);
        let row = EpochRow { epoch, losses, weights: tw.weights, total: total_loss(&tw, losses) };
        log::info!("epoch {epoch}: total {:.5}", row.total);
        rows.push(row);
        if cfg.weighting_mode == WeightingMode::Dynamic {
            tw = tw.update(losses)?;
        }
        history.push(tw);
    }
    Ok(TrainOutcome { params, task_weights: history, epochs: rows })
}

/// The model as a reweighting learner: per-sample loss is the task-weighted
/// sum of the task MSEs, evaluated without dropout.
pub struct ModelLearner<'a> {
    pub net: &'a MstNet,
    pub task_weights: [f64; 3],
    pub chunk: usize,
}

impl Learner for ModelLearner<'_> {
    type Sample = WindowSample;

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn losses(&self, g: &mut Graph, params: Var, samples: &[WindowSample]) -> Result<Vec<Var>> {
        let p = self.net.bind(g, params)?;
        samples
            .iter()
            .map(|s| {
                let f = self.net.forward(g, &p, s, &mut Mode::Eval)?;
                let losses = self.net.task_losses(g, &f, s)?;
                weighted_task_loss(g, &losses, &self.task_weights)
            })
            .collect()
    }

    fn chunk_size(&self) -> usize {
        self.chunk
    }
}
