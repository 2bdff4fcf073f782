//! Metrics, reports, the ablation matrix and the corruption benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::dataset::{DatasetBundle, NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_to_string, write_atomic};
use crate::model::{ModelConfig, MstNet, ParamVector};
use crate::pipeline::{fit, Fit};
use crate::reweighter::ReweightConfig;
use crate::trainer::{TrainConfig, WeightingMode};
use crate::Task;

pub const AGGREGATE_HEADER: &str = "variant,metric,call,sms,net";

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("mae", pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("rmse", pred, target)?;
    Ok((pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

fn check_pair(op: &'static str, pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(op, format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub mae: f64,
    pub rmse: f64,
}

/// Test metrics of one trained model, in de-normalized traffic units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub weighting_mode: String,
    pub dataset_checksum: String,
    /// Configuration the model was trained with.
    pub config: serde_json::Value,
    /// split → task → metrics
    pub metrics: BTreeMap<String, BTreeMap<Task, TaskMetrics>>,
    /// Left out unless requested so that reports stay byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl MetricsReport {
    pub fn get(&self, split: &str, task: Task) -> Option<TaskMetrics> {
        self.metrics.get(split)?.get(&task).copied()
    }

    /// One line per task, e.g. `Call MAE 0.29 / RMSE 0.40`.
    pub fn table(&self, split: &str) -> String {
        let mut out = String::new();
        if let Some(m) = self.metrics.get(split) {
            for (task, v) in m {
                let _ = writeln!(out, "{}", format_row(*task, v));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn format_row(task: Task, m: &TaskMetrics) -> String {
    format!("{} MAE {:.2} / RMSE {:.2}", capitalized(task), m.mae, m.rmse)
}

fn capitalized(task: Task) -> &'static str {
    match task {
        Task::Call => "Call",
        Task::Sms => "SMS",
        Task::Net => "Net",
    }
}

/// De-normalized `(predictions, targets)` of one task, flattened.
pub type Forecast = (Vec<f64>, Vec<f64>);

/// De-normalized forecasts of `task` over every sample and step of `split`,
/// paired with the de-normalized targets.
pub fn forecasts(
    net: &MstNet,
    params: &ParamVector,
    split: &[WindowSample],
    stats: &NormStats,
) -> Result<BTreeMap<Task, Forecast>> {
    let mut out: BTreeMap<Task, Forecast> = BTreeMap::new();
    for s in split {
        let pred = net.predict(params, s)?;
        for task in net.tasks() {
            let y = pred[task.index()].as_ref().expect("active task predicted");
            let e = out.entry(task).or_default();
            e.0.extend(y.iter().map(|&v| stats.denormalize(task, v)));
            e.1.extend(s.target(task).iter().map(|&v| stats.denormalize(task, v)));
        }
    }
    Ok(out)
}

/// Per-task metrics of `params` on one split.
pub fn evaluate_split(
    net: &MstNet,
    params: &ParamVector,
    split: &[WindowSample],
    stats: &NormStats,
) -> Result<BTreeMap<Task, TaskMetrics>> {
    forecasts(net, params, split, stats)?
        .into_iter()
        .map(|(task, (p, t))| Ok((task, TaskMetrics { mae: mae(&p, &t)?, rmse: rmse(&p, &t)? })))
        .collect()
}

/// Metrics on the real validation and test splits.
pub fn evaluate(
    net: &MstNet,
    params: &ParamVector,
    bundle: &DatasetBundle,
) -> Result<BTreeMap<String, BTreeMap<Task, TaskMetrics>>> {
    let stats = bundle.stats()?;
    let mut out = BTreeMap::new();
    out.insert("val".to_string(), evaluate_split(net, params, &bundle.val, stats)?);
    out.insert("test".to_string(), evaluate_split(net, params, &bundle.test, stats)?);
    Ok(out)
}

/// Everything needed to train one model of the ablation matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub reweight: ReweightConfig,
    /// Skip the bilevel stage; every sample keeps weight σ(0) = 0.5.
    pub uniform_sample_weights: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoInteraction,
    NoSpatial,
    AverageWeighting,
    UniformSampleWeights,
    SingleTask,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoInteraction,
        Variant::NoSpatial,
        Variant::AverageWeighting,
        Variant::UniformSampleWeights,
        Variant::SingleTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoInteraction => "no_interaction",
            Self::NoSpatial => "no_spatial",
            Self::AverageWeighting => "average_weighting",
            Self::UniformSampleWeights => "uniform_sample_weights",
            Self::SingleTask => "single_task",
        }
    }

    /// The experiment with this variant's change applied.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut e = base.clone();
        match self {
            Self::Full | Self::SingleTask => {}
            Self::NoInteraction => e.model.interaction = false,
            Self::NoSpatial => e.model.spatial = false,
            Self::AverageWeighting => e.train.weighting_mode = WeightingMode::Average,
            Self::UniformSampleWeights => e.uniform_sample_weights = true,
        }
        e
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trains one variant with `seed` and reports its metrics. The single-task
/// variant trains one model per task and merges their rows.
pub fn run_variant(
    variant: Variant,
    base: &ExperimentConfig,
    bundle: &DatasetBundle,
    seed: u64,
    timing: bool,
) -> Result<MetricsReport> {
    let started = Instant::now();
    let mut exp = variant.apply(base);
    exp.train.seed = seed;
    let mut metrics: BTreeMap<String, BTreeMap<Task, TaskMetrics>> = BTreeMap::new();
    let models: Vec<ModelConfig> = if variant == Variant::SingleTask {
        Task::ALL.iter().map(|&t| ModelConfig { single_task: Some(t), ..exp.model.clone() }).collect()
    } else {
        vec![exp.model.clone()]
    };
    for model in &models {
        let f: Fit = fit(model, bundle, &exp.train, &exp.reweight, exp.uniform_sample_weights)?;
        for (split, m) in evaluate(&f.net, &f.params, bundle)? {
            metrics.entry(split).or_default().extend(m);
        }
    }
    Ok(MetricsReport {
        variant: variant.name().to_string(),
        seed,
        weighting_mode: exp.train.weighting_mode.name().to_string(),
        dataset_checksum: bundle.checksum(),
        config: serde_json::to_value(&exp).expect("config serializes"),
        metrics,
        wall_clock_secs: timing.then(|| started.elapsed().as_secs_f64()),
    })
}

/// Mean test metrics per variant, in first-seen variant order.
pub fn aggregate_csv(reports: &[MetricsReport]) -> String {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for v in order {
        let rs: Vec<&MetricsReport> = reports.iter().filter(|r| r.variant == v).collect();
        for metric in ["MAE", "RMSE"] {
            let _ = write!(out, "{v},{metric}");
            for task in Task::ALL {
                let vals: Vec<f64> = rs
                    .iter()
                    .filter_map(|r| r.get("test", task))
                    .map(|m| if metric == "MAE" { m.mae } else { m.rmse })
                    .collect();
                let cell =
                    if vals.is_empty() { String::new() } else { fmt_f64(vals.iter().sum::<f64>() / vals.len() as f64) };
                let _ = write!(out, ",{cell}");
            }
            out.push('\n');
        }
    }
    out
}

/// Simulated split of the corruption benchmark.
#[derive(Clone, Debug)]
pub struct CorruptedBundle {
    pub bundle: DatasetBundle,
    /// Per simulated sample: were its targets replaced by noise?
    pub corrupted: Vec<bool>,
}

/// The bundle with `n` simulated windows spread evenly over the pool,
/// renumbered `0..n`. Validation and test stay untouched.
pub fn subsample(bundle: &DatasetBundle, n: usize) -> Result<DatasetBundle> {
    if n == 0 || n > bundle.sim.len() {
        return Err(Error::config(format!("cannot keep {n} of {} simulated samples", bundle.sim.len())));
    }
    let sim: Vec<WindowSample> =
        (0..n).map(|i| WindowSample { sample_id: i, ..bundle.sim[i * bundle.sim.len() / n].clone() }).collect();
    Ok(DatasetBundle { sim, ..bundle.clone() })
}

/// Keeps `n` simulated windows spread evenly over the pool and replaces the
/// targets of a seeded random `fraction` of them with independent zero-mean
/// Gaussian noise of standard deviation `noise_std` (normalized units). Validation and test stay untouched.
pub fn corrupt(bundle: &DatasetBundle, n: usize, fraction: f64, noise_std: f64, seed: u64) -> Result<CorruptedBundle> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("corruption fraction must lie in [0, 1], got {fraction}")));
    }
    if !(noise_std.is_finite() && noise_std > 0.0) {
        return Err(Error::config(format!("corruption noise_std must be positive, got {noise_std}")));
    }
    let mut sim = subsample(bundle, n)?.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut corrupted = vec![false; n];
    for &i in &ids[..(fraction * n as f64).round() as usize] {
        corrupted[i] = true;
    }
    for (i, s) in sim.iter_mut().enumerate() {
        if corrupted[i] {
            for t in s.targets.iter_mut() {
                for v in t.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = noise_std * z;
                }
            }
        }
    }
    Ok(CorruptedBundle { bundle: DatasetBundle { sim, ..bundle.clone() }, corrupted })
}

/// One seed of the reweighting-versus-uniform comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReweightingComparison {
    pub seed: u64,
    pub clean_mean_sigma: f64,
    pub corrupted_mean_sigma: f64,
    pub uniform_test_mae: BTreeMap<Task, f64>,
    pub reweighted_test_mae: BTreeMap<Task, f64>,
}

impl ReweightingComparison {
    pub fn sigma_gap(&self) -> f64 {
        self.clean_mean_sigma - self.corrupted_mean_sigma
    }

    pub fn uniform_mean_mae(&self) -> f64 {
        mean(self.uniform_test_mae.values().copied())
    }

    pub fn reweighted_mean_mae(&self) -> f64 {
        mean(self.reweighted_test_mae.values().copied())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Trains the uniform-weights and reweighted models on a corrupted bundle and
/// compares them. The uniform model is the reweighted fit's pretrained stage,
/// which is exactly what a separate uniform fit with the same seed produces.
pub fn compare_reweighting(exp: &ExperimentConfig, data: &CorruptedBundle, seed: u64) -> Result<ReweightingComparison> {
    let mut e = exp.clone();
    e.train.seed = seed;
    let reweighted = fit(&e.model, &data.bundle, &e.train, &e.reweight, false)?;
    let test_mae = |params: &ParamVector| -> Result<BTreeMap<Task, f64>> {
        let m = evaluate_split(&reweighted.net, params, &data.bundle.test, data.bundle.stats()?)?;
        Ok(m.into_iter().map(|(t, v)| (t, v.mae)).collect())
    };
    let group = |want: bool| {
        mean(reweighted.logits.iter().zip(&data.corrupted).filter(|(_, &c)| c == want).map(|(&w, _)| sigmoid(w)))
    };
    Ok(ReweightingComparison {
        seed,
        clean_mean_sigma: group(false),
        corrupted_mean_sigma: group(true),
        uniform_test_mae: test_mae(&reweighted.pretrain.params)?,
        reweighted_test_mae: test_mae(&reweighted.params)?,
    })
}
