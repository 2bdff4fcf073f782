//! Subcommand bodies. Each writes its artifacts atomically and skips work
//! whose primary output already exists unless forced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use simreweight_core::autodiff::check::check_primitives;
use simreweight_core::dataset::{self, DatasetBundle, MANIFEST_FILE};
use simreweight_core::eval::{aggregate_csv, evaluate as score, run_variant, MetricsReport, Variant};
use simreweight_core::io::write_atomic;
use simreweight_core::model::{
    gradcheck_end_to_end, load_checkpoint, save_checkpoint, Checkpoint, Geometry, MstNet, ParamVector,
    CHECKPOINT_MANIFEST,
};
use simreweight_core::pipeline::{self, simulate as build_bundle};
use simreweight_core::reweighter::{history_csv, parse_weights_csv, weights_csv, Outcome};
use simreweight_core::trainer::{epoch_csv, train as train_model, TaskWeights, TrainOutcome};
use simreweight_core::Error;

use crate::config::RunConfig;
use crate::error::CliError;

/// Accepted relative error of the primitive gradient checks.
const PRIMITIVE_TOL: f64 = 1e-4;
const CONFIG_FILE: &str = "config.toml";
const EPOCHS_FILE: &str = "epochs.csv";
const WEIGHTS_FILE: &str = "weights.csv";
const HISTORY_FILE: &str = "history.csv";
const SUMMARY_FILE: &str = "summary.json";
const AGGREGATE_FILE: &str = "aggregate.csv";

fn skip(primary: &Path, force: bool) -> bool {
    let exists = primary.exists();
    if exists && !force {
        info!("{} exists; skipping (use --force to recompute)", primary.display());
    }
    exists && !force
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load_bundle(dir: &Path) -> Result<DatasetBundle, CliError> {
    let b = dataset::load(dir)?;
    info!("loaded {} (sim {}, val {}, test {})", dir.display(), b.sim.len(), b.val.len(), b.test.len());
    Ok(b)
}

fn network(run: &RunConfig, bundle: &DatasetBundle) -> Result<MstNet, CliError> {
    Ok(MstNet::new(run.model.clone(), Geometry::of(&bundle.config))?)
}

fn checkpoint(net: &MstNet, params: ParamVector, meta: BTreeMap<String, String>) -> Checkpoint {
    Checkpoint { model: net.config().clone(), geometry: *net.geometry(), params, meta }
}

fn meta(run: &RunConfig, bundle: &DatasetBundle, stage: &str, weights: &TaskWeights) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("stage".into(), stage.into()),
        ("seed".into(), run.train.seed.to_string()),
        ("weighting_mode".into(), run.train.weighting_mode.name().into()),
        ("dataset_checksum".into(), bundle.checksum()),
        ("task_weights".into(), serde_json::to_string(weights).expect("task weights serialize")),
    ])
}

pub fn simulate(run: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    if skip(&out.join(MANIFEST_FILE), force) {
        return Ok(());
    }
    let started = Instant::now();
    let bundle = build_bundle(&run.simulator, &run.dataset)?;
    dataset::save(&bundle, out)?;
    write(&out.join(CONFIG_FILE), &run.to_toml())?;
    info!("simulated in {:.1?}", started.elapsed());
    println!(
        "sim {} / val {} / test {} samples, checksum {}",
        bundle.sim.len(),
        bundle.val.len(),
        bundle.test.len(),
        bundle.checksum()
    );
    Ok(())
}

/// Raw logits aligned with the simulated split, from `uniform` or a weights CSV.
fn sample_logits(spec: &str, bundle: &DatasetBundle) -> Result<Vec<f64>, CliError> {
    if spec == "uniform" {
        return Ok(vec![0.0; bundle.sim.len()]);
    }
    let path = PathBuf::from(spec);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    let by_id: BTreeMap<usize, f64> = parse_weights_csv(&text, &path)?.into_iter().collect();
    if by_id.len() != bundle.sim.len() {
        return Err(Error::Format {
            path,
            detail: format!("{} weights for {} simulated samples", by_id.len(), bundle.sim.len()),
        }
        .into());
    }
    bundle
        .sim
        .iter()
        .map(|s| {
            by_id.get(&s.sample_id).copied().ok_or_else(|| {
                Error::Format { path: path.clone(), detail: format!("no weight for sample {}", s.sample_id) }.into()
            })
        })
        .collect()
}

pub fn train(run: &RunConfig, data: &Path, out: &Path, sample_weights: &str, force: bool) -> Result<(), CliError> {
    if skip(&out.join(CHECKPOINT_MANIFEST), force) {
        return Ok(());
    }
    let bundle = load_bundle(data)?;
    let net = network(run, &bundle)?;
    let logits = sample_logits(sample_weights, &bundle)?;
    let started = Instant::now();
    let r = train_model(&net, &bundle, &run.train, Some(&logits), None)?;
    info!("trained {} parameters in {:.1?}", net.num_params(), started.elapsed());
    let last = *r.task_weights.last().expect("initial weights recorded");
    let mut m = meta(run, &bundle, "train", &last);
    m.insert("sample_weights".into(), sample_weights.into());
    save_checkpoint(&checkpoint(&net, r.params.clone(), m), out)?;
    write(&out.join(EPOCHS_FILE), &epoch_csv(&r.epochs))?;
    write(&out.join(CONFIG_FILE), &run.to_toml())?;
    if let Some(e) = r.epochs.last() {
        println!("epoch {} total loss {:.6}", e.epoch, e.total);
    }
    Ok(())
}

/// Pretrained model and its final task weights, from a checkpoint or a
/// fresh uniform run.
fn pretrained(run: &RunConfig, bundle: &DatasetBundle, ck: Option<&Path>) -> Result<(MstNet, TrainOutcome), CliError> {
    let Some(dir) = ck else {
        let net = network(run, bundle)?;
        let r = train_model(&net, bundle, &run.train, Some(&vec![0.0; bundle.sim.len()]), None)?;
        return Ok((net, r));
    };
    let c = load_checkpoint(dir)?;
    if c.geometry != Geometry::of(&bundle.config) {
        return Err(CliError::Config(format!("checkpoint {} was built for different window geometry", dir.display())));
    }
    let path = dir.join(CHECKPOINT_MANIFEST);
    let tw: TaskWeights = c
        .meta
        .get("task_weights")
        .ok_or_else(|| Error::Format { path: path.clone(), detail: "missing task_weights metadata".into() })
        .and_then(|s| {
            serde_json::from_str(s).map_err(|e| Error::Format { path: path.clone(), detail: e.to_string() })
        })?;
    let net = c.network()?;
    Ok((net, TrainOutcome { params: c.params, task_weights: vec![tw], epochs: Vec::new() }))
}

fn summary(o: &Outcome) -> serde_json::Value {
    let inserted = o.management.iter().filter(|m| m.inserted.is_some()).count();
    let removed: usize = o.management.iter().map(|m| m.removed.len()).sum();
    serde_json::json!({
        "iterations": o.history.len(),
        "final_G": o.final_g,
        "converged_at": o.converged_at,
        "planes_inserted": inserted,
        "planes_removed": removed,
        "planes_final": o.planes.len(),
    })
}

pub fn reweight(run: &RunConfig, data: &Path, out: &Path, ck: Option<&Path>, force: bool) -> Result<(), CliError> {
    if skip(&out.join(WEIGHTS_FILE), force) {
        return Ok(());
    }
    let bundle = load_bundle(data)?;
    let (net, pre) = pretrained(run, &bundle, ck)?;
    let started = Instant::now();
    let (params, outcome, retrain) = pipeline::reweight(&net, &bundle, &pre, &run.train, &run.reweight)?;
    info!("reweighted in {:.1?}", started.elapsed());
    let ids: Vec<usize> = bundle.sim.iter().map(|s| s.sample_id).collect();
    let tw = *retrain.as_ref().unwrap_or(&pre).task_weights.last().expect("initial weights recorded");
    let mut m = meta(run, &bundle, "reweight", &tw);
    m.insert("plane_offset".into(), format!("{:?}", run.reweight.plane_offset).to_lowercase());
    m.insert("retrain_with_weights".into(), run.reweight.retrain_with_weights.to_string());
    save_checkpoint(&checkpoint(&net, params, m), out)?;
    write(&out.join(HISTORY_FILE), &history_csv(&outcome.history))?;
    if let Some(r) = &retrain {
        write(&out.join(EPOCHS_FILE), &epoch_csv(&r.epochs))?;
    }
    let s = serde_json::to_string_pretty(&summary(&outcome)).expect("summary serializes");
    write(&out.join(SUMMARY_FILE), &s)?;
    write(&out.join(CONFIG_FILE), &run.to_toml())?;
    // Written last: its presence marks a finished run.
    write(&out.join(WEIGHTS_FILE), &weights_csv(&ids, &outcome.w))?;
    println!(
        "final G {:.6}, {} planes, converged at {:?}",
        outcome.final_g,
        outcome.planes.len(),
        outcome.converged_at
    );
    Ok(())
}

pub fn evaluate(ck: &Path, data: &Path, out: &Path, timing: bool, force: bool) -> Result<(), CliError> {
    if skip(out, force) {
        return Ok(());
    }
    let started = Instant::now();
    let c = load_checkpoint(ck)?;
    let bundle = load_bundle(data)?;
    let checksum = bundle.checksum();
    if c.meta.get("dataset_checksum").is_some_and(|k| *k != checksum) {
        log::warn!("checkpoint was trained on a different dataset than {}", data.display());
    }
    let net = c.network()?;
    let metrics = score(&net, &c.params, &bundle)?;
    let report = MetricsReport {
        variant: c.meta.get("stage").cloned().unwrap_or_else(|| "checkpoint".into()),
        seed: c.meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
        weighting_mode: c.meta.get("weighting_mode").cloned().unwrap_or_default(),
        dataset_checksum: checksum,
        config: serde_json::to_value(&c.model).expect("model config serializes"),
        metrics,
        wall_clock_secs: None,
    };
    let elapsed = started.elapsed().as_secs_f64();
    info!("evaluated in {elapsed:.2}s");
    let report = MetricsReport { wall_clock_secs: timing.then_some(elapsed), ..report };
    report.save(out)?;
    for split in ["val", "test"] {
        println!("[{split}]\n{}", report.table(split));
    }
    Ok(())
}

fn report_path(out: &Path, v: Variant, seed: u64) -> PathBuf {
    out.join(format!("{}_seed{seed}.json", v.name()))
}

pub fn ablate(
    run: &RunConfig,
    data: &Path,
    out: &Path,
    jobs: usize,
    timing: bool,
    force: bool,
) -> Result<(), CliError> {
    let bundle = load_bundle(data)?;
    let exp = run.experiment();
    let cells: Vec<(Variant, u64)> =
        run.eval.variants.iter().flat_map(|&v| run.eval.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Mutex<Vec<Option<Result<MetricsReport, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(v, seed)) = cells.get(i) else { break };
        let path = report_path(out, v, seed);
        let r = if skip(&path, force) {
            MetricsReport::load(&path).map_err(CliError::from)
        } else {
            info!("running {v} seed {seed}");
            run_variant(v, &exp, &bundle, seed, timing)
                .map_err(CliError::from)
                .and_then(|rep| rep.save(&path).map(|()| rep).map_err(CliError::from))
        };
        results.lock().expect("no worker panicked")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.min(cells.len()) {
            s.spawn(work);
        }
    });
    let reports = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let csv = aggregate_csv(&reports);
    write(&out.join(AGGREGATE_FILE), &csv)?;
    write(&out.join(CONFIG_FILE), &run.to_toml())?;
    print!("{csv}");
    Ok(())
}

pub fn gradcheck(seeds: u64, step: f64, coords: usize, tolerance: f64) -> Result<(), CliError> {
    let mut worst_prim = 0.0_f64;
    for c in check_primitives(0, step)? {
        println!("{:<24} max rel err {:.3e} ({} coords)", c.name, c.max_rel_err, c.checked);
        worst_prim = worst_prim.max(c.max_rel_err);
    }
    let mut worst = 0.0_f64;
    for seed in 0..seeds {
        let c = gradcheck_end_to_end(seed, step, coords)?;
        println!("end_to_end seed {seed:<3}     max rel err {:.3e} ({} coords)", c.max_rel_err, c.checked);
        worst = worst.max(c.max_rel_err);
    }
    println!("worst primitive {worst_prim:.3e} (tol {PRIMITIVE_TOL:.0e}), worst end-to-end {worst:.3e} (tol {tolerance:.0e})");
    if worst_prim <= PRIMITIVE_TOL && worst <= tolerance {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check exceeded tolerance".into()))
    }
}
