//! Supervised windows over traffic cubes: simulated training set, real
//! validation and test sets, z-score normalization, and on-disk persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, read_to_string, write_atomic};
use crate::simulator::{ScenarioConfig, TrafficCube};
use crate::Task;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_HEADER: &str = "sample_id,scenario_id,source,task,role,step,cell_row,cell_col,value";
const FORMAT_VERSION: u32 = 1;
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sim,
    Real,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Sim => "sim",
            Source::Real => "real",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub l_in: usize,
    pub l_token: usize,
    pub l_out: usize,
    pub stride: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { l_in: 24, l_token: 12, l_out: 6, stride: 6, patch_rows: 3, patch_cols: 3 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_in == 0 || self.l_token == 0 || self.l_out == 0 || self.stride == 0 {
            return Err(Error::config("window lengths and stride must be positive"));
        }
        if self.l_token > self.l_in {
            return Err(Error::config(format!("l_token {} > l_in {}", self.l_token, self.l_in)));
        }
        if self.patch_rows == 0 || self.patch_cols == 0 {
            return Err(Error::config("patch must be non-empty"));
        }
        Ok(())
    }

    pub fn patch_cells(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// Index of the patch's center cell in row-major patch order.
    pub fn center_cell(&self) -> usize {
        (self.patch_rows / 2) * self.patch_cols + self.patch_cols / 2
    }

    /// Top-left grid cell of the patch centered on a grid.
    pub fn patch_origin(&self, grid_rows: usize, grid_cols: usize) -> Result<(usize, usize)> {
        if self.patch_rows > grid_rows || self.patch_cols > grid_cols {
            return Err(Error::config(format!(
                "{}x{} patch does not fit a {grid_rows}x{grid_cols} grid",
                self.patch_rows, self.patch_cols
            )));
        }
        Ok(((grid_rows - self.patch_rows) / 2, (grid_cols - self.patch_cols) / 2))
    }

    /// Number of windows over a series of `horizon` steps.
    pub fn window_count(&self, horizon: usize) -> Result<usize> {
        let needed = self.l_in + self.l_out;
        if needed > horizon {
            return Err(Error::WindowTooLong { needed, available: horizon });
        }
        Ok((horizon - needed) / self.stride + 1)
    }
}

/// One supervised instance.
///
/// Per task: `inputs` is `[l_in × patch_cells]` step-major, `tokens` the last
/// `l_token` input steps of the center cell, `targets` the next `l_out` steps
/// of the center cell. `hours`/`days` mark every step of the `l_in + l_out`
/// span.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub sample_id: usize,
    pub scenario_id: usize,
    pub source: Source,
    /// Absolute time step of the first input step.
    pub start: usize,
    pub inputs: [Vec<f64>; 3],
    pub tokens: [Vec<f64>; 3],
    pub targets: [Vec<f64>; 3],
    pub hours: Vec<usize>,
    pub days: Vec<usize>,
}

impl WindowSample {
    pub fn input(&self, task: Task) -> &[f64] {
        &self.inputs[task.index()]
    }

    pub fn token(&self, task: Task) -> &[f64] {
        &self.tokens[task.index()]
    }

    pub fn target(&self, task: Task) -> &[f64] {
        &self.targets[task.index()]
    }

    /// Time steps this window touches, inputs and targets.
    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.hours.len()
    }
}

/// Cut windows from `cube` over the time range `steps`.
pub fn window_range(
    cube: &TrafficCube,
    cfg: &DatasetConfig,
    steps: Range<usize>,
    source: Source,
    scenario_id: usize,
    first_id: usize,
) -> Result<Vec<WindowSample>> {
    cfg.validate()?;
    let s = &cube.scenario;
    if steps.end > s.horizon || steps.start > steps.end {
        return Err(Error::config(format!("time range {steps:?} outside horizon {}", s.horizon)));
    }
    let count = cfg.window_count(steps.len())?;
    let (r0, c0) = cfg.patch_origin(s.grid_rows, s.grid_cols)?;
    let center = (r0 + cfg.patch_rows / 2, c0 + cfg.patch_cols / 2);
    let period = s.diurnal_period;

    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = steps.start + k * cfg.stride;
        let mut inputs: [Vec<f64>; 3] = Default::default();
        let mut tokens: [Vec<f64>; 3] = Default::default();
        let mut targets: [Vec<f64>; 3] = Default::default();
        for task in Task::ALL {
            let i = task.index();
            inputs[i] = (0..cfg.l_in)
                .flat_map(|t| {
                    (0..cfg.patch_rows).flat_map(move |pr| {
                        (0..cfg.patch_cols).map(move |pc| cube.get(r0 + pr, c0 + pc, start + t, task))
                    })
                })
                .collect();
            tokens[i] =
                (cfg.l_in - cfg.l_token..cfg.l_in).map(|t| cube.get(center.0, center.1, start + t, task)).collect();
            targets[i] =
                (cfg.l_in..cfg.l_in + cfg.l_out).map(|t| cube.get(center.0, center.1, start + t, task)).collect();
        }
        let span = start..start + cfg.l_in + cfg.l_out;
        out.push(WindowSample {
            sample_id: first_id + k,
            scenario_id,
            source,
            start,
            inputs,
            tokens,
            targets,
            hours: span.clone().map(|t| t % period).collect(),
            days: span.map(|t| (t / period) % 7).collect(),
        });
    }
    Ok(out)
}

/// Sliding windows over the whole horizon of `cube`.
pub fn window(
    cube: &TrafficCube,
    cfg: &DatasetConfig,
    source: Source,
    scenario_id: usize,
) -> Result<Vec<WindowSample>> {
    window_range(cube, cfg, 0..cube.scenario.horizon, source, scenario_id, 0)
}

/// Per patch cell, per task z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// `[task][patch cell]`
    pub mean: [Vec<f64>; 3],
    pub std: [Vec<f64>; 3],
    pub center_cell: usize,
}

impl NormStats {
    /// Undo normalization of a center-cell value of `task`.
    pub fn denormalize(&self, task: Task, v: f64) -> f64 {
        let i = task.index();
        v * self.std[i][self.center_cell] + self.mean[i][self.center_cell]
    }
}

/// D_s, D_v and the real test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub config: DatasetConfig,
    pub sim: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    /// Set once [`normalize`] has run.
    pub stats: Option<NormStats>,
    /// Scenarios that produced the sim cubes, then the real reference.
    pub scenarios: Vec<ScenarioConfig>,
    pub real_scenario: ScenarioConfig,
}

impl DatasetBundle {
    /// Windows every sim cube and splits the real cube in half by time: the
    /// first half feeds validation, the second half the test set.
    pub fn build(sim_cubes: &[TrafficCube], real: &TrafficCube, cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        if sim_cubes.is_empty() {
            return Err(Error::config("simulation pool is empty"));
        }
        let mut sim = Vec::new();
        for (i, cube) in sim_cubes.iter().enumerate() {
            let first = sim.len();
            sim.extend(window_range(cube, cfg, 0..cube.scenario.horizon, Source::Sim, i, first)?);
        }
        let half = real.scenario.horizon / 2;
        let val = window_range(real, cfg, 0..half, Source::Real, 0, 0)?;
        let test = window_range(real, cfg, half..real.scenario.horizon, Source::Real, 0, val.len())?;
        Ok(Self {
            config: cfg.clone(),
            sim,
            val,
            test,
            stats: None,
            scenarios: sim_cubes.iter().map(|c| c.scenario.clone()).collect(),
            real_scenario: real.scenario.clone(),
        })
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.stats.as_ref().ok_or_else(|| Error::config("dataset bundle is not normalized"))
    }

    /// Hex SHA-256 of the canonical text form of every split and the stats.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, split) in self.splits() {
            h.update(name.as_bytes());
            h.update(split_csv(split).as_bytes());
        }
        if let Some(s) = &self.stats {
            h.update(serde_json::to_vec(s).expect("stats serialize"));
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn splits(&self) -> [(&'static str, &[WindowSample]); 3] {
        [("sim", &self.sim), ("val", &self.val), ("test", &self.test)]
    }
}

/// Z-score every split with statistics of the simulated inputs only.
pub fn normalize(mut bundle: DatasetBundle) -> Result<DatasetBundle> {
    if bundle.stats.is_some() {
        return Err(Error::config("bundle is already normalized"));
    }
    let cells = bundle.config.patch_cells();
    let mut mean: [Vec<f64>; 3] = Default::default();
    let mut std: [Vec<f64>; 3] = Default::default();
    for task in Task::ALL {
        let i = task.index();
        let mut sum = vec![0.0; cells];
        let mut count = 0usize;
        for s in &bundle.sim {
            for row in s.inputs[i].chunks(cells) {
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
                count += 1;
            }
        }
        let m: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; cells];
        for s in &bundle.sim {
            for row in s.inputs[i].chunks(cells) {
                for ((acc, v), mu) in sq.iter_mut().zip(row).zip(&m) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        std[i] = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        mean[i] = m;
    }
    let stats = NormStats { mean, std, center_cell: bundle.config.center_cell() };
    let c = stats.center_cell;
    for split in [&mut bundle.sim, &mut bundle.val, &mut bundle.test] {
        for s in split.iter_mut() {
            for i in 0..3 {
                for row in s.inputs[i].chunks_mut(cells) {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v - stats.mean[i][j]) / stats.std[i][j];
                    }
                }
                for v in s.tokens[i].iter_mut().chain(s.targets[i].iter_mut()) {
                    *v = (*v - stats.mean[i][c]) / stats.std[i][c];
                }
            }
        }
    }
    bundle.stats = Some(stats);
    Ok(bundle)
}

// ----------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: DatasetConfig,
    counts: BTreeMap<String, usize>,
    grid: [usize; 2],
    stats: Option<NormStats>,
    scenarios: Vec<ScenarioConfig>,
    real_scenario: ScenarioConfig,
}

fn split_csv(samples: &[WindowSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 4096);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        write_sample(&mut out, s);
    }
    out
}

/// Marker rows come first and fix the window start. Steps are absolute;
/// `cell_row` holds the row-major patch cell index.
fn write_sample(out: &mut String, s: &WindowSample) {
    let src = s.source.as_str();
    let mut row = |task: &str, role: &str, step: usize, r: usize, c: usize, v: f64| {
        let _ = writeln!(out, "{},{},{src},{task},{role},{step},{r},{c},{}", s.sample_id, s.scenario_id, fmt_f64(v));
    };
    let l_in = s.hours.len() - s.targets[0].len();
    let cells = s.inputs[0].len() / l_in;
    let l_token = s.tokens[0].len();
    for (k, (&h, &d)) in s.hours.iter().zip(&s.days).enumerate() {
        row("-", "hour", s.start + k, 0, 0, h as f64);
        row("-", "dow", s.start + k, 0, 0, d as f64);
    }
    for task in Task::ALL {
        let i = task.index();
        let name = task.name();
        for (k, v) in s.inputs[i].iter().enumerate() {
            let (t, cell) = (k / cells, k % cells);
            row(name, "input", s.start + t, cell, 0, *v);
        }
        for (k, v) in s.tokens[i].iter().enumerate() {
            row(name, "token", s.start + l_in - l_token + k, 0, 0, *v);
        }
        for (k, v) in s.targets[i].iter().enumerate() {
            row(name, "target", s.start + l_in + k, 0, 0, *v);
        }
    }
}

/// Write `manifest.json` plus `sim.csv`, `val.csv`, `test.csv` into `dir`.
pub fn save(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: bundle.config.clone(),
        counts: bundle.splits().iter().map(|(n, s)| (n.to_string(), s.len())).collect(),
        grid: [bundle.real_scenario.grid_rows, bundle.real_scenario.grid_cols],
        stats: bundle.stats.clone(),
        scenarios: bundle.scenarios.clone(),
        real_scenario: bundle.real_scenario.clone(),
    };
    for (name, split) in bundle.splits() {
        write_atomic(&dir.join(format!("{name}.csv")), split_csv(split).as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn load(dir: &Path) -> Result<DatasetBundle> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: Manifest =
        serde_json::from_str(&read_to_string(&mpath)?).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format version {}", manifest.format_version)));
    }
    manifest.config.validate()?;
    let mut splits = Vec::with_capacity(3);
    for name in ["sim", "val", "test"] {
        let path = dir.join(format!("{name}.csv"));
        let samples = parse_split(&read_to_string(&path)?, &manifest.config, &path)?;
        let expected = manifest.counts.get(name).copied().unwrap_or(0);
        if samples.len() != expected {
            return Err(Error::format(
                &path,
                format!("manifest declares {expected} samples, file has {}", samples.len()),
            ));
        }
        splits.push(samples);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let sim = splits.pop().expect("three splits");
    Ok(DatasetBundle {
        config: manifest.config,
        sim,
        val,
        test,
        stats: manifest.stats,
        scenarios: manifest.scenarios,
        real_scenario: manifest.real_scenario,
    })
}

fn parse_split(text: &str, cfg: &DatasetConfig, path: &Path) -> Result<Vec<WindowSample>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format(path, "missing or wrong header"));
    }
    let cells = cfg.patch_cells();
    let span = cfg.l_in + cfg.l_out;
    let mut out: Vec<WindowSample> = Vec::new();
    let mut filled: Vec<usize> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let sample_id = int(f[0])?;
        if out.last().map(|s| s.sample_id) != Some(sample_id) {
            let source = match f[2] {
                "sim" => Source::Sim,
                "real" => Source::Real,
                _ => return Err(bad("bad source")),
            };
            out.push(WindowSample {
                sample_id,
                scenario_id: int(f[1])?,
                source,
                start: usize::MAX,
                inputs: std::array::from_fn(|_| vec![0.0; cfg.l_in * cells]),
                tokens: std::array::from_fn(|_| vec![0.0; cfg.l_token]),
                targets: std::array::from_fn(|_| vec![0.0; cfg.l_out]),
                hours: vec![0; span],
                days: vec![0; span],
            });
            filled.push(0);
        }
        let s = out.last_mut().expect("sample pushed");
        let step = int(f[5])?;
        let row = int(f[6])?;
        let value = parse_f64(f[8], path)?;
        let role = f[4];
        if role == "hour" || role == "dow" {
            if s.start == usize::MAX {
                s.start = step;
            }
            let k = step.checked_sub(s.start).filter(|&k| k < span).ok_or_else(|| bad("marker step out of span"))?;
            let v = value as usize;
            if role == "hour" {
                s.hours[k] = v;
            } else {
                s.days[k] = v;
            }
            *filled.last_mut().expect("counter") += 1;
            continue;
        }
        if s.start == usize::MAX {
            return Err(bad("value row before marker rows"));
        }
        let task: Task = f[3].parse().map_err(|_| bad("bad task"))?;
        let i = task.index();
        let (slot, first_step, width) = match role {
            "input" => (&mut s.inputs[i], s.start, cells),
            "token" => (&mut s.tokens[i], s.start + cfg.l_in - cfg.l_token, 1),
            "target" => (&mut s.targets[i], s.start + cfg.l_in, 1),
            _ => return Err(bad("bad role")),
        };
        let k = step
            .checked_sub(first_step)
            .map(|t| t * width + row)
            .filter(|&k| row < width && k < slot.len())
            .ok_or_else(|| bad("value outside window"))?;
        slot[k] = value;
        *filled.last_mut().expect("counter") += 1;
    }
    let per_sample = 3 * (cfg.l_in * cells + cfg.l_token + cfg.l_out) + 2 * span;
    for (s, &n) in out.iter().zip(&filled) {
        if n != per_sample {
            return Err(Error::format(path, format!("sample {} has {n} rows, expected {per_sample}", s.sample_id)));
        }
    }
    Ok(out)
}
