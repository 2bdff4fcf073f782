//! Domain-randomized synthetic cellular traffic.
//!
//! Each scenario yields a cube of traffic values over a cell grid, time steps,
//! and the three services. Net traffic is a diurnal plus weekly sinusoid,
//! amplified around Gaussian hotspots and by burst events. Call and SMS
//! follow lag-1 Net traffic through a coupling coefficient on top of their
//! own periodic component. Gaussian noise is added and everything is clipped
//! at zero.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Task;

/// Length of the window a burst event amplifies.
pub const BURST_WINDOW: usize = 3;

/// Closed interval a randomized field is drawn from. Written as a bare number
/// for a fixed value or as `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "IntervalRepr", into = "IntervalRepr")]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IntervalRepr {
    Fixed(f64),
    Range([f64; 2]),
}

impl From<IntervalRepr> for Interval {
    fn from(r: IntervalRepr) -> Self {
        match r {
            IntervalRepr::Fixed(v) => Interval::fixed(v),
            IntervalRepr::Range([low, high]) => Interval { low, high },
        }
    }
}

impl From<Interval> for IntervalRepr {
    fn from(i: Interval) -> Self {
        if i.low == i.high {
            IntervalRepr::Fixed(i.low)
        } else {
            IntervalRepr::Range([i.low, i.high])
        }
    }
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { low: v, high: v }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low > self.high {
            return Err(Error::InvalidRange { field: field.to_string(), low: self.low, high: self.high });
        }
        Ok(())
    }

    /// One uniform draw. The stream always advances by one value so that field
    /// order, not degeneracy, decides which draw each field gets.
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        if self.low == self.high {
            self.low
        } else {
            self.low + (self.high - self.low) * u
        }
    }
}

/// Parameters of one simulated environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub horizon: usize,
    /// Indexed by [`Task::index`].
    pub base_level: [f64; 3],
    pub diurnal_amp: [f64; 3],
    pub weekly_amp: [f64; 3],
    /// Steps per day.
    pub diurnal_period: usize,
    /// Phase offset of the diurnal component, in steps.
    pub phase_shift: [f64; 3],
    /// `[row, col]` of each hotspot.
    pub hotspot_centers: Vec<[usize; 2]>,
    pub hotspot_sigma: f64,
    pub coupling_call_net: f64,
    pub coupling_sms_net: f64,
    pub noise_sigma: [f64; 3],
    /// Expected burst events per 1000 steps.
    pub burst_rate: f64,
    pub burst_magnitude: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn n_hotspots(&self) -> usize {
        self.hotspot_centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.horizon == 0 {
            return Err(Error::config("grid and horizon must be positive"));
        }
        if self.diurnal_period < 2 {
            return Err(Error::config(format!("diurnal_period {} < 2", self.diurnal_period)));
        }
        for &[r, c] in &self.hotspot_centers {
            if r >= self.grid_rows || c >= self.grid_cols {
                return Err(Error::config(format!(
                    "hotspot [{r}, {c}] outside {}x{} grid",
                    self.grid_rows, self.grid_cols
                )));
            }
        }
        let nonneg = self
            .base_level
            .iter()
            .chain(&self.diurnal_amp)
            .chain(&self.weekly_amp)
            .chain(&self.noise_sigma)
            .chain([&self.burst_rate]);
        for &v in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("levels, amplitudes and sigmas must be finite and ≥ 0, got {v}")));
            }
        }
        if self.phase_shift.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("phase_shift must be finite"));
        }
        if !(self.hotspot_sigma.is_finite() && self.hotspot_sigma > 0.0) {
            return Err(Error::config("hotspot_sigma must be positive"));
        }
        for (name, c) in [("coupling_call_net", self.coupling_call_net), ("coupling_sms_net", self.coupling_sms_net)] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config(format!("{name} = {c} outside [0, 1]")));
            }
        }
        if !(self.burst_magnitude.is_finite() && self.burst_magnitude >= 1.0) {
            return Err(Error::config("burst_magnitude must be ≥ 1"));
        }
        Ok(())
    }

    /// Fixed environment standing in for the real network. It carries burst
    /// events, which the default randomization ranges never produce.
    pub fn reference_real() -> Self {
        Self {
            grid_rows: 8,
            grid_cols: 8,
            horizon: 24 * 14,
            base_level: [4.5, 3.5, 11.0],
            diurnal_amp: [2.0, 1.2, 5.0],
            weekly_amp: [0.5, 0.3, 1.0],
            diurnal_period: 24,
            phase_shift: [1.0, -1.0, 0.5],
            hotspot_centers: vec![[3, 4], [5, 2]],
            hotspot_sigma: 1.8,
            coupling_call_net: 0.3,
            coupling_sms_net: 0.15,
            noise_sigma: [0.25, 0.2, 0.5],
            burst_rate: 20.0,
            burst_magnitude: 2.0,
            seed: 20_131_101,
        }
    }
}

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub low: usize,
    pub high: usize,
}

/// Intervals every randomized scenario field is drawn from. Grid size,
/// horizon and period are structural and fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationRanges {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub horizon: usize,
    pub diurnal_period: usize,
    pub base_level: [Interval; 3],
    pub diurnal_amp: [Interval; 3],
    pub weekly_amp: [Interval; 3],
    pub phase_shift: [Interval; 3],
    pub n_hotspots: CountRange,
    /// Fixed hotspot locations; drawn uniformly over the grid when absent.
    #[serde(default)]
    pub hotspot_centers: Option<Vec<[usize; 2]>>,
    pub hotspot_sigma: Interval,
    pub coupling_call_net: Interval,
    pub coupling_sms_net: Interval,
    pub noise_sigma: [Interval; 3],
    pub burst_rate: Interval,
    pub burst_magnitude: Interval,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            grid_rows: 8,
            grid_cols: 8,
            horizon: 24 * 14,
            diurnal_period: 24,
            base_level: [Interval::new(3.0, 6.0), Interval::new(2.0, 5.0), Interval::new(8.0, 14.0)],
            diurnal_amp: [Interval::new(1.0, 3.0), Interval::new(0.5, 2.0), Interval::new(3.0, 7.0)],
            weekly_amp: [Interval::new(0.0, 1.0), Interval::new(0.0, 0.6), Interval::new(0.0, 2.0)],
            phase_shift: [Interval::new(-3.0, 3.0), Interval::new(-3.0, 3.0), Interval::new(-2.0, 2.0)],
            n_hotspots: CountRange { low: 1, high: 3 },
            hotspot_centers: None,
            hotspot_sigma: Interval::new(1.0, 2.5),
            coupling_call_net: Interval::new(0.1, 0.5),
            coupling_sms_net: Interval::new(0.05, 0.3),
            noise_sigma: [Interval::new(0.1, 0.4), Interval::new(0.1, 0.3), Interval::new(0.3, 0.8)],
            burst_rate: Interval::fixed(0.0),
            burst_magnitude: Interval::fixed(1.0),
        }
    }
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<()> {
        let per_task = [
            ("base_level", &self.base_level),
            ("diurnal_amp", &self.diurnal_amp),
            ("weekly_amp", &self.weekly_amp),
            ("phase_shift", &self.phase_shift),
            ("noise_sigma", &self.noise_sigma),
        ];
        for (name, ivs) in per_task {
            for (task, iv) in Task::ALL.iter().zip(ivs) {
                iv.validate(&format!("{name}.{}", task.name()))?;
            }
        }
        for (name, iv) in [
            ("hotspot_sigma", &self.hotspot_sigma),
            ("coupling_call_net", &self.coupling_call_net),
            ("coupling_sms_net", &self.coupling_sms_net),
            ("burst_rate", &self.burst_rate),
            ("burst_magnitude", &self.burst_magnitude),
        ] {
            iv.validate(name)?;
        }
        if self.n_hotspots.low > self.n_hotspots.high {
            return Err(Error::InvalidRange {
                field: "n_hotspots".into(),
                low: self.n_hotspots.low as f64,
                high: self.n_hotspots.high as f64,
            });
        }
        if let Some(c) = &self.hotspot_centers {
            if c.len() < self.n_hotspots.low || c.len() > self.n_hotspots.high {
                return Err(Error::config("fixed hotspot_centers disagree with n_hotspots"));
            }
        }
        Ok(())
    }
}

/// Traffic values `[grid_rows, grid_cols, horizon, 3]` with the scenario that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficCube {
    values: Vec<f64>,
    pub scenario: ScenarioConfig,
}

impl TrafficCube {
    pub fn shape(&self) -> [usize; 4] {
        let s = &self.scenario;
        [s.grid_rows, s.grid_cols, s.horizon, 3]
    }

    fn offset(&self, row: usize, col: usize, t: usize, task: Task) -> usize {
        let [_, cols, horizon, _] = self.shape();
        ((row * cols + col) * horizon + t) * 3 + task.index()
    }

    pub fn get(&self, row: usize, col: usize, t: usize, task: Task) -> f64 {
        self.values[self.offset(row, col, t, task)]
    }

    /// Time series of one cell and task.
    pub fn series(&self, row: usize, col: usize, task: Task) -> Vec<f64> {
        (0..self.scenario.horizon).map(|t| self.get(row, col, t, task)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Counter-based derivation of the `index`-th child seed of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

/// Draw one scenario. Same `(ranges, seed)` gives the same scenario.
pub fn sample_scenario(ranges: &RandomizationRanges, seed: u64) -> Result<ScenarioConfig> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_task = |ivs: &[Interval; 3], rng: &mut ChaCha8Rng| [ivs[0].draw(rng), ivs[1].draw(rng), ivs[2].draw(rng)];

    let base_level = per_task(&ranges.base_level, &mut rng);
    let diurnal_amp = per_task(&ranges.diurnal_amp, &mut rng);
    let weekly_amp = per_task(&ranges.weekly_amp, &mut rng);
    let phase_shift = per_task(&ranges.phase_shift, &mut rng);
    let noise_sigma = per_task(&ranges.noise_sigma, &mut rng);
    let hotspot_sigma = ranges.hotspot_sigma.draw(&mut rng);
    let coupling_call_net = ranges.coupling_call_net.draw(&mut rng);
    let coupling_sms_net = ranges.coupling_sms_net.draw(&mut rng);
    let burst_rate = ranges.burst_rate.draw(&mut rng);
    let burst_magnitude = ranges.burst_magnitude.draw(&mut rng);
    let hotspot_centers = match &ranges.hotspot_centers {
        Some(c) => c.clone(),
        None => {
            let n = rng.random_range(ranges.n_hotspots.low..=ranges.n_hotspots.high);
            (0..n).map(|_| [rng.random_range(0..ranges.grid_rows), rng.random_range(0..ranges.grid_cols)]).collect()
        }
    };
    let config = ScenarioConfig {
        grid_rows: ranges.grid_rows,
        grid_cols: ranges.grid_cols,
        horizon: ranges.horizon,
        base_level,
        diurnal_amp,
        weekly_amp,
        diurnal_period: ranges.diurnal_period,
        phase_shift,
        hotspot_centers,
        hotspot_sigma,
        coupling_call_net,
        coupling_sms_net,
        noise_sigma,
        burst_rate,
        burst_magnitude,
        seed: rng.next_u64(),
    };
    config.validate()?;
    Ok(config)
}

/// Noiseless periodic component of one task at step `t`.
fn periodic(cfg: &ScenarioConfig, task: Task, t: usize) -> f64 {
    let i = task.index();
    let p = cfg.diurnal_period as f64;
    let t = t as f64;
    cfg.base_level[i]
        + cfg.diurnal_amp[i] * (2.0 * PI * (t + cfg.phase_shift[i]) / p).sin()
        + cfg.weekly_amp[i] * (2.0 * PI * t / (7.0 * p)).sin()
}

/// Spatial gain `1 + Σ exp(−d² / 2σ²)` over hotspots.
pub fn spatial_gain(cfg: &ScenarioConfig, row: usize, col: usize) -> f64 {
    let two_s2 = 2.0 * cfg.hotspot_sigma * cfg.hotspot_sigma;
    1.0 + cfg
        .hotspot_centers
        .iter()
        .map(|&[hr, hc]| {
            let dr = row as f64 - hr as f64;
            let dc = col as f64 - hc as f64;
            (-(dr * dr + dc * dc) / two_s2).exp()
        })
        .sum::<f64>()
}

/// Per-step burst multiplier: a Poisson number of events, each amplifying a
/// uniformly placed window of [`BURST_WINDOW`] steps.
fn burst_profile(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut factor = vec![1.0; cfg.horizon];
    let lambda = cfg.burst_rate * cfg.horizon as f64 / 1000.0;
    if lambda <= 0.0 || cfg.burst_magnitude == 1.0 {
        return factor;
    }
    let count = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    let last_start = cfg.horizon.saturating_sub(BURST_WINDOW);
    for _ in 0..count {
        let start = rng.random_range(0..=last_start);
        for f in factor.iter_mut().skip(start).take(BURST_WINDOW) {
            *f = cfg.burst_magnitude;
        }
    }
    factor
}

/// Generate the traffic cube of one scenario.
pub fn generate_cube(cfg: &ScenarioConfig) -> Result<TrafficCube> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burst = burst_profile(cfg, &mut rng);
    let (rows, cols, horizon) = (cfg.grid_rows, cfg.grid_cols, cfg.horizon);

    let normal = |sigma: f64| Normal::new(0.0, sigma).expect("validated sigma");
    let noise = [normal(cfg.noise_sigma[0]), normal(cfg.noise_sigma[1]), normal(cfg.noise_sigma[2])];
    let draw = |task: Task, rng: &mut ChaCha8Rng| {
        if cfg.noise_sigma[task.index()] == 0.0 {
            0.0
        } else {
            noise[task.index()].sample(rng)
        }
    };

    let net_level: Vec<f64> = (0..horizon).map(|t| periodic(cfg, Task::Net, t).max(0.0)).collect();
    let call_own: Vec<f64> = (0..horizon).map(|t| periodic(cfg, Task::Call, t)).collect();
    let sms_own: Vec<f64> = (0..horizon).map(|t| periodic(cfg, Task::Sms, t)).collect();

    let mut values = vec![0.0; rows * cols * horizon * 3];
    for r in 0..rows {
        for c in 0..cols {
            let gain = spatial_gain(cfg, r, c);
            let base = (r * cols + c) * horizon * 3;
            let mut net = vec![0.0; horizon];
            for t in 0..horizon {
                net[t] = (net_level[t] * gain * burst[t] + draw(Task::Net, &mut rng)).max(0.0);
            }
            for t in 0..horizon {
                let lagged = net[t.saturating_sub(1)];
                let call = cfg.coupling_call_net * lagged + call_own[t] + draw(Task::Call, &mut rng);
                let sms = cfg.coupling_sms_net * lagged + sms_own[t] + draw(Task::Sms, &mut rng);
                let o = base + t * 3;
                values[o + Task::Call.index()] = call.max(0.0);
                values[o + Task::Sms.index()] = sms.max(0.0);
                values[o + Task::Net.index()] = net[t];
            }
        }
    }
    Ok(TrafficCube { values, scenario: cfg.clone() })
}

/// `n_scenarios` independently randomized cubes.
pub fn make_sim_pool(ranges: &RandomizationRanges, n_scenarios: usize, seed: u64) -> Result<Vec<TrafficCube>> {
    (0..n_scenarios)
        .map(|i| {
            let cfg = sample_scenario(ranges, derive_seed(seed, i as u64))?;
            generate_cube(&cfg)
        })
        .collect()
}

/// Cube of the fixed reference environment.
pub fn make_real_env(reference: &ScenarioConfig) -> Result<TrafficCube> {
    generate_cube(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(base: f64) -> ScenarioConfig {
        ScenarioConfig {
            grid_rows: 4,
            grid_cols: 5,
            horizon: 96,
            base_level: [2.0, 1.0, base],
            diurnal_amp: [0.0; 3],
            weekly_amp: [0.0; 3],
            diurnal_period: 24,
            phase_shift: [0.0; 3],
            hotspot_centers: vec![],
            hotspot_sigma: 1.0,
            coupling_call_net: 0.0,
            coupling_sms_net: 0.0,
            noise_sigma: [0.0; 3],
            burst_rate: 0.0,
            burst_magnitude: 1.0,
            seed: 1,
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn degenerate_ranges_give_fixed_values() {
        let r = RandomizationRanges {
            base_level: [Interval::fixed(1.0), Interval::fixed(2.0), Interval::fixed(3.0)],
            diurnal_amp: [Interval::fixed(0.5); 3],
            weekly_amp: [Interval::fixed(0.1); 3],
            phase_shift: [Interval::fixed(0.0); 3],
            n_hotspots: CountRange { low: 1, high: 1 },
            hotspot_centers: Some(vec![[2, 3]]),
            hotspot_sigma: Interval::fixed(1.5),
            coupling_call_net: Interval::fixed(0.2),
            coupling_sms_net: Interval::fixed(0.1),
            noise_sigma: [Interval::fixed(0.3); 3],
            burst_rate: Interval::fixed(0.0),
            burst_magnitude: Interval::fixed(1.0),
            ..RandomizationRanges::default()
        };
        let c = sample_scenario(&r, 99).unwrap();
        assert_eq!(c.base_level, [1.0, 2.0, 3.0]);
        assert_eq!(c.diurnal_amp, [0.5; 3]);
        assert_eq!(c.hotspot_centers, vec![[2, 3]]);
        assert_eq!(c.hotspot_sigma, 1.5);
        assert_eq!(c.coupling_call_net, 0.2);
        assert_eq!(c.noise_sigma, [0.3; 3]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = RandomizationRanges::default();
        assert_eq!(sample_scenario(&r, 7).unwrap(), sample_scenario(&r, 7).unwrap());
        assert_ne!(sample_scenario(&r, 7).unwrap(), sample_scenario(&r, 8).unwrap());
    }

    #[test]
    fn uniform_draws_have_the_interval_mean() {
        let r = RandomizationRanges { diurnal_amp: [Interval::new(1.0, 3.0); 3], ..RandomizationRanges::default() };
        let mean =
            (0..1000u64).map(|s| sample_scenario(&r, s).unwrap().diurnal_amp[Task::Net.index()]).sum::<f64>() / 1000.0;
        assert!((1.9..=2.1).contains(&mean), "mean {mean}");
    }

    #[test]
    fn inverted_interval_is_rejected() {
        let r = RandomizationRanges { hotspot_sigma: Interval::new(2.0, 1.0), ..RandomizationRanges::default() };
        assert!(matches!(sample_scenario(&r, 0), Err(Error::InvalidRange { .. })));
    }

    #[test]
    fn interval_accepts_number_or_pair() {
        let a: Interval = serde_json::from_str("2.5").unwrap();
        assert_eq!(a, Interval::fixed(2.5));
        let b: Interval = serde_json::from_str("[1, 3]").unwrap();
        assert_eq!(b, Interval::new(1.0, 3.0));
    }

    #[test]
    fn quiet_scenario_is_constant() {
        let cube = generate_cube(&quiet(5.0)).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                assert!(cube.series(r, c, Task::Net).iter().all(|&v| v == 5.0));
            }
        }
    }

    #[test]
    fn sinusoid_spans_twice_its_amplitude() {
        let mut cfg = quiet(10.0);
        cfg.diurnal_amp[Task::Net.index()] = 3.0;
        cfg.diurnal_period = 400;
        cfg.horizon = 400;
        let s = generate_cube(&cfg).unwrap().series(0, 0, Task::Net);
        let max = s.iter().copied().fold(f64::MIN, f64::max);
        let min = s.iter().copied().fold(f64::MAX, f64::min);
        assert!((max - min - 6.0).abs() < 1e-9, "{}", max - min);
    }

    #[test]
    fn decoupled_call_is_its_base_level() {
        let mut cfg = quiet(5.0);
        cfg.diurnal_amp[Task::Net.index()] = 2.0;
        cfg.hotspot_centers = vec![[1, 1]];
        let cube = generate_cube(&cfg).unwrap();
        assert!(cube.series(1, 2, Task::Call).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn traffic_is_nonnegative() {
        let mut cfg = quiet(0.2);
        cfg.noise_sigma = [2.0; 3];
        cfg.diurnal_amp = [3.0; 3];
        let cube = generate_cube(&cfg).unwrap();
        assert!(cube.values().iter().all(|&v| v >= 0.0));
        assert!(cube.values().contains(&0.0));
    }

    #[test]
    fn coupling_raises_correlation_with_lagged_net() {
        let mut prev = f64::NEG_INFINITY;
        for coupling in [0.0, 0.5, 0.9] {
            let mut cfg = quiet(10.0);
            cfg.diurnal_amp = [1.0, 0.0, 4.0];
            cfg.weekly_amp = [0.8, 0.0, 1.5];
            cfg.phase_shift = [7.0, 0.0, 0.0];
            cfg.coupling_call_net = coupling;
            let cube = generate_cube(&cfg).unwrap();
            let net = cube.series(2, 2, Task::Net);
            let call = cube.series(2, 2, Task::Call);
            let corr = pearson(&call[1..], &net[..net.len() - 1]);
            assert!(corr > prev, "coupling {coupling}: {corr} ≤ {prev}");
            prev = corr;
        }
    }

    #[test]
    fn hotspot_center_has_highest_mean() {
        let mut cfg = quiet(5.0);
        cfg.diurnal_amp[Task::Net.index()] = 2.0;
        cfg.hotspot_centers = vec![[3, 1]];
        let cube = generate_cube(&cfg).unwrap();
        let mean = |r, c| cube.series(r, c, Task::Net).iter().sum::<f64>();
        let best = mean(3, 1);
        for r in 0..4 {
            for c in 0..5 {
                if (r, c) != (3, 1) {
                    assert!(mean(r, c) < best);
                }
            }
        }
    }

    #[test]
    fn bursts_only_in_the_real_environment() {
        let real = ScenarioConfig::reference_real();
        let cube = make_real_env(&real).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(real.seed);
        assert!(burst_profile(&real, &mut rng).iter().any(|&f| f > 1.0));
        assert_eq!(cube.shape(), [8, 8, 336, 3]);

        let pool = make_sim_pool(&RandomizationRanges::default(), 3, 5).unwrap();
        for cube in &pool {
            let mut rng = ChaCha8Rng::seed_from_u64(cube.scenario.seed);
            assert!(burst_profile(&cube.scenario, &mut rng).iter().all(|&f| f == 1.0));
        }
        assert_eq!(pool, make_sim_pool(&RandomizationRanges::default(), 3, 5).unwrap());
    }
}
