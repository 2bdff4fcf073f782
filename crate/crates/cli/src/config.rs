//! Run configuration: built-in defaults, then an optional TOML file, then
//! `--set section.key=value` overrides, in that order of precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};
use simreweight_core::dataset::DatasetConfig;
use simreweight_core::eval::{ExperimentConfig, Variant};
use simreweight_core::model::ModelConfig;
use simreweight_core::pipeline::SimulatorConfig;
use simreweight_core::reweighter::ReweightConfig;
use simreweight_core::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulator: SimulatorConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub reweight: ReweightConfig,
    pub eval: EvalConfig,
}

/// Ablation matrix settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), variants: Variant::ALL.to_vec() }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.simulator.validate()?;
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.reweight.validate()?;
        if self.eval.seeds.is_empty() || self.eval.variants.is_empty() {
            return Err(CliError::Config("eval.seeds and eval.variants must be non-empty".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            reweight: self.reweight.clone(),
            uniform_sample_weights: false,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    /// Resolve defaults, `file` and `overrides`, then validate.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = toml::Table::try_from(RunConfig::default()).expect("defaults serialize to TOML");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
            let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, table);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg = RunConfig::deserialize(toml::Value::Table(root)).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Tables merge key by key; any other value replaces the base.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`, where value is a TOML literal or else a bare string.
/// Unknown keys are left for deserialization to reject.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut table = root;
    for k in parents {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override '{spec}': '{k}' is not a section"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_beat_file_which_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochs = 7\nbatch_size = 4\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.epochs=3".into(), "model.single_task=sms".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(cfg.model.single_task, Some(simreweight_core::Task::Sms));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in ["train.epoch=3", "nope.x=1", "train.epochs=0", "train.epochs", "reweight.eta=-1"] {
            let err = RunConfig::load(None, &[bad.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn nested_tables_merge() {
        let mut base: toml::Table = "[a]\nx = 1\ny = 2\n".parse().unwrap();
        merge(&mut base, "[a]\ny = 3\n".parse().unwrap());
        assert_eq!(base["a"]["x"].as_integer(), Some(1));
        assert_eq!(base["a"]["y"].as_integer(), Some(3));
    }
}
