//! End-to-end workflows shared by the command line and the experiments:
//! simulate a bundle, pretrain, reweight, optionally retrain.

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, DatasetBundle, DatasetConfig};
use crate::error::{Error, Result};
use crate::model::{Geometry, ModelConfig, MstNet, ParamVector};
use crate::reweighter::{Outcome, Problem, ReweightConfig};
use crate::simulator::{make_real_env, make_sim_pool, RandomizationRanges, ScenarioConfig};
use crate::trainer::{train, ModelLearner, TaskWeights, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub seed: u64,
    pub n_scenarios: usize,
    pub ranges: RandomizationRanges,
    /// The environment standing in for the real network.
    pub real: ScenarioConfig,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenarios: 30,
            ranges: RandomizationRanges::default(),
            real: ScenarioConfig::reference_real(),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 {
            return Err(Error::config("simulator.n_scenarios must be positive"));
        }
        self.ranges.validate()?;
        self.real.validate()
    }
}

/// Simulated pool plus real environment, windowed and normalized.
pub fn simulate(sim: &SimulatorConfig, data: &DatasetConfig) -> Result<DatasetBundle> {
    sim.validate()?;
    let pool = make_sim_pool(&sim.ranges, sim.n_scenarios, sim.seed)?;
    let real = make_real_env(&sim.real)?;
    normalize(DatasetBundle::build(&pool, &real, data)?)
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub net: MstNet,
    pub params: ParamVector,
    pub pretrain: TrainOutcome,
    pub reweight: Option<Outcome>,
    pub retrain: Option<TrainOutcome>,
    /// Raw sample logits behind the final parameters.
    pub logits: Vec<f64>,
}

impl Fit {
    /// Task weights at the end of the last training stage.
    pub fn task_weights(&self) -> TaskWeights {
        let last = self.retrain.as_ref().unwrap_or(&self.pretrain);
        *last.task_weights.last().expect("initial weights recorded")
    }
}

/// Pretrains with uniform sample weights, solves the reweighting problem
/// from the pretrained parameters with the task weights frozen, then keeps
/// the solver's parameters or retrains with the learned weights. With
/// `uniform_sample_weights` the pretrained model is returned as is.
pub fn fit(
    model: &ModelConfig,
    bundle: &DatasetBundle,
    train_cfg: &TrainConfig,
    reweight_cfg: &ReweightConfig,
    uniform_sample_weights: bool,
) -> Result<Fit> {
    let net = MstNet::new(model.clone(), Geometry::of(&bundle.config))?;
    let uniform = vec![0.0; bundle.sim.len()];
    let pretrain = train(&net, bundle, train_cfg, Some(&uniform), None)?;
    if uniform_sample_weights {
        let params = pretrain.params.clone();
        return Ok(Fit { net, params, pretrain, reweight: None, retrain: None, logits: uniform });
    }
    let (params, outcome, retrain) = reweight(&net, bundle, &pretrain, train_cfg, reweight_cfg)?;
    let logits = outcome.w.clone();
    Ok(Fit { net, params, pretrain, reweight: Some(outcome), retrain, logits })
}

/// The reweighting stage alone, starting from a pretrained model.
pub fn reweight(
    net: &MstNet,
    bundle: &DatasetBundle,
    pretrain: &TrainOutcome,
    train_cfg: &TrainConfig,
    reweight_cfg: &ReweightConfig,
) -> Result<(ParamVector, Outcome, Option<TrainOutcome>)> {
    let tw = pretrain.task_weights.last().expect("initial weights recorded").weights;
    let learner = ModelLearner { net, task_weights: tw, chunk: reweight_cfg.chunk };
    let problem = Problem::new(&learner, &bundle.sim, &bundle.val, reweight_cfg.clone())?;
    let outcome = problem.run(vec![0.0; bundle.sim.len()], pretrain.params.flat.clone())?;
    let (params, retrain) = if reweight_cfg.retrain_with_weights {
        let r = train(net, bundle, train_cfg, Some(&outcome.w), None)?;
        (r.params.clone(), Some(r))
    } else {
        (pretrain.params.with_flat(outcome.phi.clone())?, None)
    };
    Ok((params, outcome, retrain))
}
