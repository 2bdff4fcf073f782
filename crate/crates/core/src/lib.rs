//! Sim-to-real multi-task cellular traffic forecasting.
//!
//! A domain-randomized traffic simulator feeds a multi-task spatiotemporal
//! forecaster whose simulated training samples are reweighted by a two-phase
//! cutting-plane solver for the bilevel reweighting problem.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod reweighter;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};

/// Traffic service forecast as one task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Call,
    Sms,
    Net,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Call, Task::Sms, Task::Net];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Call => "call",
            Task::Sms => "sms",
            Task::Net => "net",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "call" => Ok(Task::Call),
            "sms" => Ok(Task::Sms),
            "net" | "internet" => Ok(Task::Net),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}
