use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter vector plus the index naming every slice of it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub flat: Vec<f64>,
    pub index: Vec<ParamEntry>,
}

impl ParamVector {
    /// Checks that `index` tiles `flat` in order with no gaps or overlaps.
    pub fn new(flat: Vec<f64>, index: Vec<ParamEntry>) -> Result<Self> {
        let mut next = 0;
        for e in &index {
            if e.offset != next {
                return Err(Error::shape(
                    "param_vector",
                    format!("{} starts at {}, expected {next}", e.name, e.offset),
                ));
            }
            next += e.numel();
        }
        if next != flat.len() {
            return Err(Error::shape("param_vector", format!("index covers {next} of {} values", flat.len())));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("parameter {i}")));
        }
        Ok(Self { flat, index })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.flat[e.offset..e.offset + e.numel()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.entry(name)?.clone();
        Some(&mut self.flat[e.offset..e.offset + e.numel()])
    }

    /// Same layout, new values.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        Self::new(flat, self.index.clone())
    }
}
