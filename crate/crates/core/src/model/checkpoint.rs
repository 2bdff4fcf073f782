//! Checkpoint directory: a JSON manifest with the parameter index and run
//! metadata, plus the raw parameters as little-endian f64.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Geometry, ModelConfig, MstNet, ParamEntry, ParamVector};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_PAYLOAD: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

/// A trained model with free-form metadata (weighting mode, seed, dataset
/// checksum, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub geometry: Geometry,
    pub params: ParamVector,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<MstNet> {
        MstNet::new(self.model.clone(), self.geometry)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    geometry: Geometry,
    n_params: usize,
    index: Vec<ParamEntry>,
    meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(ck: &Checkpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: ck.model.clone(),
        geometry: ck.geometry,
        n_params: ck.params.len(),
        index: ck.params.index.clone(),
        meta: ck.meta.clone(),
    };
    let payload: Vec<u8> = ck.params.flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&dir.join(CHECKPOINT_PAYLOAD), &payload)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(CHECKPOINT_MANIFEST), json.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let m: Manifest =
        serde_json::from_str(&read_to_string(&mpath)?).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format version {}", m.format_version)));
    }
    let ppath = dir.join(CHECKPOINT_PAYLOAD);
    let bytes = std::fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    if bytes.len() != m.n_params * 8 {
        return Err(Error::format(&ppath, format!("{} bytes for {} parameters", bytes.len(), m.n_params)));
    }
    let flat = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let params = ParamVector::new(flat, m.index).map_err(|e| Error::format(&mpath, e.to_string()))?;
    let net = MstNet::new(m.model.clone(), m.geometry)?;
    if net.entries().ne(params.index.iter()) {
        return Err(Error::format(&mpath, "parameter index does not match the model configuration"));
    }
    Ok(Checkpoint { model: m.model, geometry: m.geometry, params, meta: m.meta })
}
