//! JSON checkpoints: model config, graph config, provenance and every named
//! parameter tensor. Floats round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Provenance, TrainedModel};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::network::{ModelConfig, Network, Params};

pub const FORMAT: &str = "maskdistill-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    version: u32,
    model: ModelConfig,
    graph: GraphConfig,
    provenance: Provenance,
    params: Vec<Tensor>,
}

pub fn to_json(model: &TrainedModel) -> String {
    let params = model
        .network
        .params()
        .named()
        .map(|(name, v)| Tensor {
            name: name.to_string(),
            shape: [v.nrows(), v.ncols()],
            data: v.iter().copied().collect(),
        })
        .collect();
    let file = File {
        format: FORMAT.into(),
        version: VERSION,
        model: model.config().clone(),
        graph: model.graph,
        provenance: model.provenance.clone(),
        params,
    };
    serde_json::to_string(&file).expect("checkpoint serialises")
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let header: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
    match header.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT) => {}
        other => return Err(Error::Checkpoint(format!("unrecognised format tag {other:?}"))),
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(VERSION) => {}
        other => return Err(Error::Checkpoint(format!("unsupported version {other:?}, expected {VERSION}"))),
    }
    let file: File = serde_json::from_value(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut named = BTreeMap::new();
    for t in file.params {
        let [r, c] = t.shape;
        let v = Array2::from_shape_vec((r, c), t.data)
            .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", t.name)))?;
        if named.insert(t.name.clone(), v).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {}", t.name)));
        }
    }
    let params = Params::from_named(&file.model, named)?;
    Ok(TrainedModel {
        network: Network::from_params(file.model, params)?,
        graph: file.graph,
        provenance: file.provenance,
    })
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
