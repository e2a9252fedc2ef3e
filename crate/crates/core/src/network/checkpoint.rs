//! Checkpoint container: model spec, tensor manifest and raw `f32` payloads,
//! optionally followed by optimizer state.

use serde_json::{json, Map, Value};

use super::{build_model, Model, ModelSpec};
use crate::container::{find, read_container, write_container, Record, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::tensor::{Rng, Tensor};

/// Parameters then BN buffers, in [`Model::param_info`] / [`Model::buffers`] order.
pub fn model_records(model: &Model) -> Vec<Record> {
    let mut out: Vec<Record> = model
        .param_info()
        .iter()
        .zip(model.params())
        .map(|(info, t)| Record::f32(info.name.clone(), t.shape(), t.data()))
        .collect();
    out.extend(model.buffers().into_iter().map(|(n, t)| Record::f32(n, t.shape(), t.data())));
    out
}

pub fn model_from_records(spec: &ModelSpec, records: &[Record]) -> Result<Model> {
    // Build the skeleton with a throwaway generator, then overwrite every tensor.
    let mut model = build_model(spec, &mut Rng::new(0))?;
    let names: Vec<String> = model.param_info().into_iter().map(|p| p.name).collect();
    let buffer_names: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
    let assign = |dst: &mut Tensor, name: &str| -> Result<()> {
        let r = find(records, name)?;
        if r.shape != dst.shape() {
            return Err(Error::Format(format!("tensor {name}: shape {:?} != {:?}", r.shape, dst.shape())));
        }
        dst.data_mut().copy_from_slice(r.as_f32()?);
        Ok(())
    };
    for (dst, name) in model.params_mut().into_iter().zip(&names) {
        assign(dst, name)?;
    }
    for (dst, name) in model.buffers_mut().into_iter().zip(&buffer_names) {
        assign(dst, name)?;
    }
    Ok(model)
}

/// A training checkpoint. `epoch` counts completed epochs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Optimizer>,
    pub epoch: usize,
    pub extra: Map<String, Value>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.extra.clone();
        meta.insert("kind".into(), json!("checkpoint"));
        meta.insert("model_spec".into(), serde_json::to_value(&self.model.spec)?);
        meta.insert("epoch".into(), json!(self.epoch));
        let mut records = model_records(&self.model);
        if let Some(opt) = &self.optimizer {
            meta.insert("optimizer".into(), opt.meta()?);
            records.extend(opt.records(&self.model));
        }
        write_container(CHECKPOINT_MAGIC, Value::Object(meta), &records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut meta, records) = read_container(CHECKPOINT_MAGIC, bytes)?;
        let spec: ModelSpec = serde_json::from_value(
            meta.remove("model_spec")
                .ok_or_else(|| Error::Format("checkpoint has no model_spec".into()))?,
        )?;
        let model = model_from_records(&spec, &records)?;
        let optimizer = match meta.remove("optimizer") {
            Some(m) => Some(Optimizer::from_records(&m, &model, &records)?),
            None => None,
        };
        let epoch = meta.get("epoch").and_then(Value::as_u64).unwrap_or(0) as usize;
        for k in ["kind", "epoch", "format_version", "tensors"] {
            meta.remove(k);
        }
        Ok(Self {
            model,
            optimizer,
            epoch,
            extra: meta,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Model-only checkpoint bytes (no optimizer state).
pub fn save_model(model: &Model) -> Result<Vec<u8>> {
    Checkpoint {
        model: model.clone(),
        optimizer: None,
        epoch: 0,
        extra: Map::new(),
    }
    .to_bytes()
}
