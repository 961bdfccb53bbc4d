use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "swan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn entries(store: &ParamStore) -> Vec<Entry> {
    store
        .iter()
        .map(|(name, t)| Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn restore(store: &mut ParamStore, entries: &[Entry], what: &str) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {} tensors, found {}",
            store.len(),
            entries.len()
        )));
    }
    for (i, e) in entries.iter().enumerate() {
        let t = store.get(i);
        if store.name(i) != e.name || t.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{what}: entry {i} is `{}` {:?}, model expects `{}` {:?}",
                e.name,
                e.shape,
                store.name(i),
                t.shape()
            )));
        }
        if e.data.len() != t.numel() {
            return Err(Error::Checkpoint(format!(
                "{what}: `{}` holds {} values for shape {:?}",
                e.name,
                e.data.len(),
                e.shape
            )));
        }
        store.get_mut(i).data_mut().copy_from_slice(&e.data);
    }
    Ok(())
}

/// Writes the configuration, parameters and buffers of `model` as JSON.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = File {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params: entries(&model.params),
        buffers: entries(&model.buffers),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("cannot encode checkpoint: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rebuilds a model from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: File = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format `{}` version {}",
            path.display(),
            file.format,
            file.version
        )));
    }
    let mut model = Model::new(file.config)?;
    restore(&mut model.params, &file.params, "params")?;
    restore(&mut model.buffers, &file.buffers, "buffers")?;
    Ok(model)
}
