//! Checkpoint directories: `manifest.json` plus one TNSR blob per
//! parameter and per Adam moment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{blob, AdamConfig, AdamState, ParamStore, Tensor};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub file: String,
    /// Adam moment blobs, when optimizer state was saved.
    pub adam_m: Option<String>,
    pub adam_v: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamEntry {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub validation_metric: Option<f64>,
    pub params: Vec<ParamEntry>,
    pub adam: Option<AdamEntry>,
}

/// Metadata supplied by the caller of [`save_checkpoint`].
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub validation_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore,
    pub adam: Option<AdamState>,
}

fn blob_name(prefix: &str, name: &str) -> Result<String> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
        return Err(Error::contract(format!("parameter name {name:?} is not file-safe")));
    }
    Ok(format!("{prefix}{name}.tnsr"))
}

pub fn save_checkpoint(dir: &Path, store: &ParamStore, adam: Option<&AdamState>, meta: &CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::with_capacity(store.len());
    for (i, p) in store.iter().enumerate() {
        let file = blob_name("", p.name())?;
        blob::save(&dir.join(&file), p.value())?;
        let (mut adam_m, mut adam_v) = (None, None);
        if let Some(a) = adam {
            let (m, v) = (blob_name("adam_m.", p.name())?, blob_name("adam_v.", p.name())?);
            blob::save(&dir.join(&m), &a.first_moments()[i])?;
            blob::save(&dir.join(&v), &a.second_moments()[i])?;
            (adam_m, adam_v) = (Some(m), Some(v));
        }
        params.push(ParamEntry {
            name: p.name().to_string(),
            dims: p.value().dims().to_vec(),
            file,
            adam_m,
            adam_v,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: meta.kind.clone(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        step: meta.step,
        epoch: meta.epoch,
        validation_metric: meta.validation_metric,
        params,
        adam: adam.map(|a| AdamEntry {
            config: a.config,
            step: a.step_count(),
        }),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn load_blob(dir: &Path, file: &str, name: &str, dims: &[usize]) -> Result<Tensor> {
    let t = blob::load(&dir.join(file))?;
    if t.dims() != dims {
        return Err(Error::DimMismatch {
            name: format!("{name} ({file})"),
            expected: dims.to_vec(),
            found: t.dims().to_vec(),
        });
    }
    Ok(t)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingBlob(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        what: path.display().to_string(),
        source,
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            "format_version",
            format!("unsupported version {}", m.format_version),
        ));
    }
    Ok(m)
}

/// Load a checkpoint; with `expected_hash`, a different config hash is an error.
pub fn load_checkpoint(dir: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    if let Some(h) = expected_hash {
        if manifest.config_hash != h {
            return Err(Error::HashMismatch {
                expected: h.to_string(),
                found: manifest.config_hash.clone(),
            });
        }
    }
    let mut store = ParamStore::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for p in &manifest.params {
        store.add(p.name.clone(), load_blob(dir, &p.file, &p.name, &p.dims)?)?;
        if manifest.adam.is_some() {
            let missing = || Error::format(MANIFEST, format!("params[{}]", p.name), "Adam moments not listed");
            let mf = p.adam_m.as_deref().ok_or_else(missing)?;
            let vf = p.adam_v.as_deref().ok_or_else(missing)?;
            m.push(load_blob(dir, mf, &p.name, &p.dims)?);
            v.push(load_blob(dir, vf, &p.name, &p.dims)?);
        }
    }
    let adam = match &manifest.adam {
        Some(a) => Some(AdamState::from_parts(a.config, a.step, m, v)?),
        None => None,
    };
    Ok(Checkpoint { manifest, store, adam })
}

/// Copy checkpoint values into a freshly built store with the same layout.
pub fn restore_params(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::DimMismatch {
            name: "parameter count".into(),
            expected: vec![target.len()],
            found: vec![source.len()],
        });
    }
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.get(id).name().to_string();
        let src = source
            .id(&name)
            .ok_or_else(|| Error::contract(format!("checkpoint has no parameter {name}")))?;
        let value = source.value(src).clone();
        if value.dims() != target.value(id).dims() {
            return Err(Error::DimMismatch {
                name,
                expected: target.value(id).dims().to_vec(),
                found: value.dims().to_vec(),
            });
        }
        target.set_value(id, value)?;
    }
    Ok(())
}
