//! Checkpoint directories: a text `manifest` (format version, model config,
//! tensor table) and `weights.bin` holding little-endian f32 values of every
//! tensor in manifest order. Batch-norm running statistics are stored after
//! the trainable parameters.

use std::fs;
use std::path::Path;

use super::{ModelConfig, Pong};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::tensor::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "pong-checkpoint";
const MANIFEST: &str = "manifest";
const WEIGHTS: &str = "weights.bin";

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// `(name, shape)` of every stored tensor, in file order.
fn tensor_table<T: Real>(model: &Pong<T>) -> Vec<(String, Vec<usize>)> {
    let mut table: Vec<_> = model.params.iter().map(|(_, p)| (p.name.clone(), p.shape.clone())).collect();
    for (name, s) in model.stats.iter() {
        table.push((format!("{name}.running_mean"), vec![s.mean.len()]));
        table.push((format!("{name}.running_var"), vec![s.var.len()]));
    }
    table
}

/// Writes `model` to the directory `dir`, creating it if needed. `extra`
/// entries are recorded under `meta.` in the manifest.
pub fn save_checkpoint<T: Real>(model: &Pong<T>, dir: &Path, extra: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut m = Manifest::new();
    m.push("format-version", CHECKPOINT_VERSION);
    m.push("kind", KIND);
    for (k, v) in model.config.to_pairs() {
        m.push(format!("model.{k}"), v);
    }
    for (k, v) in extra {
        m.push(format!("meta.{k}"), v);
    }
    for (name, shape) in tensor_table(model) {
        m.push("tensor", format!("{name}:{}", dims(&shape)));
    }

    let mut bytes = Vec::with_capacity(4 * model.param_count());
    let mut put = |vals: &[T]| {
        for v in vals {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    };
    for (_, p) in model.params.iter() {
        put(p.value());
    }
    for (_, s) in model.stats.iter() {
        put(&s.mean);
        put(&s.var);
    }
    let wpath = dir.join(WEIGHTS);
    fs::write(&wpath, bytes).map_err(|e| Error::io(format!("writing {}", wpath.display()), e))?;
    m.write(&dir.join(MANIFEST))
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the model and
/// the `meta.` entries.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(Pong<T>, Vec<(String, String)>)> {
    let mpath = dir.join(MANIFEST);
    if !mpath.is_file() {
        return Err(Error::Manifest {
            path: mpath,
            detail: "checkpoint manifest not found".into(),
        });
    }
    let m = Manifest::read(&mpath)?;
    let version: u32 = m.parse_value("format-version")?;
    if version != CHECKPOINT_VERSION {
        return Err(m.error(format!("unsupported format-version {version} (expected {CHECKPOINT_VERSION})")));
    }
    if m.require("kind")? != KIND {
        return Err(m.error("not a model checkpoint"));
    }
    let config = ModelConfig::from_pairs(&m.with_prefix("model."))?;
    let mut model = Pong::<T>::new(config, 0)?;

    let expected = tensor_table(&model);
    let listed: Vec<&str> = m.get_all("tensor").collect();
    if listed.len() != expected.len() {
        return Err(m.error(format!("{} tensors listed, model has {}", listed.len(), expected.len())));
    }
    for (line, (name, shape)) in listed.iter().zip(&expected) {
        let want = format!("{name}:{}", dims(shape));
        if *line != want {
            return Err(m.error(format!("tensor entry '{line}' does not match expected '{want}'")));
        }
    }

    let wpath = dir.join(WEIGHTS);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(format!("reading {}", wpath.display()), e))?;
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != 4 * total {
        return Err(Error::Format {
            path: wpath,
            offset: bytes.len().min(4 * total) as u64,
            detail: format!("expected {} bytes of weights, found {}", 4 * total, bytes.len()),
        });
    }
    let mut offset = 0usize;
    let mut take = |dst: &mut [T]| -> Result<()> {
        for d in dst.iter_mut() {
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::Format {
                    path: wpath.clone(),
                    offset: offset as u64,
                    detail: "non-finite weight".into(),
                });
            }
            *d = T::lit(v as f64);
            offset += 4;
        }
        Ok(())
    };
    for p in model.params.iter_mut() {
        take(p.value_mut())?;
    }
    for (_, s) in model.stats.iter_mut() {
        take(&mut s.mean)?;
        take(&mut s.var)?;
    }
    let meta = m
        .entries()
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok((model, meta))
}
