//! Parameter checkpoints: a directory of named `.t4` tensors plus a
//! plain-text `manifest.txt` mapping name → shape, and an optional
//! `model.txt` of `key=value` metadata (variant, seed, anything the loader
//! needs to rebuild the surrounding model).
//!
//! Names are stable identifiers from the layers' `named_params` orderings;
//! they are restricted to `[A-Za-z0-9_.-]` so a name can never escape the
//! checkpoint directory.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{load_t4, save_t4, Dims, Tensor};
use crate::Scalar;

/// A loaded checkpoint: tensors in manifest order plus metadata lines.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub meta: Vec<(String, String)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Write every tensor as `<name>.t4` under `dir` (created if missing),
/// plus `manifest.txt` and `model.txt`.
pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    tensors: &[(String, &Tensor<T>)],
    meta: &[(String, String)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    let mut manifest = String::new();
    for (name, t) in tensors {
        if !valid_name(name) {
            return Err(Error::config(
                "save_checkpoint",
                format!("invalid tensor name {name:?}"),
            ));
        }
        let d = t.dims();
        manifest.push_str(&format!("{name} {} {} {} {}\n", d.b, d.c, d.h, d.w));
        save_t4(t, &dir.join(format!("{name}.t4")))?;
    }
    let mpath = dir.join("manifest.txt");
    fs::write(&mpath, manifest).map_err(|e| Error::io(mpath.clone(), e))?;
    let mut model = String::new();
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::config(
                "save_checkpoint",
                format!("metadata key/value {k:?} must be single-line and '='-free"),
            ));
        }
        model.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join("model.txt");
    fs::write(&path, model).map_err(|e| Error::io(path.clone(), e))?;
    Ok(())
}

/// Read a checkpoint directory back; every manifest entry must exist and
/// match its declared shape.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let mpath = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.clone(), e))?;
    let mut tensors = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::io(
                mpath.clone(),
                format!("manifest line {} is not 'name b c h w'", lineno + 1),
            ));
        }
        let name = fields[0];
        if !valid_name(name) {
            return Err(Error::io(
                mpath.clone(),
                format!("manifest line {} has invalid name {name:?}", lineno + 1),
            ));
        }
        let mut dims = [0usize; 4];
        for (i, f) in fields[1..].iter().enumerate() {
            dims[i] = f.parse().map_err(|_| {
                Error::io(
                    mpath.clone(),
                    format!("manifest line {}: bad dimension {f:?}", lineno + 1),
                )
            })?;
        }
        let want = Dims::new(dims[0], dims[1], dims[2], dims[3]);
        let tpath = dir.join(format!("{name}.t4"));
        let t = load_t4::<T>(&tpath)?;
        if t.dims() != want {
            return Err(Error::io(
                tpath,
                format!("tensor dims {} disagree with manifest {want}", t.dims()),
            ));
        }
        tensors.push((name.to_string(), t));
    }
    let mut meta = Vec::new();
    let model_path = dir.join("model.txt");
    if model_path.exists() {
        let text = fs::read_to_string(&model_path).map_err(|e| Error::io(model_path.clone(), e))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => meta.push((k.trim().to_string(), v.trim().to_string())),
                None => {
                    return Err(Error::io(
                        model_path.clone(),
                        format!("metadata line {line:?} is not key=value"),
                    ))
                }
            }
        }
    }
    Ok(Checkpoint { tensors, meta })
}
