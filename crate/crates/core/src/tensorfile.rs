//! Named float64 arrays plus a JSON header in one safetensors file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use autograd::{Tensor, Var};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::networks::Module;

const META_KEY: &str = "targan";

pub(crate) fn write(path: &Path, arrays: &BTreeMap<String, Tensor>, header: String) -> Result<()> {
    let bytes: Vec<(&String, Vec<u8>, Vec<usize>)> = arrays
        .iter()
        .map(|(n, t)| (n, t.data().iter().flat_map(|v| v.to_le_bytes()).collect(), t.shape().to_vec()))
        .collect();
    let views = bytes
        .iter()
        .map(|(n, b, s)| {
            TensorView::new(Dtype::F64, s.clone(), b)
                .map(|v| (n.to_string(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    // a single metadata key keeps the header bytes independent of hash order
    let meta = HashMap::from([(META_KEY.to_string(), header)]);
    let data = safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<(BTreeMap<String, Tensor>, String)> {
    let data = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let bad = |e: String| Error::Checkpoint(format!("{}: {e}", path.display()));
    let st = SafeTensors::deserialize(&data).map_err(|e| bad(e.to_string()))?;
    let (_, meta) = SafeTensors::read_metadata(&data).map_err(|e| bad(e.to_string()))?;
    let header = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .cloned()
        .ok_or_else(|| bad("missing header".into()))?;
    let mut arrays = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 || view.shape().len() != 4 {
            return Err(bad(format!("array {name} is not a rank-4 float64 array")));
        }
        let s = view.shape();
        let shape = [s[0], s[1], s[2], s[3]];
        let values = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.insert(name, Tensor::new(shape, values).map_err(|e| bad(e.to_string()))?);
    }
    Ok((arrays, header))
}

/// Adds every parameter of `m` under `prefix`.
pub(crate) fn insert_module(arrays: &mut BTreeMap<String, Tensor>, m: &dyn Module, prefix: &str) {
    m.visit(prefix, &mut |n, v| {
        arrays.insert(n.to_string(), v.value().clone());
    });
}

/// Overwrites every parameter of `m` from `arrays`, checking shapes.
pub(crate) fn restore_module(m: &mut dyn Module, prefix: &str, arrays: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, v| {
        if err.is_some() {
            return;
        }
        match arrays.get(name) {
            Some(t) if t.shape() == v.shape() => *v = Var::param(t.clone()),
            Some(t) => {
                err = Some(Error::Config(format!(
                    "stored array {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    v.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing array {name}"))),
        }
    });
    err.map_or(Ok(()), Err)
}
