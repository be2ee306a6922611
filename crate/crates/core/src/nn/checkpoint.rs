//! Directory checkpoints: one KTN1 file per tensor plus a tab-separated
//! `manifest.txt` with `name, shape, dtype, file` rows.

use super::tensor::Tensor;
use crate::ktn::{self, DType, KtnTensor};
use crate::{Error, Result};
use std::fs;
use std::path::Path;

pub const MANIFEST: &str = "manifest.txt";

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save_tensors(dir: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# name\tshape\tdtype\tfile\n");
    for (i, (name, t)) in entries.iter().enumerate() {
        if name.contains(['\t', '\n']) {
            return Err(Error::invalid(format!(
                "parameter name {name:?} contains a tab or newline"
            )));
        }
        let file = format!("{i:04}.ktn");
        ktn::write(dir.join(&file), &KtnTensor::real(t.shape().to_vec(), t.data().to_vec()))?;
        manifest.push_str(&format!(
            "{name}\t{}\t{}\t{file}\n",
            shape_string(t.shape()),
            DType::F64.name()
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_tensors(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Checkpoint(format!("manifest line {}: {msg}", lineno + 1));
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let shape: Vec<usize> = if cols[1].is_empty() {
            Vec::new()
        } else {
            cols[1]
                .split('x')
                .map(|d| d.parse().map_err(|_| bad("bad shape")))
                .collect::<Result<_>>()?
        };
        if DType::from_name(cols[2]).is_none() {
            return Err(bad("unknown dtype"));
        }
        let t = ktn::read(dir.join(cols[3]))?;
        if t.dims != shape {
            return Err(bad("file shape disagrees with manifest"));
        }
        let data = t.as_real().ok_or_else(|| bad("expected a real tensor"))?.to_vec();
        out.push((cols[0].to_string(), Tensor::new(shape, data)));
    }
    Ok(out)
}
