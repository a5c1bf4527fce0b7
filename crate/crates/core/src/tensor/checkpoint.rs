//! Parameter checkpoints: one JSON manifest line followed by a contiguous
//! little-endian `f64` blob laid out in manifest order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "irrgn-params-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in bytes from the start of the blob.
    pub byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    seed: u64,
    blob_bytes: usize,
    params: Vec<ManifestEntry>,
}

pub fn write_checkpoint<S: Scalar, W: Write>(store: &ParameterStore<S>, mut out: W) -> Result<()> {
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (name, t) in store.iter() {
        entries.push(ManifestEntry { name: name.to_string(), shape: t.shape().to_vec(), byte_offset: offset });
        offset += t.numel() * 8;
    }
    let manifest = Manifest { format: FORMAT.to_string(), seed: store.seed(), blob_bytes: offset, params: entries };
    serde_json::to_writer(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    for (_, t) in store.iter() {
        for &x in t.data() {
            out.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<S: Scalar, R: Read>(input: R) -> Result<ParameterStore<S>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let manifest: Manifest =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", manifest.format)));
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let mut store = ParameterStore::new(manifest.seed);
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let end = e.byte_offset + n * 8;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("`{}` runs past the end of the blob", e.name)));
        }
        let data = blob[e.byte_offset..end]
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        store.set(&e.name, Tensor::new(e.shape.clone(), data)?);
    }
    Ok(store)
}

pub fn save_checkpoint<S: Scalar>(store: &ParameterStore<S>, path: &Path) -> Result<()> {
    // write-then-rename so a crash never leaves a torn checkpoint behind
    let tmp = path.with_extension("partial");
    write_checkpoint(store, BufWriter::new(File::create(&tmp)?))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint into a store whose parameter names and shapes are
/// already fixed by the model configuration.
pub fn load_checkpoint<S: Scalar>(path: &Path, into: &mut ParameterStore<S>) -> Result<()> {
    let loaded: ParameterStore<S> = read_checkpoint(File::open(path)?)?;
    let mut problems = Vec::new();
    for (name, t) in into.iter() {
        match loaded.get(name) {
            None => problems.push(format!("`{name}` missing from checkpoint")),
            Some(l) if l.shape() != t.shape() => {
                problems.push(format!("`{name}`: checkpoint {:?}, model {:?}", l.shape(), t.shape()))
            }
            Some(_) => {}
        }
    }
    for (name, _) in loaded.iter() {
        if !into.contains(name) {
            problems.push(format!("`{name}` not part of the model"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!("shape mismatch: {}", problems.join("; "))));
    }
    for (name, t) in loaded.iter() {
        into.assign(name, t.data())?;
    }
    Ok(())
}
