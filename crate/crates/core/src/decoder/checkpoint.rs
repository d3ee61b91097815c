//! Self-describing weight container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic      8 bytes  "MXCKPT01"
//! header_len u32
//! header     header_len bytes, the ModelConfig as compact JSON
//! n_blocks   u32
//! n_blocks times:
//!   name_len u32, name (UTF-8), rows u32, cols u32,
//!   rows*cols little-endian f32 values, row-major
//! ```
//!
//! Blocks appear in canonical parameter order. Values are stored as `f32`,
//! so a model loaded from a checkpoint re-saves to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::forward::Model;
use super::params::layout;
use crate::error::{Error, Result};
use crate::numkit::SeqMatrix;

pub const MAGIC: &[u8; 8] = b"MXCKPT01";

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let header = serde_json::to_vec(&model.config)?;
    write_u32(&mut w, header.len())?;
    w.write_all(&header)?;
    let blocks = model.params.named();
    write_u32(&mut w, blocks.len())?;
    for (name, m) in blocks {
        write_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, m.rows())?;
        write_u32(&mut w, m.cols())?;
        for &v in m.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let header_len = read_u32(&mut r)?;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let config: ModelConfig = serde_json::from_slice(&header)?;
    config.validate_runnable()?;

    let expected = layout(&config)
        .named()
        .into_iter()
        .map(|(n, s)| (n, *s))
        .collect::<Vec<_>>();
    let n_blocks = read_u32(&mut r)?;
    if n_blocks != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{n_blocks} weight blocks, config implies {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(n_blocks);
    for (want_name, want_shape) in &expected {
        let name_len = read_u32(&mut r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let (rows, cols) = (read_u32(&mut r)?, read_u32(&mut r)?);
        if &name != want_name || (rows, cols) != *want_shape {
            return Err(Error::Checkpoint(format!(
                "found block `{name}` {rows}x{cols}, expected `{want_name}` {}x{}",
                want_shape.0, want_shape.1
            )));
        }
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        loaded.push(SeqMatrix::new(rows, cols, data)?);
    }
    let mut blocks = loaded.into_iter();
    let params = layout(&config).map(|_, _| blocks.next().expect("block count checked"));
    Ok(Model { config, params })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
