//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "SSCP" | version u16
//! layers, encoder_hidden, decoder_hidden, subsample_factor,
//! input_features, vocab_size, max_decode_steps: u32 each | dropout_p f64
//! parameter count u32
//! per parameter: name length u32 | UTF-8 name | rank u32 | extents u32… | values f64…
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ModelConfig, Seq2Seq};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCP";
pub const CHECKPOINT_VERSION: u16 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{what} {v} exceeds u32")))
}

pub fn write_checkpoint<W: Write>(mut w: W, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
    for (name, v) in [
        ("layers", cfg.layers),
        ("encoder_hidden", cfg.encoder_hidden),
        ("decoder_hidden", cfg.decoder_hidden),
        ("subsample_factor", cfg.subsample_factor),
        ("input_features", cfg.input_features),
        ("vocab_size", cfg.vocab_size),
        ("max_decode_steps", cfg.max_decode_steps),
    ] {
        w.write_u32::<LittleEndian>(u32_of(v, name)?)?;
    }
    w.write_f64::<LittleEndian>(cfg.dropout_p)?;
    w.write_u32::<LittleEndian>(u32_of(store.len(), "parameter count")?)?;
    for (name, value, _) in store.iter() {
        w.write_u32::<LittleEndian>(u32_of(name.len(), "name length")?)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(u32_of(value.rank(), "rank")?)?;
        for &e in value.shape() {
            w.write_u32::<LittleEndian>(u32_of(e, "extent")?)?;
        }
        for &v in value.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<ModelConfig> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let mut next = || -> Result<usize> { Ok(r.read_u32::<LittleEndian>()? as usize) };
    let cfg = ModelConfig {
        layers: next()?,
        encoder_hidden: next()?,
        decoder_hidden: next()?,
        subsample_factor: next()?,
        input_features: next()?,
        vocab_size: next()?,
        max_decode_steps: next()?,
        dropout_p: r.read_f64::<LittleEndian>()?,
    };
    Ok(cfg)
}

/// Reads a checkpoint. The configuration block is validated before any
/// tensor is read, and the tensors are checked against the layout it
/// implies.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Seq2Seq, ParamStore)> {
    let cfg = read_header(&mut r)?;
    cfg.validate()
        .map_err(|e| Error::format("checkpoint", format!("invalid configuration block: {e}")))?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..rank)
            .map(|_| Ok(r.read_u32::<LittleEndian>()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![0.0; shape.iter().product()];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(|e| Error::format("checkpoint", format!("truncated tensor `{name}`: {e}")))?;
        store.insert(name, Tensor::new(shape, values)?)?;
    }
    let model = Seq2Seq::bind(cfg, &store)?;
    Ok((model, store))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, cfg, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Seq2Seq, ParamStore)> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Only the configuration block, for compatibility checks.
pub fn read_checkpoint_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_header(&mut BufReader::new(File::open(path)?))
}
