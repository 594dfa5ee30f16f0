//! Self-describing binary checkpoints: a model config plus named parameter
//! blocks, with a digest so decode-time loads can detect corruption or a
//! config/weights mismatch without a side channel.
//!
//! Layout (all integers little-endian):
//! magic, format version u32, sha256 of the config JSON, config JSON
//! (u64 length prefix), block count u64, then per block: name (u64 length
//! prefix), ndim u32, dims as u64s, and the f64 data in row-major order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::autodiff::Params;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

const MAGIC: &[u8; 8] = b"S2SCKPT\0";
const VERSION: u32 = 1;

pub fn save(path: &Path, config: &ModelConfig, params: &Params) -> Result<()> {
    let config_json = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&config_json);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&digest)?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, value) in params.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.ndim() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    // sanity bound so a corrupt length fails cleanly instead of OOMing
    if v > 1 << 32 {
        return Err(Error::data(format!("checkpoint {what} length {v} is implausible")));
    }
    Ok(v as usize)
}

pub fn load(path: &Path) -> Result<(ModelConfig, Params)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic: [u8; 8] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let digest: [u8; 32] = read_exact(&mut r)?;
    let config_len = read_len(&mut r, "config")?;
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json)?;
    if Sha256::digest(&config_json)[..] != digest {
        return Err(Error::data("checkpoint config digest mismatch"));
    }
    let config: ModelConfig =
        serde_json::from_slice(&config_json).map_err(|e| Error::data(e.to_string()))?;
    let block_count = read_len(&mut r, "block count")?;
    let mut params = Params::new();
    for _ in 0..block_count {
        let name_len = read_len(&mut r, "name")?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::data(e.to_string()))?;
        let ndim = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_len(&mut r, "dimension")?);
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        let arr = ArrayD::from_shape_vec(dims, data)
            .map_err(|e| Error::data(format!("parameter '{name}': {e}")))?;
        if params.names().iter().any(|n| *n == name) {
            return Err(Error::data(format!("duplicate parameter block '{name}'")));
        }
        params.push(name, arr);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::data("trailing bytes after checkpoint payload"));
    }
    Ok((config, params))
}
