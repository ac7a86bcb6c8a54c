//! Binary tensor and checkpoint formats.
//!
//! Tensor record (`DTSR`): magic `DTSR`, version u16 = 1, rank u8, dims as
//! u64 little-endian, payload f32 little-endian row-major.
//!
//! Checkpoint (`CKPT`): magic `CKPT`, u32 tensor count, then per entry a u16
//! name length, the UTF-8 name, and a full tensor record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::params::ParamSet;
use crate::numkernel::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"DTSR";
const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u16 = 1;

pub fn write_tensor_record(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_record(r: &mut impl Read) -> std::io::Result<Tensor> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(bad("bad tensor magic"));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    if u16::from_le_bytes(v) != VERSION {
        return Err(bad("unsupported tensor version"));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        shape.push(u64::from_le_bytes(d) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 4];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_tensor_record(&mut w, t).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor_record(&mut BufReader::new(f)).map_err(|e| Error::io(path, e))
}

/// Serializes every parameter (in set order) into a checkpoint file.
pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| Error::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(io_err)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        write_tensor_record(&mut w, t).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads checkpoint values into an existing parameter set; every stored
/// entry must match a registered parameter's name and shape.
pub fn load_checkpoint(path: &Path, params: &mut ParamSet) -> Result<()> {
    let entries = read_checkpoint_entries(path)?;
    if entries.len() != params.len() {
        return Err(Error::contract(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            params.len()
        )));
    }
    for (name, t) in entries {
        let idx = params
            .index_of(&name)
            .ok_or_else(|| Error::contract(format!("checkpoint names unknown parameter {name}")))?;
        if params.at(idx).shape() != t.shape() {
            return Err(Error::contract(format!("checkpoint shape mismatch for {name}")));
        }
        params.at_mut(idx).data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub fn read_checkpoint_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let io_err = |e| Error::io(path, e);
    let bad = |msg: &str| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CKPT_MAGIC {
        return Err(bad("bad checkpoint magic"));
    }
    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt).map_err(io_err)?;
    let count = u32::from_le_bytes(cnt);
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(io_err)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| bad("checkpoint name is not UTF-8"))?;
        let t = read_tensor_record(&mut r).map_err(io_err)?;
        entries.push((name, t));
    }
    Ok(entries)
}
