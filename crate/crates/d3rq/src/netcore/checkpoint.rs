//! Binary checkpoint format.
//!
//! Layout: magic `D3RQ`, format version (u32 LE), tensor count (u32 LE),
//! then per tensor: name length (u32 LE) + UTF-8 name, dtype byte (1 = f64),
//! rank (u8), dims (u32 LE each), and the row-major payload as little-endian
//! f64. Round-trips are bit-exact.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D3RQ";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn save_tensors<W: Write>(w: &mut W, tensors: &[(String, &Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&[tensor.shape.len() as u8])?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_exact_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = read_exact_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_exact_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("tensor name of {name_len} bytes")));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        if dtype[0] != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", dtype[0])));
        }
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_exact_u32(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor { shape, data }));
    }
    Ok(out)
}

/// Write named sections, each a [`ParamSet`], as `section/param` tensors.
pub fn write_checkpoint(path: &Path, sections: &[(&str, &ParamSet)]) -> Result<()> {
    let mut named: Vec<(String, &Tensor)> = Vec::new();
    for (section, params) in sections {
        for (name, tensor) in params.iter() {
            named.push((format!("{section}/{name}"), tensor));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    save_tensors(&mut w, &named)?;
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back into per-section [`ParamSet`]s keyed by prefix.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, ParamSet)>> {
    let mut r = BufReader::new(File::open(path)?);
    let tensors = load_tensors(&mut r)?;
    let mut sections: Vec<(String, ParamSet)> = Vec::new();
    for (name, tensor) in tensors {
        let (section, param) = name.split_once('/').ok_or_else(|| {
            Error::Checkpoint(format!("tensor {name} has no section prefix"))
        })?;
        match sections.iter_mut().find(|(s, _)| s == section) {
            Some((_, set)) => set.insert(param, tensor)?,
            None => {
                let mut set = ParamSet::new();
                set.insert(param, tensor)?;
                sections.push((section.to_string(), set));
            }
        }
    }
    Ok(sections)
}
