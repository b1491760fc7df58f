//! Named-tensor archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    4 bytes  "FWCK"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor, in name order:
//!   name_len u32, name (UTF-8)
//!   dtype    u8     0 = f32, 1 = f64
//!   ndim     u32, dims u64 x ndim
//!   values   product(dims) scalars of dtype
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamTree, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FWCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", reason: reason.into() }
}

pub fn write_archive<W: Write>(mut w: W, tensors: &ParamTree, dtype: Dtype) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[match dtype {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }])?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            match dtype {
                Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                Dtype::F64 => w.write_all(&v.to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_archive<R: Read>(mut r: R) -> Result<ParamTree> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut tree = ParamTree::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(format_err(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| format_err("name is not UTF-8"))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(format_err(format!("{name}: {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match dtype[0] {
            0 => {
                let mut b = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
            1 => {
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
            }
            other => return Err(format_err(format!("{name}: unknown dtype {other}"))),
        }
        tree.insert(name, Tensor { shape, data });
    }
    Ok(tree)
}

pub fn save(path: &Path, tensors: &ParamTree, dtype: Dtype) -> Result<()> {
    write_archive(BufWriter::new(File::create(path)?), tensors, dtype)
}

pub fn load(path: &Path) -> Result<ParamTree> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    read_archive(BufReader::new(File::open(path)?))
}
