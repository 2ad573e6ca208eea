//! Parameter-set container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PSET"
//! version u32 (currently 1)
//! spec    u32 length + JSON-encoded MlpSpec
//! count   u32 entries, each:
//!   name  u32 length + UTF-8 bytes
//!   dtype u8 (1 = f32, 2 = f64)
//!   shape u8 ndim (always 2) + u32 per dim
//!   data  raw little-endian floats, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{MlpSpec, ParamSet};

const MAGIC: &[u8; 4] = b"PSET";
const VERSION: u32 = 1;

/// Storage precision for the raw float payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatDtype {
    F32,
    F64,
}

impl FloatDtype {
    fn tag(self) -> u8 {
        match self {
            FloatDtype::F32 => 1,
            FloatDtype::F64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(FloatDtype::F32),
            2 => Ok(FloatDtype::F64),
            other => Err(Error::format(format!("unknown dtype tag {other}"))),
        }
    }
}

pub fn write_param_set(
    path: &Path,
    spec: &MlpSpec,
    params: &ParamSet,
    dtype: FloatDtype,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let spec_json = serde_json::to_vec(spec)
        .map_err(|e| Error::format(format!("spec serialization failed: {e}")))?;
    w.write_all(&(spec_json.len() as u32).to_le_bytes())?;
    w.write_all(&spec_json)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dtype.tag(), 2])?;
        w.write_all(&(tensor.rows() as u32).to_le_bytes())?;
        w.write_all(&(tensor.cols() as u32).to_le_bytes())?;
        match dtype {
            FloatDtype::F32 => {
                for &v in tensor.data() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            FloatDtype::F64 => {
                for &v in tensor.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_param_set(path: &Path) -> Result<(MlpSpec, ParamSet)> {
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::Missing(path.display().to_string()))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let spec_len = read_u32(&mut r)? as usize;
    let mut spec_buf = vec![0u8; spec_len];
    r.read_exact(&mut spec_buf)?;
    let spec: MlpSpec = serde_json::from_slice(&spec_buf)
        .map_err(|e| Error::format(format!("spec deserialization failed: {e}")))?;
    spec.validate()?;

    let count = read_u32(&mut r)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?;
        let mut head = [0u8; 2];
        r.read_exact(&mut head)?;
        let dtype = FloatDtype::from_tag(head[0])?;
        if head[1] != 2 {
            return Err(Error::format(format!("expected 2-D entry, got ndim {}", head[1])));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        match dtype {
            FloatDtype::F32 => {
                let mut buf = [0u8; 4];
                for v in &mut data {
                    r.read_exact(&mut buf)?;
                    *v = f32::from_le_bytes(buf) as f64;
                }
            }
            FloatDtype::F64 => {
                let mut buf = [0u8; 8];
                for v in &mut data {
                    r.read_exact(&mut buf)?;
                    *v = f64::from_le_bytes(buf);
                }
            }
        }
        params.insert(name, Tensor::from_vec(rows, cols, data));
    }
    Ok((spec, params))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
