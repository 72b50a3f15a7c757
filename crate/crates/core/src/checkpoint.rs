//! Binary checkpoint format for named tensors.
//!
//! Layout: magic `DVD1`, then a little-endian u32 tensor count, then per
//! tensor (in sorted name order): u16 name length, UTF-8 name, u8 rank,
//! one u32 per dimension, and the f64 payload. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::RawTensor;

const MAGIC: &[u8; 4] = b"DVD1";

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let count = u32::try_from(params.len())
        .map_err(|_| Error::Config("too many tensors for checkpoint".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("tensor name too long: `{name}`")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(tensor.shape.len())
            .map_err(|_| Error::Config("tensor rank exceeds u8".into()))?;
        w.write_all(&[rank])?;
        for dim in &tensor.shape {
            let d = u32::try_from(*dim)
                .map_err(|_| Error::Config("dimension exceeds u32".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let count = read_u32(&mut r)?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Parse("checkpoint name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(&name, RawTensor::new(data, shape)?)?;
    }
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Parse("truncated checkpoint".into()))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
