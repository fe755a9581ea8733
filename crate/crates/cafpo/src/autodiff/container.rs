//! Flat binary container for parameter snapshots.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes   ASCII "CAFW"
//! version  u16       currently 1
//! count    u32       number of tensor records
//! record   repeated `count` times:
//!   name_len  u32
//!   name      name_len bytes, UTF-8
//!   rank      u32     always 2 here
//!   dims      rank x u64
//!   values    prod(dims) x f64, IEEE-754 little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{DiffError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"CAFW";
const VERSION: u16 = 1;

pub fn write_params<W: Write>(store: &ParamStore, w: &mut W) -> Result<(), DiffError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ParamStore, DiffError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::BadContainer(format!("bad magic {:?}", magic)));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(DiffError::BadContainer(format!("unsupported version {}", version)));
    }
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| DiffError::BadContainer(format!("non-utf8 name: {}", e)))?;
        let rank = read_u32(r)?;
        if rank != 2 {
            return Err(DiffError::BadContainer(format!("tensor `{}` has rank {}", name, rank)));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        store.add(name, Tensor::new(rows, cols, data)?);
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<(), DiffError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore, DiffError> {
    let mut r = BufReader::new(File::open(path)?);
    read_params(&mut r)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, DiffError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
