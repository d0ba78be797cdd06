//! Binary tensor file format used to dump masks, PSDs and filters for
//! inspection and plotting.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic     b"BTNS"
//! offset 4   version   u32 = 1
//! offset 8   dtype     u32: 1 = float32, 2 = complex64 (f32 re, f32 im pairs)
//! offset 12  ndim      u32
//! offset 16  dims      ndim x u64
//! then       payload   row-major (C order), f32 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BTNS";
const VERSION: u32 = 1;

const DTYPE_F32: u32 = 1;
const DTYPE_C64: u32 = 2;

fn write_header(w: &mut impl Write, dtype: u32, dims: &[usize]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dtype.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> std::io::Result<(u32, Vec<usize>)> {
    use std::io::{Error, ErrorKind};
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::new(ErrorKind::InvalidData, "bad tensor magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != VERSION {
        return Err(Error::new(ErrorKind::InvalidData, "unsupported version"));
    }
    r.read_exact(&mut u32buf)?;
    let dtype = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut u64buf)?;
        dims.push(u64::from_le_bytes(u64buf) as usize);
    }
    Ok((dtype, dims))
}

/// Write a real tensor (given as a flat row-major f64 slice) as float32.
pub fn write_f32_tensor(path: impl AsRef<Path>, dims: &[usize], data: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let expect: usize = dims.iter().product();
    if data.len() != expect {
        return Err(Error::ShapeMismatch(format!(
            "tensor payload has {} values, dims {:?} imply {}",
            data.len(),
            dims,
            expect
        )));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(&mut file);
    write_header(&mut buf, DTYPE_F32, dims).map_err(|e| Error::io(path, e))?;
    for &v in data {
        buf.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    buf.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write a complex tensor as interleaved float32 (re, im) pairs.
pub fn write_c64_tensor(path: impl AsRef<Path>, dims: &[usize], data: &[Complex64]) -> Result<()> {
    let path = path.as_ref();
    let expect: usize = dims.iter().product();
    if data.len() != expect {
        return Err(Error::ShapeMismatch(format!(
            "tensor payload has {} values, dims {:?} imply {}",
            data.len(),
            dims,
            expect
        )));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(&mut file);
    write_header(&mut buf, DTYPE_C64, dims).map_err(|e| Error::io(path, e))?;
    for v in data {
        buf.write_all(&(v.re as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        buf.write_all(&(v.im as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    buf.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_f32_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufReader::new(file);
    let (dtype, dims) = read_header(&mut buf).map_err(|e| Error::io(path, e))?;
    if dtype != DTYPE_F32 {
        return Err(Error::InvalidInput(format!(
            "{}: expected float32 tensor, found dtype {}",
            path.display(),
            dtype
        )));
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut word = [0u8; 4];
    for _ in 0..count {
        buf.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
        data.push(f32::from_le_bytes(word) as f64);
    }
    Ok((dims, data))
}

pub fn read_c64_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<Complex64>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufReader::new(file);
    let (dtype, dims) = read_header(&mut buf).map_err(|e| Error::io(path, e))?;
    if dtype != DTYPE_C64 {
        return Err(Error::InvalidInput(format!(
            "{}: expected complex64 tensor, found dtype {}",
            path.display(),
            dtype
        )));
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut word = [0u8; 4];
    for _ in 0..count {
        buf.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
        let re = f32::from_le_bytes(word) as f64;
        buf.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
        let im = f32::from_le_bytes(word) as f64;
        data.push(Complex64::new(re, im));
    }
    Ok((dims, data))
}
