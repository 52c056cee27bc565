//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `FNBN0001`, then for each state tensor in model
//! order a little-endian `u32` rank, `rank` little-endian `u32` dims and the
//! row-major values as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Model;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"FNBN0001";

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Model<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    for t in model.state_tensors() {
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Overwrites the model's state from a checkpoint. Every tensor shape must
/// match the model and no bytes may remain.
pub fn read_checkpoint<T: Scalar, R: Read>(model: &mut Model<T>, mut input: R) -> Result<()> {
    let mut magic = [0u8; 8];
    read_exact(&mut input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut loaded = Vec::new();
    for (k, expected) in model.state_tensors().into_iter().enumerate() {
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != expected.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {k}: shape {shape:?}, model expects {:?}",
                expected.shape()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        let mut buf = [0u8; 8];
        for _ in 0..expected.len() {
            read_exact(&mut input, &mut buf)?;
            values.push(T::lit(f64::from_le_bytes(buf)));
        }
        loaded.push(values);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    for (t, values) in model.state_tensors_mut().into_iter().zip(loaded) {
        t.data_mut().copy_from_slice(&values);
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<()> {
    read_checkpoint(model, BufReader::new(File::open(path)?))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
