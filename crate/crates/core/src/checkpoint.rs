//! Binary orbital checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `FVF1` |
//! | 4 | `u32` grid points per axis `n` |
//! | 8 | `f64` box length `L` |
//! | 1 | `u8` orbital count `N` |
//! | `N · n³ · 16` | per orbital, node values in row-major `(x, y, z)` order, each as `f64` real then imaginary part |
//!
//! Occupations are not stored; a loaded set has unit occupations.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{make_grid, ComplexField};
use crate::state::OrbitalSet;

pub const MAGIC: [u8; 4] = *b"FVF1";

pub fn write_to(set: &OrbitalSet, mut out: impl Write) -> Result<()> {
    let grid = set.grid();
    let n = u32::try_from(grid.n()).map_err(|_| Error::Checkpoint("grid too large".into()))?;
    let count = u8::try_from(set.len()).map_err(|_| Error::Checkpoint("too many orbitals".into()))?;
    out.write_all(&MAGIC)?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&grid.box_length().to_le_bytes())?;
    out.write_all(&[count])?;
    let mut buf = Vec::with_capacity(grid.len() * 16);
    for w in set.orbitals() {
        buf.clear();
        for v in w.values() {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_from(mut input: impl Read) -> Result<OrbitalSet> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    input.read_exact(&mut b8)?;
    let l = f64::from_le_bytes(b8);
    let mut count = [0u8; 1];
    input.read_exact(&mut count)?;
    let grid = make_grid(n, l).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut raw = vec![0u8; grid.len() * 16];
    let orbitals = (0..count[0])
        .map(|_| {
            input.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                    let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                    Complex64::new(re, im)
                })
                .collect();
            ComplexField::from_values(&grid, values)
        })
        .collect::<Result<Vec<_>>>()?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    OrbitalSet::new(orbitals)
}

pub fn save(set: &OrbitalSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_to(set, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<OrbitalSet> {
    read_from(std::io::BufReader::new(std::fs::File::open(path)?))
}
