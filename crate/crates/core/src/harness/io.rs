//! Binary observation files: a 16-byte header with the number of frequency
//! samples `N` and antennas `M` as little-endian `u64`, followed by `N * M`
//! complex values as little-endian `f64` pairs, antenna-major.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn write_observation<W: Write>(mut w: W, y: &DVector<Complex64>, n_freq: usize, n_ant: usize) -> Result<()> {
    if y.len() != n_freq * n_ant {
        return Err(Error::InvalidParameter(format!(
            "observation has {} entries, expected {n_freq} x {n_ant}",
            y.len()
        )));
    }
    w.write_all(&(n_freq as u64).to_le_bytes())?;
    w.write_all(&(n_ant as u64).to_le_bytes())?;
    for c in y.iter() {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the observation and its `(N, M)`.
pub fn read_observation<R: Read>(mut r: R) -> Result<(DVector<Complex64>, usize, usize)> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let m = u64::from_le_bytes(next(&mut r)?) as usize;
    let len = n
        .checked_mul(m)
        .filter(|l| *l > 0 && *l <= 1 << 28)
        .ok_or_else(|| Error::Config(format!("implausible observation header {n} x {m}")))?;
    let mut y = DVector::zeros(len);
    for k in 0..len {
        let re = f64::from_le_bytes(next(&mut r)?);
        let im = f64::from_le_bytes(next(&mut r)?);
        y[k] = Complex64::new(re, im);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Config(format!("{} trailing bytes after observation", rest.len())));
    }
    Ok((y, n, m))
}

pub fn save_observation(path: &Path, y: &DVector<Complex64>, n_freq: usize, n_ant: usize) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_observation(std::io::BufWriter::new(f), y, n_freq, n_ant)
}

pub fn load_observation(path: &Path) -> Result<(DVector<Complex64>, usize, usize)> {
    let f = std::fs::File::open(path)?;
    read_observation(std::io::BufReader::new(f))
}
