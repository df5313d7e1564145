//! Signal serialization: a little-endian binary container and CSV export.
//!
//! Container layout: `u32` magic `"CSIG"`, `u32` version, `f64` sample rate,
//! `u64` sample count, then interleaved `f64` re/im pairs.

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SIGNAL_MAGIC: u32 = 0x4353_4947; // "CSIG"
pub const SIGNAL_VERSION: u32 = 1;

pub fn write_signal_bin(path: impl AsRef<Path>, signal: &ComplexSignal) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    w.write_all(&SIGNAL_MAGIC.to_le_bytes()).map_err(wrap)?;
    w.write_all(&SIGNAL_VERSION.to_le_bytes()).map_err(wrap)?;
    w.write_all(&signal.sample_rate().to_le_bytes()).map_err(wrap)?;
    w.write_all(&(signal.len() as u64).to_le_bytes()).map_err(wrap)?;
    for s in signal.samples() {
        w.write_all(&s.re.to_le_bytes()).map_err(wrap)?;
        w.write_all(&s.im.to_le_bytes()).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

pub fn read_signal_bin(path: impl AsRef<Path>) -> Result<ComplexSignal> {
    let path = path.as_ref();
    let wrap = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(wrap)?);
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];

    r.read_exact(&mut u32buf).map_err(wrap)?;
    if u32::from_le_bytes(u32buf) != SIGNAL_MAGIC {
        return Err(Error::Config(format!(
            "{}: not a signal container (bad magic)",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf).map_err(wrap)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SIGNAL_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut f64buf).map_err(wrap)?;
    let sample_rate = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf).map_err(wrap)?;
    let len = u64::from_le_bytes(f64buf) as usize;

    let mut samples = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut f64buf).map_err(wrap)?;
        let re = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf).map_err(wrap)?;
        let im = f64::from_le_bytes(f64buf);
        samples.push(Complex64::new(re, im));
    }
    ComplexSignal::new(samples, sample_rate)
}

/// CSV export with columns `index,re,im`.
pub fn write_signal_csv(path: impl AsRef<Path>, signal: &ComplexSignal) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    writeln!(w, "index,re,im").map_err(wrap)?;
    for (i, s) in signal.samples().iter().enumerate() {
        writeln!(w, "{i},{},{}", s.re, s.im).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}
