//! Binary signal and map files, and small CSV helpers.
//!
//! Both binary formats are little-endian and start with a 16-byte preamble:
//! an 8-byte magic, a `u32` version and a `u32` reserved word (zero).

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::targets::RangeDopplerMap;

pub const SIGNAL_MAGIC: [u8; 8] = *b"CLKSIG\0\0";
pub const MAP_MAGIC: [u8; 8] = *b"CLKMAP\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Shape and sampling metadata stored ahead of the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalHeader {
    pub n_pulses: u64,
    pub block_len: u64,
    pub pulse_len: u64,
    pub n_velocities: u64,
    pub n_delays: u64,
    pub sample_rate: f64,
    pub carrier_freq: f64,
}

impl SignalHeader {
    pub fn n_samples(&self) -> usize {
        (self.n_pulses * self.block_len) as usize
    }
}

fn preamble(magic: &[u8; 8]) -> [u8; 16] {
    let mut p = [0u8; 16];
    p[..8].copy_from_slice(magic);
    p[8..12].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    p
}

fn check_preamble(bytes: &[u8], magic: &[u8; 8], what: &str) -> Result<()> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!("not a {what} file (bad magic)")));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {what} file version {version}")));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("file is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_signal(header: &SignalHeader, samples: &[Complex<f64>]) -> Result<Vec<u8>> {
    if samples.len() != header.n_samples() {
        return Err(Error::invalid(format!(
            "header declares {} samples, got {}",
            header.n_samples(),
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + 56 + 16 * samples.len());
    out.extend_from_slice(&preamble(&SIGNAL_MAGIC));
    for v in [header.n_pulses, header.block_len, header.pulse_len, header.n_velocities, header.n_delays] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.sample_rate.to_le_bytes());
    out.extend_from_slice(&header.carrier_freq.to_le_bytes());
    for z in samples {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_signal(bytes: &[u8]) -> Result<(SignalHeader, Vec<Complex<f64>>)> {
    check_preamble(bytes, &SIGNAL_MAGIC, "signal")?;
    let mut c = Cursor { bytes, at: 16 };
    let header = SignalHeader {
        n_pulses: c.u64()?,
        block_len: c.u64()?,
        pulse_len: c.u64()?,
        n_velocities: c.u64()?,
        n_delays: c.u64()?,
        sample_rate: c.f64()?,
        carrier_freq: c.f64()?,
    };
    let n = header
        .n_pulses
        .checked_mul(header.block_len)
        .filter(|&n| n.checked_mul(16).is_some_and(|b| b as usize == bytes.len() - c.at))
        .ok_or_else(|| Error::Format("sample count does not match the file size".into()))? as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let re = c.f64()?;
        let im = c.f64()?;
        samples.push(Complex::new(re, im));
    }
    Ok((header, samples))
}

pub fn write_signal(path: &Path, header: &SignalHeader, samples: &[Complex<f64>]) -> Result<()> {
    let bytes = encode_signal(header, samples)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_signal(path: &Path) -> Result<(SignalHeader, Vec<Complex<f64>>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_signal(&bytes)
}

/// Range-Doppler power map with its axes.
///
/// Layout after the preamble: `J` and `K` as `u64`, range offset and range
/// spacing (m) as `f64`, the `K` velocities (m/s), then `J*K` powers in
/// k-major order (`k*J + j`).
pub fn encode_map(map: &RangeDopplerMap, range_offset: f64, range_spacing: f64, velocities: &[f64]) -> Result<Vec<u8>> {
    if velocities.len() != map.n_velocities {
        return Err(Error::invalid("velocity axis does not match the map"));
    }
    let mut out = Vec::with_capacity(48 + 8 * (velocities.len() + map.power.len()));
    out.extend_from_slice(&preamble(&MAP_MAGIC));
    out.extend_from_slice(&(map.n_delays as u64).to_le_bytes());
    out.extend_from_slice(&(map.n_velocities as u64).to_le_bytes());
    out.extend_from_slice(&range_offset.to_le_bytes());
    out.extend_from_slice(&range_spacing.to_le_bytes());
    for v in velocities.iter().chain(&map.power) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_map`]: `(map, range_offset, range_spacing, velocities)`.
pub fn decode_map(bytes: &[u8]) -> Result<(RangeDopplerMap, f64, f64, Vec<f64>)> {
    check_preamble(bytes, &MAP_MAGIC, "map")?;
    let mut c = Cursor { bytes, at: 16 };
    let j = c.u64()? as usize;
    let k = c.u64()? as usize;
    let offset = c.f64()?;
    let spacing = c.f64()?;
    let expected = j.checked_mul(k).and_then(|n| n.checked_add(k)).and_then(|n| n.checked_mul(8));
    if expected != Some(bytes.len() - c.at) {
        return Err(Error::Format("map size does not match the file size".into()));
    }
    let velocities = (0..k).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let power = (0..j * k).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    Ok((RangeDopplerMap { n_delays: j, n_velocities: k, power }, offset, spacing, velocities))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
