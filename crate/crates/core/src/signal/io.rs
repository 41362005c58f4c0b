//! `.eegb` binary recordings and CSV import.
//!
//! ```text
//! b"EEGB"  u32 version  u32 channels  u32 samples  f64 sample_rate
//! f32 data[samples × channels]   (little-endian, row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::EegRecording;
use crate::error::{Error, Result};

pub const EEGB_MAGIC: &[u8; 4] = b"EEGB";
pub const EEGB_VERSION: u32 = 1;

pub fn write_eegb<W: Write>(mut w: W, rec: &EegRecording) -> Result<()> {
    w.write_all(EEGB_MAGIC)?;
    w.write_all(&EEGB_VERSION.to_le_bytes())?;
    w.write_all(&(rec.channels as u32).to_le_bytes())?;
    w.write_all(&(rec.num_samples() as u32).to_le_bytes())?;
    w.write_all(&rec.sample_rate.to_le_bytes())?;
    let bytes: Vec<u8> = rec.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_eegb<R: Read>(mut r: R) -> Result<EegRecording> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("EEGB", "header truncated"))?;
    if &head[..4] != EEGB_MAGIC {
        return Err(Error::format("EEGB", format!("bad magic {:?}", &head[..4])));
    }
    let u = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    if u(4) != EEGB_VERSION {
        return Err(Error::format("EEGB", format!("unsupported version {}", u(4))));
    }
    let (channels, samples) = (u(8) as usize, u(12) as usize);
    let sample_rate = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let mut buf = vec![0u8; channels * samples * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("EEGB", format!("payload shorter than {samples}x{channels} values")))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EegRecording::new(sample_rate, channels, data, 0.0)
}

pub fn save_eegb(path: &Path, rec: &EegRecording) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_eegb(&mut w, rec)?;
    w.flush()?;
    Ok(())
}

pub fn load_eegb(path: &Path) -> Result<EegRecording> {
    read_eegb(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Import a CSV with header `time,ch0,...`; the rate comes from the time column.
pub fn import_csv<R: Read>(r: R) -> Result<EegRecording> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("CSV", e.to_string()))?
        .clone();
    if header.get(0).map(str::trim) != Some("time") || header.len() < 2 {
        return Err(Error::format("CSV", "header must start with `time` followed by channels"));
    }
    let channels = header.len() - 1;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("CSV", e.to_string()))?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format("CSV", format!("row {}: bad value in column {k}", line + 2)))
        };
        times.push(parse(0)?);
        for k in 1..=channels {
            samples.push(parse(k)? as f32);
        }
    }
    if times.len() < 2 {
        return Err(Error::format("CSV", "need at least two rows to infer the sample rate"));
    }
    let span = times[times.len() - 1] - times[0];
    if span <= 0.0 {
        return Err(Error::format("CSV", "time column is not increasing"));
    }
    let sample_rate = (times.len() - 1) as f64 / span;
    EegRecording::new(sample_rate, channels, samples, times[0])
}
