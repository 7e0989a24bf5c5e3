//! On-disk formats: interval streams, histograms and JSON documents.
//!
//! Binary interval files start with a 64-byte little-endian header
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 4 | magic `APLS` |
//! | 4 | 2 | format version |
//! | 6 | 2 | zero |
//! | 8 | 8 | `tdc_cycle`, µs, f64 |
//! | 16 | 4 | `period_cycles`, u32 |
//! | 20 | 4 | zero |
//! | 24 | 8 | seed, u64 |
//! | 32 | 32 | zero |
//!
//! followed by one u32 per interval. The CSV form is a `# cycles` line and
//! one integer per line; [`read_intervals`] tells the two apart by the magic.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use aplab_core::{DetectorConfig, IntervalStream, ResponseHistogram, TrapModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, SCHEMA_VERSION};

pub const MAGIC: [u8; 4] = *b"APLS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
pub const CSV_HEADER: &str = "# cycles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IntervalFormat {
    Binary,
    Csv,
}

/// Interval data read back from disk, with whatever metadata the format
/// carries.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalFile {
    pub intervals: Vec<u32>,
    pub format: IntervalFormat,
    pub tdc_cycle: Option<f64>,
    pub period_cycles: Option<u32>,
    pub seed: Option<u64>,
}

impl IntervalFile {
    /// Checks the header against the configuration used to interpret it.
    pub fn check_config(&self, config: &DetectorConfig) -> Result<(), Error> {
        if let Some(w) = self.tdc_cycle {
            if w != config.tdc_cycle {
                return Err(Error::BadInput(format!(
                    "interval file has tdc_cycle {w} µs but the config says {}",
                    config.tdc_cycle
                )));
            }
        }
        if let Some(p) = self.period_cycles {
            if p != config.period_cycles {
                return Err(Error::BadInput(format!(
                    "interval file has period_cycles {p} but the config says {}",
                    config.period_cycles
                )));
            }
        }
        Ok(())
    }
}

pub fn encode_header(config: &DetectorConfig, seed: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&config.tdc_cycle.to_le_bytes());
    h[16..20].copy_from_slice(&config.period_cycles.to_le_bytes());
    h[24..32].copy_from_slice(&seed.to_le_bytes());
    h
}

pub fn write_intervals_binary<W: Write>(mut w: W, stream: &IntervalStream) -> io::Result<()> {
    w.write_all(&encode_header(&stream.config_snapshot, stream.seed))?;
    let mut buf = Vec::with_capacity(4 * 8192);
    for chunk in stream.intervals.chunks(8192) {
        buf.clear();
        for c in chunk {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn write_intervals_csv<W: Write>(mut w: W, stream: &IntervalStream) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for c in &stream.intervals {
        writeln!(w, "{c}")?;
    }
    w.flush()
}

pub fn write_intervals(path: &Path, stream: &IntervalStream, format: IntervalFormat) -> Result<(), Error> {
    let w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    match format {
        IntervalFormat::Binary => write_intervals_binary(w, stream),
        IntervalFormat::Csv => write_intervals_csv(w, stream),
    }
    .map_err(|e| Error::io(path, e))
}

pub fn decode_binary(bytes: &[u8]) -> Result<IntervalFile, Error> {
    if bytes.len() < HEADER_LEN || bytes[0..4] != MAGIC {
        return Err(Error::BadInput("not an APLS interval file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::BadInput(format!("unsupported interval format version {version}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() % 4 != 0 {
        return Err(Error::BadInput(format!(
            "interval payload of {} bytes is not a whole number of u32 values",
            body.len()
        )));
    }
    let tdc_cycle = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let period_cycles = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let intervals = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(IntervalFile {
        intervals,
        format: IntervalFormat::Binary,
        tdc_cycle: Some(tdc_cycle),
        period_cycles: Some(period_cycles),
        seed: Some(seed),
    })
}

pub fn decode_csv<R: BufRead>(r: R) -> Result<IntervalFile, Error> {
    let mut intervals = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::BadInput(format!("line {}: {e}", n + 1)))?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let v = s
            .parse::<u32>()
            .map_err(|e| Error::BadInput(format!("line {}: {s:?} is not a cycle count ({e})", n + 1)))?;
        intervals.push(v);
    }
    Ok(IntervalFile {
        intervals,
        format: IntervalFormat::Csv,
        tdc_cycle: None,
        period_cycles: None,
        seed: None,
    })
}

/// Reads an interval file in either format.
pub fn read_intervals(path: &Path) -> Result<IntervalFile, Error> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_csv(BufReader::new(bytes.as_slice()))
    }
}

/// True if the file starts with the binary interval magic or the CSV header.
pub fn looks_like_intervals(path: &Path) -> Result<bool, Error> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(head[..n].starts_with(&MAGIC) || head[..n].starts_with(CSV_HEADER.as_bytes()))
}

/// Histogram as persisted: the histogram fields plus a schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDoc {
    pub schema_version: u32,
    #[serde(flatten)]
    pub histogram: ResponseHistogram,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::BadInput(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: &Path) -> Result<DetectorConfig, Error> {
    let c: DetectorConfig = read_json(path)?;
    c.validate().map_err(|e| Error::BadInput(format!("{}: {e}", path.display())))?;
    Ok(c)
}

pub fn read_model(path: &Path) -> Result<TrapModel, Error> {
    let m: TrapModel = read_json(path)?;
    m.validate().map_err(|e| Error::BadInput(format!("{}: {e}", path.display())))?;
    Ok(m)
}

pub fn read_histogram(path: &Path) -> Result<ResponseHistogram, Error> {
    let doc: HistogramDoc = read_json(path)?;
    let h = doc.histogram;
    if h.counts.iter().sum::<u64>() != h.n_total {
        return Err(Error::BadInput(format!("{}: counts do not sum to n_total", path.display())));
    }
    Ok(h)
}

pub fn write_histogram_json(path: &Path, histogram: &ResponseHistogram) -> Result<(), Error> {
    write_json(path, &HistogramDoc { schema_version: SCHEMA_VERSION, histogram: histogram.clone() })
}

/// Two-column CSV of bin centers on the fitted axis and raw counts.
pub fn write_histogram_csv(path: &Path, histogram: &ResponseHistogram) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["bin_center_us", "count"]).map_err(|e| Error::csv(path, e))?;
    for (i, c) in histogram.counts.iter().enumerate() {
        w.write_record([histogram.bin_center(i).to_string(), c.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
