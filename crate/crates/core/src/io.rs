//! Reading signals from disk and writing plot-ready CSV artifacts.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ntf::Matrix;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// One sample per line.
    Csv,
    /// PCM 16/24/32-bit integer or 32-bit float, mono.
    Wav,
    /// Raw little-endian 32-bit floats.
    F32le,
}

impl InputFormat {
    pub fn name(self) -> &'static str {
        match self {
            InputFormat::Csv => "csv",
            InputFormat::Wav => "wav",
            InputFormat::F32le => "f32le",
        }
    }

    /// Guess from a file extension.
    pub fn from_path(path: &Path) -> Option<InputFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(InputFormat::Csv),
            "wav" => Some(InputFormat::Wav),
            "f32" | "raw" | "bin" => Some(InputFormat::F32le),
            _ => None,
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "wav" => Ok(InputFormat::Wav),
            "f32le" => Ok(InputFormat::F32le),
            other => Err(Error::invalid(format!("unknown format '{other}' (expected csv, wav or f32le)"))),
        }
    }
}

fn ingest_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn finish(path: &Path, samples: Vec<f64>, rate: f64) -> Result<Signal> {
    if samples.is_empty() {
        return Err(ingest_error(path, "no samples"));
    }
    Signal::new(samples, rate).map_err(|e| ingest_error(path, e.to_string()))
}

fn required_rate(path: &Path, format: InputFormat, rate: Option<f64>) -> Result<f64> {
    match rate {
        Some(r) if r.is_finite() && r > 0.0 => Ok(r),
        Some(r) => Err(ingest_error(path, format!("invalid sample rate {r}"))),
        None => Err(ingest_error(path, format!("{format} input needs a sample rate"))),
    }
}

/// Loads a signal. CSV and raw input need `sample_rate`; WAV takes it from
/// the header and a conflicting `sample_rate` is an error.
pub fn ingest(path: &Path, format: InputFormat, sample_rate: Option<f64>) -> Result<Signal> {
    match format {
        InputFormat::Csv => {
            let rate = required_rate(path, format, sample_rate)?;
            let text = fs::read_to_string(path).map_err(|e| ingest_error(path, e.to_string()))?;
            let mut samples = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let field = line.split(',').next().unwrap_or("").trim();
                if field.is_empty() {
                    continue;
                }
                let v: f64 = field
                    .parse()
                    .map_err(|_| ingest_error(path, format!("line {}: cannot parse '{field}' as a number", i + 1)))?;
                if !v.is_finite() {
                    return Err(ingest_error(path, format!("line {}: non-finite sample", i + 1)));
                }
                samples.push(v);
            }
            finish(path, samples, rate)
        }
        InputFormat::F32le => {
            let rate = required_rate(path, format, sample_rate)?;
            let bytes = fs::read(path).map_err(|e| ingest_error(path, e.to_string()))?;
            if bytes.len() % 4 != 0 {
                return Err(ingest_error(
                    path,
                    format!("{} bytes is not a whole number of 4-byte samples (trailing bytes at offset {})", bytes.len(), bytes.len() / 4 * 4),
                ));
            }
            let mut samples = Vec::with_capacity(bytes.len() / 4);
            for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(ingest_error(path, format!("non-finite sample at byte offset {}", i * 4)));
                }
                samples.push(v as f64);
            }
            finish(path, samples, rate)
        }
        InputFormat::Wav => {
            let mut reader = hound::WavReader::open(path).map_err(|e| ingest_error(path, e.to_string()))?;
            let spec = reader.spec();
            if spec.channels != 1 {
                return Err(ingest_error(path, format!("{} channels; only mono is supported", spec.channels)));
            }
            let rate = spec.sample_rate as f64;
            if let Some(r) = sample_rate {
                if r != rate {
                    return Err(ingest_error(path, format!("header rate {rate} Hz conflicts with requested {r} Hz")));
                }
            }
            let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
                (hound::SampleFormat::Float, 32) => reader
                    .samples::<f32>()
                    .enumerate()
                    .map(|(i, s)| s.map(f64::from).map_err(|e| ingest_error(path, format!("sample {i}: {e}"))))
                    .collect::<Result<_>>()?,
                (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
                    let scale = 1.0 / (1u64 << (bits - 1)) as f64;
                    reader
                        .samples::<i32>()
                        .enumerate()
                        .map(|(i, s)| s.map(|v| v as f64 * scale).map_err(|e| ingest_error(path, format!("sample {i}: {e}"))))
                        .collect::<Result<_>>()?
                }
                (fmt, bits) => return Err(ingest_error(path, format!("unsupported WAV encoding {fmt:?} with {bits} bits"))),
            };
            if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
                return Err(ingest_error(path, format!("non-finite sample {i}")));
            }
            finish(path, samples, rate)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// One sample per line, written with enough digits to round-trip.
pub fn write_signal_csv(path: &Path, signal: &Signal) -> Result<()> {
    let mut w = create(path)?;
    for v in signal.samples() {
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Samples narrowed to little-endian `f32`.
pub fn write_signal_f32le(path: &Path, signal: &Signal) -> Result<()> {
    let mut w = create(path)?;
    for &v in signal.samples() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Mono 32-bit float WAV. The sample rate is rounded to whole hertz.
pub fn write_signal_wav(path: &Path, signal: &Signal) -> Result<()> {
    let rate = signal.sample_rate().round();
    if rate < 1.0 || rate > u32::MAX as f64 {
        return Err(Error::invalid(format!("sample rate {} Hz cannot be stored in a WAV header", signal.sample_rate())));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &v in signal.samples() {
        w.write_sample(v as f32).map_err(to_io)?;
    }
    w.finalize().map_err(to_io)?;
    Ok(())
}

/// CSV with a header row and one row per `(x, y)` pair.
pub fn write_xy_csv(path: &Path, header: (&str, &str), x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::size("column lengths differ"));
    }
    let mut w = create(path)?;
    writeln!(w, "{},{}", header.0, header.1)?;
    for (a, b) in x.iter().zip(y) {
        writeln!(w, "{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Row-major matrix without a header.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = create(path)?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Square `n × n` block of values without a header.
pub fn write_square_csv(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    if values.len() != n * n {
        return Err(Error::size("values do not form a square"));
    }
    let mut w = create(path)?;
    for row in values.chunks(n) {
        let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_bad_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "0.5\n1.0\nabc\n").unwrap();
        let err = ingest(&p, InputFormat::Csv, Some(10.0)).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn csv_needs_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1\n").unwrap();
        assert!(matches!(ingest(&p, InputFormat::Csv, None), Err(Error::Ingest { .. })));
    }

    #[test]
    fn raw_with_partial_sample_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        fs::write(&p, [0u8; 10]).unwrap();
        let err = ingest(&p, InputFormat::F32le, Some(1.0)).unwrap_err();
        assert!(err.to_string().contains("offset 8"), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        fs::write(&p, []).unwrap();
        assert!(matches!(ingest(&p, InputFormat::F32le, Some(1.0)), Err(Error::Ingest { .. })));
    }

    #[test]
    fn int16_wav_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let s = ingest(&p, InputFormat::Wav, None).unwrap();
        assert_eq!(s.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(s.sample_rate(), 8000.0);
        assert!(ingest(&p, InputFormat::Wav, Some(4000.0)).is_err());
    }

    #[test]
    fn format_names() {
        for f in [InputFormat::Csv, InputFormat::Wav, InputFormat::F32le] {
            assert_eq!(f.name().parse::<InputFormat>().unwrap(), f);
        }
        assert_eq!(InputFormat::from_path(Path::new("a/b.WAV")), Some(InputFormat::Wav));
    }
}
